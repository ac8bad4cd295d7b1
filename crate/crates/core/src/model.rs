//! `CAE1` model files: a trained basis plus the standardization it expects.
//!
//! Layout, little-endian: magic `CAE1`, `u32 M`, `u32 N`, `M*N f64` for
//! `w_re`, `M*N f64` for `w_im`, `N f64` mean, `N f64` std. The training
//! configuration travels in a JSON sidecar named `<model>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};

use crate::basis::ComplexBasis;
use crate::data::{ByteCursor, StandardizationStats};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

const MAGIC: &[u8; 4] = b"CAE1";

#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    pub basis: ComplexBasis,
    pub stats: StandardizationStats,
}

impl CaeModel {
    pub fn new(basis: ComplexBasis, stats: StandardizationStats) -> Result<Self> {
        if stats.len() != basis.n_input() {
            return Err(Error::Shape(format!(
                "standardization covers {} inputs, basis has {}",
                stats.len(),
                basis.n_input()
            )));
        }
        Ok(Self { basis, stats })
    }

    /// A model with identity standardization.
    pub fn unstandardized(basis: ComplexBasis) -> Self {
        let n = basis.n_input();
        Self {
            basis,
            stats: StandardizationStats::identity(n),
        }
    }

    pub fn n_input(&self) -> usize {
        self.basis.n_input()
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    /// Standardizes rows, then returns their magnitudes.
    pub fn magnitudes(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.n_input() {
            return Err(Error::Validation(format!(
                "model expects inputs of length {}, got features of length {}",
                self.n_input(),
                xs.ncols()
            )));
        }
        let z = self.stats.apply(xs)?;
        self.basis.magnitude_features(z.view())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (m, n) = (self.n_basis(), self.n_input());
        let mut out = Vec::with_capacity(12 + 8 * (2 * m * n + 2 * n));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(m as u32).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        let floats = self
            .basis
            .w_re()
            .iter()
            .chain(self.basis.w_im().iter())
            .chain(self.stats.mean.iter())
            .chain(self.stats.std.iter());
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != MAGIC {
            return Err(Error::format("byte 0", "missing CAE1 magic"));
        }
        let m = cur.u32_le()? as usize;
        let n = cur.u32_le()? as usize;
        let need = (2 * m * n + 2 * n) * 8;
        if cur.remaining() != need {
            return Err(Error::format(
                format!("byte {}", cur.pos),
                format!("{m}x{n} model needs {need} payload bytes, found {}", cur.remaining()),
            ));
        }
        let mut read = |len: usize| -> Result<Vec<f64>> { (0..len).map(|_| cur.f64_le()).collect() };
        let w_re = Array2::from_shape_vec((m, n), read(m * n)?).expect("sized");
        let w_im = Array2::from_shape_vec((m, n), read(m * n)?).expect("sized");
        let mean = Array1::from(read(n)?);
        let std = Array1::from(read(n)?);
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::format("standardization block", "std entries must be positive"));
        }
        Self::new(ComplexBasis::new(w_re, w_im)?, StandardizationStats { mean, std })
    }

    /// Writes the model and, when given, its training config sidecar.
    pub fn save(&self, path: &Path, config: Option<&TrainConfig>) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        if let Some(cfg) = config {
            let side = sidecar_path(path);
            let text = serde_json::to_string_pretty(cfg).expect("config serializes");
            fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { location, message } => Error::Format {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }
}

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Reads the JSON training config stored next to a model, if present.
pub fn load_sidecar(model_path: &Path) -> Result<Option<TrainConfig>> {
    let side = sidecar_path(model_path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::format(format!("{}: line {}", side.display(), e.line()), e.to_string()))
}
