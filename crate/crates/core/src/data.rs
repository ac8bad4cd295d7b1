//! Feature ingestion, standardization, n-gram slicing, input dropout and
//! synthetic spectrogram-like pieces.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Dimension, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::transforms::pitch_shift;

/// Hop of 1984 samples at 22.05 kHz.
pub const DEFAULT_HOP_SECONDS: f64 = 1984.0 / 22050.0;

const FTM_MAGIC: &[u8; 4] = b"FTM1";
const STD_FLOOR: f64 = 1e-8;

/// `T x F` matrix of time frames by feature bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub frame_hop_seconds: f64,
    pub meta: String,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, frame_hop_seconds: f64, meta: impl Into<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Validation(format!("feature matrix must be non-empty, got {:?}", values.dim())));
        }
        if !(frame_hop_seconds > 0.0 && frame_hop_seconds.is_finite()) {
            return Err(Error::Validation(format!("frame hop must be positive, got {frame_hop_seconds}")));
        }
        ensure_finite("feature matrix", values.iter())?;
        Ok(Self {
            values,
            frame_hop_seconds,
            meta: meta.into(),
        })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the `FTM1` container: magic, `u32 T`, `u32 F`, `f64 hop`, then
    /// `T x F` row-major `f64`, all little-endian.
    pub fn to_ftm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.values.len());
        out.extend_from_slice(FTM_MAGIC);
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.bins() as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_hop_seconds.to_le_bytes());
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_ftm_bytes(bytes: &[u8], meta: impl Into<String>) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        let magic = cur.take(4)?;
        if magic != FTM_MAGIC {
            return Err(Error::format("byte 0", "missing FTM1 magic"));
        }
        let t = cur.u32_le()? as usize;
        let f = cur.u32_le()? as usize;
        let hop = cur.f64_le()?;
        let expected = t.checked_mul(f).and_then(|n| n.checked_mul(8));
        match expected {
            Some(n) if n == cur.remaining() => {}
            _ => {
                return Err(Error::format(
                    format!("byte {}", cur.pos),
                    format!("{t}x{f} payload needs {expected:?} bytes, found {}", cur.remaining()),
                ))
            }
        }
        let mut values = Vec::with_capacity(t * f);
        for _ in 0..t * f {
            values.push(cur.f64_le()?);
        }
        let values = Array2::from_shape_vec((t, f), values).expect("length checked");
        Self::new(values, hop, meta)
    }

    pub fn save_ftm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ftm_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for row in self.values.outer_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Parses one frame per line; the hop is not stored in CSV.
    pub fn from_csv_str(text: &str, frame_hop_seconds: f64, meta: impl Into<String>) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        Error::format(format!("line {}", lineno + 1), format!("cannot parse {cell:?} as a number"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::format(
                        format!("line {}", lineno + 1),
                        format!("ragged row: {} columns, expected {}", row.len(), first.len()),
                    ));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::format("line 1", "no data rows"));
        }
        let (t, f) = (rows.len(), rows[0].len());
        let values = Array2::from_shape_vec((t, f), rows.into_iter().flatten().collect()).expect("rows are rectangular");
        Self::new(values, frame_hop_seconds, meta)
    }
}

/// Loads `FTM1` (detected by magic) or CSV. CSV input gets [`DEFAULT_HOP_SECONDS`].
pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = path.display().to_string();
    if bytes.is_empty() {
        return Err(Error::format(format!("{meta}: byte 0"), "empty file"));
    }
    if bytes.starts_with(FTM_MAGIC) {
        return FeatureMatrix::from_ftm_bytes(&bytes, meta);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::format(format!("byte {}", e.utf8_error().valid_up_to()), "not UTF-8 text"))?;
    FeatureMatrix::from_csv_str(&text, DEFAULT_HOP_SECONDS, meta)
}

pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                format!("byte {}", self.pos),
                format!("truncated: needed {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64_le(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Per-column mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub mean: Array1<f64>,
    /// Floored at `1e-8`.
    pub std: Array1<f64>,
}

impl StandardizationStats {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Validation("cannot fit standardization on zero rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    /// One mean and std shared by every column, stored per column.
    /// Suited to images, where rarely-lit border pixels would otherwise get
    /// near-zero deviations.
    pub fn fit_global(x: ArrayView2<'_, f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Validation("cannot fit standardization on empty data".into()));
        }
        let mean = x.mean().expect("non-empty");
        let std = x.std(0.0).max(STD_FLOOR);
        Ok(Self {
            mean: Array1::from_elem(x.ncols(), mean),
            std: Array1::from_elem(x.ncols(), std),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mean: Array1::zeros(n),
            std: Array1::ones(n),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.len() {
            return Err(Error::Shape(format!("data has {} columns, stats have {}", x.ncols(), self.len())));
        }
        Ok((&x - &self.mean) / &self.std)
    }

    pub fn apply_row(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.len() {
            return Err(Error::Shape(format!("row has {} entries, stats have {}", x.len(), self.len())));
        }
        Ok((&x - &self.mean) / &self.std)
    }
}

/// Fits stats on `x` (or applies the given ones) and returns the standardized copy.
pub fn standardize(x: ArrayView2<'_, f64>, stats: Option<&StandardizationStats>) -> Result<(Array2<f64>, StandardizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => StandardizationStats::fit(x)?,
    };
    let out = stats.apply(x)?;
    Ok((out, stats))
}

/// Windows of `n` frames starting every `hop_frames`, each flattened
/// time-major so that `(t, f)` lands at `t * F + f`.
pub fn ngram_slice(x: ArrayView2<'_, f64>, n: usize, hop_frames: usize) -> Result<Array2<f64>> {
    let (t, f) = x.dim();
    if n == 0 || hop_frames == 0 {
        return Err(Error::Validation("n-gram size and hop must be positive".into()));
    }
    if t < n {
        return Err(Error::Validation(format!("{t} frames cannot hold an n-gram of {n}")));
    }
    let count = (t - n) / hop_frames + 1;
    let mut out = Array2::zeros((count, n * f));
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let start = i * hop_frames;
        for dt in 0..n {
            row.slice_mut(ndarray::s![dt * f..(dt + 1) * f]).assign(&x.row(start + dt));
        }
    }
    Ok(out)
}

/// Inverted dropout: zero each element with probability `p`, scale
/// survivors by `1/(1-p)`.
pub fn input_dropout<R: Rng + ?Sized>(x: ArrayView1<'_, f64>, p: f64, rng: &mut R) -> Result<Array1<f64>> {
    let mut out = x.to_owned();
    dropout_inplace(&mut out, p, rng)?;
    Ok(out)
}

pub fn dropout_inplace<D: Dimension, R: Rng + ?Sized>(x: &mut ndarray::Array<f64, D>, p: f64, rng: &mut R) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability must be in [0, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok(());
    }
    let keep_scale = 1.0 / (1.0 - p);
    x.map_inplace(|v| {
        if rng.random::<f64>() < p {
            *v = 0.0;
        } else {
            *v *= keep_scale;
        }
    });
    Ok(())
}

/// Images scaled to `[0, 1]` with labels in `0..=9`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    /// `B x H x W`.
    pub images: Array3<f64>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.dim().1
    }

    pub fn width(&self) -> usize {
        self.images.dim().2
    }

    /// `B x (H*W)` view of the images.
    pub fn flattened(&self) -> Array2<f64> {
        let (b, h, w) = self.images.dim();
        self.images
            .to_shape((b, h * w))
            .expect("standard layout")
            .to_owned()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path.display().to_string(), format!("bad gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses IDX image (`0x00000803`) and label (`0x00000801`) buffers.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledImages> {
    let mut img = ByteCursor::new(image_bytes);
    let magic = img.u32_be()?;
    if magic != 0x0000_0803 {
        return Err(Error::format("images byte 0", format!("bad magic {magic:#010x}, expected 0x00000803")));
    }
    let count = img.u32_be()? as usize;
    let h = img.u32_be()? as usize;
    let w = img.u32_be()? as usize;
    let pixels = img.take(count * h * w)?;
    if img.remaining() != 0 {
        return Err(Error::format(format!("images byte {}", img.pos), "trailing bytes after pixel data"));
    }

    let mut lab = ByteCursor::new(label_bytes);
    let magic = lab.u32_be()?;
    if magic != 0x0000_0801 {
        return Err(Error::format("labels byte 0", format!("bad magic {magic:#010x}, expected 0x00000801")));
    }
    let n_labels = lab.u32_be()? as usize;
    if n_labels != count {
        return Err(Error::format("labels byte 4", format!("{n_labels} labels for {count} images")));
    }
    let labels = lab.take(n_labels)?.to_vec();
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(Error::format(format!("labels byte {}", 8 + i), format!("label {} out of range", labels[i])));
    }
    let images = Array3::from_shape_vec((count, h, w), pixels.iter().map(|&p| p as f64 / 255.0).collect()).expect("size checked");
    Ok(LabeledImages { images, labels })
}

/// Loads an IDX image/label pair; gzip-compressed files are detected and inflated.
pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<LabeledImages> {
    parse_idx(&read_maybe_gz(path_images)?, &read_maybe_gz(path_labels)?)
}

/// A repeated segment planted into a synthetic piece: frames
/// `[dst_start, dst_start + len)` equal frames `[src_start, src_start + len)`
/// shifted by `shift` bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedRepeat {
    pub src_start: usize,
    pub dst_start: usize,
    pub len: usize,
    pub shift: i64,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub frames: usize,
    pub bins: usize,
    pub n_events: usize,
    pub bins_per_octave: usize,
    pub partials: usize,
    /// Fundamentals keep all partials at least this far from either edge.
    pub margin_bins: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    /// Uniform noise in `[0, noise_floor)` added to every cell.
    pub noise_floor: f64,
    pub frame_hop_seconds: f64,
    pub plant: Option<PlantedRepeat>,
}

impl SynthOptions {
    pub fn new(frames: usize, bins: usize, n_events: usize) -> Self {
        Self {
            frames,
            bins,
            n_events,
            bins_per_octave: 12,
            partials: 3,
            margin_bins: 0,
            min_duration: 3,
            max_duration: 12,
            noise_floor: 0.0,
            frame_hop_seconds: DEFAULT_HOP_SECONDS,
            plant: None,
        }
    }
}

/// Harmonic-stack note events with smooth onsets on a log-frequency grid,
/// so transposition is a bin shift. Deterministic for a seed; all values
/// are non-negative.
pub fn synth_cqt_like(seed: u64, frames: usize, bins: usize, n_events: usize) -> Result<FeatureMatrix> {
    synth_cqt_like_with(seed, &SynthOptions::new(frames, bins, n_events))
}

pub fn synth_cqt_like_with(seed: u64, opts: &SynthOptions) -> Result<FeatureMatrix> {
    synth_cqt_like_events(seed, opts).map(|(m, _)| m)
}

/// As [`synth_cqt_like_with`], also returning the sorted, de-duplicated
/// onset frames of all note events.
pub fn synth_cqt_like_events(seed: u64, opts: &SynthOptions) -> Result<(FeatureMatrix, Vec<usize>)> {
    let (t_len, f_len) = (opts.frames, opts.bins);
    if t_len == 0 || f_len == 0 || opts.n_events == 0 {
        return Err(Error::Validation("frames, bins and n_events must be at least 1".into()));
    }
    if opts.partials == 0 || opts.min_duration == 0 || opts.min_duration > opts.max_duration {
        return Err(Error::Validation("need at least one partial and a valid duration range".into()));
    }
    let offsets: Vec<usize> = (1..=opts.partials)
        .map(|h| ((h as f64).log2() * opts.bins_per_octave as f64).round() as usize)
        .collect();
    let span = *offsets.last().unwrap();
    if span + 2 * opts.margin_bins >= f_len {
        return Err(Error::Validation(format!(
            "{} bins cannot hold a harmonic stack spanning {span} bins with margin {}",
            f_len, opts.margin_bins
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::<f64>::zeros((t_len, f_len));
    let lo = opts.margin_bins;
    let hi = f_len - opts.margin_bins - span; // exclusive
    let mut onsets = Vec::with_capacity(opts.n_events);
    for _ in 0..opts.n_events {
        let onset = rng.random_range(0..t_len);
        onsets.push(onset);
        let dur = rng.random_range(opts.min_duration..=opts.max_duration);
        let root = rng.random_range(lo..hi);
        let amp = rng.random_range(0.4..1.0);
        let decay = rng.random_range(2.0..8.0);
        for dt in 0..dur + 4 {
            let t = onset + dt;
            if t >= t_len {
                break;
            }
            let tau = dt as f64;
            // smooth attack, exponential decay, quick release after `dur`
            let mut env = (1.0 - (-(tau + 1.0) / 0.8).exp()) * (-tau / decay).exp();
            if dt >= dur {
                env *= (-(tau - dur as f64 + 1.0)).exp();
            }
            for (h, &off) in offsets.iter().enumerate() {
                values[[t, root + off]] += amp * env / (h + 1) as f64;
            }
        }
    }
    if opts.noise_floor > 0.0 {
        values.mapv_inplace(|v| v + rng.random_range(0.0..opts.noise_floor));
    }
    if let Some(p) = opts.plant {
        if p.len == 0 || p.src_start + p.len > t_len || p.dst_start + p.len > t_len {
            return Err(Error::Validation(format!("planted repeat {p:?} does not fit {t_len} frames")));
        }
        let src = values.slice(ndarray::s![p.src_start..p.src_start + p.len, ..]).to_owned();
        let shifted = pitch_shift(src.view(), p.shift)?;
        values.slice_mut(ndarray::s![p.dst_start..p.dst_start + p.len, ..]).assign(&shifted);
    }
    onsets.sort_unstable();
    onsets.dedup();
    let m = FeatureMatrix::new(values, opts.frame_hop_seconds, format!("synthetic seed={seed}"))?;
    Ok((m, onsets))
}

/// Rows of `sum_{f=1..harmonics} (a_f / f) cos(2 pi f i / n + phi_f)` with
/// standard normal `a_f` and uniform `phi_f`: smooth periodic signals for
/// circular-shift experiments.
pub fn harmonic_signals<R: Rng + ?Sized>(count: usize, n: usize, harmonics: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((count, n));
    for mut row in out.outer_iter_mut() {
        for f in 1..=harmonics {
            let amp = standard_normal(rng) / f as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for (i, v) in row.iter_mut().enumerate() {
                *v += amp * (std::f64::consts::TAU * (f * i) as f64 / n as f64 + phase).cos();
            }
        }
    }
    out
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Element-wise check that all entries of a matrix are non-negative.
pub fn all_non_negative(x: ArrayView2<'_, f64>) -> bool {
    Zip::from(&x).all(|&v| v >= 0.0)
}
