//! Transformations and the pair samplers used for training.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

/// `y[i] = x[(i - k) mod N]`.
pub fn circular_shift_1d(x: ArrayView1<'_, f64>, k: i64) -> Array1<f64> {
    let n = x.len();
    if n == 0 {
        return Array1::zeros(0);
    }
    let k = k.rem_euclid(n as i64) as usize;
    Array1::from_shape_fn(n, |i| x[(i + n - k) % n])
}

/// Shifts every frame of a `frames x bins` n-gram along the bin axis.
/// Vacated bins are zero.
pub fn pitch_shift(ngram: ArrayView2<'_, f64>, bins: i64) -> Result<Array2<f64>> {
    let (frames, n_bins) = ngram.dim();
    if bins.unsigned_abs() as usize >= n_bins {
        return Err(Error::Parameter(format!(
            "pitch shift of {bins} bins does not fit {n_bins} bins"
        )));
    }
    let mut out = Array2::zeros((frames, n_bins));
    for t in 0..frames {
        for f in 0..n_bins {
            let g = f as i64 + bins;
            if (0..n_bins as i64).contains(&g) {
                out[[t, g as usize]] = ngram[[t, f]];
            }
        }
    }
    Ok(out)
}

/// Shifts an n-gram along the time axis. Vacated frames are zero.
pub fn time_shift(ngram: ArrayView2<'_, f64>, frames: i64) -> Result<Array2<f64>> {
    let (n_frames, bins) = ngram.dim();
    if frames.unsigned_abs() as usize >= n_frames {
        return Err(Error::Parameter(format!(
            "time shift of {frames} frames does not fit {n_frames} frames"
        )));
    }
    let mut out = Array2::zeros((n_frames, bins));
    for t in 0..n_frames {
        let u = t as i64 + frames;
        if (0..n_frames as i64).contains(&u) {
            out.row_mut(u as usize).assign(&ngram.row(t));
        }
    }
    Ok(out)
}

/// Rotates an image counter-clockwise (as displayed, rows growing downward)
/// about its center with bilinear interpolation. Samples falling outside the
/// image read as zero.
pub fn rotate_2d(img: ArrayView2<'_, f64>, theta: f64) -> Result<Array2<f64>> {
    if !theta.is_finite() {
        return Err(Error::Parameter(format!("rotation angle must be finite, got {theta}")));
    }
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return Err(Error::Shape("image must be non-empty".into()));
    }
    if theta == 0.0 {
        return Ok(img.to_owned());
    }
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img[[r as usize, c as usize]]
        }
    };
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        let dx = c as f64 - cx;
        let dy = r as f64 - cy;
        let sx = cx + dx * cos - dy * sin;
        let sy = cy + dx * sin + dy * cos;
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
            + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
    }))
}

/// Inclusive integer parameter interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntRange {
    pub min: i64,
    pub max: i64,
}

impl IntRange {
    pub fn new(min: i64, max: i64) -> Result<Self> {
        if min > max {
            return Err(Error::Parameter(format!("empty range [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        rng.random_range(self.min..=self.max)
    }
}

/// Half-open angle interval `[min, max)` in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub fn full_turn() -> Self {
        Self { min: 0.0, max: 2.0 * PI }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max <= self.min {
            self.min
        } else {
            rng.random_range(self.min..self.max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformKind {
    CircularShift1d(IntRange),
    PitchShift(IntRange),
    TimeShift(IntRange),
    Rotate2d(AngleRange),
    /// Pitch shift followed by time shift.
    Compose { pitch: IntRange, time: IntRange },
}

/// A family of transformations over a fixed input grid.
///
/// `grid` is `(frames, bins)` for n-gram kinds, `(height, width)` for images
/// and `(1, n)` for one-dimensional signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub grid: (usize, usize),
}

/// Parameter actually applied to one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformParam {
    Shift(i64),
    Angle(f64),
    PitchTime { pitch: i64, time: i64 },
}

impl TransformSpec {
    pub fn circular_shift(n: usize) -> Self {
        let max = n as i64 - 1;
        Self {
            kind: TransformKind::CircularShift1d(IntRange { min: 0, max }),
            grid: (1, n),
        }
    }

    pub fn rotation(height: usize, width: usize) -> Self {
        Self {
            kind: TransformKind::Rotate2d(AngleRange::full_turn()),
            grid: (height, width),
        }
    }

    pub fn input_len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.grid;
        if a == 0 || b == 0 {
            return Err(Error::Parameter(format!("grid {a}x{b} must be positive")));
        }
        let check = |r: &IntRange| IntRange::new(r.min, r.max).map(|_| ());
        match &self.kind {
            TransformKind::CircularShift1d(r) | TransformKind::PitchShift(r) | TransformKind::TimeShift(r) => check(r),
            TransformKind::Compose { pitch, time } => check(pitch).and(check(time)),
            TransformKind::Rotate2d(r) => {
                if r.min.is_finite() && r.max.is_finite() && r.min <= r.max {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("bad angle range [{}, {})", r.min, r.max)))
                }
            }
        }
    }

    pub fn sample_param<R: Rng + ?Sized>(&self, rng: &mut R) -> TransformParam {
        match &self.kind {
            TransformKind::CircularShift1d(r) | TransformKind::PitchShift(r) | TransformKind::TimeShift(r) => {
                TransformParam::Shift(r.sample(rng))
            }
            TransformKind::Rotate2d(r) => TransformParam::Angle(r.sample(rng)),
            TransformKind::Compose { pitch, time } => TransformParam::PitchTime {
                pitch: pitch.sample(rng),
                time: time.sample(rng),
            },
        }
    }

    /// Applies the transform to a flattened sample of length `grid.0 * grid.1`.
    pub fn apply(&self, x: ArrayView1<'_, f64>, param: TransformParam) -> Result<Array1<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "sample has length {}, grid {:?} needs {}",
                x.len(),
                self.grid,
                self.input_len()
            )));
        }
        let grid = x.to_shape(self.grid).map_err(|e| Error::Shape(e.to_string()))?;
        let out = match (&self.kind, param) {
            (TransformKind::CircularShift1d(_), TransformParam::Shift(k)) => return Ok(circular_shift_1d(x, k)),
            (TransformKind::PitchShift(_), TransformParam::Shift(s)) => pitch_shift(grid.view(), s)?,
            (TransformKind::TimeShift(_), TransformParam::Shift(s)) => time_shift(grid.view(), s)?,
            (TransformKind::Rotate2d(_), TransformParam::Angle(a)) => rotate_2d(grid.view(), a)?,
            (TransformKind::Compose { .. }, TransformParam::PitchTime { pitch, time }) => {
                time_shift(pitch_shift(grid.view(), pitch)?.view(), time)?
            }
            (kind, p) => {
                return Err(Error::Parameter(format!("parameter {p:?} does not fit transform {kind:?}")))
            }
        };
        Ok(out.into_shape_with_order(self.input_len()).expect("grid shape is contiguous"))
    }

    /// Flat `key=value` entries under the `transform.` prefix.
    pub fn to_entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("transform.{k}"), v);
        };
        put("grid_rows", self.grid.0.to_string());
        put("grid_cols", self.grid.1.to_string());
        match &self.kind {
            TransformKind::CircularShift1d(r) => {
                put("kind", "circular_shift_1d".into());
                put("min", r.min.to_string());
                put("max", r.max.to_string());
            }
            TransformKind::PitchShift(r) => {
                put("kind", "pitch_shift".into());
                put("min", r.min.to_string());
                put("max", r.max.to_string());
            }
            TransformKind::TimeShift(r) => {
                put("kind", "time_shift".into());
                put("min", r.min.to_string());
                put("max", r.max.to_string());
            }
            TransformKind::Rotate2d(r) => {
                put("kind", "rotate_2d".into());
                put("min", r.min.to_string());
                put("max", r.max.to_string());
            }
            TransformKind::Compose { pitch, time } => {
                put("kind", "compose".into());
                put("pitch_min", pitch.min.to_string());
                put("pitch_max", pitch.max.to_string());
                put("time_min", time.min.to_string());
                put("time_max", time.max.to_string());
            }
        }
        m
    }

    /// Reads a spec back from the entries written by [`TransformSpec::to_entries`].
    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(e: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let full = format!("transform.{key}");
            let raw = e
                .get(&full)
                .ok_or_else(|| Error::Parameter(format!("missing key {full}")))?;
            raw.parse()
                .map_err(|_| Error::Parameter(format!("cannot parse {full}={raw}")))
        }
        let grid = (get(entries, "grid_rows")?, get(entries, "grid_cols")?);
        let kind_name: String = get(entries, "kind")?;
        let int_range = || IntRange::new(get(entries, "min")?, get(entries, "max")?);
        let kind = match kind_name.as_str() {
            "circular_shift_1d" => TransformKind::CircularShift1d(int_range()?),
            "pitch_shift" => TransformKind::PitchShift(int_range()?),
            "time_shift" => TransformKind::TimeShift(int_range()?),
            "rotate_2d" => TransformKind::Rotate2d(AngleRange {
                min: get(entries, "min")?,
                max: get(entries, "max")?,
            }),
            "compose" => TransformKind::Compose {
                pitch: IntRange::new(get(entries, "pitch_min")?, get(entries, "pitch_max")?)?,
                time: IntRange::new(get(entries, "time_min")?, get(entries, "time_max")?)?,
            },
            other => return Err(Error::Parameter(format!("unknown transform kind {other}"))),
        };
        let spec = Self { kind, grid };
        spec.validate()?;
        Ok(spec)
    }
}

/// How training pairs are built from a source sample `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairScheme {
    /// `(psi_i(x), psi_j(psi_i(x)))`, recording `j`.
    #[default]
    Double,
    /// `(x, psi(x))`.
    Anchored,
}

impl std::str::FromStr for PairScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Self::Double),
            "anchored" => Ok(Self::Anchored),
            _ => Err(Error::Parameter(format!("unknown pair scheme {s}"))),
        }
    }
}

/// A batch of `(a, b)` rows where `b` is a transformed version of `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPairBatch {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    /// Parameter of the transform taking `a` to `b`, per row.
    pub params: Vec<TransformParam>,
}

impl TransformPairBatch {
    pub fn new(a: Array2<f64>, b: Array2<f64>, params: Vec<TransformParam>) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::Shape(format!("pair members differ: {:?} vs {:?}", a.dim(), b.dim())));
        }
        if params.len() != a.nrows() {
            return Err(Error::Shape(format!("{} params for {} rows", params.len(), a.nrows())));
        }
        Ok(Self { a, b, params })
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    pub fn n_input(&self) -> usize {
        self.a.ncols()
    }
}

/// Draws `batch_size` random rows of `dataset` and builds transform pairs.
pub fn sample_pair<R: Rng + ?Sized>(
    dataset: ArrayView2<'_, f64>,
    spec: &TransformSpec,
    scheme: PairScheme,
    batch_size: usize,
    rng: &mut R,
) -> Result<TransformPairBatch> {
    if dataset.nrows() == 0 {
        return Err(Error::Validation("cannot sample pairs from an empty dataset".into()));
    }
    let n = spec.input_len();
    let mut a = Array2::zeros((batch_size, n));
    let mut b = Array2::zeros((batch_size, n));
    let mut params = Vec::with_capacity(batch_size);
    for row in 0..batch_size {
        let src = dataset.row(rng.random_range(0..dataset.nrows()));
        let first = match scheme {
            PairScheme::Double => {
                let p = spec.sample_param(rng);
                spec.apply(src, p)?
            }
            PairScheme::Anchored => {
                if src.len() != n {
                    return Err(Error::Shape(format!("sample has length {}, expected {n}", src.len())));
                }
                src.to_owned()
            }
        };
        let p = spec.sample_param(rng);
        let second = spec.apply(first.view(), p)?;
        a.row_mut(row).assign(&first);
        b.row_mut(row).assign(&second);
        params.push(p);
    }
    TransformPairBatch::new(a, b, params)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn circular_shift_examples() {
        let x = array![1.0, 2.0, 3.0, 4.0];
        assert_eq!(circular_shift_1d(x.view(), 0), x);
        assert_eq!(circular_shift_1d(x.view(), 1), array![4.0, 1.0, 2.0, 3.0]);
        let there = circular_shift_1d(x.view(), 3);
        assert_eq!(circular_shift_1d(there.view(), -3), x);
        assert_eq!(circular_shift_1d(x.view(), -5), circular_shift_1d(x.view(), 3));
    }

    #[test]
    fn pitch_shift_examples() {
        let mut g = Array2::zeros((2, 6));
        g[[1, 1]] = 5.0;
        assert_eq!(pitch_shift(g.view(), 0).unwrap(), g);
        let s = pitch_shift(g.view(), 2).unwrap();
        assert_eq!(s[[1, 3]], 5.0);
        assert_eq!(s.sum(), 5.0);
        assert!(matches!(pitch_shift(g.view(), 6), Err(Error::Parameter(_))));
        assert!(matches!(pitch_shift(g.view(), -6), Err(Error::Parameter(_))));
    }

    #[test]
    fn shifts_preserve_interior_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Array2::zeros((8, 20));
        for t in 2..6 {
            for f in 6..14 {
                g[[t, f]] = rng.random_range(0.0..1.0);
            }
        }
        let total = g.sum();
        let energy = g.mapv(|v| v * v).sum();
        for s in [-5, -1, 3, 6] {
            let p = pitch_shift(g.view(), s).unwrap();
            assert_abs_diff_eq!(p.sum(), total, epsilon = 1e-12);
            assert_abs_diff_eq!(p.mapv(|v| v * v).sum(), energy, epsilon = 1e-12);
        }
        for s in [-2, 1, 2] {
            let p = time_shift(g.view(), s).unwrap();
            assert_abs_diff_eq!(p.sum(), total, epsilon = 1e-12);
        }
        // content pushed off the edge is lost, never amplified
        let p = pitch_shift(g.view(), 10).unwrap();
        assert!(p.mapv(|v| v * v).sum() <= energy);
    }

    #[test]
    fn time_shift_examples() {
        let mut g = Array2::zeros((4, 3));
        g[[0, 2]] = 1.0;
        assert_eq!(time_shift(g.view(), 0).unwrap(), g);
        let s = time_shift(g.view(), 3).unwrap();
        assert_eq!(s[[3, 2]], 1.0);
        assert_eq!(s.sum(), 1.0);
        assert!(time_shift(g.view(), 4).is_err());
    }

    #[test]
    fn rotate_examples() {
        let mut img = Array2::zeros((9, 9));
        img[[4, 7]] = 1.0;
        assert_eq!(rotate_2d(img.view(), 0.0).unwrap(), img);
        let r = rotate_2d(img.view(), PI / 2.0).unwrap();
        let (mut best, mut pos) = (0.0, (0, 0));
        for ((i, j), &v) in r.indexed_iter() {
            if v > best {
                best = v;
                pos = (i, j);
            }
        }
        assert_eq!(pos, (1, 4));
        assert!(rotate_2d(img.view(), f64::NAN).is_err());
    }

    #[test]
    fn rotate_round_trip_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // smooth blob image on [0, 1]
        let (cy, cx) = (12.0, 15.0);
        let img = Array2::from_shape_fn((28, 28), |(i, j)| {
            let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
            (-d2 / 18.0).exp()
        });
        for _ in 0..5 {
            let theta = rng.random_range(0.0..2.0 * PI);
            let there = rotate_2d(img.view(), theta).unwrap();
            let back = rotate_2d(there.view(), -theta).unwrap();
            let mae = (&back - &img).mapv(f64::abs).mean().unwrap();
            assert!(mae <= 0.05, "mean abs error {mae}");
        }
    }

    #[test]
    fn anchored_zero_range_gives_identical_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
        let spec = TransformSpec {
            kind: TransformKind::CircularShift1d(IntRange { min: 0, max: 0 }),
            grid: (1, 6),
        };
        let batch = sample_pair(data.view(), &spec, PairScheme::Anchored, 10, &mut rng).unwrap();
        assert_eq!(batch.a, batch.b);
    }

    #[test]
    fn double_scheme_records_second_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::from_shape_simple_fn((4, 10), || rng.random_range(-1.0..1.0));
        let spec = TransformSpec::circular_shift(10);
        let batch = sample_pair(data.view(), &spec, PairScheme::Double, 50, &mut rng).unwrap();
        for (i, p) in batch.params.iter().enumerate() {
            let TransformParam::Shift(k) = *p else { panic!("wrong param") };
            assert_eq!(circular_shift_1d(batch.a.row(i), k), batch.b.row(i));
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::<f64>::zeros((0, 4));
        let spec = TransformSpec::circular_shift(4);
        assert!(matches!(
            sample_pair(data.view(), &spec, PairScheme::Double, 3, &mut rng),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn sampled_params_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data = Array2::from_shape_simple_fn((3, 8), || 1.0);
        let spec = TransformSpec::circular_shift(8);
        let batch = sample_pair(data.view(), &spec, PairScheme::Anchored, 10_000, &mut rng).unwrap();
        let mut counts = [0usize; 8];
        for p in &batch.params {
            let TransformParam::Shift(k) = *p else { unreachable!() };
            counts[k as usize] += 1;
        }
        let expected = 10_000.0 / 8.0;
        for c in counts {
            assert!((c as f64 - expected).abs() <= 0.05 * expected, "{counts:?}");
        }
    }

    #[test]
    fn entries_round_trip() {
        let spec = TransformSpec {
            kind: TransformKind::Compose {
                pitch: IntRange { min: -24, max: 24 },
                time: IntRange { min: -12, max: 12 },
            },
            grid: (32, 120),
        };
        assert_eq!(TransformSpec::from_entries(&spec.to_entries()).unwrap(), spec);
        let rot = TransformSpec::rotation(28, 28);
        assert_eq!(TransformSpec::from_entries(&rot.to_entries()).unwrap(), rot);
    }

    #[test]
    fn compose_applies_both_shifts() {
        let spec = TransformSpec {
            kind: TransformKind::Compose {
                pitch: IntRange { min: -2, max: 2 },
                time: IntRange { min: -1, max: 1 },
            },
            grid: (3, 5),
        };
        let mut x = Array1::zeros(15);
        x[5 + 1] = 1.0; // (t=1, f=1)
        let y = spec.apply(x.view(), TransformParam::PitchTime { pitch: 2, time: 1 }).unwrap();
        assert_eq!(y[2 * 5 + 3], 1.0);
        assert_eq!(y.sum(), 1.0);
    }
}
