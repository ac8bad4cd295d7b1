//! Dynamic time warping, FastDTW and alignment error metrics.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{ngram_slice, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::CaeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameDistance {
    /// `1 - cos`. Two zero frames are at distance 0, a zero frame and a
    /// non-zero one at distance 1.
    #[default]
    Cosine,
    Euclidean,
}

impl FromStr for FrameDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            _ => Err(Error::Parameter(format!("unknown distance {s:?}, expected cosine or euclidean"))),
        }
    }
}

impl FrameDistance {
    pub fn eval(self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self {
            Self::Euclidean => a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Self::Cosine => {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b.iter()) {
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                match (aa > 0.0, bb > 0.0) {
                    (true, true) => (1.0 - ab / (aa.sqrt() * bb.sqrt())).max(0.0),
                    (false, false) => 0.0,
                    _ => 1.0,
                }
            }
        }
    }
}

/// Monotone alignment path from `(0, 0)` to `(Ta-1, Tb-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingPath {
    pub pairs: Vec<(usize, usize)>,
    /// Sum of frame distances along the path.
    pub cost: f64,
}

impl WarpingPath {
    /// Checks boundary cells and the `{(1,0), (0,1), (1,1)}` step set.
    pub fn validate(&self, ta: usize, tb: usize) -> Result<()> {
        let (first, last) = match (self.pairs.first(), self.pairs.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(Error::Validation("empty warping path".into())),
        };
        if first != (0, 0) || last != (ta - 1, tb - 1) {
            return Err(Error::Validation(format!("path runs {first:?} to {last:?}, expected (0, 0) to {:?}", (ta - 1, tb - 1))));
        }
        for (k, w) in self.pairs.windows(2).enumerate() {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return Err(Error::Validation(format!("illegal step {:?} -> {:?} at {k}", w[0], w[1])));
            }
        }
        if self.cost < 0.0 || !self.cost.is_finite() {
            return Err(Error::Validation(format!("path cost {} is not a finite non-negative number", self.cost)));
        }
        Ok(())
    }

    /// Largest `|i - j|` along the path.
    pub fn max_diagonal_deviation(&self) -> usize {
        self.pairs.iter().map(|&(i, j)| i.abs_diff(j)).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j\n");
        for (i, j) in &self.pairs {
            let _ = writeln!(s, "{i},{j}");
        }
        s
    }
}

fn check_inputs(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Validation("cannot align an empty sequence".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("frame widths differ: {} vs {}", a.ncols(), b.ncols())));
    }
    Ok(())
}

/// Exact DTW over the full cost matrix.
pub fn dtw(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, distance: FrameDistance) -> Result<WarpingPath> {
    check_inputs(a, b)?;
    let window = vec![(0, b.nrows() - 1); a.nrows()];
    constrained_dtw(a, b, distance, &window)
}

/// DTW restricted to columns `window[i].0..=window[i].1` in row `i`.
/// Rows must overlap enough to connect `(0, 0)` to the last cell.
fn constrained_dtw(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, distance: FrameDistance, window: &[(usize, usize)]) -> Result<WarpingPath> {
    let ta = a.nrows();
    let tb = b.nrows();
    debug_assert_eq!(window.len(), ta);
    let offsets: Vec<usize> = window
        .iter()
        .scan(0usize, |acc, &(lo, hi)| {
            let o = *acc;
            *acc += hi - lo + 1;
            Some(o)
        })
        .collect();
    let total = offsets[ta - 1] + window[ta - 1].1 - window[ta - 1].0 + 1;
    let mut cost = vec![f64::INFINITY; total];
    // 0 = diagonal, 1 = from (i-1, j), 2 = from (i, j-1)
    let mut from = vec![0u8; total];
    let at = |i: usize, j: usize| -> Option<usize> {
        let (lo, hi) = window[i];
        (j >= lo && j <= hi).then(|| offsets[i] + j - lo)
    };
    for i in 0..ta {
        let (lo, hi) = window[i];
        for j in lo..=hi {
            let d = distance.eval(a.row(i), b.row(j));
            let here = offsets[i] + j - lo;
            if i == 0 && j == 0 {
                cost[here] = d;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut dir = 0u8;
            if i > 0 && j > 0 {
                if let Some(p) = at(i - 1, j - 1) {
                    best = cost[p];
                }
            }
            if i > 0 {
                if let Some(p) = at(i - 1, j) {
                    if cost[p] < best {
                        best = cost[p];
                        dir = 1;
                    }
                }
            }
            if j > 0 {
                if let Some(p) = at(i, j - 1) {
                    if cost[p] < best {
                        best = cost[p];
                        dir = 2;
                    }
                }
            }
            cost[here] = best + d;
            from[here] = dir;
        }
    }
    let end = at(ta - 1, tb - 1).ok_or_else(|| Error::Numeric("search window excludes the final cell".into()))?;
    let final_cost = cost[end];
    if !final_cost.is_finite() {
        return Err(Error::Numeric("no finite warping path inside the search window".into()));
    }
    let mut pairs = Vec::with_capacity(ta + tb);
    let (mut i, mut j) = (ta - 1, tb - 1);
    pairs.push((i, j));
    while (i, j) != (0, 0) {
        let here = at(i, j).expect("path stays in window");
        match from[here] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(WarpingPath { pairs, cost: final_cost })
}

fn coarsen(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let t = x.nrows();
    let half = t.div_ceil(2);
    let mut out = Array2::zeros((half, x.ncols()));
    for (k, mut row) in out.outer_iter_mut().enumerate() {
        let i = 2 * k;
        if i + 1 < t {
            row.assign(&((&x.row(i) + &x.row(i + 1)) * 0.5));
        } else {
            row.assign(&x.row(i));
        }
    }
    out
}

/// Projects a coarse path onto the finer grid and widens it by `radius`
/// cells in every direction.
fn expand_window(coarse: &[(usize, usize)], ta: usize, tb: usize, radius: usize) -> Vec<(usize, usize)> {
    let mut proj = vec![(usize::MAX, 0usize); ta];
    for &(ci, cj) in coarse {
        for i in [2 * ci, 2 * ci + 1] {
            if i < ta {
                let (lo, hi) = &mut proj[i];
                *lo = (*lo).min(2 * cj);
                *hi = (*hi).max((2 * cj + 1).min(tb - 1));
            }
        }
    }
    (0..ta)
        .map(|i| {
            let from = i.saturating_sub(radius);
            let to = (i + radius).min(ta - 1);
            let (mut lo, mut hi) = (usize::MAX, 0);
            for &(plo, phi) in &proj[from..=to] {
                if plo != usize::MAX {
                    lo = lo.min(plo);
                    hi = hi.max(phi);
                }
            }
            (lo.saturating_sub(radius), (hi + radius).min(tb - 1))
        })
        .collect()
}

/// Multiscale approximate DTW: coarsen by averaging frame pairs, align the
/// coarse sequences recursively, and refine inside the projected path
/// widened by `radius`.
pub fn fastdtw(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, radius: usize, distance: FrameDistance) -> Result<WarpingPath> {
    check_inputs(a, b)?;
    let (ta, tb) = (a.nrows(), b.nrows());
    if ta.min(tb) <= radius + 2 {
        return dtw(a, b, distance);
    }
    let ca = coarsen(a);
    let cb = coarsen(b);
    let coarse = fastdtw(ca.view(), cb.view(), radius, distance)?;
    let window = expand_window(&coarse.pairs, ta, tb, radius);
    constrained_dtw(a, b, distance, &window)
}

/// Reference correspondences `(time_a, time_b)` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMap {
    events: Vec<(f64, f64)>,
}

impl GroundTruthMap {
    pub fn new(events: Vec<(f64, f64)>) -> Result<Self> {
        if events.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::Validation("ground-truth times must be finite".into()));
        }
        if let Some(k) = events.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::Validation(format!("ground-truth times not strictly increasing at event {}", k + 1)));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[(f64, f64)] {
        &self.events
    }

    /// Two columns of seconds per line. A first line that does not parse
    /// as numbers is treated as a header.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Option<(f64, f64)> = match cells.as_slice() {
                [a, b] => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            match parsed {
                Some(e) => events.push(e),
                None if k == 0 => continue,
                None => {
                    return Err(Error::format(format!("line {}", k + 1), format!("expected two numbers, got {line:?}")));
                }
            }
        }
        Self::new(events)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_a,time_b\n");
        for (a, b) in &self.events {
            let _ = writeln!(s, "{a},{b}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub rate_50ms: f64,
    pub rate_250ms: f64,
    pub n_events: usize,
    /// Events whose `time_a` fell outside the path span, mapped at unit
    /// slope from the nearest end.
    pub n_clamped: usize,
    pub errors: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Reads the path as a piecewise-linear map from a-time to b-time (several
/// `j` on one `i` are averaged into one knot) and scores every event.
/// Events beyond the path's a-range, such as onsets inside the last n-gram,
/// are mapped at unit slope from the nearest end and counted in `n_clamped`.
pub fn evaluate_alignment(path: &WarpingPath, hop_a: f64, hop_b: f64, gt: &GroundTruthMap) -> Result<AlignmentReport> {
    if gt.events.is_empty() {
        return Err(Error::Validation("ground truth has no events".into()));
    }
    if path.pairs.is_empty() {
        return Err(Error::Validation("empty warping path".into()));
    }
    let ta = path.pairs.last().unwrap().0 + 1;
    let mut sum = vec![0.0f64; ta];
    let mut count = vec![0usize; ta];
    for &(i, j) in &path.pairs {
        sum[i] += j as f64;
        count[i] += 1;
    }
    let knots: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect();

    let mut n_clamped = 0;
    let mut errors: Vec<f64> = gt
        .events
        .iter()
        .map(|&(t_a, t_b)| {
            let pos = t_a / hop_a;
            let end = (ta - 1) as f64;
            if pos < 0.0 || pos > end {
                // Past either end, keep the boundary offset in seconds.
                n_clamped += 1;
                let edge = pos.clamp(0.0, end);
                let b_edge = knots[edge as usize] * hop_b;
                return (b_edge + (t_a - edge * hop_a) - t_b).abs();
            }
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(ta - 1);
            let j = knots[lo] + (knots[hi] - knots[lo]) * (pos - lo as f64);
            (j * hop_b - t_b).abs()
        })
        .collect();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let within = |thr: f64| errors.iter().filter(|&&e| e <= thr + 1e-9).count() as f64 / errors.len() as f64;
    let report = AlignmentReport {
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        rate_50ms: within(0.05),
        rate_250ms: within(0.25),
        n_events: errors.len(),
        n_clamped,
        errors: std::mem::take(&mut errors),
    };
    Ok(report)
}

/// Resamples the time axis to `round(T / factor)` frames; output frame `t`
/// reads the input at position `t * factor` by linear interpolation.
pub fn tempo_scale(x: &FeatureMatrix, factor: f64) -> Result<FeatureMatrix> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Parameter(format!("tempo factor must be positive, got {factor}")));
    }
    let t = x.frames();
    let new_t = (t as f64 / factor).round() as usize;
    if new_t < 2 {
        return Err(Error::Validation(format!("tempo factor {factor} leaves {new_t} frames of {t}")));
    }
    let mut out = Array2::zeros((new_t, x.bins()));
    for (k, mut row) in out.outer_iter_mut().enumerate() {
        let pos = (k as f64 * factor).min((t - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t - 1);
        let w = pos - lo as f64;
        row.assign(&(&x.values.row(lo) * (1.0 - w) + &x.values.row(hi) * w));
    }
    FeatureMatrix::new(out, x.frame_hop_seconds, format!("{} tempo x{factor}", x.meta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub ngram: usize,
    pub hop_frames: usize,
    pub radius: usize,
    pub distance: FrameDistance,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            ngram: 8,
            hop_frames: 1,
            radius: 50,
            distance: FrameDistance::Cosine,
        }
    }
}

/// Magnitude features of every n-gram (anchored at its first frame).
pub fn ngram_magnitudes(x: &FeatureMatrix, model: &CaeModel, ngram: usize, hop_frames: usize) -> Result<Array2<f64>> {
    let width = ngram * x.bins();
    if width != model.n_input() {
        return Err(Error::Validation(format!(
            "model expects inputs of length {}, but {ngram}-frame n-grams of {} bins have length {width}",
            model.n_input(),
            x.bins()
        )));
    }
    let grams = ngram_slice(x.values.view(), ngram, hop_frames)?;
    model.magnitudes(grams.view())
}

/// Aligns two pieces in magnitude space. Path indices are n-gram indices.
pub fn align_features(a: &FeatureMatrix, b: &FeatureMatrix, model: &CaeModel, cfg: &AlignConfig) -> Result<WarpingPath> {
    let fa = ngram_magnitudes(a, model, cfg.ngram, cfg.hop_frames)?;
    let fb = ngram_magnitudes(b, model, cfg.ngram, cfg.hop_frames)?;
    fastdtw(fa.view(), fb.view(), cfg.radius, cfg.distance)
}

/// Same as [`align_features`] on raw n-grams, as a baseline.
pub fn align_raw(a: &FeatureMatrix, b: &FeatureMatrix, cfg: &AlignConfig) -> Result<WarpingPath> {
    let ga = ngram_slice(a.values.view(), cfg.ngram, cfg.hop_frames)?;
    let gb = ngram_slice(b.values.view(), cfg.ngram, cfg.hop_frames)?;
    fastdtw(ga.view(), gb.view(), cfg.radius, cfg.distance)
}
