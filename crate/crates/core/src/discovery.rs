//! Repeated-section discovery on a processed self-similarity matrix of
//! n-gram magnitude features.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::data::{ngram_slice, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::CaeModel;

/// Caps the reciprocal cosine similarity of identical rows at `1e8`.
pub const SIMILARITY_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    /// Seconds between consecutive row indices.
    pub frame_hop_seconds: f64,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Two occurrences of a repeated section as half-open n-gram index ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepeatedSection {
    pub occurrence_a: (usize, usize),
    pub occurrence_b: (usize, usize),
    pub score: f64,
}

impl RepeatedSection {
    pub fn lag(&self) -> usize {
        self.occurrence_b.0 - self.occurrence_a.0
    }

    pub fn len(&self) -> usize {
        self.occurrence_a.1 - self.occurrence_a.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `S_ij = 1 / (d_cos(f_i, f_j) + 1e-8)`. All-zero rows are at cosine
/// distance 1 from everything, themselves included.
pub fn self_similarity(features: ArrayView2<'_, f64>, frame_hop_seconds: f64) -> Result<SimilarityMatrix> {
    let k = features.nrows();
    if k < 2 {
        return Err(Error::Validation(format!("self-similarity needs at least 2 rows, got {k}")));
    }
    let norms: Vec<f64> = features.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut unit = features.to_owned();
    for (mut row, &n) in unit.outer_iter_mut().zip(&norms) {
        if n > 0.0 {
            row /= n;
        }
    }
    let gram = unit.dot(&unit.t());
    let mut values = Array2::zeros((k, k));
    for i in 0..k {
        for j in i..k {
            let d = if norms[i] > 0.0 && norms[j] > 0.0 {
                (1.0 - gram[[i, j]]).clamp(0.0, 2.0)
            } else {
                1.0
            };
            let s = 1.0 / (d + SIMILARITY_EPS);
            values[[i, j]] = s;
            values[[j, i]] = s;
        }
    }
    Ok(SimilarityMatrix {
        values,
        frame_hop_seconds,
    })
}

/// Valid-mode correlation with a `k x k` identity kernel:
/// `out[i, j] = sum_t S[i + t, j + t]`. Output index `i` keeps referring to
/// the n-gram starting at `i`.
pub fn diagonal_smooth(s: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>> {
    let size = s.nrows();
    if s.ncols() != size {
        return Err(Error::Shape(format!("similarity matrix must be square, got {:?}", s.dim())));
    }
    if k == 0 {
        return Err(Error::Validation("smoothing kernel size must be at least 1".into()));
    }
    if k > size {
        return Err(Error::Validation(format!("kernel size {k} exceeds matrix size {size}")));
    }
    let out_n = size - k + 1;
    let mut out = Array2::zeros((out_n, out_n));
    for t in 0..k {
        out += &s.slice(ndarray::s![t..t + out_n, t..t + out_n]);
    }
    Ok(out)
}

/// Zeroes the main diagonal, divides by the largest absolute entry, then
/// subtracts the median. An all-zero matrix stays all zero.
pub fn postprocess(s: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if s.nrows() != s.ncols() {
        return Err(Error::Shape(format!("similarity matrix must be square, got {:?}", s.dim())));
    }
    let mut out = s.to_owned();
    out.diag_mut().fill(0.0);
    let max_abs = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(out);
    }
    out /= max_abs;
    let med = median(out.iter().copied().collect());
    out -= med;
    Ok(out)
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scans every super-diagonal for runs of entries above `threshold`,
/// bridging up to `max_gap` sub-threshold entries. Runs of at least
/// `min_length` become sections scored by their mean entry, best first.
pub fn find_diagonals(s: ArrayView2<'_, f64>, threshold: f64, min_length: usize, max_gap: usize) -> Vec<RepeatedSection> {
    let k = s.nrows().min(s.ncols());
    let mut found = Vec::new();
    for lag in 1..k {
        let diag: Vec<f64> = (0..k - lag).map(|i| s[[i, i + lag]]).collect();
        let mut i = 0;
        while i < diag.len() {
            if diag[i] <= threshold {
                i += 1;
                continue;
            }
            let start = i;
            let mut end = i + 1;
            let mut j = i + 1;
            while j < diag.len() {
                if diag[j] > threshold {
                    end = j + 1;
                    j += 1;
                } else if j - end < max_gap {
                    j += 1;
                } else {
                    break;
                }
            }
            if end - start >= min_length {
                let score = diag[start..end].iter().sum::<f64>() / (end - start) as f64;
                found.push(RepeatedSection {
                    occurrence_a: (start, end),
                    occurrence_b: (start + lag, end + lag),
                    score,
                });
            }
            i = end;
        }
    }
    found.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.lag().cmp(&b.lag()))
            .then(a.occurrence_a.0.cmp(&b.occurrence_a.0))
    });
    found
}

pub fn interval_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Overlap of two sections: the smaller of the two occurrence IoUs.
pub fn section_iou(a: &RepeatedSection, b: &RepeatedSection) -> f64 {
    interval_iou(a.occurrence_a, b.occurrence_a).min(interval_iou(a.occurrence_b, b.occurrence_b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy one-to-one matching by descending IoU. With nothing found,
/// precision is 1 by convention.
pub fn evaluate_overlap(found: &[RepeatedSection], ground_truth: &[RepeatedSection], iou_threshold: f64) -> Result<OverlapScores> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Parameter(format!("IoU threshold must be in (0, 1], got {iou_threshold}")));
    }
    if ground_truth.is_empty() {
        return Err(Error::Validation("recall is undefined for an empty ground truth".into()));
    }
    let mut candidates = Vec::new();
    for (fi, f) in found.iter().enumerate() {
        for (gi, g) in ground_truth.iter().enumerate() {
            let iou = section_iou(f, g);
            if iou >= iou_threshold {
                candidates.push((iou, fi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_f = vec![false; found.len()];
    let mut used_g = vec![false; ground_truth.len()];
    let mut tp = 0usize;
    for (_, fi, gi) in candidates {
        if !used_f[fi] && !used_g[gi] {
            used_f[fi] = true;
            used_g[gi] = true;
            tp += 1;
        }
    }
    let precision = if found.is_empty() { 1.0 } else { tp as f64 / found.len() as f64 };
    let recall = tp as f64 / ground_truth.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(OverlapScores { precision, recall, f1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryConfig {
    pub ngram: usize,
    pub hop_frames: usize,
    pub smoothing: usize,
    pub threshold: f64,
    pub min_length: usize,
    pub max_gap: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            ngram: 32,
            hop_frames: 1,
            smoothing: 10,
            threshold: 0.01,
            min_length: 10,
            max_gap: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscoveryResult {
    /// Smoothed and post-processed matrix.
    pub processed: SimilarityMatrix,
    pub sections: Vec<RepeatedSection>,
}

/// Runs the full pipeline on one piece.
pub fn discover(features: &FeatureMatrix, model: &CaeModel, cfg: &DiscoveryConfig) -> Result<DiscoveryResult> {
    let width = cfg.ngram * features.bins();
    if width != model.n_input() {
        return Err(Error::Validation(format!(
            "model expects inputs of length {}, but {}-frame n-grams of {} bins have length {width}",
            model.n_input(),
            cfg.ngram,
            features.bins()
        )));
    }
    let grams = ngram_slice(features.values.view(), cfg.ngram, cfg.hop_frames)?;
    let mags = model.magnitudes(grams.view())?;
    let hop = features.frame_hop_seconds * cfg.hop_frames as f64;
    let ssm = self_similarity(mags.view(), hop)?;
    let smoothed = diagonal_smooth(ssm.values.view(), cfg.smoothing)?;
    let processed = postprocess(smoothed.view())?;
    let sections = find_diagonals(processed.view(), cfg.threshold, cfg.min_length, cfg.max_gap);
    Ok(DiscoveryResult {
        processed: SimilarityMatrix {
            values: processed,
            frame_hop_seconds: hop,
        },
        sections,
    })
}

/// One line per section: lag, starts, length, score and the same in seconds.
pub fn sections_csv(sections: &[RepeatedSection], hop_seconds: f64) -> String {
    let mut s = String::from("lag,start_a,start_b,length,score,start_a_seconds,start_b_seconds,length_seconds\n");
    for sec in sections {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            sec.lag(),
            sec.occurrence_a.0,
            sec.occurrence_b.0,
            sec.len(),
            sec.score,
            sec.occurrence_a.0 as f64 * hop_seconds,
            sec.occurrence_b.0 as f64 * hop_seconds,
            sec.len() as f64 * hop_seconds
        );
    }
    s
}

/// Largest asymmetry `|S_ij - S_ji|`.
pub fn max_asymmetry(s: ArrayView2<'_, f64>) -> f64 {
    let t = s.t();
    s.iter().zip(t.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}
