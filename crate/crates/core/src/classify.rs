//! Classifiers and projections for evaluating learned features.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::StandardizationStats;
use crate::error::{Error, Result};

/// Multinomial logistic regression: `scores = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `C x M`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub classes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

fn class_index(labels: &[u8]) -> (Vec<u8>, Vec<usize>) {
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let idx = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    (classes, idx)
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Mean cross-entropy plus `l2/2 * ||W||^2`, with gradients for `W` and `b`.
pub fn logreg_objective(
    weights: ArrayView2<'_, f64>,
    bias: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    targets: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let b = x.nrows() as f64;
    let mut p = x.dot(&weights.t()) + bias;
    softmax_rows(&mut p);
    let mut loss = 0.0;
    for (row, &t) in targets.iter().enumerate() {
        loss -= p[[row, t]].max(1e-300).ln();
        p[[row, t]] -= 1.0;
    }
    loss = loss / b + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let gw = p.t().dot(&x) / b + &weights * l2;
    let gb = p.sum_axis(Axis(0)) / b;
    (loss, gw, gb)
}

/// Full-batch gradient descent from zero weights, so the result depends only
/// on the data and the config.
pub fn logreg_train(x: ArrayView2<'_, f64>, y: &[u8], cfg: &LogRegConfig) -> Result<LinearClassifier> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    let (classes, targets) = class_index(y);
    if classes.len() < 2 {
        return Err(Error::Validation("logistic regression needs at least two classes".into()));
    }
    if x.nrows() < classes.len() {
        return Err(Error::Validation(format!("{} samples for {} classes", x.nrows(), classes.len())));
    }
    if !(cfg.learning_rate > 0.0) || cfg.l2 < 0.0 {
        return Err(Error::Parameter("learning rate must be positive and l2 non-negative".into()));
    }
    let c = classes.len();
    let mut w = Array2::zeros((c, x.ncols()));
    let mut bias = Array1::zeros(c);
    for _ in 0..cfg.epochs {
        let (_, gw, gb) = logreg_objective(w.view(), bias.view(), x, &targets, cfg.l2);
        w.scaled_add(-cfg.learning_rate, &gw);
        bias.scaled_add(-cfg.learning_rate, &gb);
    }
    if w.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic regression diverged; lower the learning rate".into()));
    }
    Ok(LinearClassifier {
        weights: w,
        bias,
        classes,
    })
}

impl LinearClassifier {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<u8> {
        let scores = x.dot(&self.weights.t()) + &self.bias;
        scores
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                self.classes[best]
            })
            .collect()
    }
}

/// Pairwise Euclidean distances, `queries x train`.
pub fn euclidean_distances(queries: ArrayView2<'_, f64>, train: ArrayView2<'_, f64>) -> Array2<f64> {
    let qn: Array1<f64> = queries.outer_iter().map(|r| r.dot(&r)).collect();
    let tn: Array1<f64> = train.outer_iter().map(|r| r.dot(&r)).collect();
    let mut d = queries.dot(&train.t()) * -2.0;
    for (mut row, q) in d.outer_iter_mut().zip(qn.iter()) {
        row += &tn;
        row.mapv_inplace(|v| (v + q).max(0.0).sqrt());
    }
    d
}

/// Majority vote among the `k` nearest training rows. Ties go to the label
/// with the smaller summed distance, then to the smaller label.
pub fn knn_classify(train_x: ArrayView2<'_, f64>, train_y: &[u8], query_x: ArrayView2<'_, f64>, k: usize) -> Result<Vec<u8>> {
    if train_x.nrows() != train_y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", train_x.nrows(), train_y.len())));
    }
    if k == 0 || k > train_y.len() {
        return Err(Error::Validation(format!("k = {k} must be in 1..={}", train_y.len())));
    }
    if train_x.ncols() != query_x.ncols() {
        return Err(Error::Shape(format!("train width {} vs query width {}", train_x.ncols(), query_x.ncols())));
    }
    let dist = euclidean_distances(query_x, train_x);
    let mut order: Vec<usize> = (0..train_y.len()).collect();
    Ok(dist
        .outer_iter()
        .map(|row| {
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            let mut votes = [(0usize, 0.0f64); 256];
            for &i in &order[..k] {
                let v = &mut votes[train_y[i] as usize];
                v.0 += 1;
                v.1 += row[i];
            }
            let mut best: Option<(u8, usize, f64)> = None;
            for (label, &(count, dsum)) in votes.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, bc, bd)) => count > bc || (count == bc && dsum < bd),
                };
                if better {
                    best = Some((label as u8, count, dsum));
                }
            }
            best.expect("k >= 1").0
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    /// Logistic regression, optionally standardizing features with stats
    /// fitted on each fold's training subset.
    LogReg { config: LogRegConfig, standardize: bool },
    Knn { k: usize },
}

impl ClassifierSpec {
    pub fn fit_predict(&self, train_x: ArrayView2<'_, f64>, train_y: &[u8], test_x: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
        match *self {
            ClassifierSpec::Knn { k } => knn_classify(train_x, train_y, test_x, k),
            ClassifierSpec::LogReg { config, standardize } => {
                if standardize {
                    let stats = StandardizationStats::fit(train_x)?;
                    let tr = stats.apply(train_x)?;
                    let te = stats.apply(test_x)?;
                    Ok(logreg_train(tr.view(), train_y, &config)?.predict(te.view()))
                } else {
                    Ok(logreg_train(train_x, train_y, &config)?.predict(test_x))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub train_size: usize,
    pub folds: usize,
    pub test_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub per_fold_error: Vec<f64>,
    pub mean_error: f64,
    pub std_error: f64,
    pub train_size: usize,
    pub test_size: usize,
}

impl CvReport {
    fn from_errors(errors: Vec<f64>, train_size: usize, test_size: usize) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Self {
            per_fold_error: errors,
            mean_error: mean,
            std_error: var.sqrt(),
            train_size,
            test_size,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,error\n");
        for (i, e) in self.per_fold_error.iter().enumerate() {
            s.push_str(&format!("{i},{e}\n"));
        }
        s
    }
}

/// Class-balanced draw of `n` indices: each class contributes `n / C`, and
/// the first `n % C` classes one more.
fn balanced_draw(by_class: &mut [Vec<usize>], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let c = by_class.len();
    let mut picked = Vec::with_capacity(n);
    for (ci, pool) in by_class.iter_mut().enumerate() {
        let want = n / c + usize::from(ci < n % c);
        if pool.len() < want {
            return Err(Error::Validation(format!("class {ci} has {} samples, {want} needed", pool.len())));
        }
        pool.shuffle(rng);
        picked.extend(pool.drain(..want));
    }
    Ok(picked)
}

fn group_by_class(labels: &[u8], subset: impl Iterator<Item = usize>) -> Vec<Vec<usize>> {
    let (classes, _) = class_index(labels);
    let mut groups = vec![Vec::new(); classes.len()];
    for i in subset {
        groups[classes.binary_search(&labels[i]).unwrap()].push(i);
    }
    groups
}

fn error_rate(pred: &[u8], truth: &[u8]) -> f64 {
    pred.iter().zip(truth).filter(|(p, t)| p != t).count() as f64 / truth.len() as f64
}

fn check_cv(x: ArrayView2<'_, f64>, y: &[u8], cv: &CvConfig) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if cv.folds == 0 || cv.train_size == 0 || cv.test_size == 0 {
        return Err(Error::Parameter("folds, train_size and test_size must be positive".into()));
    }
    Ok(())
}

/// Deterministic class-stratified split into disjoint train and test pools.
/// Each class gives its first `n_train / C` indices (one more for the first
/// `n_train % C` classes) to the train pool and the following ones to the
/// test pool in the same way, so sorted datasets still split evenly.
pub fn stratified_pools(labels: &[u8], n_train: usize, n_test: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut groups = group_by_class(labels, 0..labels.len());
    let c = groups.len().max(1);
    let share = |n: usize, ci: usize| n / c + usize::from(ci < n % c);
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n_test));
    for (ci, g) in groups.iter_mut().enumerate() {
        let (a, b) = (share(n_train, ci), share(n_test, ci));
        if g.len() < a + b {
            return Err(Error::Validation(format!("class {ci} has {} samples, {} needed for the pools", g.len(), a + b)));
        }
        train.extend(&g[..a]);
        test.extend(&g[a..a + b]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Repeated holdout on one pool: every fold draws a class-balanced training
/// subset and a disjoint random test set.
pub fn cross_validate(x: ArrayView2<'_, f64>, y: &[u8], cv: &CvConfig, spec: &ClassifierSpec) -> Result<CvReport> {
    check_cv(x, y, cv)?;
    if cv.train_size + cv.test_size > y.len() {
        return Err(Error::Validation(format!("{} samples cannot supply {} train + {} test", y.len(), cv.train_size, cv.test_size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cv.seed);
    let mut errors = Vec::with_capacity(cv.folds);
    for _ in 0..cv.folds {
        let mut groups = group_by_class(y, 0..y.len());
        let train = balanced_draw(&mut groups, cv.train_size, &mut rng)?;
        let mut rest: Vec<usize> = groups.into_iter().flatten().collect();
        rest.sort_unstable();
        rest.shuffle(&mut rng);
        let test = &rest[..cv.test_size];
        errors.push(run_fold(x, y, &train, x, y, test, spec)?);
    }
    Ok(CvReport::from_errors(errors, cv.train_size, cv.test_size))
}

/// Repeated holdout with separate pools: training subsets come from the
/// train pool, test sets from the test pool.
pub fn cross_validate_pools(
    train_x: ArrayView2<'_, f64>,
    train_y: &[u8],
    test_x: ArrayView2<'_, f64>,
    test_y: &[u8],
    cv: &CvConfig,
    spec: &ClassifierSpec,
) -> Result<CvReport> {
    check_cv(train_x, train_y, cv)?;
    check_cv(test_x, test_y, cv)?;
    if cv.test_size > test_y.len() {
        return Err(Error::Validation(format!("test pool of {} cannot supply {}", test_y.len(), cv.test_size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cv.seed);
    let mut errors = Vec::with_capacity(cv.folds);
    for _ in 0..cv.folds {
        let mut groups = group_by_class(train_y, 0..train_y.len());
        let train = balanced_draw(&mut groups, cv.train_size, &mut rng)?;
        let mut test: Vec<usize> = (0..test_y.len()).collect();
        test.shuffle(&mut rng);
        test.truncate(cv.test_size);
        errors.push(run_fold(train_x, train_y, &train, test_x, test_y, &test, spec)?);
    }
    Ok(CvReport::from_errors(errors, cv.train_size, cv.test_size))
}

fn run_fold(
    train_x: ArrayView2<'_, f64>,
    train_y: &[u8],
    train_idx: &[usize],
    test_x: ArrayView2<'_, f64>,
    test_y: &[u8],
    test_idx: &[usize],
    spec: &ClassifierSpec,
) -> Result<f64> {
    let tx = train_x.select(Axis(0), train_idx);
    let ty: Vec<u8> = train_idx.iter().map(|&i| train_y[i]).collect();
    let qx = test_x.select(Axis(0), test_idx);
    let qy: Vec<u8> = test_idx.iter().map(|&i| test_y[i]).collect();
    let pred = spec.fit_predict(tx.view(), &ty, qx.view())?;
    Ok(error_rate(&pred, &qy))
}

/// Top-2 principal projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    /// `B x 2` projections of the centered data.
    pub scores: Array2<f64>,
    /// `2 x M` unit principal directions.
    pub components: Array2<f64>,
    /// Eigenvalues of the sample covariance (divisor `B - 1`).
    pub explained_variance: [f64; 2],
    pub mean: Array1<f64>,
}

const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITER: usize = 200_000;

/// Leading eigenpair of a symmetric positive semi-definite matrix by power
/// iteration, kept orthogonal to `against`. Iterates until successive
/// vectors agree far below the 1e-10 tolerance, since the eigenvector error
/// is the step size amplified by the eigengap. Returns `None` when the
/// matrix has no remaining variance.
fn power_iteration(c: &Array2<f64>, start: Array1<f64>, against: Option<ArrayView1<'_, f64>>, scale: f64) -> Option<(f64, Array1<f64>)> {
    let orthogonalize = |v: &mut Array1<f64>| {
        if let Some(u) = against {
            let p = v.dot(&u);
            v.scaled_add(-p, &u);
        }
    };
    let mut v = start;
    orthogonalize(&mut v);
    let n = v.dot(&v).sqrt();
    if n == 0.0 {
        return None;
    }
    v /= n;
    for _ in 0..PCA_MAX_ITER {
        let mut w = c.dot(&v);
        orthogonalize(&mut w);
        let norm = w.dot(&w).sqrt();
        if norm <= scale * 1e-14 {
            return None;
        }
        let next = w / norm;
        let delta = (&next - &v).mapv(f64::abs).fold(0.0f64, |m, &d| m.max(d));
        v = next;
        if delta < PCA_TOL * 1e-4 {
            break;
        }
    }
    let lambda = v.dot(&c.dot(&v));
    Some((lambda, v))
}

/// Projects mean-centered rows onto the two leading principal directions,
/// found by power iteration with deflation. Each direction's largest
/// loading is made positive.
pub fn pca_2d(x: ArrayView2<'_, f64>) -> Result<Pca2> {
    let (b, m) = x.dim();
    if b < 3 {
        return Err(Error::Validation(format!("PCA needs at least 3 rows, got {b}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("b >= 3");
    let centered = &x - &mean;
    let mut cov = centered.t().dot(&centered) / (b - 1) as f64;
    let scale = cov.diag().iter().fold(0.0f64, |s, &v| s + v.abs());
    if !(scale > 0.0) {
        return Err(Error::Validation("data has zero variance".into()));
    }
    let mut components = Array2::zeros((2, m));
    let mut variance = [0.0; 2];
    for k in 0..2.min(m) {
        // start from the highest-variance remaining axis, nudged so it is
        // unlikely to be orthogonal to the leading direction
        let diag = cov.diag();
        let axis = (0..m).fold(0, |best, i| if diag[i] > diag[best] { i } else { best });
        let start = Array1::from_shape_fn(m, |i| if i == axis { 1.0 } else { 1e-3 * (1.0 + i as f64 / m as f64) });
        let against = (k == 1).then(|| components.row(0).to_owned());
        let (lambda, mut v) = match power_iteration(&cov, start, against.as_ref().map(|a| a.view()), scale) {
            Some(pair) => pair,
            None if k == 0 => return Err(Error::Validation("data has zero variance".into())),
            None => (0.0, orthogonal_unit(components.row(0))),
        };
        let big = (0..m).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        if v[big] < 0.0 {
            v.mapv_inplace(|e| -e);
        }
        variance[k] = lambda.max(0.0);
        let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
        cov.scaled_add(-lambda, &outer);
        components.row_mut(k).assign(&v);
    }
    let scores = centered.dot(&components.t());
    Ok(Pca2 {
        scores,
        components,
        explained_variance: variance,
        mean,
    })
}

fn orthogonal_unit(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = v.len();
    let axis = (0..m).fold(0, |best, i| if v[i].abs() < v[best].abs() { i } else { best });
    let mut e = Array1::zeros(m);
    e[axis] = 1.0;
    let proj = e.dot(&v);
    e.scaled_add(-proj, &v);
    let n = e.dot(&e).sqrt();
    e / n
}

/// Mean within-class over mean between-class pairwise Euclidean distance.
pub fn class_distance_ratio(x: ArrayView2<'_, f64>, labels: &[u8]) -> f64 {
    let d = euclidean_distances(x, x);
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                within += d[[i, j]];
                nw += 1;
            } else {
                between += d[[i, j]];
                nb += 1;
            }
        }
    }
    (within / nw.max(1) as f64) / (between / nb.max(1) as f64)
}
