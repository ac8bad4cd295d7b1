//! Symmetric swapped-magnitude reconstruction loss and its analytic gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::basis::ComplexBasis;
use crate::error::{ensure_len, Error, Result};
use crate::transforms::TransformPairBatch;

/// Exponent of the per-element reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LossPower {
    /// Mean absolute error. The subgradient at zero is taken as zero.
    One,
    /// Mean squared error.
    Two,
}

impl TryFrom<u8> for LossPower {
    type Error = Error;

    fn try_from(p: u8) -> Result<Self> {
        match p {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(Error::Parameter(format!("loss power must be 1 or 2, got {p}"))),
        }
    }
}

impl From<LossPower> for u8 {
    fn from(p: LossPower) -> u8 {
        match p {
            LossPower::One => 1,
            LossPower::Two => 2,
        }
    }
}

impl LossPower {
    #[inline]
    fn value(self, r: f64) -> f64 {
        match self {
            Self::One => r.abs(),
            Self::Two => r * r,
        }
    }

    #[inline]
    fn derivative(self, r: f64) -> f64 {
        match self {
            Self::One => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::Two => 2.0 * r,
        }
    }
}

/// Gradients with respect to both halves of a [`ComplexBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_w_re: Array2<f64>,
    pub d_w_im: Array2<f64>,
}

impl GradientSet {
    pub fn zeros(n_basis: usize, n_input: usize) -> Self {
        Self {
            d_w_re: Array2::zeros((n_basis, n_input)),
            d_w_im: Array2::zeros((n_basis, n_input)),
        }
    }

    pub fn zeros_like(basis: &ComplexBasis) -> Self {
        Self::zeros(basis.n_basis(), basis.n_input())
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.d_w_re.dim() != other.d_w_re.dim() {
            return Err(Error::Shape(format!(
                "gradient shapes differ: {:?} vs {:?}",
                self.d_w_re.dim(),
                other.d_w_re.dim()
            )));
        }
        self.d_w_re += &other.d_w_re;
        self.d_w_im += &other.d_w_im;
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.d_w_re
            .iter()
            .chain(self.d_w_im.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.d_w_re.iter().chain(self.d_w_im.iter()).all(|v| v.is_finite())
    }
}

/// `(1/N) sum |x - x_hat|^p + (1/N) sum |tx - tx_hat|^p`.
pub fn loss(
    x: ArrayView1<'_, f64>,
    x_hat: ArrayView1<'_, f64>,
    tx: ArrayView1<'_, f64>,
    tx_hat: ArrayView1<'_, f64>,
    p: LossPower,
) -> Result<f64> {
    let n = x.len();
    ensure_len("reconstruction", x_hat.len(), n)?;
    ensure_len("transformed input", tx.len(), n)?;
    ensure_len("transformed reconstruction", tx_hat.len(), n)?;
    if n == 0 {
        return Err(Error::Shape("loss over empty vectors".into()));
    }
    let term = |a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>| {
        Zip::from(&a).and(&b).fold(0.0, |acc, &u, &v| acc + p.value(u - v)) / n as f64
    };
    Ok(term(x, x_hat) + term(tx, tx_hat))
}

/// Unit phase vectors `(sin, cos)` of `atan2(re, im)`, with `(0, 1)` at the origin.
#[inline]
fn unit_phase(re: f64, im: f64, r: f64) -> (f64, f64) {
    if r > 0.0 {
        (re / r, im / r)
    } else {
        (0.0, 1.0)
    }
}

/// Mean loss and gradients over a batch, reconstructing the batch's own inputs.
pub fn backward(basis: &ComplexBasis, batch: &TransformPairBatch, p: LossPower) -> Result<(GradientSet, f64)> {
    backward_with_targets(basis, batch.a.view(), batch.b.view(), batch.a.view(), batch.b.view(), p)
}

/// Mean loss and gradients where the encoder sees `(in_a, in_b)` and the
/// reconstructions are scored against `(target_a, target_b)`. Training uses
/// this with dropped-out inputs and clean targets.
pub fn backward_with_targets(
    basis: &ComplexBasis,
    in_a: ArrayView2<'_, f64>,
    in_b: ArrayView2<'_, f64>,
    target_a: ArrayView2<'_, f64>,
    target_b: ArrayView2<'_, f64>,
    p: LossPower,
) -> Result<(GradientSet, f64)> {
    let bsz = in_a.nrows();
    let n = basis.n_input();
    let m = basis.n_basis();
    if bsz == 0 {
        return Err(Error::Validation("batch is empty".into()));
    }
    for (name, arr) in [("a", &in_a), ("b", &in_b), ("target a", &target_a), ("target b", &target_b)] {
        if arr.dim() != (bsz, n) {
            return Err(Error::Shape(format!("{name} is {:?}, expected {:?}", arr.dim(), (bsz, n))));
        }
    }
    let w_re = basis.w_re();
    let w_im = basis.w_im();

    let re_a = in_a.dot(&w_re.t());
    let im_a = in_a.dot(&w_im.t());
    let re_b = in_b.dot(&w_re.t());
    let im_b = in_b.dot(&w_im.t());
    let r_a = Zip::from(&re_a).and(&im_a).map_collect(|&u, &v| u.hypot(v));
    let r_b = Zip::from(&re_b).and(&im_b).map_collect(|&u, &v| u.hypot(v));

    // Swapped codes: x is rebuilt from its own phase and b's magnitude, and
    // vice versa.
    let mut u_x = Array2::zeros((bsz, m));
    let mut v_x = Array2::zeros((bsz, m));
    let mut u_y = Array2::zeros((bsz, m));
    let mut v_y = Array2::zeros((bsz, m));
    for idx in 0..bsz * m {
        let (i, j) = (idx / m, idx % m);
        let (sa, ca) = unit_phase(re_a[[i, j]], im_a[[i, j]], r_a[[i, j]]);
        let (sb, cb) = unit_phase(re_b[[i, j]], im_b[[i, j]], r_b[[i, j]]);
        u_x[[i, j]] = r_b[[i, j]] * sa;
        v_x[[i, j]] = r_b[[i, j]] * ca;
        u_y[[i, j]] = r_a[[i, j]] * sb;
        v_y[[i, j]] = r_a[[i, j]] * cb;
    }
    let x_hat = u_x.dot(w_re) + v_x.dot(w_im);
    let y_hat = u_y.dot(w_re) + v_y.dot(w_im);

    let scale = 1.0 / (n as f64 * bsz as f64);
    let mut g_x = x_hat - target_a;
    let mut g_y = y_hat - target_b;
    let per_sample = Zip::from(g_x.rows())
        .and(g_y.rows())
        .map_collect(|rx, ry| (rx.fold(0.0, |s, &r| s + p.value(r)) + ry.fold(0.0, |s, &r| s + p.value(r))) / n as f64);
    if let Some(i) = per_sample.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss at batch index {i}")));
    }
    let mean_loss = per_sample.sum() / bsz as f64;
    g_x.mapv_inplace(|r| p.derivative(r) * scale);
    g_y.mapv_inplace(|r| p.derivative(r) * scale);

    // Direct dependence through the transposed reconstruction weights.
    let mut d_w_re = u_x.t().dot(&g_x) + u_y.t().dot(&g_y);
    let mut d_w_im = v_x.t().dot(&g_x) + v_y.t().dot(&g_y);

    // Back through the swapped polar codes to the projections.
    let gu_x = g_x.dot(&w_re.t());
    let gv_x = g_x.dot(&w_im.t());
    let gu_y = g_y.dot(&w_re.t());
    let gv_y = g_y.dot(&w_im.t());
    let mut d_re_a = Array2::zeros((bsz, m));
    let mut d_im_a = Array2::zeros((bsz, m));
    let mut d_re_b = Array2::zeros((bsz, m));
    let mut d_im_b = Array2::zeros((bsz, m));
    for idx in 0..bsz * m {
        let ij = [idx / m, idx % m];
        let (ra, rb) = (r_a[ij], r_b[ij]);
        let (xa, ya) = (re_a[ij], im_a[ij]);
        let (xb, yb) = (re_b[ij], im_b[ij]);
        if ra > 0.0 {
            // u = rb * xa / ra, v = rb * ya / ra
            let (gu, gv) = (gu_x[ij], gv_x[ij]);
            let cross = (gu * ya - gv * xa) / (ra * ra * ra);
            d_re_a[ij] += rb * ya * cross;
            d_im_a[ij] -= rb * xa * cross;
            if rb > 0.0 {
                let d_rb = (gu * xa + gv * ya) / ra;
                d_re_b[ij] += d_rb * xb / rb;
                d_im_b[ij] += d_rb * yb / rb;
            }
        }
        if rb > 0.0 {
            let (gu, gv) = (gu_y[ij], gv_y[ij]);
            let cross = (gu * yb - gv * xb) / (rb * rb * rb);
            d_re_b[ij] += ra * yb * cross;
            d_im_b[ij] -= ra * xb * cross;
            if ra > 0.0 {
                let d_ra = (gu * xb + gv * yb) / rb;
                d_re_a[ij] += d_ra * xa / ra;
                d_im_a[ij] += d_ra * ya / ra;
            }
        }
    }
    d_w_re += &d_re_a.t().dot(&in_a);
    d_w_re += &d_re_b.t().dot(&in_b);
    d_w_im += &d_im_a.t().dot(&in_a);
    d_w_im += &d_im_b.t().dot(&in_b);

    let grads = GradientSet { d_w_re, d_w_im };
    if !grads.is_finite() {
        let bad = Zip::from(r_a.rows())
            .and(r_b.rows())
            .map_collect(|a, b| a.iter().chain(b.iter()).all(|v| v.is_finite()))
            .iter()
            .position(|ok| !ok)
            .unwrap_or(0);
        return Err(Error::Numeric(format!("non-finite gradient at batch index {bad}")));
    }
    Ok((grads, mean_loss))
}

/// Per-sample loss computed through the public polar route, one sample at a
/// time. Slow, but independent of [`backward_with_targets`].
pub fn reference_loss(basis: &ComplexBasis, batch: &TransformPairBatch, p: LossPower) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("batch is empty".into()));
    }
    let mut total = 0.0;
    for (x, tx) in batch.a.outer_iter().zip(batch.b.outer_iter()) {
        let cx = basis.encode(x)?;
        let ct = basis.encode(tx)?;
        let x_hat = basis.reconstruct_swapped(cx.phase.view(), ct.magnitude.view())?;
        let tx_hat = basis.reconstruct_swapped(ct.phase.view(), cx.magnitude.view())?;
        total += loss(x, x_hat.view(), tx, tx_hat.view(), p)?;
    }
    Ok(total / batch.len() as f64)
}

/// `lambda_mean * mean(norm) + lambda_dev * mean((norm - mean_norm)^2)` over
/// the complex row norms, with its gradient.
pub fn norm_penalty(basis: &ComplexBasis, lambda_mean: f64, lambda_dev: f64) -> Result<(f64, GradientSet)> {
    if lambda_mean < 0.0 || lambda_dev < 0.0 {
        return Err(Error::Parameter("norm penalty weights must be non-negative".into()));
    }
    let norms = basis.row_norms();
    let m = norms.len() as f64;
    let mean = norms.mean().unwrap_or(0.0);
    let dev = norms.mapv(|v| (v - mean) * (v - mean)).mean().unwrap_or(0.0);
    let value = lambda_mean * mean + lambda_dev * dev;

    let mut grads = GradientSet::zeros_like(basis);
    if lambda_mean == 0.0 && lambda_dev == 0.0 {
        return Ok((value, grads));
    }
    // d(mean dev)/d norm_j = 2 (norm_j - mean) / M; the mean's own dependence cancels.
    let d_norm: Array1<f64> = norms.mapv(|v| lambda_mean / m + lambda_dev * 2.0 * (v - mean) / m);
    for (j, (&nj, &dn)) in norms.iter().zip(d_norm.iter()).enumerate() {
        if nj > 0.0 {
            let s = dn / nj;
            grads.d_w_re.row_mut(j).assign(&basis.w_re().row(j).mapv(|w| w * s));
            grads.d_w_im.row_mut(j).assign(&basis.w_im().row(j).mapv(|w| w * s));
        }
    }
    Ok((value, grads))
}

/// Per-row residual magnitudes, used to exclude non-smooth points of the
/// L1 loss from finite-difference checks.
pub fn min_abs_residual(basis: &ComplexBasis, batch: &TransformPairBatch) -> Result<f64> {
    let mut min = f64::INFINITY;
    for (x, tx) in batch.a.outer_iter().zip(batch.b.outer_iter()) {
        let cx = basis.encode(x)?;
        let ct = basis.encode(tx)?;
        let x_hat = basis.reconstruct_swapped(cx.phase.view(), ct.magnitude.view())?;
        let tx_hat = basis.reconstruct_swapped(ct.phase.view(), cx.magnitude.view())?;
        let r = (&x_hat - &x)
            .iter()
            .chain((&tx_hat - &tx).iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        min = min.min(r);
    }
    Ok(min)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::transforms::{sample_pair, PairScheme, TransformSpec};

    #[test]
    fn loss_examples() {
        let z = array![0.0, 0.0];
        let x = array![1.0, 0.0];
        assert_eq!(loss(x.view(), x.view(), z.view(), z.view(), LossPower::Two).unwrap(), 0.0);
        assert_eq!(loss(x.view(), z.view(), z.view(), z.view(), LossPower::Two).unwrap(), 0.5);
        let x = array![1.0, -1.0];
        assert_eq!(loss(x.view(), z.view(), z.view(), z.view(), LossPower::One).unwrap(), 1.0);
        assert!(loss(x.view(), array![1.0].view(), z.view(), z.view(), LossPower::One).is_err());
    }

    #[test]
    fn loss_is_symmetric() {
        let a = array![0.3, -1.2, 2.0];
        let b = array![0.1, 0.2, -0.3];
        let c = array![1.0, 1.0, 0.0];
        let d = array![-0.5, 0.0, 0.25];
        for p in [LossPower::One, LossPower::Two] {
            let l1 = loss(a.view(), b.view(), c.view(), d.view(), p).unwrap();
            let l2 = loss(c.view(), d.view(), a.view(), b.view(), p).unwrap();
            assert_eq!(l1, l2);
        }
    }

    #[test]
    fn loss_power_parses() {
        assert_eq!(LossPower::try_from(1).unwrap(), LossPower::One);
        assert!(LossPower::try_from(3).is_err());
    }

    #[test]
    fn batched_loss_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = ComplexBasis::random_uniform(6, 10, &mut rng);
        let data = Array2::from_shape_simple_fn((8, 10), || rng.random_range(-1.0..1.0));
        let batch = sample_pair(data.view(), &TransformSpec::circular_shift(10), PairScheme::Double, 5, &mut rng).unwrap();
        for p in [LossPower::One, LossPower::Two] {
            let (_, l) = backward(&basis, &batch, p).unwrap();
            assert_abs_diff_eq!(l, reference_loss(&basis, &batch, p).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_reconstruction_has_zero_gradient() {
        // Unitary DFT basis on shift pairs reconstructs exactly, so the L2 loss
        // sits at a flat minimum.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_simple_fn((4, 8), || rng.random_range(-1.0..1.0));
        let batch = sample_pair(data.view(), &TransformSpec::circular_shift(8), PairScheme::Double, 6, &mut rng).unwrap();
        let (g, l) = backward(&ComplexBasis::dft(8), &batch, LossPower::Two).unwrap();
        assert!(l < 1e-25);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn norm_penalty_examples() {
        let equal = ComplexBasis::new(array![[2.0, 0.0], [0.0, 2.0]], Array2::zeros((2, 2))).unwrap();
        let (v, _) = norm_penalty(&equal, 0.5, 3.0).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);

        let (v, g) = norm_penalty(&equal, 0.0, 0.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.max_abs(), 0.0);

        let two = ComplexBasis::new(array![[1.0, 0.0], [0.0, 3.0]], Array2::zeros((2, 2))).unwrap();
        let (v, _) = norm_penalty(&two, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-15);

        assert!(norm_penalty(&two, -1.0, 0.0).is_err());
    }

    #[test]
    fn norm_penalty_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let basis = ComplexBasis::random_uniform(4, 5, &mut rng);
        let (_, g) = norm_penalty(&basis, 0.7, 1.3).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            for k in 0..5 {
                let mut plus = basis.clone();
                plus.parts_mut().0[[j, k]] += h;
                let mut minus = basis.clone();
                minus.parts_mut().0[[j, k]] -= h;
                let num = (norm_penalty(&plus, 0.7, 1.3).unwrap().0 - norm_penalty(&minus, 0.7, 1.3).unwrap().0) / (2.0 * h);
                assert_abs_diff_eq!(num, g.d_w_re[[j, k]], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let basis = ComplexBasis::dft(4);
        let e = Array2::<f64>::zeros((0, 4));
        let batch = TransformPairBatch::new(e.clone(), e, vec![]).unwrap();
        assert!(matches!(backward(&basis, &batch, LossPower::Two), Err(Error::Validation(_))));
    }
}
