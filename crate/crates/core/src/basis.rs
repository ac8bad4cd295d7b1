//! Complex basis, polar coding and the swapped reconstruction.
//!
//! A basis holds `M` complex rows split into a real part `w_re` and an
//! imaginary part `w_im`, both `M x N`. Projecting an input `x` gives
//! `re = w_re x` and `im = w_im x`, which are then expressed in polar form.
//!
//! The phase uses the `atan2(re, im)` convention, so `re = r sin(phase)` and
//! `im = r cos(phase)`. Reconstruction follows the same convention: the real
//! path carries `sin` and the imaginary path carries `cos`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{ensure_finite, ensure_len, Error, Result};

/// `M` learnable complex basis vectors over inputs of length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBasis {
    w_re: Array2<f64>,
    w_im: Array2<f64>,
}

/// Phase and magnitude of a projected sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarCode {
    /// Angles in `[0, 2pi)`.
    pub phase: Array1<f64>,
    /// Non-negative magnitudes.
    pub magnitude: Array1<f64>,
}

impl ComplexBasis {
    pub fn new(w_re: Array2<f64>, w_im: Array2<f64>) -> Result<Self> {
        if w_re.dim() != w_im.dim() {
            return Err(Error::Shape(format!(
                "real part is {:?} but imaginary part is {:?}",
                w_re.dim(),
                w_im.dim()
            )));
        }
        if w_re.nrows() == 0 || w_re.ncols() == 0 {
            return Err(Error::Shape("basis must have at least one row and column".into()));
        }
        ensure_finite("basis real part", w_re.iter())?;
        ensure_finite("basis imaginary part", w_im.iter())?;
        Ok(Self { w_re, w_im })
    }

    /// Entries drawn i.i.d. from `U[-1/sqrt(N), 1/sqrt(N)]`.
    pub fn random_uniform<R: Rng + ?Sized>(n_basis: usize, n_input: usize, rng: &mut R) -> Self {
        assert!(n_basis > 0 && n_input > 0, "basis dimensions must be positive");
        let bound = 1.0 / (n_input as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let w_re = Array2::from_shape_simple_fn((n_basis, n_input), &mut draw);
        let w_im = Array2::from_shape_simple_fn((n_basis, n_input), &mut draw);
        Self { w_re, w_im }
    }

    /// Unitary DFT basis with `M = N`: `w_re[j,k] = cos(2pi jk/N)/sqrt(N)`,
    /// `w_im[j,k] = -sin(2pi jk/N)/sqrt(N)`.
    pub fn dft(n: usize) -> Self {
        let freqs: Vec<usize> = (0..n).collect();
        Self::dft_rows(n, &freqs)
    }

    /// DFT rows restricted to the listed frequencies.
    pub fn dft_rows(n: usize, freqs: &[usize]) -> Self {
        assert!(n > 0 && !freqs.is_empty(), "DFT basis needs n > 0 and at least one row");
        let scale = 1.0 / (n as f64).sqrt();
        let angle = |j: usize, k: usize| 2.0 * PI * ((j * k) % n) as f64 / n as f64;
        let w_re = Array2::from_shape_fn((freqs.len(), n), |(r, k)| angle(freqs[r], k).cos() * scale);
        let w_im = Array2::from_shape_fn((freqs.len(), n), |(r, k)| -angle(freqs[r], k).sin() * scale);
        Self { w_re, w_im }
    }

    /// Per-frame DFT along the bin axis of a flattened `frames x bins` n-gram
    /// (time-major, element `(t, f)` at `t * bins + f`). Keeps frequencies
    /// `0..=bins/2` for every frame, so `M = frames * (bins/2 + 1)`.
    ///
    /// Magnitudes are exactly invariant to a circular shift along the bin axis.
    pub fn dft_along_bins(frames: usize, bins: usize) -> Self {
        assert!(frames > 0 && bins > 0, "n-gram dimensions must be positive");
        let n_freq = bins / 2 + 1;
        let n = frames * bins;
        let scale = 1.0 / (bins as f64).sqrt();
        let mut w_re = Array2::zeros((frames * n_freq, n));
        let mut w_im = Array2::zeros((frames * n_freq, n));
        for t in 0..frames {
            for f in 0..n_freq {
                let row = t * n_freq + f;
                for b in 0..bins {
                    let a = 2.0 * PI * ((f * b) % bins) as f64 / bins as f64;
                    w_re[[row, t * bins + b]] = a.cos() * scale;
                    w_im[[row, t * bins + b]] = -a.sin() * scale;
                }
            }
        }
        Self { w_re, w_im }
    }

    pub fn n_basis(&self) -> usize {
        self.w_re.nrows()
    }

    pub fn n_input(&self) -> usize {
        self.w_re.ncols()
    }

    pub fn w_re(&self) -> &Array2<f64> {
        &self.w_re
    }

    pub fn w_im(&self) -> &Array2<f64> {
        &self.w_im
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.w_re, &mut self.w_im)
    }

    /// `sqrt(|w_re_j|^2 + |w_im_j|^2)` for every row.
    pub fn row_norms(&self) -> Array1<f64> {
        let sq = |w: &Array2<f64>| w.map_axis(Axis(1), |row| row.dot(&row));
        (sq(&self.w_re) + sq(&self.w_im)).mapv(f64::sqrt)
    }

    pub fn project(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        ensure_len("input", x.len(), self.n_input())?;
        ensure_finite("input", x.iter())?;
        Ok((self.w_re.dot(&x), self.w_im.dot(&x)))
    }

    /// Projects every row of `xs` (`B x N`), returning `B x M` real and imaginary parts.
    pub fn project_rows(&self, xs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        ensure_len("input rows", xs.ncols(), self.n_input())?;
        ensure_finite("input rows", xs.iter())?;
        Ok((xs.dot(&self.w_re.t()), xs.dot(&self.w_im.t())))
    }

    pub fn encode(&self, x: ArrayView1<'_, f64>) -> Result<PolarCode> {
        let (re, im) = self.project(x)?;
        polar_encode(re.view(), im.view())
    }

    /// `w_re^T (r sin(phase)) + w_im^T (r cos(phase))` with the phase of one
    /// sample and the magnitudes of another.
    pub fn reconstruct_swapped(
        &self,
        phase_own: ArrayView1<'_, f64>,
        magnitude_other: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        ensure_len("phase", phase_own.len(), self.n_basis())?;
        ensure_len("magnitude", magnitude_other.len(), self.n_basis())?;
        let mut sin_part = Array1::zeros(self.n_basis());
        let mut cos_part = Array1::zeros(self.n_basis());
        Zip::from(&mut sin_part)
            .and(&mut cos_part)
            .and(phase_own)
            .and(magnitude_other)
            .for_each(|s, c, &phi, &r| {
                *s = r * phi.sin();
                *c = r * phi.cos();
            });
        Ok(self.w_re.t().dot(&sin_part) + self.w_im.t().dot(&cos_part))
    }

    /// Magnitude-space features for every row of `xs`.
    pub fn magnitude_features(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (re, im) = self.project_rows(xs)?;
        Ok(Zip::from(&re).and(&im).map_collect(|&a, &b| a.hypot(b)))
    }

    /// Wrapped phase difference `phase(x) - phase(y)` in `(-pi, pi]`.
    pub fn phase_difference(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let px = self.encode(x)?;
        let py = self.encode(y)?;
        Ok(Zip::from(&px.phase)
            .and(&py.phase)
            .map_collect(|&a, &b| wrap_phase(a - b)))
    }

    /// Scales each complex row to the given norm.
    pub fn renormalize(&mut self, target_norm: f64) -> Result<()> {
        if !(target_norm > 0.0 && target_norm.is_finite()) {
            return Err(Error::Parameter(format!("target norm must be positive, got {target_norm}")));
        }
        let norms = self.row_norms();
        if let Some(j) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Numeric(format!("basis row {j} has zero norm")));
        }
        for (j, &n) in norms.iter().enumerate() {
            let s = target_norm / n;
            self.w_re.row_mut(j).mapv_inplace(|v| v * s);
            self.w_im.row_mut(j).mapv_inplace(|v| v * s);
        }
        Ok(())
    }

    pub fn renormalized(mut self, target_norm: f64) -> Result<Self> {
        self.renormalize(target_norm)?;
        Ok(self)
    }
}

/// Polar form of `re + i im` with `phase = atan2(re, im)` mapped to `[0, 2pi)`.
pub fn polar_encode(re: ArrayView1<'_, f64>, im: ArrayView1<'_, f64>) -> Result<PolarCode> {
    ensure_len("imaginary part", im.len(), re.len())?;
    ensure_finite("real part", re.iter())?;
    ensure_finite("imaginary part", im.iter())?;
    let magnitude = Zip::from(&re).and(&im).map_collect(|&a, &b| a.hypot(b));
    let phase = Zip::from(&re).and(&im).map_collect(|&a, &b| {
        let p = a.atan2(b);
        if p < 0.0 {
            // rem_euclid can round up to exactly 2pi for tiny negative angles
            let q = p + 2.0 * PI;
            if q >= 2.0 * PI {
                0.0
            } else {
                q
            }
        } else {
            p
        }
    });
    Ok(PolarCode { phase, magnitude })
}

impl PolarCode {
    /// `(r sin(phase), r cos(phase))`.
    pub fn to_cartesian(&self) -> (Array1<f64>, Array1<f64>) {
        let re = Zip::from(&self.phase)
            .and(&self.magnitude)
            .map_collect(|&p, &r| r * p.sin());
        let im = Zip::from(&self.phase)
            .and(&self.magnitude)
            .map_collect(|&p, &r| r * p.cos());
        (re, im)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::transforms::circular_shift_1d;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
        Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn project_identity_rows() {
        let b = ComplexBasis::new(array![[1.0, 0.0]], array![[0.0, 1.0]]).unwrap();
        let (re, im) = b.project(array![3.0, 4.0].view()).unwrap();
        assert_eq!(re, array![3.0]);
        assert_eq!(im, array![4.0]);

        let (re, im) = b.project(array![0.0, 0.0].view()).unwrap();
        assert_eq!(re, array![0.0]);
        assert_eq!(im, array![0.0]);
    }

    #[test]
    fn project_dft_impulse() {
        let b = ComplexBasis::dft(8);
        let mut x = Array1::zeros(8);
        x[0] = 1.0;
        let (re, im) = b.project(x.view()).unwrap();
        for j in 0..8 {
            assert_abs_diff_eq!(re[j], 1.0 / 8f64.sqrt(), epsilon = 1e-15);
            assert_abs_diff_eq!(im[j], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn project_rejects_bad_input() {
        let b = ComplexBasis::dft(4);
        assert!(matches!(b.project(array![1.0, 2.0].view()), Err(Error::Shape(_))));
        assert!(matches!(
            b.project(array![1.0, f64::NAN, 0.0, 0.0].view()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn polar_examples() {
        let p = polar_encode(array![0.0].view(), array![1.0].view()).unwrap();
        assert_eq!((p.phase[0], p.magnitude[0]), (0.0, 1.0));
        let p = polar_encode(array![1.0].view(), array![0.0].view()).unwrap();
        assert_abs_diff_eq!(p.phase[0], PI / 2.0, epsilon = 1e-15);
        assert_eq!(p.magnitude[0], 1.0);
        let p = polar_encode(array![3.0].view(), array![4.0].view()).unwrap();
        assert_eq!(p.magnitude[0], 5.0);
        assert_abs_diff_eq!(p.phase[0], 0.643_501_108_793_284_4, epsilon = 1e-15);
        assert!(polar_encode(array![1.0, 2.0].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn polar_phase_range() {
        let p = polar_encode(array![-1.0, -1e-300, 0.0, -3.0].view(), array![0.0, 1.0, -1.0, -4.0].view()).unwrap();
        assert!(p.phase.iter().all(|&v| (0.0..2.0 * PI).contains(&v)));
    }

    #[test]
    fn reconstruct_zero_magnitude_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ComplexBasis::random_uniform(5, 7, &mut rng);
        let out = b
            .reconstruct_swapped(random_vec(5, &mut rng).view(), Array1::zeros(5).view())
            .unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_identity_round_trip() {
        let b = ComplexBasis::new(Array2::eye(2), Array2::zeros((2, 2))).unwrap();
        let x = array![2.0, -1.0];
        let code = b.encode(x.view()).unwrap();
        let out = b.reconstruct_swapped(code.phase.view(), code.magnitude.view()).unwrap();
        assert_abs_diff_eq!(out, x, epsilon = 1e-15);
    }

    #[test]
    fn reconstruct_dft_with_shifted_magnitudes() {
        // M = N DFT basis: W^* W = I, so Re-part reconstruction recovers x.
        // For real x the Re/Im split gives exactly x since
        // w_re^T re + w_im^T im = Re(W^* W x) = x.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = ComplexBasis::dft(8);
        let x = random_vec(8, &mut rng);
        let shifted = circular_shift_1d(x.view(), 3);
        let own = b.encode(x.view()).unwrap();
        let other = b.encode(shifted.view()).unwrap();
        let out = b.reconstruct_swapped(own.phase.view(), other.magnitude.view()).unwrap();
        assert_abs_diff_eq!(out, x, epsilon = 1e-10);
    }

    #[test]
    fn magnitude_examples() {
        let b = ComplexBasis::dft(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_vec(16, &mut rng);
        let rows = ndarray::stack![Axis(0), x, circular_shift_1d(x.view(), 5), Array1::zeros(16), &x * 2.5];
        let mags = b.magnitude_features(rows.view()).unwrap();
        assert_abs_diff_eq!(mags.row(0), mags.row(1), epsilon = 1e-10);
        assert!(mags.row(2).iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(mags.row(3), mags.row(0).mapv(|v| v * 2.5), epsilon = 1e-12);
    }

    #[test]
    fn phase_difference_examples() {
        let b = ComplexBasis::dft(8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_vec(8, &mut rng);
        let y = random_vec(8, &mut rng);
        let d = b.phase_difference(x.view(), x.view()).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        let dxy = b.phase_difference(x.view(), y.view()).unwrap();
        let dyx = b.phase_difference(y.view(), x.view()).unwrap();
        for (a, c) in dxy.iter().zip(dyx.iter()) {
            assert_abs_diff_eq!(wrap_phase(a + c), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_abs_diff_eq!(wrap_phase(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_phase(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_eq!(wrap_phase(0.0), 0.0);
    }

    #[test]
    fn renormalize_examples() {
        let mut b = ComplexBasis::new(array![[0.8, 0.0]], array![[0.0, 0.0]]).unwrap();
        b.renormalize(0.4).unwrap();
        assert_abs_diff_eq!(b.w_re()[[0, 0]], 0.4, epsilon = 1e-15);

        let before = b.clone();
        b.renormalize(0.4).unwrap();
        assert_abs_diff_eq!(b.w_re(), before.w_re(), epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = ComplexBasis::random_uniform(9, 13, &mut rng).renormalized(0.4).unwrap();
        for n in b.row_norms() {
            assert_abs_diff_eq!(n, 0.4, epsilon = 1e-12);
        }

        let mut z = ComplexBasis::new(array![[1.0], [0.0]], array![[0.0], [0.0]]).unwrap();
        assert!(matches!(z.renormalize(0.4), Err(Error::Numeric(_))));
        assert!(matches!(z.renormalize(0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn dft_along_bins_is_shift_invariant() {
        let b = ComplexBasis::dft_along_bins(3, 10);
        assert_eq!(b.n_basis(), 3 * 6);
        assert_eq!(b.n_input(), 30);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((3, 10), || rng.random_range(0.0..1.0));
        let mut y = Array2::zeros((3, 10));
        for t in 0..3 {
            for f in 0..10 {
                y[[t, (f + 4) % 10]] = x[[t, f]];
            }
        }
        let rows = ndarray::stack![
            Axis(0),
            x.to_shape(30).unwrap().view(),
            y.to_shape(30).unwrap().view()
        ];
        let m = b.magnitude_features(rows.view()).unwrap();
        assert_abs_diff_eq!(m.row(0), m.row(1), epsilon = 1e-12);
    }
}
