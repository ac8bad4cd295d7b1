//! Central finite-difference check of the analytic loss gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basis::ComplexBasis;
use crate::error::Result;
use crate::grad::{backward, min_abs_residual, reference_loss, GradientSet, LossPower};
use crate::transforms::{sample_pair, PairScheme, TransformSpec};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub n_input: usize,
    pub n_basis: usize,
    pub batch: usize,
    pub instances: usize,
    pub power: LossPower,
    pub step: f64,
    /// Denominator floor for the relative error.
    pub rel_floor: f64,
    pub tolerance: f64,
    /// For `p = 1`, instances with a residual closer than this to zero are skipped.
    pub residual_margin: f64,
    pub seed: u64,
    /// Negates the analytic gradient. Mutation hook for testing the checker.
    pub flip_sign: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_input: 12,
            n_basis: 8,
            batch: 4,
            instances: 20,
            power: LossPower::Two,
            step: 1e-5,
            rel_floor: 1e-6,
            tolerance: 1e-4,
            residual_margin: 1e-2,
            seed: 0,
            flip_sign: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err_w_re: f64,
    pub max_rel_err_w_im: f64,
    pub instances_checked: usize,
    pub instances_skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_w_re.max(self.max_rel_err_w_im)
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest element-wise relative error of `analytic` against central
/// differences of [`reference_loss`], for the real and imaginary blocks.
pub fn compare_with_differences(
    basis: &ComplexBasis,
    batch: &crate::transforms::TransformPairBatch,
    power: LossPower,
    analytic: &GradientSet,
    step: f64,
    rel_floor: f64,
) -> Result<(f64, f64)> {
    let mut worst = [0.0f64; 2];
    for (block, worst_block) in worst.iter_mut().enumerate() {
        let target = if block == 0 { &analytic.d_w_re } else { &analytic.d_w_im };
        for ((j, k), &g) in target.indexed_iter() {
            let eval = |delta: f64| -> Result<f64> {
                let mut b = basis.clone();
                let (re, im) = b.parts_mut();
                let w = if block == 0 { re } else { im };
                w[[j, k]] += delta;
                reference_loss(&b, batch, power)
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            *worst_block = worst_block.max(rel_err(g, numeric, rel_floor));
        }
    }
    Ok((worst[0], worst[1]))
}

/// Runs the check over `instances` random bases and shift-pair batches.
pub fn run_grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = TransformSpec::circular_shift(cfg.n_input);
    let mut report = GradCheckReport {
        max_rel_err_w_re: 0.0,
        max_rel_err_w_im: 0.0,
        instances_checked: 0,
        instances_skipped: 0,
        tolerance: cfg.tolerance,
        passed: true,
    };
    for _ in 0..cfg.instances {
        let basis = ComplexBasis::random_uniform(cfg.n_basis, cfg.n_input, &mut rng);
        let data = Array2::from_shape_simple_fn((cfg.batch, cfg.n_input), || rng.random_range(-1.0..1.0));
        let batch = sample_pair(data.view(), &spec, PairScheme::Double, cfg.batch, &mut rng)?;
        if cfg.power == LossPower::One && min_abs_residual(&basis, &batch)? < cfg.residual_margin {
            report.instances_skipped += 1;
            continue;
        }
        let (mut grads, _) = backward(&basis, &batch, cfg.power)?;
        if cfg.flip_sign {
            grads.d_w_re.mapv_inplace(|v| -v);
            grads.d_w_im.mapv_inplace(|v| -v);
        }
        let (re, im) = compare_with_differences(&basis, &batch, cfg.power, &grads, cfg.step, cfg.rel_floor)?;
        report.max_rel_err_w_re = report.max_rel_err_w_re.max(re);
        report.max_rel_err_w_im = report.max_rel_err_w_im.max(im);
        report.instances_checked += 1;
    }
    report.passed = report.instances_checked > 0 && report.max_rel_err() <= cfg.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_passes() {
        let report = run_grad_check(&GradCheckConfig {
            instances: 3,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn wrong_sign_fails() {
        let report = run_grad_check(&GradCheckConfig {
            instances: 2,
            flip_sign: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_err() > 1.0);
    }

    #[test]
    fn l1_skips_near_zero_residuals() {
        let report = run_grad_check(&GradCheckConfig {
            instances: 4,
            power: LossPower::One,
            residual_margin: 10.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(report.instances_skipped, 4);
        assert!(!report.passed);
    }
}
