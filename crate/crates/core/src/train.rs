//! Training loop for the complex autoencoder.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::ComplexBasis;
use crate::data::dropout_inplace;
use crate::error::{Error, Result};
use crate::grad::{backward_with_targets, norm_penalty, LossPower};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::transforms::{sample_pair, PairScheme, TransformPairBatch, TransformSpec};

/// How row norms are kept in check between updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NormMode {
    /// Adds `lambda_mean * mean(norm) + lambda_dev * var(norm)` to the loss.
    Penalty { lambda_mean: f64, lambda_dev: f64 },
    /// Rescales every row to `target_norm` after each batch.
    Reset { target_norm: f64 },
    None,
}

impl NormMode {
    pub fn default_penalty() -> Self {
        NormMode::Penalty {
            lambda_mean: 1e-2,
            lambda_dev: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_basis: usize,
    pub p_norm: LossPower,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub transforms_per_epoch: usize,
    pub dropout_p: f64,
    pub norm_mode: NormMode,
    pub rng_seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_basis: 256,
            p_norm: LossPower::Two,
            learning_rate: 1e-3,
            batch_size: 1000,
            epochs: 500,
            transforms_per_epoch: 100_000,
            dropout_p: 0.5,
            norm_mode: NormMode::Reset { target_norm: 0.4 },
            rng_seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_basis == 0 {
            return Err(Error::Parameter("n_basis must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.transforms_per_epoch < self.batch_size {
            return Err(Error::Parameter(format!(
                "transforms_per_epoch ({}) is smaller than batch_size ({})",
                self.transforms_per_epoch, self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Parameter(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        match self.norm_mode {
            NormMode::Penalty { lambda_mean, lambda_dev } if lambda_mean < 0.0 || lambda_dev < 0.0 => {
                Err(Error::Parameter("norm penalty weights must be non-negative".into()))
            }
            NormMode::Reset { target_norm } if !(target_norm > 0.0) => {
                Err(Error::Parameter(format!("target norm must be positive, got {target_norm}")))
            }
            _ => Ok(()),
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.transforms_per_epoch / self.batch_size
    }
}

/// Anything that can hand out batches of transform pairs.
pub trait PairSource {
    fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<TransformPairBatch>;
}

impl<F> PairSource for F
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<TransformPairBatch>,
{
    fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<TransformPairBatch> {
        self(batch_size, rng)
    }
}

/// Pairs drawn from the rows of a fixed dataset.
pub struct DatasetPairs<'a> {
    pub data: ndarray::ArrayView2<'a, f64>,
    pub spec: &'a TransformSpec,
    pub scheme: PairScheme,
}

impl PairSource for DatasetPairs<'_> {
    fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<TransformPairBatch> {
        sample_pair(self.data, self.spec, self.scheme, batch_size, rng)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub basis: ComplexBasis,
    /// Mean reconstruction loss per epoch, norm penalty excluded.
    pub loss_history: Vec<f64>,
}

/// Initializes a basis from the config seed and trains it.
pub fn train(cfg: &TrainConfig, n_input: usize, source: &mut dyn PairSource) -> Result<TrainOutcome> {
    train_observed(cfg, n_input, source, &mut |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_observed(
    cfg: &TrainConfig,
    n_input: usize,
    source: &mut dyn PairSource,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if n_input == 0 {
        return Err(Error::Parameter("n_input must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut basis = ComplexBasis::random_uniform(cfg.n_basis, n_input, &mut rng);
    if let NormMode::Reset { target_norm } = cfg.norm_mode {
        basis.renormalize(target_norm)?;
    }
    let mut optim = OptimizerState::new(cfg.optimizer, &basis);
    let mut history = Vec::with_capacity(cfg.epochs);
    let steps = cfg.steps_per_epoch();

    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for step in 0..steps {
            let batch = source.next_batch(cfg.batch_size, &mut rng)?;
            if batch.n_input() != n_input {
                return Err(Error::Shape(format!(
                    "pair source produced rows of length {}, basis expects {n_input}",
                    batch.n_input()
                )));
            }
            let (in_a, in_b) = if cfg.dropout_p > 0.0 {
                let mut a: Array2<f64> = batch.a.clone();
                let mut b: Array2<f64> = batch.b.clone();
                dropout_inplace(&mut a, cfg.dropout_p, &mut rng)?;
                dropout_inplace(&mut b, cfg.dropout_p, &mut rng)?;
                (a, b)
            } else {
                (batch.a.clone(), batch.b.clone())
            };
            let (mut grads, loss) = backward_with_targets(&basis, in_a.view(), in_b.view(), batch.a.view(), batch.b.view(), cfg.p_norm)
                .map_err(|e| diverged(epoch, step, e))?;
            if let NormMode::Penalty { lambda_mean, lambda_dev } = cfg.norm_mode {
                let (_, pg) = norm_penalty(&basis, lambda_mean, lambda_dev)?;
                grads.add_assign(&pg)?;
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!("training diverged at epoch {epoch}, step {step}: loss {loss}")));
            }
            optim.step(&mut basis, &grads, cfg.learning_rate)?;
            if let NormMode::Reset { target_norm } = cfg.norm_mode {
                basis.renormalize(target_norm).map_err(|e| diverged(epoch, step, e))?;
            }
            total += loss;
        }
        let mean = total / steps as f64;
        history.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome {
        basis,
        loss_history: history,
    })
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("training diverged at epoch {epoch}, step {step}: {msg}")),
        other => other,
    }
}
