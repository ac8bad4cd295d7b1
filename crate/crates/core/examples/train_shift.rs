//! Learn a shift-invariant basis from pairs of circularly shifted signals and
//! measure how much magnitudes move on held-out data.

use cae::data::harmonic_signals;
use cae::train::{train_observed, DatasetPairs, NormMode, TrainConfig};
use cae::transforms::{circular_shift_1d, PairScheme, TransformSpec};
use cae::LossPower;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let (n, m) = (32, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = harmonic_signals(2000, n, 6, &mut rng);
    let spec = TransformSpec::circular_shift(n);
    let cfg = TrainConfig {
        n_basis: m,
        p_norm: LossPower::Two,
        learning_rate: 3e-3,
        batch_size: 50,
        epochs: 60,
        transforms_per_epoch: 2000,
        dropout_p: 0.0,
        norm_mode: NormMode::None,
        rng_seed: 4,
        ..Default::default()
    };
    let mut pairs = DatasetPairs { data: data.view(), spec: &spec, scheme: PairScheme::Double };
    let out = train_observed(&cfg, n, &mut pairs, &mut |e, loss| {
        if e % 10 == 0 {
            println!("epoch {e:3}: loss {loss:.5}");
        }
    })
    .unwrap();

    let held_out = harmonic_signals(500, n, 6, &mut rng);
    let mut total = 0.0;
    for x in held_out.outer_iter() {
        let y = circular_shift_1d(x, rng.random_range(0..n as i64));
        let (mx, my) = (out.basis.encode(x).unwrap().magnitude, out.basis.encode(y.view()).unwrap().magnitude);
        total += (&mx - &my).mapv(f64::abs).sum() / mx.sum().max(1e-12);
    }
    println!("held-out mean relative magnitude change: {:.4}", total / held_out.nrows() as f64);
}
