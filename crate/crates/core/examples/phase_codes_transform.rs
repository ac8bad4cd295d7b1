//! Phase differences carry the transformation: read the shift between two
//! signals back off the first DFT bin.

use std::f64::consts::PI;

use cae::basis::ComplexBasis;
use cae::data::harmonic_signals;
use cae::transforms::circular_shift_1d;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 32;
    let basis = ComplexBasis::dft(n);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let signals = harmonic_signals(5, n, 4, &mut rng);
    for x in signals.outer_iter() {
        let k = rng.random_range(0..n as i64);
        let y = circular_shift_1d(x, k);
        let dphi = basis.phase_difference(y.view(), x).unwrap();
        let estimate = (dphi[1] * n as f64 / (2.0 * PI)).round() as i64 % n as i64;
        println!("true shift {k:2}, recovered {:2}", (estimate + n as i64) % n as i64);
    }
}
