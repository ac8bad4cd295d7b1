//! The DFT basis is the exact solution for circular shifts: magnitudes stay
//! put and the phase of bin `f` moves by `2*pi*f*k/N`.

use std::f64::consts::PI;

use cae::basis::{wrap_phase, ComplexBasis};
use cae::transforms::circular_shift_1d;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 16;
    let basis = ComplexBasis::dft(n);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Array1<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    for k in [1i64, 3, 7] {
        let y = circular_shift_1d(x.view(), k);
        let (cx, cy) = (basis.encode(x.view()).unwrap(), basis.encode(y.view()).unwrap());
        let dev = (&cx.magnitude - &cy.magnitude).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        let dphi = basis.phase_difference(y.view(), x.view()).unwrap();
        let law = (0..n).map(|f| (wrap_phase(dphi[f] - 2.0 * PI * f as f64 * k as f64 / n as f64)).abs()).fold(0.0f64, f64::max);
        println!("shift {k}: max magnitude change {dev:.1e}, max phase-law residual {law:.1e}");
    }
}
