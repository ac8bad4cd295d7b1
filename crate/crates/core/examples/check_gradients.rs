//! Analytic gradients against central differences, for both loss powers.

use cae::gradcheck::{run_grad_check, GradCheckConfig};
use cae::LossPower;

fn main() {
    for power in [LossPower::Two, LossPower::One] {
        let report = run_grad_check(&GradCheckConfig { power, ..Default::default() }).unwrap();
        println!(
            "{power:?}: w_re {:.2e}, w_im {:.2e} over {} instances ({} skipped near a kink): {}",
            report.max_rel_err_w_re,
            report.max_rel_err_w_im,
            report.instances_checked,
            report.instances_skipped,
            if report.passed { "pass" } else { "fail" }
        );
    }
    let flipped = run_grad_check(&GradCheckConfig { flip_sign: true, ..Default::default() }).unwrap();
    println!("with the sign flipped the check reports {:.2e} and fails: {}", flipped.max_rel_err(), !flipped.passed);
}
