//! Layered run settings: defaults, then a file, then overrides. Unknown keys
//! are errors, and the resolved settings round-trip through the snapshot.

use cae::config::RunConfig;

fn main() {
    let mut cfg = RunConfig::with_defaults(&[("epochs", "500"), ("learning_rate", "0.001"), ("seed", "0")]);
    cfg.apply_text("epochs = 50\nseed = 7 # fixed for reproducibility\n", "example.cfg").unwrap();
    cfg.set("learning_rate", "0.003").unwrap();
    print!("{}", cfg.to_text());
    let epochs: usize = cfg.get("epochs").unwrap();
    println!("typed read: {epochs} epochs");
    let err = cfg.apply_text("epochs = 5\nlearnig_rate = 1\n", "typo.cfg").unwrap_err();
    println!("rejected: {err}");
}
