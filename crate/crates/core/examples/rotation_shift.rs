//! Trains the dense 784-128-10 network on the bundled MNIST subset and
//! evaluates it on rotated test digits.
//!
//! Usage: `cargo run --release --example rotation_shift`

use stfseb::cli::{cmd_shift, cmd_train};
use stfseb::config::ExperimentConfig;

fn main() -> stfseb::Result<()> {
    let config = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist-subset.toml");
    let mut cfg = ExperimentConfig::load(&config, &[])?;
    cfg.out_dir = std::env::temp_dir().join("stfseb-rotation-example");
    let run = cmd_train(&cfg)?;
    println!(
        "trained {} epochs (best {:?}), test ACC {:.4}",
        run.summary.epochs_run, run.summary.best_epoch, run.summary.test.acc
    );
    println!("{:>6} {:>8} {:>8} {:>8}", "angle", "ACC", "NLL", "ECE");
    for row in cmd_shift(&cfg, None)? {
        println!(
            "{:>6} {:>8.4} {:>8.4} {:>8.4}",
            row.angle, row.metrics.acc, row.metrics.nll, row.metrics.ece
        );
    }
    Ok(())
}
