//! Sweeps the degrees of freedom of the prior on two-moons, including the
//! Gaussian limit, and prints the metrics table.
//!
//! Usage: `cargo run --release --example dof_ablation`

use stfseb::cli::{cmd_ablate_dof, format_ablation_table};
use stfseb::config::{DofEntry, ExperimentConfig};

fn main() -> stfseb::Result<()> {
    let config = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/two-moons.toml");
    let mut cfg = ExperimentConfig::load(&config, &[])?;
    cfg.out_dir = std::env::temp_dir().join("stfseb-ablation-example");
    let rows = cmd_ablate_dof(&cfg, &DofEntry::standard_grid(), true)?;
    print!("{}", format_ablation_table(&rows));
    println!("run directories under {}", cfg.out_dir.display());
    Ok(())
}
