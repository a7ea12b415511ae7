//! Trains the Student's t model and the MAP baseline on two-moons with the
//! shipped config and compares their max-softmax AUROC against far-shifted
//! clusters.
//!
//! Usage: `cargo run --release --example ood_detection [SEEDS]`

use stfseb::cli::{cmd_baseline, cmd_ood, cmd_train, Baseline};
use stfseb::config::ExperimentConfig;

fn main() -> stfseb::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let config = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/two-moons.toml");
    let out = std::env::temp_dir().join("stfseb-ood-example");
    println!("{:>4} {:>10} {:>10} {:>12} {:>12}", "seed", "ST AUROC", "MAP AUROC", "ST MSP out", "MAP MSP out");
    for seed in 0..seeds {
        let mut cfg = ExperimentConfig::load(&config, &[])?;
        cfg.seed = seed;
        cfg.out_dir = out.join(format!("st-{seed}"));
        cmd_train(&cfg)?;
        let st = cmd_ood(&cfg, None)?;
        cfg.out_dir = out.join(format!("map-{seed}"));
        cmd_baseline(&cfg, Baseline::Map)?;
        let map = cmd_ood(&cfg, None)?;
        println!(
            "{seed:>4} {:>10.4} {:>10.4} {:>12.4} {:>12.4}",
            st.auroc, map.auroc, st.mean_msp_out, map.mean_msp_out
        );
    }
    println!("run directories under {}", out.display());
    Ok(())
}
