//! Evaluates the posterior predictive of a briefly trained two-moons model
//! as Ξ grows, showing how MC averaging changes NLL and ECE.

use stfseb::data::{make_ood_clusters, make_two_moons, ClusterSpec};
use stfseb::network::NetSpec;
use stfseb::numerics::Rng;
use stfseb::objective::{LossPath, PriorConfig};
use stfseb::predict::{evaluate, predict};
use stfseb::trainer::{fit, FitSpec, TrainConfig};

fn main() -> stfseb::Result<()> {
    let root = Rng::new(4);
    let train = make_two_moons(400, 0.15, &mut root.substream("train"))?;
    let val = make_two_moons(100, 0.15, &mut root.substream("val"))?;
    let test = make_two_moons(1000, 0.15, &mut root.substream("test"))?;
    let context = make_ood_clusters(
        1000,
        train.inputs(),
        &ClusterSpec {
            blobs: 64,
            blob_sd: 0.03,
            center_shift: 3.0,
        },
        &mut root.substream("context"),
    )?;
    let spec = NetSpec::new(vec![2, 32, 32, 2], 0.3)?;
    let prior = PriorConfig {
        rho: 0.3,
        tau: stfseb::kernel::KernelConfig::new(5.0, 5.0)?,
        ..PriorConfig::default()
    };
    let cfg = TrainConfig {
        lr: 0.01,
        batch_size: 32,
        max_epochs: 40,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = fit(
        &train,
        &val,
        Some(&context),
        &FitSpec {
            spec: &spec,
            prior: &prior,
            path: LossPath::StudentT,
            train: &cfg,
        },
    )?;
    println!("{:>6} {:>8} {:>8} {:>8}", "passes", "ACC", "NLL", "ECE");
    for xi in [1, 2, 5, 10, 50, 200] {
        let pred = predict(test.inputs(), &run.best_params, &spec, xi, &root.substream("eval"))?;
        let m = evaluate(&pred, test.labels(), 10)?;
        println!("{xi:>6} {:>8.4} {:>8.4} {:>8.4}", m.acc, m.nll, m.ece);
    }
    Ok(())
}
