//! Trains an MC-dropout network with the Student's t function-space prior
//! on two-moons through the library API and reports test metrics.

use stfseb::data::{make_ood_clusters, make_two_moons, ClusterSpec};
use stfseb::network::NetSpec;
use stfseb::numerics::Rng;
use stfseb::objective::{LossPath, PriorConfig};
use stfseb::predict::{evaluate, predict};
use stfseb::trainer::{fit_observed, FitSpec, TrainConfig};

fn main() -> stfseb::Result<()> {
    let root = Rng::new(1);
    let data = make_two_moons(1000, 0.1, &mut root.substream("train"))?;
    let test = make_two_moons(500, 0.1, &mut root.substream("test"))?;
    let (train, val) = data.split_holdout(0.1, &mut root.substream("split"))?;
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

    let spec = NetSpec::new(vec![2, 32, 32, 2], 0.1)?;
    let prior = PriorConfig {
        tau: stfseb::kernel::KernelConfig::new(5.0, 5.0)?,
        ..PriorConfig::default()
    };
    let cfg = TrainConfig {
        lr: 0.01,
        batch_size: 32,
        max_epochs: 30,
        seed: 1,
        ..TrainConfig::default()
    };
    let fit = FitSpec {
        spec: &spec,
        prior: &prior,
        path: LossPath::StudentT,
        train: &cfg,
    };
    let run = fit_observed(&train, &val, Some(&context), &fit, &mut |e| {
        println!(
            "epoch {:>2}: objective {:>9.3}  val NLL {:.4}  val ACC {:.3}",
            e.epoch, e.train.total, e.val_nll, e.val_acc
        );
        Ok(())
    })?;
    println!("stopped: {:?}, best epoch {:?}", run.stop_reason, run.best_epoch);

    let pred = predict(test.inputs(), &run.best_params, &spec, 10, &root.substream("eval"))?;
    let m = evaluate(&pred, test.labels(), 10)?;
    println!("test ACC {:.4}  NLL {:.4}  ECE {:.4}", m.acc, m.nll, m.ece);
    Ok(())
}
