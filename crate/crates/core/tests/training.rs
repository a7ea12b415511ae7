mod common;

use stfseb::config::{Experiment, ExperimentConfig};
use stfseb::network::{sample_masks, DropoutMask};
use stfseb::numerics::Rng;
use stfseb::objective::{Batch, Objective};
use stfseb::trainer::{init_params, minibatch_count, sample_context, train_epoch, EpochInputs, TrainState};

/// Objective on a fixed probe batch, context draw and mask set after each
/// of the first five epochs.
fn probe_trajectory(seed: u64, overrides: &[String]) -> Vec<f64> {
    let mut cfg = ExperimentConfig::load(&common::configs_dir().join("two-moons.toml"), overrides).unwrap();
    cfg.seed = seed;
    let exp = Experiment::assemble(cfg).unwrap();
    let spec = exp.net_spec().unwrap();
    let train = exp.config.train_config();
    let prior = exp.config.prior_config(minibatch_count(exp.train.len(), train.batch_size));
    let (theta, extractor) = init_params(&spec, seed);
    let objective = Objective::new(&spec, &prior, &extractor, exp.config.loss_path()).unwrap();

    let probe_rng = Rng::new(seed).substream("probe");
    let idx: Vec<usize> = (0..128).collect();
    let probe = exp.train.subset(&idx);
    let ctx = sample_context(&exp.context, prior.context_points, &mut probe_rng.substream("context")).unwrap();
    let masks = sample_masks(&spec, &probe_rng.substream("masks"), prior.mc_samples);
    let refs: Vec<Option<&DropoutMask>> = masks.iter().map(Some).collect();
    let value = |state: &TrainState| {
        let batch = Batch {
            inputs: probe.inputs(),
            labels: probe.labels(),
        };
        objective
            .evaluate_with_masks(batch, Some(&ctx), &state.params, &refs, false)
            .unwrap()
            .0
            .total
    };

    let root = Rng::new(seed);
    let mut state = TrainState::new(theta);
    let mut values = vec![value(&state)];
    for _ in 0..5 {
        train_epoch(
            &mut state,
            EpochInputs {
                data: &exp.train,
                context: Some(&exp.context),
                objective: &objective,
                train: &train,
                rng: &root,
            },
        )
        .unwrap();
        values.push(value(&state));
    }
    values
}

fn monotone_runs(overrides: &[String]) -> usize {
    (0..10)
        .filter(|&seed| {
            let v = probe_trajectory(seed, overrides);
            v.windows(2).all(|w| w[1] >= w[0])
        })
        .count()
}

#[test]
fn probe_objective_rises_over_first_epochs() {
    let n = monotone_runs(&[]);
    assert!(n >= 9, "objective non-decreasing in only {n}/10 runs");
}

#[test]
fn probe_objective_rises_with_default_optimiser_settings() {
    let overrides = ["train.lr=0.0005".to_string(), "train.batch_size=128".to_string()];
    let n = monotone_runs(&overrides);
    assert!(n >= 9, "objective non-decreasing in only {n}/10 runs");
}
