//! Per-epoch training loop: shuffle into `M = ⌈N / batch⌉` minibatches,
//! draw context points, evaluate the objective and take an Adam step on its
//! negation. [`fit`] adds early stopping on validation NLL.
//!
//! Random streams are derived from the run seed by label, so every
//! component (initialisation, extractor, shuffles, context draws, masks,
//! validation passes) is reproducible on its own.

use serde::{Deserialize, Serialize};

use crate::data::{ContextSet, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::network::{NetSpec, ParamVector};
use crate::numerics::{Matrix, Rng};
use crate::objective::{Batch, LossBreakdown, LossPath, Objective, PriorConfig};
use crate::predict::{accuracy, nll, predict};

/// Optimiser and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr: must be a finite non-negative number, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("train.{name}: must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("train.eps: must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size: must be at least 1".into()));
        }
        if self.max_epochs > 0 && self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "train.patience: {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Adam first and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step descending along `g`.
pub fn adam_step(p: &mut ParamVector, g: &[f64], st: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    check_dim("adam gradient", p.len(), g.len())?;
    check_dim("adam state", p.len(), st.m.len())?;
    check_dim("adam state", p.len(), st.v.len())?;
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient at coordinate {i}")));
    }
    st.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(st.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(st.t as i32);
    for (((theta, &gi), m), v) in p
        .as_mut_slice()
        .iter_mut()
        .zip(g)
        .zip(st.m.iter_mut())
        .zip(st.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// `nc` context rows drawn uniformly, without replacement when the set is
/// large enough and with replacement otherwise.
pub fn sample_context(ctx: &ContextSet, nc: usize, rng: &mut Rng) -> Result<Matrix> {
    let n = ctx.len();
    if n == 0 {
        return Err(Error::Domain("context set is empty".into()));
    }
    let idx: Vec<usize> = if nc <= n {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..nc {
            let j = i + rng.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(nc);
        pool
    } else {
        (0..nc).map(|_| rng.below(n)).collect()
    };
    Ok(ctx.inputs().select_rows(&idx))
}

/// Mutable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamVector,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub steps_done: u64,
}

impl TrainState {
    pub fn new(params: ParamVector) -> Self {
        let n = params.len();
        TrainState {
            params,
            adam: AdamState::new(n),
            epochs_done: 0,
            steps_done: 0,
        }
    }
}

/// Everything `train_epoch` needs besides the state.
#[derive(Debug, Clone, Copy)]
pub struct EpochInputs<'a> {
    pub data: &'a Dataset,
    pub context: Option<&'a ContextSet>,
    pub objective: &'a Objective<'a>,
    pub train: &'a TrainConfig,
    pub rng: &'a Rng,
}

/// Number of minibatches per epoch.
pub fn minibatch_count(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// One pass over the shuffled data. Returns the per-batch mean of the
/// objective terms.
pub fn train_epoch(state: &mut TrainState, inp: EpochInputs<'_>) -> Result<LossBreakdown> {
    let n = inp.data.len();
    if n == 0 {
        return Err(Error::Domain("training set is empty".into()));
    }
    let m = minibatch_count(n, inp.train.batch_size);
    if inp.objective.prior.minibatches != m {
        return Err(Error::Config(format!(
            "prior.minibatches is {} but the data gives {m} minibatches",
            inp.objective.prior.minibatches
        )));
    }
    let needs_context = inp.objective.path != LossPath::WeightDecay;
    let ctx = match inp.context {
        Some(c) => {
            c.check_compatible(inp.data)?;
            Some(c)
        }
        None if needs_context => return Err(Error::Domain("context set is required".into())),
        None => None,
    };

    let epoch = state.epochs_done as u64;
    let order = inp.rng.substream_indexed("shuffle", epoch).permutation(n);
    let mut sum = LossBreakdown {
        data_ll: 0.0,
        func_penalty: 0.0,
        weight_penalty: 0.0,
        total: 0.0,
    };
    for (b, chunk) in order.chunks(inp.train.batch_size).enumerate() {
        let step = state.steps_done;
        let x = inp.data.inputs().select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| inp.data.labels()[i]).collect();
        let context = match ctx {
            Some(c) if needs_context => Some(sample_context(
                c,
                inp.objective.prior.context_points,
                &mut inp.rng.substream_indexed("context", step),
            )?),
            _ => None,
        };
        let mc = inp.rng.substream_indexed("mc", step);
        let (loss, g) = inp
            .objective
            .evaluate(
                Batch {
                    inputs: &x,
                    labels: &y,
                },
                context.as_ref(),
                &state.params,
                &mc,
                true,
            )
            .map_err(|e| Error::Divergence(format!("epoch {} batch {b}: {e}", epoch + 1)))?;
        let mut g = g.expect("gradient requested");
        g.iter_mut().for_each(|v| *v = -*v);
        adam_step(&mut state.params, &g, &mut state.adam, inp.train)?;
        state.steps_done += 1;
        sum.data_ll += loss.data_ll;
        sum.func_penalty += loss.func_penalty;
        sum.weight_penalty += loss.weight_penalty;
        sum.total += loss.total;
    }
    state.epochs_done += 1;
    let k = m as f64;
    Ok(LossBreakdown {
        data_ll: sum.data_ll / k,
        func_penalty: sum.func_penalty / k,
        weight_penalty: sum.weight_penalty / k,
        total: sum.total / k,
    })
}

/// Metrics of one finished epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub train: LossBreakdown,
    pub val_nll: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_params: ParamVector,
    pub extractor: ParamVector,
    pub stop_reason: StopReason,
}

impl RunRecord {
    pub fn best_val_nll(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.epochs[e - 1].val_nll)
    }
}

/// Model, prior and loss path being trained.
#[derive(Debug, Clone)]
pub struct FitSpec<'a> {
    pub spec: &'a NetSpec,
    pub prior: &'a PriorConfig,
    pub path: LossPath,
    pub train: &'a TrainConfig,
}

/// Initial parameters and frozen feature extractor for a seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> (ParamVector, ParamVector) {
    let root = Rng::new(seed);
    let theta = ParamVector::init(spec, &mut root.substream("init"));
    let extractor = ParamVector::init(spec, &mut root.substream("extractor"));
    (theta, extractor)
}

/// Trains from the seed's initial parameters, keeping the parameters with
/// the lowest validation NLL and stopping after `patience` epochs without
/// improvement.
pub fn fit(data: &Dataset, val: &Dataset, context: Option<&ContextSet>, f: &FitSpec<'_>) -> Result<RunRecord> {
    fit_observed(data, val, context, f, &mut |_| Ok(()))
}

/// As [`fit`], calling `on_epoch` after every finished epoch.
pub fn fit_observed(
    data: &Dataset,
    val: &Dataset,
    context: Option<&ContextSet>,
    f: &FitSpec<'_>,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<RunRecord> {
    f.train.validate()?;
    f.spec.validate()?;
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_dim("training input dimension", f.spec.input_dim(), data.input_dim())?;
    check_dim("validation input dimension", f.spec.input_dim(), val.input_dim())?;
    if f.spec.output_dim() < data.num_classes() {
        return Err(Error::Config(format!(
            "network.layer_widths: {} outputs for {} classes",
            f.spec.output_dim(),
            data.num_classes()
        )));
    }
    let prior = PriorConfig {
        minibatches: minibatch_count(data.len(), f.train.batch_size),
        ..f.prior.clone()
    };
    let root = Rng::new(f.train.seed);
    let (theta, extractor) = init_params(f.spec, f.train.seed);
    let objective = Objective::new(f.spec, &prior, &extractor, f.path)?;
    let val_rng = root.substream("validation");

    let mut state = TrainState::new(theta.clone());
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamVector)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=f.train.max_epochs {
        let loss = train_epoch(
            &mut state,
            EpochInputs {
                data,
                context,
                objective: &objective,
                train: f.train,
                rng: &root,
            },
        )
        .map_err(|e| match e {
            Error::Divergence(msg) => Error::Divergence(format!("{msg} (last finite epoch {})", epoch - 1)),
            other => other,
        })?;
        let pred = predict(val.inputs(), &state.params, f.spec, prior.predictive_samples, &val_rng)?;
        let rec = EpochRecord {
            epoch,
            train: loss,
            val_nll: nll(&pred, val.labels())?,
            val_acc: accuracy(&pred, val.labels())?,
        };
        on_epoch(&rec)?;
        epochs.push(rec);
        if best.as_ref().is_none_or(|(_, b, _)| rec.val_nll < *b) {
            best = Some((epoch, rec.val_nll, state.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= f.train.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    let (best_epoch, best_params) = match best {
        Some((e, _, p)) => (Some(e), p),
        None => (None, theta),
    };
    Ok(RunRecord {
        epochs,
        best_epoch,
        best_params,
        extractor,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_two_moons;

    #[test]
    fn zero_gradient_leaves_params() {
        let spec = NetSpec::new(vec![2, 3, 2], 0.1).unwrap();
        let mut p = ParamVector::init(&spec, &mut Rng::new(1));
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        let zeros = vec![0.0; p.len()];
        adam_step(&mut p, &zeros, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let spec = NetSpec::new(vec![1, 1], 0.0).unwrap();
        let mut p = ParamVector::zeros(&spec);
        let mut st = AdamState::new(2);
        let cfg = TrainConfig::default();
        adam_step(&mut p, &[0.3, -2.0], &mut st, &cfg).unwrap();
        assert!((p.as_slice()[0] + cfg.lr).abs() < 1e-10);
        assert!((p.as_slice()[1] - cfg.lr).abs() < 1e-10);
    }

    #[test]
    fn two_steps_match_scripted_adam() {
        let spec = NetSpec::new(vec![1, 1, 1], 0.0).unwrap();
        assert_eq!(spec.num_params(), 4);
        let cfg = TrainConfig {
            lr: 0.01,
            ..TrainConfig::default()
        };
        let mut p = ParamVector::from_vec(&spec, vec![0.5, -0.2, 1.0, 0.0]).unwrap();
        let mut st = AdamState::new(4);
        let grads = [[0.1, -0.3, 2.0, 0.0], [0.2, 0.1, -1.0, 0.5]];
        let mut theta = [0.5f64, -0.2, 1.0, 0.0];
        let (mut m, mut v) = ([0.0f64; 4], [0.0f64; 4]);
        for (t, g) in grads.iter().enumerate() {
            adam_step(&mut p, g, &mut st, &cfg).unwrap();
            let t = (t + 1) as i32;
            for i in 0..4 {
                m[i] = 0.9 * m[i] + (1.0 - 0.9) * g[i];
                v[i] = 0.999 * v[i] + (1.0 - 0.999) * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                theta[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for i in 0..4 {
            assert_eq!(p.as_slice()[i].to_bits(), theta[i].to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let spec = NetSpec::new(vec![1, 1], 0.0).unwrap();
        let mut p = ParamVector::zeros(&spec);
        let mut st = AdamState::new(2);
        let err = adam_step(&mut p, &[f64::NAN, 0.0], &mut st, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    fn ctx_of(n: usize) -> ContextSet {
        ContextSet::new(Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap()).unwrap()
    }

    #[test]
    fn context_sampling() {
        let ctx = ctx_of(10);
        let mut rng = Rng::new(3);
        let mut all = sample_context(&ctx, 10, &mut rng).unwrap().into_vec();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());

        let one = sample_context(&ctx, 1, &mut rng).unwrap();
        assert_eq!(one.rows(), 1);
        assert!((0.0..10.0).contains(&one[(0, 0)]));

        let many = sample_context(&ctx, 25, &mut rng).unwrap();
        assert_eq!(many.rows(), 25);
        assert!(sample_context(&ctx_of(0), 1, &mut rng).is_err());
    }

    #[test]
    fn context_sampling_is_uniform() {
        let ctx = ctx_of(10);
        let mut rng = Rng::new(4);
        let mut freq = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws {
            freq[sample_context(&ctx, 1, &mut rng).unwrap()[(0, 0)] as usize] += 1;
        }
        for f in freq {
            assert!((f as f64 / draws as f64 - 0.1).abs() < 0.01, "{freq:?}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience: 11,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    struct Fixture {
        spec: NetSpec,
        prior: PriorConfig,
        train: TrainConfig,
        data: Dataset,
        val: Dataset,
        ctx: ContextSet,
    }

    fn fixture() -> Fixture {
        let spec = NetSpec::new(vec![2, 8, 8, 2], 0.1).unwrap();
        let data = make_two_moons(64, 0.1, &mut Rng::new(1)).unwrap();
        let val = make_two_moons(32, 0.1, &mut Rng::new(2)).unwrap();
        let ctx = crate::data::uniform_context(40, 2, &mut Rng::new(3)).unwrap();
        let train = TrainConfig {
            batch_size: 16,
            max_epochs: 3,
            patience: 3,
            lr: 0.01,
            seed: 5,
            ..TrainConfig::default()
        };
        let prior = PriorConfig {
            mc_samples: 3,
            predictive_samples: 3,
            context_points: 8,
            minibatches: 4,
            ..PriorConfig::default()
        };
        Fixture {
            spec,
            prior,
            train,
            data,
            val,
            ctx,
        }
    }

    #[test]
    fn zero_lr_epoch_keeps_params_and_is_deterministic() {
        let fx = fixture();
        let (theta, ext) = init_params(&fx.spec, 5);
        let obj = Objective::new(&fx.spec, &fx.prior, &ext, LossPath::StudentT).unwrap();
        let zero = TrainConfig {
            lr: 0.0,
            ..fx.train.clone()
        };
        let rng = Rng::new(9);
        let mut st = TrainState::new(theta.clone());
        let inputs = EpochInputs {
            data: &fx.data,
            context: Some(&fx.ctx),
            objective: &obj,
            train: &zero,
            rng: &rng,
        };
        train_epoch(&mut st, inputs).unwrap();
        assert_eq!(st.params, theta);
        assert_eq!(st.steps_done, 4);

        let run = |cfg: &TrainConfig| {
            let mut st = TrainState::new(theta.clone());
            let l = train_epoch(&mut st, EpochInputs { train: cfg, ..inputs }).unwrap();
            (st.params, l)
        };
        assert_eq!(run(&fx.train), run(&fx.train));
        assert_ne!(run(&fx.train).0, theta);
    }

    #[test]
    fn single_step_is_adam_on_the_negated_gradient() {
        let fx = fixture();
        let (theta, ext) = init_params(&fx.spec, 5);
        let prior = PriorConfig {
            minibatches: 1,
            ..fx.prior.clone()
        };
        let obj = Objective::new(&fx.spec, &prior, &ext, LossPath::StudentT).unwrap();
        let tcfg = TrainConfig {
            batch_size: 64,
            ..fx.train.clone()
        };
        let rng = Rng::new(9);
        let mut st = TrainState::new(theta.clone());
        train_epoch(
            &mut st,
            EpochInputs {
                data: &fx.data,
                context: Some(&fx.ctx),
                objective: &obj,
                train: &tcfg,
                rng: &rng,
            },
        )
        .unwrap();

        let order = rng.substream_indexed("shuffle", 0).permutation(64);
        let x = fx.data.inputs().select_rows(&order);
        let y: Vec<usize> = order.iter().map(|&i| fx.data.labels()[i]).collect();
        let c = sample_context(&fx.ctx, prior.context_points, &mut rng.substream_indexed("context", 0)).unwrap();
        let (_, g) = obj
            .evaluate(
                Batch { inputs: &x, labels: &y },
                Some(&c),
                &theta,
                &rng.substream_indexed("mc", 0),
                true,
            )
            .unwrap();
        let neg: Vec<f64> = g.unwrap().iter().map(|v| -v).collect();
        let mut expected = theta.clone();
        adam_step(&mut expected, &neg, &mut AdamState::new(theta.len()), &tcfg).unwrap();
        assert_eq!(st.params, expected);
    }

    #[test]
    fn fit_with_zero_epochs_returns_initial_params() {
        let fx = fixture();
        let tcfg = TrainConfig {
            max_epochs: 0,
            ..fx.train.clone()
        };
        let f = FitSpec {
            spec: &fx.spec,
            prior: &fx.prior,
            path: LossPath::StudentT,
            train: &tcfg,
        };
        let rec = fit(&fx.data, &fx.val, Some(&fx.ctx), &f).unwrap();
        assert_eq!(rec.best_params, init_params(&fx.spec, tcfg.seed).0);
        assert_eq!(rec.stop_reason, StopReason::MaxEpochs);
        assert!(rec.epochs.is_empty() && rec.best_epoch.is_none());
    }

    #[test]
    fn fit_is_reproducible_and_tracks_the_best_epoch() {
        let fx = fixture();
        let f = FitSpec {
            spec: &fx.spec,
            prior: &fx.prior,
            path: LossPath::StudentT,
            train: &fx.train,
        };
        let a = fit(&fx.data, &fx.val, Some(&fx.ctx), &f).unwrap();
        let b = fit(&fx.data, &fx.val, Some(&fx.ctx), &f).unwrap();
        assert_eq!(a, b);
        let min = a.epochs.iter().map(|e| e.val_nll).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_val_nll(), Some(min));
        assert!(fit(&fx.data, &fx.val.subset(&[]), Some(&fx.ctx), &f).is_err());
    }

    #[test]
    fn weight_decay_path_needs_no_context() {
        let fx = fixture();
        let f = FitSpec {
            spec: &fx.spec,
            prior: &fx.prior,
            path: LossPath::WeightDecay,
            train: &fx.train,
        };
        assert!(fit(&fx.data, &fx.val, None, &f).is_ok());
        let f = FitSpec {
            path: LossPath::StudentT,
            ..f
        };
        assert!(fit(&fx.data, &fx.val, None, &f).is_err());
    }
}
