//! Experiment front end: run directories, checkpoints, the subcommands and
//! the argument parser behind the `stfseb` binary.
//!
//! A training run directory holds exactly four artifacts:
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | the validated configuration |
//! | `epochs.ndjson` | one `{"record":"epoch",…}` line per epoch |
//! | `summary.ndjson` | one `{"record":"summary",…}` line |
//! | `checkpoint.json` | network, θ, extractor, seed |
//!
//! Evaluation commands add `eval.ndjson`, `ood.ndjson` or `shift.ndjson`
//! next to them; the ablation adds `ablate-dof.ndjson` and one run
//! directory per grid entry under `ablate-dof/`. No record contains a
//! timestamp or duration, so identical inputs give identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{DofEntry, Experiment, ExperimentConfig, PriorKind};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::network::{NetSpec, ParamVector};
use crate::numerics::{Matrix, Rng};
use crate::objective::LossPath;
use crate::predict::{auroc, evaluate, shift_eval, MetricsReport, Model, ShiftRow};
use crate::trainer::{fit_observed, EpochRecord, FitSpec, StopReason};

pub const CONFIG_FILE: &str = "config.toml";
pub const EPOCH_LOG: &str = "epochs.ndjson";
pub const SUMMARY_FILE: &str = "summary.ndjson";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVAL_FILE: &str = "eval.ndjson";
pub const OOD_FILE: &str = "ood.ndjson";
pub const SHIFT_FILE: &str = "shift.ndjson";
pub const ABLATION_FILE: &str = "ablate-dof.ndjson";
pub const ABLATION_DIR: &str = "ablate-dof";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Saved model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub net: NetSpec,
    pub theta: Vec<f64>,
    pub extractor: Vec<f64>,
    pub seed: u64,
    pub loss_path: LossPath,
    /// Ξ used when predicting with this model.
    pub predictive_samples: usize,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {}", c.version)));
        }
        c.net.validate()?;
        let n = c.net.num_params();
        if c.theta.len() != n || c.extractor.len() != n {
            return Err(Error::format(path, format!("parameter vectors do not match the {n}-parameter network")));
        }
        if c.predictive_samples == 0 {
            return Err(Error::format(path, "predictive_samples must be at least 1"));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self).map_err(|e| Error::Divergence(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.net.clone(), ParamVector::from_vec(&self.net, self.theta.clone())?)
    }
}

/// Final record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub record: String,
    pub command: String,
    pub loss_path: LossPath,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nu_theta: Option<f64>,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_nll: Option<f64>,
    pub stop_reason: StopReason,
    pub test: MetricsReport,
}

/// Where a run's artifacts went and what they say.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
}

/// Which baseline `cmd_baseline` trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Weight decay only, no dropout; deterministic prediction.
    Map,
    /// Weight decay with dropout in training and prediction.
    #[value(name = "mc_dropout", alias = "mc-dropout")]
    McDropout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RunKind {
    Prior(LossPath),
    Baseline(Baseline),
}

#[derive(Serialize)]
struct EpochLine<'a> {
    record: &'static str,
    #[serde(flatten)]
    epoch: &'a EpochRecord,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("records serialise");
    s.push('\n');
    s
}

fn eval_rng(seed: u64) -> Rng {
    Rng::new(seed).substream("eval")
}

fn check_model_data(model: &Model, d: &Dataset) -> Result<()> {
    check_dim("checkpoint input width vs data", model.spec.input_dim(), d.input_dim())?;
    if model.spec.output_dim() < d.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint outputs vs data classes",
            expected: d.num_classes(),
            got: model.spec.output_dim(),
        });
    }
    Ok(())
}

/// ACC/NLL/ECE of `model` on `d`, with AUROC against `ood` when given.
pub fn evaluate_model(
    model: &Model,
    d: &Dataset,
    ood: Option<&Matrix>,
    xi: usize,
    bins: usize,
    seed: u64,
) -> Result<MetricsReport> {
    check_model_data(model, d)?;
    let rng = eval_rng(seed);
    let pred = model.predict(d.inputs(), xi, &rng)?;
    let mut report = evaluate(&pred, d.labels(), bins)?;
    if let Some(x) = ood {
        check_dim("OOD input width", d.input_dim(), x.cols())?;
        let out = model.predict(x, xi, &rng)?;
        report.auroc = Some(auroc(&pred.msp(), &out.msp())?);
    }
    Ok(report)
}

fn train_into(exp: &Experiment, kind: RunKind, dir: &Path, command: &str) -> Result<RunArtifact> {
    let cfg = &exp.config;
    let mut spec = exp.net_spec()?;
    let mut prior = cfg.prior_config(1);
    let path = match kind {
        RunKind::Prior(p) => p,
        RunKind::Baseline(Baseline::Map) => {
            spec.dropout_rate = 0.0;
            prior.rho = 0.0;
            prior.mc_samples = 1;
            prior.predictive_samples = 1;
            LossPath::WeightDecay
        }
        RunKind::Baseline(Baseline::McDropout) => LossPath::WeightDecay,
    };
    let tcfg = cfg.train_config();

    create_dir(dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    let log_path = dir.join(EPOCH_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let fit_spec = FitSpec {
        spec: &spec,
        prior: &prior,
        path,
        train: &tcfg,
    };
    let context = (path != LossPath::WeightDecay).then_some(&exp.context);
    let record = fit_observed(&exp.train, &exp.val, context, &fit_spec, &mut |rec| {
        log.write_all(json_line(&EpochLine { record: "epoch", epoch: rec }).as_bytes())
            .map_err(|e| Error::io(&log_path, e))
    })?;

    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        net: spec,
        theta: record.best_params.as_slice().to_vec(),
        extractor: record.extractor.as_slice().to_vec(),
        seed: cfg.seed,
        loss_path: path,
        predictive_samples: prior.predictive_samples,
    };
    checkpoint.save(&dir.join(CHECKPOINT_FILE))?;

    let model = checkpoint.model()?;
    let ood = exp.ood_inputs()?;
    let test = evaluate_model(
        &model,
        &exp.test,
        ood.as_ref(),
        checkpoint.predictive_samples,
        cfg.eval.ece_bins,
        cfg.seed,
    )?;
    let summary = RunSummary {
        record: "summary".into(),
        command: command.into(),
        loss_path: path,
        nu_theta: (path == LossPath::StudentT).then_some(prior.nu_theta),
        seed: cfg.seed,
        epochs_run: record.epochs.len(),
        best_epoch: record.best_epoch,
        best_val_nll: record.best_val_nll(),
        stop_reason: record.stop_reason,
        test,
    };
    write_text(&dir.join(SUMMARY_FILE), &json_line(&summary))?;
    Ok(RunArtifact {
        dir: dir.to_path_buf(),
        summary,
        checkpoint,
        epochs: record.epochs,
    })
}

/// Trains with the configured prior (`prior.kind`) into `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunArtifact> {
    let exp = Experiment::assemble(cfg.clone())?;
    train_into(&exp, RunKind::Prior(cfg.loss_path()), &cfg.out_dir, "train")
}

/// Trains a MAP or MC-dropout baseline into `out_dir`.
pub fn cmd_baseline(cfg: &ExperimentConfig, which: Baseline) -> Result<RunArtifact> {
    let exp = Experiment::assemble(cfg.clone())?;
    let name = match which {
        Baseline::Map => "baseline-map",
        Baseline::McDropout => "baseline-mc_dropout",
    };
    train_into(&exp, RunKind::Baseline(which), &cfg.out_dir, name)
}

fn checkpoint_path(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE), Path::to_path_buf)
}

fn load_for_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(Experiment, Checkpoint, Model)> {
    let exp = Experiment::assemble(cfg.clone())?;
    let ckpt = Checkpoint::load(&checkpoint_path(cfg, checkpoint))?;
    let model = ckpt.model()?;
    check_model_data(&model, &exp.train)?;
    Ok((exp, ckpt, model))
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    record: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_records<T: Serialize>(path: &Path, tag: &'static str, rows: &[T]) -> Result<()> {
    let text: String = rows.iter().map(|r| json_line(&Tagged { record: tag, body: r })).collect();
    write_text(path, &text)
}

/// ACC/NLL/ECE of a checkpoint on `eval.split`; writes `eval.ndjson`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    let (exp, ckpt, model) = load_for_eval(cfg, checkpoint)?;
    let d = exp.split(cfg.eval.split);
    let report = evaluate_model(&model, d, None, ckpt.predictive_samples, cfg.eval.ece_bins, ckpt.seed)?;
    create_dir(&cfg.out_dir)?;
    write_records(&cfg.out_dir.join(EVAL_FILE), "eval", &[report])?;
    Ok(report)
}

/// AUROC of MSP with the test split as in-distribution and the `[ood]`
/// inputs as out-of-distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub auroc: f64,
    pub mean_msp_in: f64,
    pub mean_msp_out: f64,
}

pub fn cmd_ood(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<OodReport> {
    let (exp, ckpt, model) = load_for_eval(cfg, checkpoint)?;
    let ood = exp
        .ood_inputs()?
        .ok_or_else(|| Error::Config("ood.source: OOD evaluation needs an OOD set".into()))?;
    check_dim("OOD input width", exp.test.input_dim(), ood.cols())?;
    let rng = eval_rng(ckpt.seed);
    let msp_in = model.predict(exp.test.inputs(), ckpt.predictive_samples, &rng)?.msp();
    let msp_out = model.predict(&ood, ckpt.predictive_samples, &rng)?.msp();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let report = OodReport {
        auroc: auroc(&msp_in, &msp_out)?,
        mean_msp_in: mean(&msp_in),
        mean_msp_out: mean(&msp_out),
    };
    create_dir(&cfg.out_dir)?;
    write_records(&cfg.out_dir.join(OOD_FILE), "ood", &[report])?;
    Ok(report)
}

/// Per-angle ACC/NLL/ECE on rotated copies of the test split.
pub fn cmd_shift(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<ShiftRow>> {
    let (exp, ckpt, model) = load_for_eval(cfg, checkpoint)?;
    let mode = exp
        .rotation
        .ok_or_else(|| Error::Config("eval.image_height/image_width: rotation needs an image shape".into()))?;
    if let Some(a) = cfg.eval.angles.iter().find(|a| a.abs() > 180.0) {
        return Err(Error::Config(format!("eval.angles: {a} lies outside ±180")));
    }
    let rows = shift_eval(
        &model,
        &exp.test,
        &cfg.eval.angles,
        mode,
        ckpt.predictive_samples,
        cfg.eval.ece_bins,
        &eval_rng(ckpt.seed),
    )?;
    create_dir(&cfg.out_dir)?;
    write_records(&cfg.out_dir.join(SHIFT_FILE), "shift", &rows)?;
    Ok(rows)
}

/// One row of the dof-ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dof: DofEntry,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Config used for one ablation entry: the Gaussian entry is exactly the
/// config with `prior.kind = "gaussian"`.
pub fn ablation_entry_config(cfg: &ExperimentConfig, entry: DofEntry) -> ExperimentConfig {
    let mut c = cfg.clone();
    match entry {
        DofEntry::Nu(v) => {
            c.prior.kind = PriorKind::StudentT;
            c.prior.nu_theta = v;
        }
        DofEntry::Gaussian => c.prior.kind = PriorKind::Gaussian,
    }
    c.out_dir = cfg.out_dir.join(ABLATION_DIR).join(match entry {
        DofEntry::Nu(v) => format!("nu-{v}"),
        DofEntry::Gaussian => "gaussian".into(),
    });
    c
}

/// Trains one model per grid entry, each into its own run directory, and
/// writes the table to `ablate-dof.ndjson`.
pub fn cmd_ablate_dof(cfg: &ExperimentConfig, grid: &[DofEntry], parallel: bool) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::Config("dof grid is empty".into()));
    }
    let run = |entry: DofEntry| -> Result<AblationRow> {
        let c = ablation_entry_config(cfg, entry);
        c.validate()?;
        let art = cmd_train(&c)?;
        Ok(AblationRow {
            dof: entry,
            metrics: art.summary.test,
        })
    };
    let rows: Vec<AblationRow> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = grid.iter().map(|&e| s.spawn(move || run(e))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        grid.iter().map(|&e| run(e)).collect::<Result<_>>()?
    };
    create_dir(&cfg.out_dir)?;
    write_records(&cfg.out_dir.join(ABLATION_FILE), "ablation", &rows)?;
    Ok(rows)
}

/// Plain-text rendering of the ablation table.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:>10} {:>8} {:>8} {:>8} {:>8}\n", "dof", "ACC", "NLL", "ECE", "AUROC");
    for r in rows {
        let auroc = r.metrics.auroc.map_or("-".to_string(), |a| format!("{a:.4}"));
        s.push_str(&format!(
            "{:>10} {:>8.4} {:>8.4} {:>8.4} {:>8}\n",
            r.dof.to_string(),
            r.metrics.acc,
            r.metrics.nll,
            r.metrics.ece,
            auroc
        ));
    }
    s
}

fn read_lines(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::format(path, format!("missing or unreadable: {e}")))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Checks the run-directory contract described in the module docs.
pub fn validate_run(dir: &Path) -> Result<()> {
    let allowed = [
        CONFIG_FILE,
        EPOCH_LOG,
        SUMMARY_FILE,
        CHECKPOINT_FILE,
        EVAL_FILE,
        OOD_FILE,
        SHIFT_FILE,
        ABLATION_FILE,
        ABLATION_DIR,
    ];
    let entries = fs::read_dir(dir).map_err(|e| Error::format(dir, format!("not a readable directory: {e}")))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !allowed.contains(&name.as_str()) {
            return Err(Error::format(dir, format!("unexpected entry {name:?}")));
        }
    }

    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::format(&cfg_path, format!("missing: {e}")))?;
    ExperimentConfig::from_toml_str(&text, dir, &[]).map_err(|e| Error::format(&cfg_path, e.to_string()))?;

    let epochs = read_lines(&dir.join(EPOCH_LOG))?;
    for (i, rec) in epochs.iter().enumerate() {
        let ok = rec["record"] == "epoch"
            && rec["epoch"].as_u64() == Some(i as u64 + 1)
            && ["data_ll", "func_penalty", "weight_penalty", "total", "val_nll", "val_acc"]
                .iter()
                .all(|k| rec[*k].is_number());
        if !ok {
            return Err(Error::format(dir.join(EPOCH_LOG), format!("line {}: malformed epoch record", i + 1)));
        }
    }

    let summary_path = dir.join(SUMMARY_FILE);
    let summaries = read_lines(&summary_path)?;
    if summaries.len() != 1 {
        return Err(Error::format(&summary_path, format!("expected one record, found {}", summaries.len())));
    }
    let summary: RunSummary =
        serde_json::from_value(summaries[0].clone()).map_err(|e| Error::format(&summary_path, e.to_string()))?;
    if summary.record != "summary" || summary.epochs_run != epochs.len() {
        return Err(Error::format(
            &summary_path,
            format!("summary reports {} epochs, log has {}", summary.epochs_run, epochs.len()),
        ));
    }
    Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "stfseb", version, about = "Student's t function-space empirical Bayes for MC-dropout networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML). Defaults to the built-in two-moons setup.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides one config key, e.g. `--set prior.nu_theta=5`.
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub set: Vec<String>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with the configured prior.
    Train,
    /// Evaluate a checkpoint (ACC, NLL, ECE).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// AUROC of max-softmax-probability against the OOD set.
    Ood {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Metrics on rotated test inputs.
    Shift {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated angles in degrees.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        angles: Option<Vec<f64>>,
    },
    /// Train one model per degrees-of-freedom value.
    AblateDof {
        /// Comma-separated values above 2 or `gaussian`.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<String>>,
        /// Train grid entries concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Train a baseline.
    Baseline {
        #[arg(value_enum)]
        which: Baseline,
    },
    /// Check a run directory against the artifact contract.
    ValidateRun {
        /// Run directory (defaults to the config's output directory).
        dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &cli.set)?,
        None => ExperimentConfig::from_toml_str("", Path::new("."), &cli.set)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn print_line<T: Serialize>(v: &T) {
    print!("{}", json_line(v));
}

/// Runs a parsed command, printing its records to stdout.
pub fn execute(cli: &Cli) -> Result<()> {
    let as_validation = |e: Error| match e {
        Error::Io { .. } | Error::Domain(_) => Error::Config(e.to_string()),
        other => other,
    };
    let mut cfg = load_config(cli).map_err(as_validation)?;
    match &cli.command {
        Command::Train => print_line(&cmd_train(&cfg)?.summary),
        Command::Baseline { which } => print_line(&cmd_baseline(&cfg, *which)?.summary),
        Command::Eval { checkpoint } => {
            Checkpoint::load(&checkpoint_path(&cfg, checkpoint.as_deref())).map_err(as_validation)?;
            print_line(&Tagged {
                record: "eval",
                body: &cmd_eval(&cfg, checkpoint.as_deref())?,
            })
        }
        Command::Ood { checkpoint } => {
            Checkpoint::load(&checkpoint_path(&cfg, checkpoint.as_deref())).map_err(as_validation)?;
            print_line(&Tagged {
                record: "ood",
                body: &cmd_ood(&cfg, checkpoint.as_deref())?,
            })
        }
        Command::Shift { checkpoint, angles } => {
            Checkpoint::load(&checkpoint_path(&cfg, checkpoint.as_deref())).map_err(as_validation)?;
            if let Some(a) = angles {
                cfg.eval.angles = a.clone();
                cfg.validate()?;
            }
            for row in cmd_shift(&cfg, checkpoint.as_deref())? {
                print_line(&Tagged {
                    record: "shift",
                    body: &row,
                });
            }
        }
        Command::AblateDof { grid, parallel } => {
            let grid = match grid {
                Some(g) => g.iter().map(|s| s.parse()).collect::<Result<Vec<DofEntry>>>()?,
                None => cfg.eval.dof_grid.clone(),
            };
            let rows = cmd_ablate_dof(&cfg, &grid, *parallel)?;
            eprint!("{}", format_ablation_table(&rows));
            for row in &rows {
                print_line(&Tagged {
                    record: "ablation",
                    body: row,
                });
            }
        }
        Command::ValidateRun { dir } => {
            let dir = dir.clone().unwrap_or_else(|| cfg.out_dir.clone());
            validate_run(&dir)?;
            println!("{{\"record\":\"validate_run\",\"ok\":true}}");
        }
    }
    Ok(())
}

/// Exit code of an error: 1 for validation problems, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_the_subcommand() {
        let cli = Cli::try_parse_from([
            "stfseb", "shift", "--config", "c.toml", "--seed", "4", "--set", "a=1", "--set", "b=2", "--angles",
            "-30,0,30",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(4));
        assert_eq!(cli.set, vec!["a=1", "b=2"]);
        match cli.command {
            Command::Shift { angles, .. } => assert_eq!(angles, Some(vec![-30.0, 0.0, 30.0])),
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from(["stfseb", "baseline", "mc_dropout"]).unwrap();
        assert!(matches!(
            cli.command,
            Command::Baseline {
                which: Baseline::McDropout
            }
        ));
    }

    #[test]
    fn usage_and_validation_errors_exit_with_one() {
        assert_eq!(run(["stfseb", "frobnicate"]), 1);
        assert_eq!(run(["stfseb", "train", "--set", "prior.nu_theta=2.0"]), 1);
        assert_eq!(run(["stfseb", "train", "--config", "/nonexistent/c.toml"]), 1);
        assert_eq!(run(["stfseb", "--help"]), 0);
    }

    #[test]
    fn ablation_entry_configs() {
        let cfg = ExperimentConfig::default();
        let g = ablation_entry_config(&cfg, DofEntry::Gaussian);
        assert_eq!(g.prior.kind, PriorKind::Gaussian);
        assert_eq!(g.out_dir, cfg.out_dir.join("ablate-dof/gaussian"));
        let n = ablation_entry_config(&cfg, DofEntry::Nu(2.1));
        assert_eq!((n.prior.kind, n.prior.nu_theta), (PriorKind::StudentT, 2.1));
        assert!(n.out_dir.ends_with("nu-2.1"));
    }
}
