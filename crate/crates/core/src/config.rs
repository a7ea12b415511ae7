//! Experiment configuration in TOML, `--set key=value` overrides, and
//! assembly of the datasets an experiment needs.
//!
//! Relative file paths are resolved against the directory of the config
//! file. All randomness in assembly is drawn from labelled substreams of the
//! top-level seed.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{
    load_delimited, load_idx, load_idx_images, make_ood_clusters, make_two_moons, uniform_context, ClusterSpec,
    ContextSet, Dataset,
};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::network::{Activation, NetSpec};
use crate::numerics::{Matrix, Rng};
use crate::objective::{LossPath, PriorConfig};
use crate::predict::{RotationMode, DEFAULT_ECE_BINS};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    TwoMoons,
    Idx,
    Delimited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Rows drawn for training (before the validation holdout).
    pub train_size: usize,
    pub test_size: usize,
    /// Two-moons noise standard deviation.
    pub noise_sd: f64,
    pub val_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::TwoMoons,
            train_size: 1000,
            test_size: 500,
            noise_sd: 0.1,
            val_fraction: 0.1,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_path: None,
            test_path: None,
            num_classes: None,
        }
    }
}

/// Where context or OOD inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// Gaussian blobs displaced from the training support.
    Clusters,
    /// Uniform noise on the unit cube.
    Uniform,
    /// Images from an IDX file.
    Idx,
    /// The training inputs themselves (context) or the test inputs (OOD).
    Same,
    None,
}

/// Context or OOD input set after defaults are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSetConfig {
    pub source: InputSource,
    pub size: usize,
    pub blobs: usize,
    pub blob_sd: f64,
    pub center_shift: f64,
    pub images: Option<PathBuf>,
}

macro_rules! input_set_section {
    ($(#[$doc:meta])* $name:ident, size = $size:expr, blobs = $blobs:expr, blob_sd = $sd:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            pub source: InputSource,
            pub size: usize,
            pub blobs: usize,
            pub blob_sd: f64,
            /// Minimum blob-centre distance from the training inputs, in
            /// units of `blob_sd · √D`.
            pub center_shift: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            pub images: Option<PathBuf>,
        }

        impl Default for $name {
            fn default() -> Self {
                $name {
                    source: InputSource::Clusters,
                    size: $size,
                    blobs: $blobs,
                    blob_sd: $sd,
                    center_shift: 5.0,
                    images: None,
                }
            }
        }

        impl $name {
            pub fn input_set(&self) -> InputSetConfig {
                InputSetConfig {
                    source: self.source,
                    size: self.size,
                    blobs: self.blobs,
                    blob_sd: self.blob_sd,
                    center_shift: self.center_shift,
                    images: self.images.clone(),
                }
            }
        }
    };
}

input_set_section!(
    /// `[context]`: inputs the functional prior is evaluated on.
    ContextSection, size = 1000, blobs = 16, blob_sd = 0.03
);
input_set_section!(
    /// `[ood]`: out-of-distribution inputs for AUROC.
    OodSection, size = 500, blobs = 6, blob_sd = 0.02
);

impl InputSetConfig {
    fn validate(&self, section: &str) -> Result<()> {
        if self.source == InputSource::None {
            return Ok(());
        }
        if self.source != InputSource::Same && self.size == 0 {
            return Err(Error::Config(format!("{section}.size: must be at least 1")));
        }
        if self.source == InputSource::Clusters {
            if self.blobs == 0 {
                return Err(Error::Config(format!("{section}.blobs: must be at least 1")));
            }
            if !(self.blob_sd > 0.0) {
                return Err(Error::Config(format!("{section}.blob_sd: must be positive")));
            }
            if !(self.center_shift >= 0.0) {
                return Err(Error::Config(format!("{section}.center_shift: must be non-negative")));
            }
        }
        if self.source == InputSource::Idx {
            require_file(&self.images, &format!("{section}.images"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    /// Hidden layers with dropout (all when absent).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_layers: Option<Vec<usize>>,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![32, 32],
            dropout_rate: 0.1,
            dropout_layers: None,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    StudentT,
    Gaussian,
}

impl From<PriorKind> for LossPath {
    fn from(k: PriorKind) -> Self {
        match k {
            PriorKind::StudentT => LossPath::StudentT,
            PriorKind::Gaussian => LossPath::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub kind: PriorKind,
    pub nu_theta: f64,
    pub sigma_theta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub mc_samples: usize,
    pub predictive_samples: usize,
    pub context_points: usize,
    pub penalise_biases: bool,
}

impl Default for PriorSection {
    fn default() -> Self {
        let p = PriorConfig::default();
        PriorSection {
            kind: PriorKind::StudentT,
            nu_theta: p.nu_theta,
            sigma_theta: p.sigma_theta,
            tau1: p.tau.tau1,
            tau2: p.tau.tau2,
            mc_samples: p.mc_samples,
            predictive_samples: p.predictive_samples,
            context_points: p.context_points,
            penalise_biases: p.penalise_biases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One entry of the dof-ablation grid: a finite `ν > 2` or the Gaussian
/// limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofEntry {
    Nu(f64),
    Gaussian,
}

impl fmt::Display for DofEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DofEntry::Nu(v) => write!(f, "{v}"),
            DofEntry::Gaussian => f.write_str("gaussian"),
        }
    }
}

impl std::str::FromStr for DofEntry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("gaussian") {
            return Ok(DofEntry::Gaussian);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("dof entry {s:?} is neither a number nor \"gaussian\"")))?;
        DofEntry::nu(v)
    }
}

impl DofEntry {
    pub fn nu(v: f64) -> Result<Self> {
        if v > 2.0 && v.is_finite() {
            Ok(DofEntry::Nu(v))
        } else {
            Err(Error::Config(format!("dof entry {v}: nu_theta must exceed 2")))
        }
    }

    /// Default grid: 2.1, 3, 5, 10, 20 and the Gaussian limit.
    pub fn standard_grid() -> Vec<DofEntry> {
        [2.1, 3.0, 5.0, 10.0, 20.0]
            .into_iter()
            .map(DofEntry::Nu)
            .chain([DofEntry::Gaussian])
            .collect()
    }
}

impl Serialize for DofEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DofEntry::Nu(v) => s.serialize_f64(*v),
            DofEntry::Gaussian => s.serialize_str("gaussian"),
        }
    }
}

impl<'de> Deserialize<'de> for DofEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => DofEntry::nu(v).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    pub ece_bins: usize,
    pub angles: Vec<f64>,
    /// Image shape for rotations; two-dimensional data rotates as points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_height: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_width: Option<usize>,
    pub dof_grid: Vec<DofEntry>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            ece_bins: DEFAULT_ECE_BINS,
            angles: vec![-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0],
            image_height: None,
            image_width: None,
            dof_grid: DofEntry::standard_grid(),
        }
    }
}

/// A whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub context: ContextSection,
    pub ood: OodSection,
    pub network: NetworkConfig,
    pub prior: PriorSection,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            context: ContextSection::default(),
            ood: OodSection::default(),
            network: NetworkConfig::default(),
            prior: PriorSection::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn require_file(p: &Option<PathBuf>, key: &str) -> Result<()> {
    match p {
        None => Err(Error::Config(format!("{key}: required for this source"))),
        Some(p) if !p.is_file() => Err(Error::Config(format!("{key}: file {} does not exist", p.display()))),
        Some(_) => Ok(()),
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {assignment:?}: expected KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("--set {assignment:?}: empty key segment")));
    }
    let mut cur = table;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("--set {assignment:?}: {} is not a section", parts[..=i].join(".")))
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides, resolves relative paths against
    /// `base_dir` and validates.
    pub fn from_toml_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        let d = &mut self.data;
        for p in [
            &mut d.train_images,
            &mut d.train_labels,
            &mut d.test_images,
            &mut d.test_labels,
            &mut d.train_path,
            &mut d.test_path,
        ] {
            fix(p);
        }
        fix(&mut self.context.images);
        fix(&mut self.ood.images);
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(0.0..1.0).contains(&d.val_fraction) || d.val_fraction == 0.0 {
            return Err(Error::Config("data.val_fraction: must lie in (0, 1)".into()));
        }
        match d.source {
            DataSource::TwoMoons => {
                if d.train_size < 4 || d.test_size < 2 {
                    return Err(Error::Config("data.train_size/test_size: too small for two-moons".into()));
                }
                if !(d.noise_sd >= 0.0) {
                    return Err(Error::Config("data.noise_sd: must be non-negative".into()));
                }
            }
            DataSource::Idx => {
                require_file(&d.train_images, "data.train_images")?;
                require_file(&d.train_labels, "data.train_labels")?;
                require_file(&d.test_images, "data.test_images")?;
                require_file(&d.test_labels, "data.test_labels")?;
            }
            DataSource::Delimited => {
                require_file(&d.train_path, "data.train_path")?;
                require_file(&d.test_path, "data.test_path")?;
                if d.num_classes.is_none_or(|l| l < 2) {
                    return Err(Error::Config("data.num_classes: at least 2 required for delimited data".into()));
                }
            }
        }
        self.context.input_set().validate("context")?;
        self.ood.input_set().validate("ood")?;
        if self.network.hidden.contains(&0) {
            return Err(Error::Config("network.hidden: widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.network.dropout_rate) {
            return Err(Error::Config("network.dropout_rate: must lie in [0, 1)".into()));
        }
        if let Some(layers) = &self.network.dropout_layers {
            if let Some(l) = layers.iter().find(|&&l| l >= self.network.hidden.len()) {
                return Err(Error::Config(format!("network.dropout_layers: {l} is not a hidden layer")));
            }
        }
        let mut prior = self.prior_config(1);
        if self.prior.kind == PriorKind::Gaussian {
            // ν plays no role on the Gaussian path
            prior.nu_theta = 3.0;
        }
        prior.validate()?;
        if self.context.source == InputSource::None {
            return Err(Error::Config("context.source: the functional prior needs context points".into()));
        }
        self.train_config().validate()?;
        if self.eval.ece_bins == 0 {
            return Err(Error::Config("eval.ece_bins: must be at least 1".into()));
        }
        if let Some(a) = self.eval.angles.iter().find(|a| !a.is_finite()) {
            return Err(Error::Config(format!("eval.angles: {a} is not finite")));
        }
        if self.eval.dof_grid.is_empty() {
            return Err(Error::Config("eval.dof_grid: must not be empty".into()));
        }
        Ok(())
    }

    /// The loss path selected by `prior.kind`.
    pub fn loss_path(&self) -> LossPath {
        self.prior.kind.into()
    }

    /// Prior settings with `ρ` taken from the network dropout rate.
    pub fn prior_config(&self, minibatches: usize) -> PriorConfig {
        let p = &self.prior;
        PriorConfig {
            nu_theta: p.nu_theta,
            sigma_theta: p.sigma_theta,
            rho: self.network.dropout_rate,
            tau: KernelConfig {
                tau1: p.tau1,
                tau2: p.tau2,
            },
            mc_samples: p.mc_samples,
            predictive_samples: p.predictive_samples,
            context_points: p.context_points,
            minibatches,
            penalise_biases: p.penalise_biases,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: self.seed,
        }
    }

    /// Network for `input_dim` inputs and `classes` outputs.
    pub fn net_spec(&self, input_dim: usize, classes: usize) -> Result<NetSpec> {
        let mut widths = vec![input_dim];
        widths.extend(&self.network.hidden);
        widths.push(classes);
        let spec = NetSpec {
            dropout_layers: self
                .network
                .dropout_layers
                .clone()
                .unwrap_or_else(|| (0..self.network.hidden.len()).collect()),
            layer_widths: widths,
            dropout_rate: self.network.dropout_rate,
            activation: self.network.activation,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Datasets and context assembled from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub context: ContextSet,
    pub rotation: Option<RotationMode>,
}

fn subset_if_smaller(d: Dataset, n: usize, rng: &mut Rng, key: &str) -> Result<Dataset> {
    if n == 0 || n == d.len() {
        return Ok(d);
    }
    d.seeded_subset(n, rng)
        .map_err(|e| Error::Config(format!("{key}: {e}")))
}

fn input_set(
    cfg: &InputSetConfig,
    section: &str,
    support: &Matrix,
    same: &Matrix,
    rng: &mut Rng,
) -> Result<Option<Matrix>> {
    let d = support.cols();
    let m = match cfg.source {
        InputSource::None => return Ok(None),
        InputSource::Same => same.clone(),
        InputSource::Uniform => uniform_context(cfg.size, d, rng)?.inputs().clone(),
        InputSource::Clusters => {
            let spec = ClusterSpec {
                blobs: cfg.blobs,
                blob_sd: cfg.blob_sd,
                center_shift: cfg.center_shift,
            };
            make_ood_clusters(cfg.size, support, &spec, rng)?.inputs().clone()
        }
        InputSource::Idx => {
            let path = cfg.images.as_ref().expect("validated");
            let (x, _) = load_idx_images(path)?;
            if x.cols() != d {
                return Err(Error::Config(format!(
                    "{section}.images: {} pixels per image, training data has {d}",
                    x.cols()
                )));
            }
            if cfg.size < x.rows() {
                let perm = rng.permutation(x.rows());
                x.select_rows(&perm[..cfg.size])
            } else {
                x
            }
        }
    };
    Ok(Some(m))
}

impl Experiment {
    pub fn assemble(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let d = &config.data;
        let (full_train, test, image_shape) = match d.source {
            DataSource::TwoMoons => (
                make_two_moons(d.train_size, d.noise_sd, &mut root.substream("data-train"))?,
                make_two_moons(d.test_size, d.noise_sd, &mut root.substream("data-test"))?,
                None,
            ),
            DataSource::Idx => {
                let tr = load_idx(d.train_images.as_ref().unwrap(), d.train_labels.as_ref().unwrap())?;
                let te = load_idx(d.test_images.as_ref().unwrap(), d.test_labels.as_ref().unwrap())?;
                let (_, shape) = load_idx_images(d.train_images.as_ref().unwrap())?;
                let tr = subset_if_smaller(tr, d.train_size, &mut root.substream("subset-train"), "data.train_size")?;
                let te = subset_if_smaller(te, d.test_size, &mut root.substream("subset-test"), "data.test_size")?;
                (tr, te, Some(shape))
            }
            DataSource::Delimited => {
                let l = d.num_classes.unwrap();
                let tr = load_delimited(d.train_path.as_ref().unwrap(), l)?;
                let te = load_delimited(d.test_path.as_ref().unwrap(), l)?;
                let tr = subset_if_smaller(tr, d.train_size, &mut root.substream("subset-train"), "data.train_size")?;
                let te = subset_if_smaller(te, d.test_size, &mut root.substream("subset-test"), "data.test_size")?;
                (tr, te, None)
            }
        };
        if full_train.input_dim() != test.input_dim() {
            return Err(Error::Config(format!(
                "data: train has {} features, test has {}",
                full_train.input_dim(),
                test.input_dim()
            )));
        }
        let classes = full_train.num_classes().max(test.num_classes());
        let full_train = Dataset::new(
            full_train.name().to_string(),
            full_train.inputs().clone(),
            full_train.labels().to_vec(),
            classes,
        )?;
        let test = Dataset::new(test.name().to_string(), test.inputs().clone(), test.labels().to_vec(), classes)?;
        let (train, val) = full_train.split_holdout(d.val_fraction, &mut root.substream("split"))?;

        let ctx = input_set(
            &config.context.input_set(),
            "context",
            train.inputs(),
            train.inputs(),
            &mut root.substream("context"),
        )?
        .expect("validated");
        let context = ContextSet::new(ctx)?;
        context.check_compatible(&train)?;

        let e = &config.eval;
        let rotation = match (e.image_height, e.image_width, image_shape) {
            (Some(h), Some(w), _) => Some(RotationMode::Image { height: h, width: w }),
            (None, None, Some((h, w))) => Some(RotationMode::Image { height: h, width: w }),
            (None, None, None) if train.input_dim() == 2 => Some(RotationMode::Points),
            (None, None, None) => None,
            _ => {
                return Err(Error::Config(
                    "eval.image_height/image_width: give both or neither".into(),
                ))
            }
        };
        if let Some(RotationMode::Image { height, width }) = rotation {
            if height * width != train.input_dim() {
                return Err(Error::Config(format!(
                    "eval.image_height/image_width: {height}x{width} does not match {} features",
                    train.input_dim()
                )));
            }
        }
        Ok(Experiment {
            config,
            train,
            val,
            test,
            context,
            rotation,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn net_spec(&self) -> Result<NetSpec> {
        self.config.net_spec(self.train.input_dim(), self.num_classes())
    }

    pub fn split(&self, s: Split) -> &Dataset {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// OOD inputs per the `[ood]` section (`None` when disabled).
    pub fn ood_inputs(&self) -> Result<Option<Matrix>> {
        let root = Rng::new(self.config.seed);
        input_set(
            &self.config.ood.input_set(),
            "ood",
            self.train.inputs(),
            self.test.inputs(),
            &mut root.substream("ood"),
        )
    }
}
