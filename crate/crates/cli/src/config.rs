//! TOML experiment configuration. One file describes the dataset, the
//! target model, the federated run, the observer's auxiliary splits,
//! the attacks, and reporting options. Unknown keys are rejected so a
//! typo fails loudly instead of silently falling back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedmia_core::attack::{AttackFcnSpec, AttackHyperparams};
use fedmia_core::baseline::BaselineAttackSpec;
use fedmia_core::data::{
    generate_synthetic_pair, load_purchase_style, AuxCounts, LabeledDataset, SyntheticSpec,
};
use fedmia_core::engine::spec::mlp_spec;
use fedmia_core::engine::{NetworkSpec, OptimizerKind};
use fedmia_core::features::FeatureKind;
use fedmia_core::fl::{FlConfig, LrSchedule};
use fedmia_core::{Error, Result};

/// Master experiment configuration as written in the TOML file. The
/// master `seed` fans out to every randomized stage through distinct
/// derivation domains, so one value pins the whole pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub fl: FlSection,
    pub auxiliary: AuxiliarySection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sliding_window: Option<SlidingWindowSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// "synthetic" (seeded Gaussian class clusters) or "csv"
    /// (label-first rows of 0/1 features).
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_spread: Option<f64>,
    /// Held-out same-distribution rows per class (synthetic only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    /// Trailing rows of the CSV reserved as the held-out set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_rows: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths of the target MLP, in order.
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrPoint {
    pub epoch: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlSection {
    pub clients: usize,
    pub rounds: usize,
    #[serde(default = "default_one")]
    pub local_epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_sgd")]
    pub optimizer: String,
    /// Constant rate; mutually exclusive with `lr_schedule`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Step schedule `[{ epoch = 1, rate = 0.1 }, ...]`; the first
    /// point must be epoch 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_schedule: Option<Vec<LrPoint>>,
    /// Rounds at which the observer records the target's upload.
    pub observed_epochs: Vec<usize>,
    #[serde(default)]
    pub target_client: usize,
    /// Aggregation weights; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxiliarySection {
    pub member_train: usize,
    pub nonmember_train: usize,
    pub member_test: usize,
    pub nonmember_test: usize,
    /// Withhold class labels from the observer; label-dependent
    /// attacks then fail with a capability error.
    #[serde(default)]
    pub label_free: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Attacks to run: "true_label", "entropy", "max_score",
    /// "baseline" in any combination.
    #[serde(default = "default_kinds")]
    pub kinds: Vec<String>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_adam")]
    pub optimizer: String,
    /// Conv block channels of the trajectory classifier.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<[usize; 3]>,
    /// Conv block kernel lengths, paired with `channels`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernels: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSection>,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            kinds: default_kinds(),
            batch_size: default_batch(),
            learning_rate: default_rate(),
            epochs: default_epochs(),
            optimizer: default_adam(),
            channels: None,
            kernels: None,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default = "default_baseline_batch")]
    pub batch_size: usize,
    #[serde(default = "default_baseline_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_baseline_epochs")]
    pub epochs: usize,
    #[serde(default = "default_adam")]
    pub optimizer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernels: Option<[usize; 2]>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            batch_size: default_baseline_batch(),
            learning_rate: default_baseline_rate(),
            epochs: default_baseline_epochs(),
            optimizer: default_adam(),
            channels: None,
            kernels: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir() }
    }
}

/// Re-train the attack on a window of trailing observed epochs, moving
/// the window across the run; feeds the accuracy-vs-round plot.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidingWindowSection {
    /// Window length in observed epochs.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Step between window ends, in observed-epoch positions.
    #[serde(default = "default_window_stride")]
    pub stride: usize,
    /// Attack training epochs per window (reduced for speed).
    #[serde(default = "default_window_epochs")]
    pub attack_epochs: usize,
    #[serde(default = "default_true_label")]
    pub kind: String,
}

fn default_one() -> usize {
    1
}
fn default_sgd() -> String {
    "sgd".into()
}
fn default_adam() -> String {
    "adam".into()
}
fn default_kinds() -> Vec<String> {
    vec!["true_label".into()]
}
fn default_batch() -> usize {
    100
}
fn default_rate() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    100
}
fn default_baseline_batch() -> usize {
    50
}
/// The wide flat input needs a working point the trajectory default
/// cannot reach: its informative positions are diluted by global
/// pooling, so the head needs the larger steps.
fn default_baseline_rate() -> f64 {
    0.01
}
fn default_baseline_epochs() -> usize {
    30
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_window() -> usize {
    10
}
fn default_window_stride() -> usize {
    10
}
fn default_window_epochs() -> usize {
    25
}
fn default_true_label() -> String {
    "true_label".into()
}

/// Which attack a config entry names: a trajectory feature kind or the
/// white-box input baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackChoice {
    Feature(FeatureKind),
    Baseline,
}

impl AttackChoice {
    pub fn parse(name: &str) -> Result<AttackChoice> {
        if name == "baseline" {
            return Ok(AttackChoice::Baseline);
        }
        name.parse::<FeatureKind>()
            .map(AttackChoice::Feature)
            .map_err(|_| Error::Config(format!(
                "unknown attack kind {name:?}; expected true_label, entropy, max_score or baseline"
            )))
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackChoice::Feature(kind) => kind.name(),
            AttackChoice::Baseline => "baseline",
        }
    }
}

fn parse_optimizer(name: &str, key: &str) -> Result<OptimizerKind> {
    match name {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(Error::Config(format!("{key} must be \"sgd\" or \"adam\", got {other:?}"))),
    }
}

fn require<T>(value: Option<T>, key: &str, kind: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("dataset.{key} is required when kind = {kind:?}")))
}

fn forbid<T>(value: &Option<T>, key: &str, kind: &str) -> Result<()> {
    if value.is_some() {
        return Err(Error::Config(format!("dataset.{key} does not apply when kind = {kind:?}")));
    }
    Ok(())
}

impl ConfigFile {
    /// Read and parse the file; any TOML error or unknown key is a
    /// configuration error.
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ConfigFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks beyond what serde enforces. Every resolver
    /// below assumes this passed.
    pub fn validate(&self) -> Result<()> {
        match self.dataset.kind.as_str() {
            "synthetic" => {
                self.synthetic_spec()?;
            }
            "csv" => {
                let d = &self.dataset;
                require(d.path.as_ref(), "path", "csv")?;
                require(d.feature_dim, "feature_dim", "csv")?;
                require(d.classes, "classes", "csv")?;
                forbid(&d.dim, "dim", "csv")?;
                forbid(&d.per_class, "per_class", "csv")?;
                forbid(&d.cluster_spread, "cluster_spread", "csv")?;
                forbid(&d.holdout_per_class, "holdout_per_class", "csv")?;
            }
            other => {
                return Err(Error::Config(format!(
                    "dataset.kind must be \"synthetic\" or \"csv\", got {other:?}"
                )));
            }
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden needs positive widths".into()));
        }
        self.fl_config()?.validate()?;
        for kind in &self.attack.kinds {
            AttackChoice::parse(kind)?;
        }
        if self.attack.kinds.is_empty() {
            return Err(Error::Config("attack.kinds must name at least one attack".into()));
        }
        self.attack_hyperparams()?.validate()?;
        self.attack_fcn_spec()?;
        self.baseline_hyperparams()?.validate()?;
        self.baseline_attack_spec()?;
        if let Some(sliding) = &self.sliding_window {
            FeatureKind::ALL
                .iter()
                .find(|k| k.name() == sliding.kind)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "sliding_window.kind {:?} is not a trajectory feature kind",
                        sliding.kind
                    ))
                })?;
            if sliding.window == 0 || sliding.stride == 0 || sliding.attack_epochs == 0 {
                return Err(Error::Config(
                    "sliding_window.window, stride and attack_epochs must be positive".into(),
                ));
            }
            if sliding.window > self.fl.observed_epochs.len() {
                return Err(Error::Config(format!(
                    "sliding_window.window {} exceeds the {} observed epochs",
                    sliding.window,
                    self.fl.observed_epochs.len()
                )));
            }
        }
        Ok(())
    }

    fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let d = &self.dataset;
        forbid(&d.path, "path", "synthetic")?;
        forbid(&d.feature_dim, "feature_dim", "synthetic")?;
        forbid(&d.holdout_rows, "holdout_rows", "synthetic")?;
        Ok(SyntheticSpec {
            classes: require(d.classes, "classes", "synthetic")?,
            dim: require(d.dim, "dim", "synthetic")?,
            per_class: require(d.per_class, "per_class", "synthetic")?,
            cluster_spread: require(d.cluster_spread, "cluster_spread", "synthetic")?,
            seed: self.seed,
        })
    }

    /// Training pool plus optional held-out set.
    pub fn load_dataset(&self) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
        match self.dataset.kind.as_str() {
            "synthetic" => {
                let spec = self.synthetic_spec()?;
                generate_synthetic_pair(&spec, self.dataset.holdout_per_class.unwrap_or(0))
            }
            "csv" => {
                let d = &self.dataset;
                let path = d.path.as_ref().expect("validated");
                let feature_dim = d.feature_dim.expect("validated");
                let classes = d.classes.expect("validated");
                let full = load_purchase_style(path, feature_dim, classes)?;
                let holdout = d.holdout_rows.unwrap_or(0);
                if holdout == 0 {
                    return Ok((full, None));
                }
                if holdout >= full.len() {
                    return Err(Error::Capacity(format!(
                        "holdout_rows {holdout} leaves no training pool out of {} rows",
                        full.len()
                    )));
                }
                let cut = full.len() - holdout;
                let rebuild = |range: std::ops::Range<usize>, name: &str| {
                    LabeledDataset::new(
                        name.to_string(),
                        range.clone().map(|i| full.input(i).to_vec()).collect(),
                        range.map(|i| full.label(i)).collect(),
                        classes,
                    )
                };
                let pool = rebuild(0..cut, full.name())?;
                let heldout = rebuild(cut..full.len(), &format!("{}-holdout", full.name()))?;
                Ok((pool, Some(heldout)))
            }
            _ => unreachable!("validated"),
        }
    }

    /// Input dimension and class count without materializing the data.
    pub fn data_dims(&self) -> (usize, usize) {
        let d = &self.dataset;
        match d.kind.as_str() {
            "synthetic" => (d.dim.unwrap_or(0), d.classes.unwrap_or(0)),
            _ => (d.feature_dim.unwrap_or(0), d.classes.unwrap_or(0)),
        }
    }

    /// Target model architecture implied by the config.
    pub fn model_spec(&self) -> Result<NetworkSpec> {
        let (dim, classes) = self.data_dims();
        mlp_spec(dim, &self.model.hidden, classes)
    }

    pub fn fl_config(&self) -> Result<FlConfig> {
        let fl = &self.fl;
        let lr_schedule = match (fl.learning_rate, &fl.lr_schedule) {
            (Some(rate), None) => LrSchedule::constant(rate)?,
            (None, Some(points)) => {
                LrSchedule::new(points.iter().map(|p| (p.epoch, p.rate)).collect())?
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "fl.learning_rate and fl.lr_schedule are mutually exclusive".into(),
                ));
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of fl.learning_rate or fl.lr_schedule is required".into(),
                ));
            }
        };
        Ok(FlConfig {
            n_clients: fl.clients,
            weights: fl
                .weights
                .clone()
                .unwrap_or_else(|| FlConfig::uniform_weights(fl.clients)),
            rounds: fl.rounds,
            local_epochs: fl.local_epochs,
            batch_size: fl.batch_size,
            optimizer: parse_optimizer(&fl.optimizer, "fl.optimizer")?,
            lr_schedule,
            observed_epochs: fl.observed_epochs.clone(),
            target_client: fl.target_client,
            seed: self.seed,
        })
    }

    pub fn aux_counts(&self) -> AuxCounts {
        let a = &self.auxiliary;
        AuxCounts {
            member_train: a.member_train,
            nonmember_train: a.nonmember_train,
            member_test: a.member_test,
            nonmember_test: a.nonmember_test,
        }
    }

    pub fn attack_choices(&self) -> Result<Vec<AttackChoice>> {
        self.attack.kinds.iter().map(|k| AttackChoice::parse(k)).collect()
    }

    pub fn attack_hyperparams(&self) -> Result<AttackHyperparams> {
        Ok(AttackHyperparams {
            optimizer: parse_optimizer(&self.attack.optimizer, "attack.optimizer")?,
            batch_size: self.attack.batch_size,
            learning_rate: self.attack.learning_rate,
            epochs: self.attack.epochs,
            seed: self.seed,
        })
    }

    pub fn attack_fcn_spec(&self) -> Result<AttackFcnSpec> {
        let mut spec = AttackFcnSpec::default();
        match (self.attack.channels, self.attack.kernels) {
            (None, None) => {}
            (Some(channels), Some(kernels)) => {
                for (block, (c, k)) in
                    spec.conv_blocks.iter_mut().zip(channels.into_iter().zip(kernels))
                {
                    *block = (c, k);
                }
            }
            _ => {
                return Err(Error::Config(
                    "attack.channels and attack.kernels must be given together".into(),
                ));
            }
        }
        Ok(spec)
    }

    fn baseline_section(&self) -> BaselineSection {
        self.attack.baseline.clone().unwrap_or_default()
    }

    pub fn baseline_hyperparams(&self) -> Result<AttackHyperparams> {
        let section = self.baseline_section();
        Ok(AttackHyperparams {
            optimizer: parse_optimizer(&section.optimizer, "attack.baseline.optimizer")?,
            batch_size: section.batch_size,
            learning_rate: section.learning_rate,
            epochs: section.epochs,
            seed: self.seed,
        })
    }

    pub fn baseline_attack_spec(&self) -> Result<BaselineAttackSpec> {
        let section = self.baseline_section();
        let mut spec = BaselineAttackSpec::default();
        match (section.channels, section.kernels) {
            (None, None) => {}
            (Some(channels), Some(kernels)) => {
                for (block, (c, k)) in
                    spec.conv_blocks.iter_mut().zip(channels.into_iter().zip(kernels))
                {
                    *block = (c, k);
                }
            }
            _ => {
                return Err(Error::Config(
                    "attack.baseline.channels and kernels must be given together".into(),
                ));
            }
        }
        Ok(spec)
    }

    pub fn sliding_kind(&self) -> Option<FeatureKind> {
        let sliding = self.sliding_window.as_ref()?;
        FeatureKind::ALL.into_iter().find(|k| k.name() == sliding.kind)
    }
}
