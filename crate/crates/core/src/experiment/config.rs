use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    gen_synthetic, load_csv, load_idx, read_dataset, subsample, CsvSchema, Dataset, Split, SyntheticRule,
};
use crate::error::{Error, Result};
use crate::gsnr::GsnrMethod;
use crate::infoplane::MiEstimatorSpec;
use crate::nn::{HiddenActivation, NetworkSpec};

/// Either "every k epochs" (plus the last epoch) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Every(usize),
    Epochs(Vec<usize>),
}

impl Schedule {
    pub fn never() -> Self {
        Schedule::Epochs(Vec::new())
    }

    /// Scheduled epochs in `0..=epochs`, sorted.
    pub fn resolve(&self, epochs: usize) -> Vec<usize> {
        let mut out = match self {
            Schedule::Every(0) => Vec::new(),
            Schedule::Every(k) => {
                let mut v: Vec<usize> = (0..=epochs).step_by(*k).collect();
                v.push(epochs);
                v
            }
            Schedule::Epochs(v) => v.clone(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    fn check(&self, epochs: usize, what: &str) -> Result<()> {
        if let Schedule::Epochs(v) = self {
            if let Some(e) = v.iter().find(|&&e| e > epochs) {
                return Err(Error::config(format!(
                    "{what} epoch {e} is past the last epoch {epochs}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    Csv,
    Idx,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleConfig {
    pub n: usize,
    #[serde(default = "yes")]
    pub stratified: bool,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

/// Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    // synthetic
    pub rule_seed: Option<u64>,
    pub label_seed: Option<u64>,
    pub gamma: Option<f64>,
    pub threshold: Option<f64>,
    // csv / binary
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub label_column: Option<String>,
    pub feature_columns: Option<Vec<String>>,
    pub class_count: Option<usize>,
    pub scale: Option<bool>,
    // idx
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub validation_images: Option<PathBuf>,
    pub validation_labels: Option<PathBuf>,
    /// Applied to the training split only.
    pub subsample: Option<SubsampleConfig>,
}

impl DatasetConfig {
    pub fn synthetic(rule_seed: u64, label_seed: u64) -> Self {
        DatasetConfig {
            kind: DatasetKind::Synthetic,
            rule_seed: Some(rule_seed),
            label_seed: Some(label_seed),
            gamma: None,
            threshold: None,
            train: None,
            validation: None,
            label_column: None,
            feature_columns: None,
            class_count: None,
            scale: None,
            train_images: None,
            train_labels: None,
            validation_images: None,
            validation_labels: None,
            subsample: None,
        }
    }

    fn require<'a, T>(field: &'a Option<T>, name: &str, kind: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| Error::config(format!("dataset.{name} is required for kind = \"{kind}\"")))
    }

    /// Training split and optional validation split.
    pub fn load(&self, base: &Path) -> Result<(Dataset, Option<Dataset>)> {
        let at = |p: &PathBuf| base.join(p);
        let (train, val) = match self.kind {
            DatasetKind::Synthetic => {
                let mut rule = SyntheticRule::from_seed(*Self::require(&self.rule_seed, "rule_seed", "synthetic")?);
                rule.gamma = self.gamma;
                rule.threshold = self.threshold;
                (gen_synthetic(&rule, self.label_seed.unwrap_or(0))?, None)
            }
            DatasetKind::Csv => {
                let schema = CsvSchema {
                    label_column: Self::require(&self.label_column, "label_column", "csv")?.clone(),
                    feature_columns: self.feature_columns.clone(),
                    class_count: self.class_count,
                    scale: self.scale.unwrap_or(true),
                };
                let (train, scaler) = load_csv(
                    &at(Self::require(&self.train, "train", "csv")?),
                    &schema,
                    Split::Train,
                    None,
                )?;
                let val = match &self.validation {
                    Some(p) => Some(load_csv(&at(p), &schema, Split::Validation, Some(&scaler))?.0),
                    None => None,
                };
                (train, val)
            }
            DatasetKind::Idx => {
                let train = load_idx(
                    &at(Self::require(&self.train_images, "train_images", "idx")?),
                    &at(Self::require(&self.train_labels, "train_labels", "idx")?),
                    Split::Train,
                )?;
                let val = match (&self.validation_images, &self.validation_labels) {
                    (Some(i), Some(l)) => Some(load_idx(&at(i), &at(l), Split::Validation)?),
                    (None, None) => None,
                    _ => return Err(Error::config("validation_images and validation_labels go together")),
                };
                (train, val)
            }
            DatasetKind::Binary => {
                let train = read_dataset(&at(Self::require(&self.train, "train", "binary")?))?.with_split(Split::Train);
                let val = match &self.validation {
                    Some(p) => Some(read_dataset(&at(p))?.with_split(Split::Validation)),
                    None => None,
                };
                (train, val)
            }
        };
        let train = match &self.subsample {
            Some(s) => subsample(&train, s.n, s.stratified, s.seed)?,
            None => train,
        };
        train.require_all_classes()?;
        if let Some(v) = &val {
            if v.input_dim() != train.input_dim() || v.class_count() > train.class_count() {
                return Err(Error::config("validation split does not match the training split"));
            }
        }
        Ok((train, val))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layer_widths: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output: OutputKind,
    pub init_seed: u64,
}

impl NetworkConfig {
    pub fn spec(&self) -> Result<NetworkSpec> {
        match self.output {
            OutputKind::Sigmoid => NetworkSpec::binary(self.layer_widths.clone(), self.hidden_activation),
            OutputKind::Softmax => NetworkSpec::multiclass(self.layer_widths.clone(), self.hidden_activation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the batch draws.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Srs,
    Ts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    Greedy,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// `|H|`; defaults to a quarter of the training set.
    #[serde(default)]
    pub target_h_size: Option<usize>,
    #[serde(default = "one")]
    pub density_ratio: f64,
    /// Epochs between partition rebuilds.
    #[serde(default = "ten")]
    pub refresh_period: usize,
    #[serde(default = "greedy")]
    pub strategy: PartitionStrategy,
}

fn one() -> f64 {
    1.0
}
fn ten() -> usize {
    10
}
fn greedy() -> PartitionStrategy {
    PartitionStrategy::Greedy
}

impl SamplerConfig {
    pub fn srs() -> Self {
        SamplerConfig {
            kind: SamplerKind::Srs,
            target_h_size: None,
            density_ratio: 1.0,
            refresh_period: 10,
            strategy: PartitionStrategy::Greedy,
        }
    }

    pub fn h_size(&self, n: usize) -> usize {
        self.target_h_size.unwrap_or((n / 4).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentChoice {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstrumentationConfig {
    pub gsnr_schedule: Schedule,
    pub mi_schedule: Schedule,
    pub loss_schedule: Schedule,
    pub estimator: MiEstimatorSpec,
    pub moment_method: MomentChoice,
    pub monte_carlo_draws: usize,
    pub monte_carlo_seed: u64,
    /// Keep per-sample norms at GSNR checkpoints and fit growth constants.
    pub growth: bool,
    /// Also estimate MI on the validation split.
    pub validation_mi: bool,
    pub plots: bool,
}

impl Default for InstrumentationConfig {
    fn default() -> Self {
        InstrumentationConfig {
            gsnr_schedule: Schedule::Every(10),
            mi_schedule: Schedule::Every(10),
            loss_schedule: Schedule::Every(1),
            estimator: MiEstimatorSpec::default(),
            moment_method: MomentChoice::Analytic,
            monte_carlo_draws: 1000,
            monte_carlo_seed: 0,
            growth: false,
            validation_mi: false,
            plots: false,
        }
    }
}

impl InstrumentationConfig {
    pub fn gsnr_method(&self, epoch: usize) -> GsnrMethod {
        match self.moment_method {
            MomentChoice::Analytic => GsnrMethod::Analytic,
            MomentChoice::MonteCarlo => GsnrMethod::MonteCarlo {
                draws: self.monte_carlo_draws,
                seed: self.monte_carlo_seed.wrapping_add(epoch as u64),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Default output directory, relative to the config file.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub instrumentation: InstrumentationConfig,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.spec()?;
        let o = &self.optimizer;
        if !(o.step_size > 0.0 && o.step_size.is_finite()) {
            return Err(Error::config(format!("step_size must be > 0, got {}", o.step_size)));
        }
        if o.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.sampler.refresh_period == 0 {
            return Err(Error::config("refresh_period must be positive"));
        }
        if !(self.sampler.density_ratio >= 1.0 && self.sampler.density_ratio.is_finite()) {
            return Err(Error::config("density_ratio must be >= 1"));
        }
        let i = &self.instrumentation;
        i.gsnr_schedule.check(o.epochs, "gsnr")?;
        i.mi_schedule.check(o.epochs, "mi")?;
        i.loss_schedule.check(o.epochs, "loss")?;
        i.estimator.validate()?;
        if i.moment_method == MomentChoice::MonteCarlo && i.monte_carlo_draws < 2 {
            return Err(Error::config("monte_carlo_draws must be >= 2"));
        }
        Ok(())
    }

    /// Seeds the network initialization and the batch draws; dataset seeds
    /// are left alone so paired runs share data.
    pub fn override_seed(&mut self, seed: u64) {
        self.network.init_seed = seed;
        self.optimizer.seed = seed;
    }

    /// The config with every default filled in, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Network spec checked against the training data, plus both splits.
    pub fn prepare(&self) -> Result<(NetworkSpec, Dataset, Option<Dataset>)> {
        let spec = self.network.spec()?;
        let (train, val) = self.dataset.load(&self.base_dir)?;
        spec.check_dataset(&train)?;
        if let Some(v) = &val {
            spec.check_dataset(v)?;
        }
        if self.optimizer.batch_size > train.len() {
            return Err(Error::config(format!(
                "batch_size {} exceeds the {} training rows",
                self.optimizer.batch_size,
                train.len()
            )));
        }
        Ok((spec, train, val))
    }
}
