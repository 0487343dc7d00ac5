//! Strict JSON configs with command-line overrides.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use ratatouille::analysis::Measure;
use ratatouille::bench::{ProtocolConfig, SuiteSpec};
use ratatouille::nn::OptimizerKind;
use ratatouille::trainer::Carrier;
use ratatouille::HyperParams;

use crate::failure::{CliResult, Failure};

/// Flags shared by every subcommand; each overrides the same-named config field.
#[derive(Debug, Clone, clap::Args)]
pub struct Flags {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A parsed config, the object it was parsed from, and the digest of the
/// resolved (post-override, defaults filled) config.
pub struct Loaded<T> {
    pub config: T,
    pub raw: Map<String, Value>,
    pub digest: String,
}

pub fn load<T: DeserializeOwned + Serialize>(flags: &Flags) -> CliResult<Loaded<T>> {
    let text = std::fs::read_to_string(&flags.config).map_err(|e| Failure::io(&flags.config, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", flags.config.display())))?;
    let Value::Object(mut raw) = value else {
        return Err(Failure::Config("config must be a JSON object".into()));
    };
    if let Some(seed) = flags.seed {
        raw.insert("seed".into(), seed.into());
    }
    if let Some(out) = &flags.out {
        raw.insert("output_dir".into(), out.to_string_lossy().into_owned().into());
    }
    if let Some(threads) = flags.threads {
        raw.insert("threads".into(), threads.into());
    }
    let config: T = serde_json::from_value(Value::Object(raw.clone()))
        .map_err(|e| Failure::Config(format!("{}: {e}", flags.config.display())))?;
    let resolved = serde_json::to_vec(&config).map_err(|e| Failure::Config(e.to_string()))?;
    let digest = hex::encode(Sha256::digest(&resolved))[..16].to_string();
    Ok(Loaded { config, raw, digest })
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub suite: SuiteSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pretrain,
    Probe,
    Finetune,
    Intertrain,
}

/// Training hyperparameters; the run seed comes from the top-level `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub steps: usize,
    pub eval_every: usize,
    #[serde(default)]
    pub freeze_featurizer_steps: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

impl RunSettings {
    pub fn with_seed(&self, seed: u64) -> HyperParams {
        HyperParams {
            lr: self.lr,
            batch_size: self.batch_size,
            dropout: self.dropout,
            weight_decay: self.weight_decay,
            steps: self.steps,
            eval_every: self.eval_every,
            freeze_featurizer_steps: self.freeze_featurizer_steps,
            seed,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub mode: TrainMode,
    /// Suite file written by `gen`.
    pub suite: PathBuf,
    /// Input checkpoint; required by every mode except `pretrain`.
    #[serde(default)]
    pub init: Option<PathBuf>,
    /// Task name (`target`, `pretrain` or an auxiliary task); defaults to
    /// `pretrain` for pre-training and `target` otherwise.
    #[serde(default)]
    pub task: Option<String>,
    /// Domain of the target task held out from training.
    #[serde(default)]
    pub test_domain: Option<usize>,
    /// Hidden widths of a freshly initialized network (`pretrain` only).
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    pub hparams: RunSettings,
    /// Auxiliary tasks trained in order (`intertrain` only).
    #[serde(default)]
    pub chain: Vec<String>,
    #[serde(default)]
    pub carrier: Carrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    Uniform,
    Weighted,
    Greedy,
    Wise,
    Interpolate,
    Interpolate3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub strategy: MergeStrategy,
    /// Checkpoints to merge. `wise` takes `[fine_tuned, pretrained]`.
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Suite, task and held-out domain defining the ID validation set (`greedy` only).
    #[serde(default)]
    pub suite: Option<PathBuf>,
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub test_domain: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzeKind {
    Lmc,
    Lmc3,
    Diversity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    #[default]
    Ood,
    Id,
}

fn default_grid() -> usize {
    ratatouille::analysis::DEFAULT_GRID
}

fn default_epsilon() -> f64 {
    ratatouille::analysis::DEFAULT_EPSILON
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub kind: AnalyzeKind,
    pub inputs: Vec<PathBuf>,
    pub suite: PathBuf,
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub test_domain: Option<usize>,
    #[serde(default)]
    pub split: EvalSplit,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub measure: Measure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    NumAux,
    Steps,
    NumRuns,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub suite: SuiteSpec,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub max_aux: Option<usize>,
    #[serde(default)]
    pub step_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub run_grid: Option<Vec<usize>>,
}

pub fn protocol_has_seeds(raw: &Map<String, Value>) -> bool {
    raw.get("protocol")
        .and_then(Value::as_object)
        .is_some_and(|p| p.contains_key("seeds"))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}
