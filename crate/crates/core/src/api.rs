//! Request and response bodies shared by the HTTP service and its clients.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetFormat, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::eval::{BiasReport, MetricsReport};
use crate::experiment::{AblationConfig, BiasConfig};
use crate::feedback::{Aggregation, Answer, KeywordOracle, Policy, TaskType};
use crate::model::{ArchConfig, BilstmConfig, CnnConfig, TrainConfig, TrainingLog};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// A file readable by the server.
    Path {
        path: PathBuf,
        #[serde(default)]
        format: Option<DatasetFormat>,
    },
    /// JSONL text: an optional `{"classes": [...]}` line, then records.
    Inline { jsonl: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    Path { path: PathBuf },
    /// Whitespace-separated `word v1 .. vD` lines.
    Inline { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterDataset {
    #[serde(default)]
    pub name: Option<String>,
    pub data: DatasetSource,
    pub embeddings: EmbeddingSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub name: String,
    pub classes: Vec<String>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocabulary: usize,
    pub embedding_dim: usize,
    pub coverage: f64,
}

/// Flat key-value model and optimizer settings; the format of `--config`
/// files. Absent keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `cnn` or `bilstm`.
    pub architecture: String,
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub hidden_units: usize,
    pub max_len: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cnn = CnnConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            architecture: "cnn".into(),
            filter_sizes: cnn.filter_sizes,
            filters_per_size: cnn.filters_per_size,
            hidden_units: BilstmConfig::default().hidden_units,
            max_len: DEFAULT_MAX_LEN,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_epsilon: train.adam_epsilon,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.arch()?;
        config.train(0).validate()?;
        Ok(config)
    }

    pub fn arch(&self) -> Result<ArchConfig> {
        match self.architecture.as_str() {
            "cnn" => Ok(ArchConfig::Cnn(CnnConfig {
                filter_sizes: self.filter_sizes.clone(),
                filters_per_size: self.filters_per_size,
            })),
            "bilstm" => Ok(ArchConfig::Bilstm(BilstmConfig {
                hidden_units: self.hidden_units,
            })),
            other => Err(Error::Config(format!("unknown architecture {other:?}; expected cnn or bilstm"))),
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub dataset_id: String,
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub kind: String,
    pub state: JobState,
    #[serde(default)]
    pub result: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<ErrorBody>,
}

impl JobStatus {
    pub fn is_finished(&self) -> bool {
        matches!(self.state, JobState::Succeeded | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelOrigin {
    Trained { seed: u64 },
    Imported,
    Derived {
        #[serde(default)]
        session_id: Option<String>,
        fine_tuned: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub dataset_id: String,
    pub architecture: String,
    pub classes: Vec<String>,
    pub feature_count: usize,
    pub disabled: BTreeSet<usize>,
    /// Id of the model this one was derived from.
    pub parent: Option<String>,
    /// Id of the first model of the derivation chain.
    pub lineage: String,
    pub origin: ModelOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    /// 0 means the starting parameters were kept.
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
}

impl TrainingSummary {
    pub fn of(log: &TrainingLog) -> TrainingSummary {
        TrainingSummary {
            epochs: log.epochs.len(),
            best_epoch: log.best_epoch,
            best_dev_macro_f1: log.best_dev_macro_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: ModelInfo,
    pub training: TrainingSummary,
    /// Path of the per-epoch JSONL log, relative to the service root.
    pub log: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisableRequest {
    pub features: BTreeSet<usize>,
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub finetune_always: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisableOutcome {
    pub model: ModelInfo,
    pub fine_tuned: bool,
    #[serde(default)]
    pub training: Option<TrainingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub model_id: String,
    pub task: TaskType,
    pub policy: Policy,
    #[serde(default)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAnswers {
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswersAck {
    pub accepted: usize,
    pub total: usize,
}

/// Keyword oracle over class names: `word -> class name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OracleSpec(pub BTreeMap<String, String>);

impl OracleSpec {
    pub fn resolve(&self, classes: &[String]) -> Result<KeywordOracle> {
        let pairs = self
            .0
            .iter()
            .map(|(word, class)| {
                classes
                    .iter()
                    .position(|c| c == class)
                    .map(|c| (word.clone(), c))
                    .ok_or_else(|| Error::Config(format!("oracle maps {word:?} to unknown class {class:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        KeywordOracle::new(classes.len(), pairs)
    }

    pub fn from_oracle(oracle: &KeywordOracle, classes: &[String]) -> OracleSpec {
        OracleSpec(
            oracle
                .keywords
                .iter()
                .map(|(w, &c)| (w.clone(), classes[c].clone()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub oracle: OracleSpec,
    #[serde(default = "default_respondents")]
    pub respondents: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_respondents() -> usize {
    10
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApplyRequest {
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub finetune_always: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyOutcome {
    pub session_id: String,
    pub model: ModelInfo,
    pub disabled: BTreeSet<usize>,
    pub fine_tuned: bool,
    pub aggregation: Aggregation,
    #[serde(default)]
    pub training: Option<TrainingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub report: MetricsReport,
    #[serde(default)]
    pub bias: Option<BiasReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub a: MetricsReport,
    pub b: MetricsReport,
    /// `b − a`.
    pub delta_accuracy: f64,
    pub delta_macro_f1: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRequest {
    pub dataset_id: String,
    pub oracle: OracleSpec,
    #[serde(default)]
    pub config: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRequest {
    pub dataset_id: String,
    #[serde(default)]
    pub config: BiasConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// `not_found`, `validation`, `conflict` or `internal`.
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}
