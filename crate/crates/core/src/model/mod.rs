//! Classifiers of the form `softmax((W ⊙ Q) f + b)` on top of a frozen
//! embedding layer and a feature extractor (1-D CNN or BiLSTM).

mod bilstm;
mod cnn;
mod train;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode, Document, EmbeddingTable, Vocabulary, DEFAULT_MAX_LEN, PAD};
use crate::error::{Error, Result};

pub use bilstm::{Bilstm, BilstmTrace, LstmDirection, LstmStep};
pub use cnn::{Cnn, ConvBank};
pub use train::{
    finetune_head, train, Adam, EpochRecord, FinetuneOptions, TrainConfig, TrainingLog,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            filter_sizes: vec![2, 3, 4],
            filters_per_size: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilstmConfig {
    pub hidden_units: usize,
}

impl Default for BilstmConfig {
    fn default() -> Self {
        BilstmConfig { hidden_units: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum ArchConfig {
    Cnn(CnnConfig),
    Bilstm(BilstmConfig),
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::Cnn(CnnConfig::default())
    }
}

impl ArchConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            ArchConfig::Cnn(_) => "cnn",
            ArchConfig::Bilstm(_) => "bilstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub arch: ArchConfig,
    pub max_len: usize,
    pub embed_dim: usize,
    pub classes: Vec<String>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn cnn(classes: Vec<String>, embed_dim: usize, seed: u64) -> Self {
        ModelConfig {
            arch: ArchConfig::Cnn(CnnConfig::default()),
            max_len: DEFAULT_MAX_LEN,
            embed_dim,
            classes,
            seed,
        }
    }

    pub fn bilstm(classes: Vec<String>, embed_dim: usize, seed: u64) -> Self {
        ModelConfig {
            arch: ArchConfig::Bilstm(BilstmConfig::default()),
            max_len: DEFAULT_MAX_LEN,
            embed_dim,
            classes,
            seed,
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Size `d` of the feature vector fed to the dense layer.
    pub fn feature_count(&self) -> usize {
        match &self.arch {
            ArchConfig::Cnn(c) => c.filter_sizes.len() * c.filters_per_size,
            ArchConfig::Bilstm(c) => 2 * c.hidden_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if self.max_len == 0 || self.embed_dim == 0 {
            return Err(Error::Config("max_len and embed_dim must be positive".into()));
        }
        match &self.arch {
            ArchConfig::Cnn(c) => {
                if c.filter_sizes.is_empty() || c.filters_per_size == 0 {
                    return Err(Error::Config("CNN needs at least one filter".into()));
                }
                if c.filter_sizes.iter().any(|&s| s == 0 || s > self.max_len) {
                    return Err(Error::Config(format!(
                        "filter sizes {:?} must be in 1..={}",
                        c.filter_sizes, self.max_len
                    )));
                }
            }
            ArchConfig::Bilstm(c) => {
                if c.hidden_units == 0 {
                    return Err(Error::Config("BiLSTM needs at least one hidden unit".into()));
                }
            }
        }
        Ok(())
    }
}

/// Dense output layer with its feature mask. `weights` and `mask` are
/// row-major `classes × features`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub classes: usize,
    pub features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mask: Vec<f64>,
}

impl Head {
    pub fn new(classes: usize, features: usize, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weights.len(), classes * features);
        assert_eq!(bias.len(), classes);
        Head {
            classes,
            features,
            weights,
            bias,
            mask: vec![1.0; classes * features],
        }
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.features + feature]
    }

    /// Column `feature` of W, one entry per class.
    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.classes).map(|c| self.weight(c, feature)).collect()
    }

    /// `(W ⊙ Q) f + b`.
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = c * self.features;
                let mut z = self.bias[c];
                for j in 0..self.features {
                    z += self.weights[row + j] * self.mask[row + j] * features[j];
                }
                z
            })
            .collect()
    }

    /// `W f + b` ignoring the mask.
    pub fn logits_unmasked(&self, features: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = c * self.features;
                let mut z = self.bias[c];
                for j in 0..self.features {
                    z += self.weights[row + j] * features[j];
                }
                z
            })
            .collect()
    }

    pub fn is_disabled(&self, feature: usize) -> bool {
        self.mask[feature] == 0.0
    }

    pub fn disabled_features(&self) -> BTreeSet<usize> {
        (0..self.features).filter(|&j| self.is_disabled(j)).collect()
    }

    pub(crate) fn zero_column(&mut self, feature: usize) {
        for c in 0..self.classes {
            self.mask[c * self.features + feature] = 0.0;
        }
    }

    /// Every mask column is all ones or all zeros.
    pub fn mask_is_columnar(&self) -> bool {
        (0..self.features).all(|j| {
            let first = self.mask[j];
            (first == 0.0 || first == 1.0)
                && (0..self.classes).all(|c| self.mask[c * self.features + j] == first)
        })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    Cnn(Cnn),
    Bilstm(Bilstm),
}

impl Extractor {
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        match self {
            Extractor::Cnn(m) => m.param_blocks(),
            Extractor::Bilstm(m) => m.param_blocks(),
        }
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Extractor::Cnn(m) => m.param_blocks_mut(),
            Extractor::Bilstm(m) => m.param_blocks_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    fn block_names(&self) -> Vec<String> {
        match self {
            Extractor::Cnn(m) => m.block_names(),
            Extractor::Bilstm(m) => m.block_names(),
        }
    }
}

/// Per-document result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub features: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// For CNN features, the start of the winning max-pool window. For
    /// BiLSTM features, the position of the time step holding the maximum.
    pub pool_argmax: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// A trained (or freshly initialized) classifier together with the frozen
/// vocabulary and embeddings it was built on. Snapshots are values: every
/// mutating operation returns a new one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub config: ModelConfig,
    pub extractor: Extractor,
    pub head: Head,
    pub vocab: Arc<Vocabulary>,
    pub embeddings: Arc<EmbeddingTable>,
}

/// Builds a model with uniform fan-in scaled weights (`±1/sqrt(fan_in)`),
/// zero biases and an all-ones mask. Deterministic in `config.seed`.
pub fn init_model(
    config: ModelConfig,
    vocab: Arc<Vocabulary>,
    embeddings: Arc<EmbeddingTable>,
) -> Result<ModelSnapshot> {
    config.validate()?;
    if embeddings.dim() != config.embed_dim {
        return Err(Error::Dimension {
            expected: config.embed_dim,
            found: embeddings.dim(),
            context: "embedding dimension",
        });
    }
    if embeddings.rows() != vocab.len() + 2 {
        return Err(Error::Dimension {
            expected: vocab.len() + 2,
            found: embeddings.rows(),
            context: "embedding rows",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extractor = match &config.arch {
        ArchConfig::Cnn(c) => Extractor::Cnn(Cnn::init(c, config.embed_dim, config.max_len, &mut rng)),
        ArchConfig::Bilstm(c) => Extractor::Bilstm(Bilstm::init(c, config.embed_dim, config.max_len, &mut rng)),
    };
    let d = config.feature_count();
    let classes = config.class_count();
    let weights = uniform(&mut rng, classes * d, d);
    let head = Head::new(classes, d, weights, vec![0.0; classes]);
    Ok(ModelSnapshot {
        config,
        extractor,
        head,
        vocab,
        embeddings,
    })
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl ModelSnapshot {
    pub fn feature_count(&self) -> usize {
        self.head.features
    }

    pub fn class_count(&self) -> usize {
        self.head.classes
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    pub fn encode(&self, doc: &Document) -> Vec<u32> {
        encode(doc, &self.vocab, self.config.max_len)
    }

    pub fn extract(&self, encoded: &[u32]) -> (Vec<f64>, Vec<usize>) {
        assert_eq!(encoded.len(), self.config.max_len, "encoded length must equal max_len");
        match &self.extractor {
            Extractor::Cnn(m) => {
                let out = m.forward(&self.embeddings, encoded);
                (out.features, out.argmax)
            }
            Extractor::Bilstm(m) => {
                let trace = m.forward(&self.embeddings, encoded);
                (trace.features.clone(), trace.argmax.clone())
            }
        }
    }

    pub fn forward(&self, encoded: &[u32]) -> ForwardTrace {
        let (features, pool_argmax) = self.extract(encoded);
        let probabilities = softmax(&self.head.logits(&features));
        ForwardTrace {
            features,
            probabilities,
            pool_argmax,
        }
    }

    pub fn forward_doc(&self, doc: &Document) -> ForwardTrace {
        self.forward(&self.encode(doc))
    }

    pub fn predict_one(&self, doc: &Document) -> Prediction {
        let p = self.forward_doc(doc).probabilities;
        Prediction {
            label: argmax(&p),
            probabilities: p,
        }
    }

    pub fn predict(&self, docs: &[Document]) -> Vec<Prediction> {
        docs.par_iter().map(|d| self.predict_one(d)).collect()
    }

    pub fn predict_labels(&self, docs: &[Document]) -> Vec<usize> {
        docs.par_iter().map(|d| self.predict_one(d).label).collect()
    }

    /// Feature vectors for many documents, in input order.
    pub fn feature_vectors(&self, docs: &[Document]) -> Vec<Vec<f64>> {
        docs.par_iter()
            .map(|d| self.extract(&self.encode(d)).0)
            .collect()
    }

    /// Zeroes the mask columns of `feature_ids`; everything else is copied
    /// unchanged. Disabling an already disabled feature is a no-op.
    pub fn disable_features(&self, feature_ids: &BTreeSet<usize>) -> Result<ModelSnapshot> {
        let d = self.feature_count();
        if let Some(&id) = feature_ids.iter().find(|&&id| id >= d) {
            return Err(Error::FeatureOutOfRange { id, count: d });
        }
        let mut out = self.clone();
        for &id in feature_ids {
            out.head.zero_column(id);
        }
        Ok(out)
    }

    pub fn disabled_features(&self) -> BTreeSet<usize> {
        self.head.disabled_features()
    }

    pub fn arch_tag(&self) -> &'static str {
        self.config.arch.tag()
    }

    /// Filter width of a CNN feature, or `None` for recurrent features.
    pub fn filter_size(&self, feature: usize) -> Option<usize> {
        match &self.extractor {
            Extractor::Cnn(m) => Some(m.bank_of(feature).0.width),
            Extractor::Bilstm(_) => None,
        }
    }

    pub(crate) fn block_names(&self) -> Vec<String> {
        let mut names = self.extractor.block_names();
        names.push("dense.weights".into());
        names.push("dense.bias".into());
        names.push("dense.mask".into());
        names
    }

    pub(crate) fn all_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = self.extractor.param_blocks();
        blocks.push(&self.head.weights);
        blocks.push(&self.head.bias);
        blocks.push(&self.head.mask);
        blocks
    }

    pub(crate) fn all_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = self.extractor.param_blocks_mut();
        blocks.push(&mut self.head.weights);
        blocks.push(&mut self.head.bias);
        blocks.push(&mut self.head.mask);
        blocks
    }
}

/// Number of leading non-padding positions of an encoded document.
pub(crate) fn content_len(encoded: &[u32]) -> usize {
    encoded.iter().position(|&t| t == PAD).unwrap_or(encoded.len())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Small random model over a vocabulary of `words` words.
    pub fn tiny_model(arch: ArchConfig, words: usize, dim: usize, max_len: usize, seed: u64) -> ModelSnapshot {
        let vocab = Vocabulary::from_words((0..words).map(|i| format!("w{i}")));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut data = vec![0.0; (words + 2) * dim];
        for v in data.iter_mut().skip(2 * dim) {
            *v = rng.gen_range(-1.0..1.0);
        }
        let table = EmbeddingTable::from_rows(dim, data, 1.0).unwrap();
        let config = ModelConfig {
            arch,
            max_len,
            embed_dim: dim,
            classes: vec!["neg".into(), "pos".into()],
            seed,
        };
        let mut model = init_model(config, Arc::new(vocab), Arc::new(table)).unwrap();
        // give biases some non-trivial values
        for b in model.head.bias.iter_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        model
    }
}
