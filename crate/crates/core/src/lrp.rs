//! Layer-wise relevance propagation (LRP-ε) from a hidden feature back to the
//! input words.
//!
//! A neuron `k` computed as `g(Σ_j x_j w_jk + b_k)` hands each input `j` the
//! share `z_jk / (Σ_j' z_j'k + stab) · R_k` of its relevance, where
//! `z_jk = x_j w_jk + b_k / n` spreads the bias evenly over the `n` inputs.
//! Word scores are the sums over each word's embedding dimensions.

use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::model::{Bilstm, Extractor, LstmDirection, LstmStep, ModelSnapshot};

/// How ε enters the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stabilizer {
    /// `Σz + ε·sign(Σz)` with `sign(0) = +1`; never flips a share's sign.
    #[default]
    Signed,
    /// `Σz + ε` regardless of sign.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    pub epsilon: f64,
    pub stabilizer: Stabilizer,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon: 1e-7,
            stabilizer: Stabilizer::Signed,
        }
    }
}

impl LrpConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        LrpConfig {
            epsilon,
            ..Default::default()
        }
    }

    #[inline]
    pub fn denominator(&self, total: f64) -> f64 {
        match self.stabilizer {
            Stabilizer::Signed => {
                if total >= 0.0 {
                    total + self.epsilon
                } else {
                    total - self.epsilon
                }
            }
            Stabilizer::Literal => total + self.epsilon,
        }
    }
}

/// Per-document, per-feature word relevance aligned to the encoded
/// positions (length `max_len`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub doc_id: String,
    pub feature_id: usize,
    pub scores: Vec<f64>,
}

impl RelevanceVector {
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Positions with a nonzero score.
    pub fn support(&self) -> Vec<usize> {
        self.scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// One line of a relevance dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub doc_id: String,
    pub feature_id: usize,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
}

impl RelevanceRecord {
    /// Pairs scores with the document tokens; padding positions get `<pad>`.
    pub fn new(relevance: &RelevanceVector, tokens: &[String]) -> Self {
        let tokens = (0..relevance.scores.len())
            .map(|i| tokens.get(i).cloned().unwrap_or_else(|| "<pad>".to_string()))
            .collect();
        RelevanceRecord {
            doc_id: relevance.doc_id.clone(),
            feature_id: relevance.feature_id,
            tokens,
            scores: relevance.scores.clone(),
        }
    }
}

/// Relevance of lower neurons given upper relevance `upper` (length `m`),
/// inputs `x` (length `n`), weights `w[j * m + k]` and bias `b` (length `m`).
/// The lower relevance of `j` is the sum over `k` of `R_{j←k}`.
pub fn lrp_linear_backward(upper: &[f64], inputs: &[f64], weights: &[f64], bias: &[f64], config: &LrpConfig) -> Vec<f64> {
    let n = inputs.len();
    let m = upper.len();
    assert_eq!(weights.len(), n * m, "weights must be n × m");
    assert_eq!(bias.len(), m, "one bias per upper neuron");
    let mut lower = vec![0.0; n];
    for k in 0..m {
        if upper[k] == 0.0 {
            continue;
        }
        let share = bias[k] / n as f64;
        let total: f64 = (0..n).map(|j| inputs[j] * weights[j * m + k] + share).sum();
        let scale = upper[k] / config.denominator(total);
        for j in 0..n {
            lower[j] += (inputs[j] * weights[j * m + k] + share) * scale;
        }
    }
    lower
}

/// Fast path for CNN features: propagate `f_i` straight into the winning
/// n-gram. Each word of the window receives the sum of its `z` terms (bias
/// share included) over the denominator, times `f_i`. Zero if `f_i = 0`.
pub fn feature_relevance_cnn(model: &ModelSnapshot, encoded: &[u32], doc_id: &str, feature: usize, config: &LrpConfig) -> RelevanceVector {
    let Extractor::Cnn(cnn) = &model.extractor else {
        panic!("feature_relevance_cnn needs a CNN model");
    };
    let (features, argmax) = model.extract(encoded);
    let mut scores = vec![0.0; encoded.len()];
    let value = features[feature];
    if value > 0.0 {
        let (bank, filter) = cnn.bank_of(feature);
        let start = argmax[feature];
        let emb = &model.embeddings;
        let n = (bank.width * cnn.dim) as f64;
        let bias_share = bank.bias[filter] * cnn.dim as f64 / n;
        let word_z: Vec<f64> = (0..bank.width)
            .map(|k| {
                let row = emb.row(encoded[start + k]);
                let w = bank.kernel(filter, k, cnn.dim);
                row.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + bias_share
            })
            .collect();
        let total: f64 = word_z.iter().sum();
        let scale = value / config.denominator(total);
        for (k, z) in word_z.iter().enumerate() {
            scores[start + k] = z * scale;
        }
    }
    RelevanceVector {
        doc_id: doc_id.to_string(),
        feature_id: feature,
        scores,
    }
}

/// Reference implementation: layer-by-layer LRP through global max pooling
/// (winner takes all), ReLU (identity) and every convolution window, into a
/// full `max_len × dim` input relevance map, then summed per word.
pub fn feature_relevance_cnn_full(model: &ModelSnapshot, encoded: &[u32], doc_id: &str, feature: usize, config: &LrpConfig) -> RelevanceVector {
    let Extractor::Cnn(cnn) = &model.extractor else {
        panic!("feature_relevance_cnn_full needs a CNN model");
    };
    let (features, argmax) = model.extract(encoded);
    let (bank, filter) = cnn.bank_of(feature);
    let dim = cnn.dim;
    let windows = cnn.windows(bank.width);

    // pooled layer -> conv output map
    let mut conv_relevance = vec![0.0; windows];
    if features[feature] > 0.0 {
        conv_relevance[argmax[feature]] = features[feature];
    }

    let mut input_relevance = vec![vec![0.0; dim]; encoded.len()];
    let kernel: Vec<f64> = (0..bank.width)
        .flat_map(|k| bank.kernel(filter, k, dim).iter().copied())
        .collect();
    for (t, &r) in conv_relevance.iter().enumerate() {
        let inputs: Vec<f64> = (0..bank.width)
            .flat_map(|k| model.embeddings.row(encoded[t + k]).iter().copied())
            .collect();
        let lower = lrp_linear_backward(&[r], &inputs, &kernel, &[bank.bias[filter]], config);
        for k in 0..bank.width {
            for e in 0..dim {
                input_relevance[t + k][e] += lower[k * dim + e];
            }
        }
    }
    RelevanceVector {
        doc_id: doc_id.to_string(),
        feature_id: feature,
        scores: input_relevance.iter().map(|r| r.iter().sum()).collect(),
    }
}

/// Signed word relevance for a BiLSTM feature. Propagation starts at the
/// time step that won the element-wise max and walks the recurrence back to
/// the start of that direction. Multiplicative gates keep no relevance: the
/// hidden state passes all of it to the cell, the cell splits it between the
/// previous cell and the candidate by the ε rule, and the candidate's linear
/// layer splits it between the input word and the previous hidden state.
pub fn feature_relevance_bilstm(model: &ModelSnapshot, encoded: &[u32], doc_id: &str, feature: usize, config: &LrpConfig) -> RelevanceVector {
    let Extractor::Bilstm(net) = &model.extractor else {
        panic!("feature_relevance_bilstm needs a BiLSTM model");
    };
    let trace = net.forward(&model.embeddings, encoded);
    let mut scores = vec![0.0; encoded.len()];
    if !trace.forward.is_empty() {
        let h = net.hidden;
        let (dir, steps, unit) = if feature < h {
            (&net.forward, &trace.forward, feature)
        } else {
            (&net.backward, &trace.backward, feature - h)
        };
        let winner = trace.argmax[feature];
        let t_star = steps.iter().position(|s| s.pos == winner).expect("winner step");
        propagate_direction(net, dir, steps, t_star, unit, trace.features[feature], model, encoded, config, &mut scores);
    }
    RelevanceVector {
        doc_id: doc_id.to_string(),
        feature_id: feature,
        scores,
    }
}

#[allow(clippy::too_many_arguments)]
fn propagate_direction(
    net: &Bilstm,
    dir: &LstmDirection,
    steps: &[LstmStep],
    t_star: usize,
    unit: usize,
    value: f64,
    model: &ModelSnapshot,
    encoded: &[u32],
    config: &LrpConfig,
    scores: &mut [f64],
) {
    let h = net.hidden;
    let dim = net.dim;
    let mut r_hidden = vec![0.0; h];
    r_hidden[unit] = value;
    let mut r_cell_carry = vec![0.0; h];
    let zeros = vec![0.0; h];

    // weights of the candidate layer as (dim + h) × h, inputs first
    let mut cand_weights = vec![0.0; (dim + h) * h];
    for u in 0..h {
        let row = 3 * h + u;
        for e in 0..dim {
            cand_weights[e * h + u] = dir.wx[row * dim + e];
        }
        for v in 0..h {
            cand_weights[(dim + v) * h + u] = dir.wh[row * h + v];
        }
    }
    let cand_bias = &dir.b[3 * h..];

    for t in (0..=t_star).rev() {
        let s = &steps[t];
        let (c_prev, h_prev) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&steps[t - 1].cell, &steps[t - 1].hidden)
        };
        let r_cell: Vec<f64> = (0..h).map(|u| r_cell_carry[u] + r_hidden[u]).collect();
        let mut r_cand = vec![0.0; h];
        for u in 0..h {
            if r_cell[u] == 0.0 {
                r_cell_carry[u] = 0.0;
                continue;
            }
            let from_prev = s.forget[u] * c_prev[u];
            let from_cand = s.input[u] * s.candidate[u];
            let scale = r_cell[u] / config.denominator(from_prev + from_cand);
            r_cell_carry[u] = from_prev * scale;
            r_cand[u] = from_cand * scale;
        }
        let tok = encoded[s.pos];
        let mut inputs = model.embeddings.row(tok).to_vec();
        inputs.extend_from_slice(h_prev);
        let lower = lrp_linear_backward(&r_cand, &inputs, &cand_weights, cand_bias, config);
        if tok != PAD {
            scores[s.pos] += lower[..dim].iter().sum::<f64>();
        }
        r_hidden.copy_from_slice(&lower[dim..]);
    }
}

/// Dispatches on the model architecture.
pub fn feature_relevance(model: &ModelSnapshot, encoded: &[u32], doc_id: &str, feature: usize, config: &LrpConfig) -> RelevanceVector {
    match &model.extractor {
        Extractor::Cnn(_) => feature_relevance_cnn(model, encoded, doc_id, feature, config),
        Extractor::Bilstm(_) => feature_relevance_bilstm(model, encoded, doc_id, feature, config),
    }
}
