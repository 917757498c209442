use rand_chacha::ChaCha8Rng;

use super::{uniform, CnnConfig};
use crate::corpus::EmbeddingTable;

/// Filters of one width. `weights` is laid out `filter × offset × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank {
    pub width: usize,
    pub filters: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvBank {
    #[inline]
    pub fn kernel(&self, filter: usize, offset: usize, dim: usize) -> &[f64] {
        let start = (filter * self.width + offset) * dim;
        &self.weights[start..start + dim]
    }
}

/// 1-D convolution over word embeddings followed by ReLU and global max
/// pooling. Features are numbered bank by bank: the first `filters` belong to
/// the first width, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub banks: Vec<ConvBank>,
    pub dim: usize,
    pub max_len: usize,
}

pub(crate) struct CnnForward {
    pub features: Vec<f64>,
    pub argmax: Vec<usize>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Cnn {
    pub(crate) fn init(config: &CnnConfig, dim: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Cnn {
        let banks = config
            .filter_sizes
            .iter()
            .map(|&width| ConvBank {
                width,
                filters: config.filters_per_size,
                weights: uniform(rng, config.filters_per_size * width * dim, width * dim),
                bias: vec![0.0; config.filters_per_size],
            })
            .collect();
        Cnn { banks, dim, max_len }
    }

    pub fn feature_count(&self) -> usize {
        self.banks.iter().map(|b| b.filters).sum()
    }

    /// The bank holding `feature` and the filter index inside it.
    pub fn bank_of(&self, feature: usize) -> (&ConvBank, usize) {
        let mut rest = feature;
        for bank in &self.banks {
            if rest < bank.filters {
                return (bank, rest);
            }
            rest -= bank.filters;
        }
        panic!("feature {feature} out of range");
    }

    /// Number of window starts for filters of `width`.
    pub fn windows(&self, width: usize) -> usize {
        self.max_len + 1 - width
    }

    /// Pre-activation of one filter at window `start`, computed directly.
    pub fn window_preactivation(
        &self,
        emb: &EmbeddingTable,
        doc: &[u32],
        feature: usize,
        start: usize,
    ) -> f64 {
        let (bank, filter) = self.bank_of(feature);
        let mut z = bank.bias[filter];
        for k in 0..bank.width {
            z += dot(bank.kernel(filter, k, self.dim), emb.row(doc[start + k]));
        }
        z
    }

    /// All window pre-activations, `pre[feature][start]`.
    pub(crate) fn preactivations(&self, emb: &EmbeddingTable, doc: &[u32]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.feature_count());
        for bank in &self.banks {
            let windows = self.windows(bank.width);
            for filter in 0..bank.filters {
                let mut pre = vec![bank.bias[filter]; windows];
                for (pos, &tok) in doc.iter().enumerate() {
                    if emb.is_zero_row(tok) {
                        continue;
                    }
                    let row = emb.row(tok);
                    for k in 0..bank.width {
                        if k > pos {
                            break;
                        }
                        let start = pos - k;
                        if start < windows {
                            pre[start] += dot(bank.kernel(filter, k, self.dim), row);
                        }
                    }
                }
                out.push(pre);
            }
        }
        out
    }

    pub(crate) fn forward(&self, emb: &EmbeddingTable, doc: &[u32]) -> CnnForward {
        let pre = self.preactivations(emb, doc);
        let mut features = Vec::with_capacity(pre.len());
        let mut argmax = Vec::with_capacity(pre.len());
        for row in &pre {
            let mut best = 0;
            let mut best_val = row[0].max(0.0);
            for (t, &z) in row.iter().enumerate().skip(1) {
                let v = z.max(0.0);
                if v > best_val {
                    best = t;
                    best_val = v;
                }
            }
            features.push(best_val);
            argmax.push(best);
        }
        CnnForward { features, argmax }
    }

    /// Accumulates parameter gradients given `dL/df`. Only windows that won
    /// the max pool with a positive activation pass gradient.
    pub(crate) fn backward(
        &self,
        emb: &EmbeddingTable,
        doc: &[u32],
        fwd: &CnnForward,
        dfeat: &[f64],
        grads: &mut [Vec<f64>],
    ) {
        let mut feature = 0;
        for (b, bank) in self.banks.iter().enumerate() {
            let (gw_block, rest) = grads[2 * b..].split_at_mut(1);
            let gw = &mut gw_block[0];
            let gb = &mut rest[0];
            for filter in 0..bank.filters {
                let g = dfeat[feature];
                if fwd.features[feature] > 0.0 && g != 0.0 {
                    let start = fwd.argmax[feature];
                    gb[filter] += g;
                    for k in 0..bank.width {
                        let tok = doc[start + k];
                        if emb.is_zero_row(tok) {
                            continue;
                        }
                        let row = emb.row(tok);
                        let base = (filter * bank.width + k) * self.dim;
                        for (w, x) in gw[base..base + self.dim].iter_mut().zip(row) {
                            *w += g * x;
                        }
                    }
                }
                feature += 1;
            }
        }
    }

    pub(crate) fn param_blocks(&self) -> Vec<&[f64]> {
        self.banks
            .iter()
            .flat_map(|b| [b.weights.as_slice(), b.bias.as_slice()])
            .collect()
    }

    pub(crate) fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.banks
            .iter_mut()
            .flat_map(|b| [b.weights.as_mut_slice(), b.bias.as_mut_slice()])
            .collect()
    }

    pub(crate) fn block_names(&self) -> Vec<String> {
        self.banks
            .iter()
            .flat_map(|b| {
                [
                    format!("conv{}.weights", b.width),
                    format!("conv{}.bias", b.width),
                ]
            })
            .collect()
    }
}
