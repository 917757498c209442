use rand_chacha::ChaCha8Rng;

use super::cnn::dot;
use super::{content_len, uniform, BilstmConfig};
use crate::corpus::EmbeddingTable;

/// One LSTM direction. Gate rows are ordered input, forget, output, cell
/// candidate; `wx` is `4H × dim`, `wh` is `4H × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gate values and states of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub pos: usize,
    pub input: Vec<f64>,
    pub forget: Vec<f64>,
    pub output: Vec<f64>,
    pub candidate: Vec<f64>,
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilstmTrace {
    pub features: Vec<f64>,
    /// Document position of the step holding each feature's maximum.
    pub argmax: Vec<usize>,
    /// Forward direction steps in processing order (position 0 first).
    pub forward: Vec<LstmStep>,
    /// Backward direction steps in processing order (last position first).
    pub backward: Vec<LstmStep>,
}

/// Bidirectional LSTM whose features are the element-wise maximum of the
/// hidden states over non-padding steps: units `0..H` come from the forward
/// direction and `H..2H` from the backward one. The recurrence only visits
/// content positions, so padding never influences the states.
#[derive(Debug, Clone, PartialEq)]
pub struct Bilstm {
    pub hidden: usize,
    pub dim: usize,
    pub max_len: usize,
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmDirection {
    fn init(hidden: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = dim + hidden;
        let wx = uniform(rng, 4 * hidden * dim, fan_in);
        let wh = uniform(rng, 4 * hidden * hidden, fan_in);
        let mut b = vec![0.0; 4 * hidden];
        for v in &mut b[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmDirection { wx, wh, b }
    }

    fn step(&self, hidden: usize, dim: usize, pos: usize, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let mut z = self.b.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += dot(&self.wx[r * dim..(r + 1) * dim], x);
            *zr += dot(&self.wh[r * hidden..(r + 1) * hidden], h_prev);
        }
        let input: Vec<f64> = z[..hidden].iter().map(|&v| sigmoid(v)).collect();
        let forget: Vec<f64> = z[hidden..2 * hidden].iter().map(|&v| sigmoid(v)).collect();
        let output: Vec<f64> = z[2 * hidden..3 * hidden].iter().map(|&v| sigmoid(v)).collect();
        let candidate: Vec<f64> = z[3 * hidden..].iter().map(|&v| v.tanh()).collect();
        let cell: Vec<f64> = (0..hidden)
            .map(|u| forget[u] * c_prev[u] + input[u] * candidate[u])
            .collect();
        let hidden_state = (0..hidden).map(|u| output[u] * cell[u].tanh()).collect();
        LstmStep {
            pos,
            input,
            forget,
            output,
            candidate,
            cell,
            hidden: hidden_state,
        }
    }

    fn run(&self, hidden: usize, emb: &EmbeddingTable, doc: &[u32], positions: impl Iterator<Item = usize>) -> Vec<LstmStep> {
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut steps = Vec::new();
        for pos in positions {
            let step = self.step(hidden, emb.dim(), pos, emb.row(doc[pos]), &h, &c);
            h.clone_from(&step.hidden);
            c.clone_from(&step.cell);
            steps.push(step);
        }
        steps
    }

    /// Backpropagation through time given `dL/dh` for each step (indexed in
    /// processing order). Grads are `[wx, wh, b]`.
    fn backward(
        &self,
        hidden: usize,
        emb: &EmbeddingTable,
        doc: &[u32],
        steps: &[LstmStep],
        dh_ext: &[Vec<f64>],
        grads: &mut [Vec<f64>],
    ) {
        let dim = emb.dim();
        let zero = vec![0.0; hidden];
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let (gwx, rest) = grads.split_at_mut(1);
        let (gwh, gb) = rest.split_at_mut(1);
        let (gwx, gwh, gb) = (&mut gwx[0], &mut gwh[0], &mut gb[0]);
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let (c_prev, h_prev) = if t == 0 {
                (&zero, &zero)
            } else {
                (&steps[t - 1].cell, &steps[t - 1].hidden)
            };
            let mut dz = vec![0.0; 4 * hidden];
            for u in 0..hidden {
                let dh = dh_ext[t][u] + dh_next[u];
                let tc = s.cell[u].tanh();
                let d_out = dh * tc;
                let dc = dc_next[u] + dh * s.output[u] * (1.0 - tc * tc);
                let d_in = dc * s.candidate[u];
                let d_cand = dc * s.input[u];
                let d_forget = dc * c_prev[u];
                dc_next[u] = dc * s.forget[u];
                dz[u] = d_in * s.input[u] * (1.0 - s.input[u]);
                dz[hidden + u] = d_forget * s.forget[u] * (1.0 - s.forget[u]);
                dz[2 * hidden + u] = d_out * s.output[u] * (1.0 - s.output[u]);
                dz[3 * hidden + u] = d_cand * (1.0 - s.candidate[u] * s.candidate[u]);
            }
            let x = emb.row(doc[s.pos]);
            let x_zero = emb.is_zero_row(doc[s.pos]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[r] += g;
                if !x_zero {
                    for (w, xv) in gwx[r * dim..(r + 1) * dim].iter_mut().zip(x) {
                        *w += g * xv;
                    }
                }
                let wrow = &self.wh[r * hidden..(r + 1) * hidden];
                for u in 0..hidden {
                    gwh[r * hidden + u] += g * h_prev[u];
                    dh_next[u] += g * wrow[u];
                }
            }
        }
    }
}

impl Bilstm {
    pub(crate) fn init(config: &BilstmConfig, dim: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Bilstm {
        let forward = LstmDirection::init(config.hidden_units, dim, rng);
        let backward = LstmDirection::init(config.hidden_units, dim, rng);
        Bilstm {
            hidden: config.hidden_units,
            dim,
            max_len,
            forward,
            backward,
        }
    }

    pub fn feature_count(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward(&self, emb: &EmbeddingTable, doc: &[u32]) -> BilstmTrace {
        let n = content_len(doc);
        let fwd = self.forward.run(self.hidden, emb, doc, 0..n);
        let bwd = self.backward.run(self.hidden, emb, doc, (0..n).rev());
        let h = self.hidden;
        let mut features = vec![0.0; 2 * h];
        let mut argmax = vec![0; 2 * h];
        if n > 0 {
            for (offset, steps) in [(0, &fwd), (h, &bwd)] {
                for u in 0..h {
                    let mut best: Option<(f64, usize)> = None;
                    for s in steps.iter() {
                        let v = s.hidden[u];
                        best = match best {
                            Some((bv, bp)) if bv > v || (bv == v && bp < s.pos) => Some((bv, bp)),
                            _ => Some((v, s.pos)),
                        };
                    }
                    let (v, p) = best.expect("non-empty sequence");
                    features[offset + u] = v;
                    argmax[offset + u] = p;
                }
            }
        }
        BilstmTrace {
            features,
            argmax,
            forward: fwd,
            backward: bwd,
        }
    }

    pub(crate) fn backward(
        &self,
        emb: &EmbeddingTable,
        doc: &[u32],
        trace: &BilstmTrace,
        dfeat: &[f64],
        grads: &mut [Vec<f64>],
    ) {
        let h = self.hidden;
        let n = trace.forward.len();
        if n == 0 {
            return;
        }
        let (gf, gb) = grads.split_at_mut(3);
        for (offset, steps, dir, g) in [
            (0, &trace.forward, &self.forward, gf),
            (h, &trace.backward, &self.backward, gb),
        ] {
            let mut dh_ext = vec![vec![0.0; h]; n];
            for u in 0..h {
                let pos = trace.argmax[offset + u];
                let t = steps.iter().position(|s| s.pos == pos).expect("winner step");
                dh_ext[t][u] += dfeat[offset + u];
            }
            dir.backward(h, emb, doc, steps, &dh_ext, g);
        }
    }

    /// The direction a feature belongs to and its unit index.
    pub fn direction_of(&self, feature: usize) -> (&'static str, usize) {
        if feature < self.hidden {
            ("forward", feature)
        } else {
            ("backward", feature - self.hidden)
        }
    }

    pub(crate) fn param_blocks(&self) -> Vec<&[f64]> {
        vec![
            &self.forward.wx,
            &self.forward.wh,
            &self.forward.b,
            &self.backward.wx,
            &self.backward.wh,
            &self.backward.b,
        ]
    }

    pub(crate) fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.forward.wx,
            &mut self.forward.wh,
            &mut self.forward.b,
            &mut self.backward.wx,
            &mut self.backward.wh,
            &mut self.backward.b,
        ]
    }

    pub(crate) fn block_names(&self) -> Vec<String> {
        ["fwd.wx", "fwd.wh", "fwd.b", "bwd.wx", "bwd.wh", "bwd.b"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}
