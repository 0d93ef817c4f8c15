//! Toy downstream policy: one attention block over the sampled tokens and a
//! coordinate regression head.
//!
//! The sequence is the `K` sampled tokens with one learned query vector
//! prepended at row 0. A single-head attention layer (scaled dot-product,
//! row softmax) plus a tanh feed-forward layer, both with residual
//! connections, mix the tokens; the head reads the transformed query row and
//! regresses a normalized `(x, y)` through a sigmoid. The training loss is
//! half the squared error, `((px - tx)^2 + (py - ty)^2) / 2`.
//!
//! This is deliberately the smallest policy that still *needs* good tokens:
//! the query row can only describe locations that survived pruning, so the
//! loss is an honest probe of sampling quality. All matrix products
//! accumulate in `f64` and store `f32`, with the row-vector convention
//! `Y[r, o] = sum_i X[r, i] * W[i, o]`.

use crate::error::ModelError;
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::sampler::sigmoid;

pub const POLICY_WQ: &str = "policy.wq";
pub const POLICY_WK: &str = "policy.wk";
pub const POLICY_WV: &str = "policy.wv";
pub const POLICY_WO: &str = "policy.wo";
pub const POLICY_FFN_W1: &str = "policy.ffn_w1";
pub const POLICY_FFN_W2: &str = "policy.ffn_w2";
pub const POLICY_QUERY: &str = "policy.query";
pub const HEAD_WH: &str = "head.wh";
pub const HEAD_BH: &str = "head.bh";

/// Policy hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    /// Feed-forward width as a multiple of the token dimension.
    pub ffn_expand: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { ffn_expand: 4 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.ffn_expand == 0 {
            return Err(ModelError::InvalidConfig {
                what: "ffn_expand must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Inserts freshly initialized policy and head parameters for tokens of
/// width `dim`.
pub fn init_policy_params(
    store: &mut ParameterStore,
    dim: usize,
    cfg: &PolicyConfig,
    rng: &mut Rng,
) -> Result<(), ModelError> {
    cfg.validate()?;
    let ffn = cfg.ffn_expand * dim;
    let mut gauss = |n: usize| -> Vec<f32> {
        (0..n).map(|_| rng.next_gaussian() * 0.02).collect()
    };
    for name in [POLICY_WQ, POLICY_WK, POLICY_WV, POLICY_WO] {
        let w = gauss(dim * dim);
        store.insert(name, &[dim, dim], w)?;
    }
    let w1 = gauss(dim * ffn);
    store.insert(POLICY_FFN_W1, &[dim, ffn], w1)?;
    let w2 = gauss(ffn * dim);
    store.insert(POLICY_FFN_W2, &[ffn, dim], w2)?;
    let q = gauss(dim);
    store.insert(POLICY_QUERY, &[dim], q)?;
    let wh = gauss(dim * 2);
    store.insert(HEAD_WH, &[dim, 2], wh)?;
    store.insert(HEAD_BH, &[2], vec![0.0; 2])?;
    Ok(())
}

/// `Y = X W` with `X` being `m x inner` and `W` being `inner x out`.
fn matmul(x: &[f32], w: &[f32], m: usize, inner: usize, out: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; m * out];
    for r in 0..m {
        for o in 0..out {
            let mut acc = 0.0f64;
            for i in 0..inner {
                acc += f64::from(x[r * inner + i]) * f64::from(w[i * out + o]);
            }
            y[r * out + o] = acc as f32;
        }
    }
    y
}

/// `dX = dY W^T` for the product above.
fn matmul_dx(dy: &[f32], w: &[f32], m: usize, inner: usize, out: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; m * inner];
    for r in 0..m {
        for i in 0..inner {
            let mut acc = 0.0f64;
            for o in 0..out {
                acc += f64::from(dy[r * out + o]) * f64::from(w[i * out + o]);
            }
            dx[r * inner + i] = acc as f32;
        }
    }
    dx
}

/// `dW = X^T dY` for the product above.
fn matmul_dw(x: &[f32], dy: &[f32], m: usize, inner: usize, out: usize) -> Vec<f32> {
    let mut dw = vec![0.0f32; inner * out];
    for i in 0..inner {
        for o in 0..out {
            let mut acc = 0.0f64;
            for r in 0..m {
                acc += f64::from(x[r * inner + i]) * f64::from(dy[r * out + o]);
            }
            dw[i * out + o] = acc as f32;
        }
    }
    dw
}

/// Forward intermediates kept for the exact backward pass. `rows` counts the
/// query row, so every `rows x dim` buffer has the query at row 0.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub rows: usize,
    pub dim: usize,
    pub ffn_width: usize,
    pub seq: Vec<f32>,
    pub q: Vec<f32>,
    pub k: Vec<f32>,
    pub v: Vec<f32>,
    /// Post-softmax attention, `rows x rows`, each row summing to 1.
    pub attn: Vec<f32>,
    /// `attn * v`, before the output projection.
    pub mix: Vec<f32>,
    /// After the attention residual.
    pub x1: Vec<f32>,
    /// tanh activations of the feed-forward hidden layer.
    pub ffn_act: Vec<f32>,
    /// Final sequence after the feed-forward residual.
    pub x2: Vec<f32>,
}

/// Runs the attention block over `tokens` (`n x dim`, row-major) with the
/// learned query prepended.
pub fn attention_forward(
    tokens: &[f32],
    dim: usize,
    params: &ParameterStore,
    cfg: &PolicyConfig,
) -> Result<PolicyTrace, ModelError> {
    cfg.validate()?;
    if dim == 0 || tokens.len() % dim != 0 {
        return Err(ModelError::LengthMismatch {
            what: "policy token buffer",
            expected: dim.max(1),
            got: tokens.len(),
        });
    }
    let n = tokens.len() / dim;
    let rows = n + 1;
    let ffn = cfg.ffn_expand * dim;
    let wq = params.values(POLICY_WQ, &[dim, dim])?;
    let wk = params.values(POLICY_WK, &[dim, dim])?;
    let wv = params.values(POLICY_WV, &[dim, dim])?;
    let wo = params.values(POLICY_WO, &[dim, dim])?;
    let w1 = params.values(POLICY_FFN_W1, &[dim, ffn])?;
    let w2 = params.values(POLICY_FFN_W2, &[ffn, dim])?;
    let query = params.values(POLICY_QUERY, &[dim])?;

    let mut seq = Vec::with_capacity(rows * dim);
    seq.extend_from_slice(query);
    seq.extend_from_slice(tokens);

    let q = matmul(&seq, wq, rows, dim, dim);
    let k = matmul(&seq, wk, rows, dim, dim);
    let v = matmul(&seq, wv, rows, dim, dim);

    // Scaled dot-product scores with the numerically standard max-shifted
    // softmax, all in f64.
    let scale = 1.0 / (dim as f64).sqrt();
    let mut attn = vec![0.0f32; rows * rows];
    for r in 0..rows {
        let mut raw = vec![0.0f64; rows];
        for c in 0..rows {
            let mut acc = 0.0f64;
            for i in 0..dim {
                acc += f64::from(q[r * dim + i]) * f64::from(k[c * dim + i]);
            }
            raw[c] = acc * scale;
        }
        if raw.iter().any(|s| !s.is_finite()) {
            return Err(ModelError::NonFinite {
                stage: "attention scores",
            });
        }
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (c, e) in exps.iter().enumerate() {
            attn[r * rows + c] = (e / total) as f32;
        }
    }

    let mix = matmul(&attn, &v, rows, rows, dim);
    let attn_out = matmul(&mix, wo, rows, dim, dim);
    let x1: Vec<f32> = seq.iter().zip(&attn_out).map(|(a, b)| a + b).collect();

    let ffn_pre = matmul(&x1, w1, rows, dim, ffn);
    let ffn_act: Vec<f32> = ffn_pre.iter().map(|p| p.tanh()).collect();
    let ffn_out = matmul(&ffn_act, w2, rows, ffn, dim);
    let x2: Vec<f32> = x1.iter().zip(&ffn_out).map(|(a, b)| a + b).collect();
    if x2.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite {
            stage: "policy sequence",
        });
    }

    Ok(PolicyTrace {
        rows,
        dim,
        ffn_width: ffn,
        seq,
        q,
        k,
        v,
        attn,
        mix,
        x1,
        ffn_act,
        x2,
    })
}

/// Head output: coordinate prediction and half-squared-error loss.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub prediction: (f32, f32),
    pub loss: f32,
}

/// Reads the transformed query row and scores it against a target.
pub fn head_and_loss(
    trace: &PolicyTrace,
    params: &ParameterStore,
    target: (f32, f32),
) -> Result<HeadOutput, ModelError> {
    let dim = trace.dim;
    let wh = params.values(HEAD_WH, &[dim, 2])?;
    let bh = params.values(HEAD_BH, &[2])?;
    let query_row = &trace.x2[0..dim];
    let mut logits = [f64::from(bh[0]), f64::from(bh[1])];
    for (i, q) in query_row.iter().enumerate() {
        logits[0] += f64::from(*q) * f64::from(wh[i * 2]);
        logits[1] += f64::from(*q) * f64::from(wh[i * 2 + 1]);
    }
    if !(logits[0].is_finite() && logits[1].is_finite()) {
        return Err(ModelError::NonFinite { stage: "head logits" });
    }
    let px = sigmoid(logits[0] as f32);
    let py = sigmoid(logits[1] as f32);
    let (dx, dy) = (
        f64::from(px) - f64::from(target.0),
        f64::from(py) - f64::from(target.1),
    );
    Ok(HeadOutput {
        prediction: (px, py),
        loss: ((dx * dx + dy * dy) / 2.0) as f32,
    })
}

/// Exact adjoint of [`attention_forward`] + [`head_and_loss`]: accumulates
/// all policy/head parameter gradients and returns `dL/d(tokens)` (`n x
/// dim`, the query row folded into `policy.query`). `scale` multiplies the
/// loss gradient - pass `1 / batch_size` when the training loss is a batch
/// mean, `1.0` for a single sample.
pub fn policy_backward(
    trace: &PolicyTrace,
    head: &HeadOutput,
    target: (f32, f32),
    scale: f32,
    params: &mut ParameterStore,
) -> Result<Vec<f32>, ModelError> {
    let (rows, dim, ffn) = (trace.rows, trace.dim, trace.ffn_width);
    let wh = params.values(HEAD_WH, &[dim, 2])?.to_vec();
    let wo = params.values(POLICY_WO, &[dim, dim])?.to_vec();
    let wq = params.values(POLICY_WQ, &[dim, dim])?.to_vec();
    let wk = params.values(POLICY_WK, &[dim, dim])?.to_vec();
    let wv = params.values(POLICY_WV, &[dim, dim])?.to_vec();
    let w1 = params.values(POLICY_FFN_W1, &[dim, ffn])?.to_vec();
    let w2 = params.values(POLICY_FFN_W2, &[ffn, dim])?.to_vec();

    // Head: L = ((px - tx)^2 + (py - ty)^2) / 2 behind a sigmoid.
    let (px, py) = head.prediction;
    let s = f64::from(scale);
    let d_logit = [
        s * (f64::from(px) - f64::from(target.0)) * f64::from(px) * (1.0 - f64::from(px)),
        s * (f64::from(py) - f64::from(target.1)) * f64::from(py) * (1.0 - f64::from(py)),
    ];
    let mut d_x2 = vec![0.0f32; rows * dim];
    let mut d_wh = vec![0.0f32; dim * 2];
    for i in 0..dim {
        let q = f64::from(trace.x2[i]);
        d_wh[i * 2] = (q * d_logit[0]) as f32;
        d_wh[i * 2 + 1] = (q * d_logit[1]) as f32;
        d_x2[i] = (f64::from(wh[i * 2]) * d_logit[0] + f64::from(wh[i * 2 + 1]) * d_logit[1])
            as f32;
    }
    let d_bh = [d_logit[0] as f32, d_logit[1] as f32];

    // Feed-forward residual: x2 = x1 + tanh(x1 W1) W2.
    let d_ffn_act = matmul_dx(&d_x2, &w2, rows, ffn, dim);
    let d_w2 = matmul_dw(&trace.ffn_act, &d_x2, rows, ffn, dim);
    let d_ffn_pre: Vec<f32> = d_ffn_act
        .iter()
        .zip(&trace.ffn_act)
        .map(|(g, a)| {
            let a = f64::from(*a);
            (f64::from(*g) * (1.0 - a * a)) as f32
        })
        .collect();
    let d_w1 = matmul_dw(&trace.x1, &d_ffn_pre, rows, dim, ffn);
    let mut d_x1 = matmul_dx(&d_ffn_pre, &w1, rows, dim, ffn);
    for (g, up) in d_x1.iter_mut().zip(&d_x2) {
        *g += up;
    }

    // Attention residual: x1 = seq + (attn v) Wo.
    let d_attn_out = &d_x1;
    let d_mix = matmul_dx(d_attn_out, &wo, rows, dim, dim);
    let d_wo = matmul_dw(&trace.mix, d_attn_out, rows, dim, dim);
    let mut d_seq = d_x1.clone();

    // mix = attn v.
    let mut d_attn = vec![0.0f32; rows * rows];
    for r in 0..rows {
        for c in 0..rows {
            let mut acc = 0.0f64;
            for i in 0..dim {
                acc += f64::from(d_mix[r * dim + i]) * f64::from(trace.v[c * dim + i]);
            }
            d_attn[r * rows + c] = acc as f32;
        }
    }
    let d_v = matmul_dw(&trace.attn, &d_mix, rows, rows, dim);

    // Softmax rows: d_raw = a .* (d_a - sum(a .* d_a)).
    let scale = 1.0 / (dim as f64).sqrt();
    let mut d_raw = vec![0.0f64; rows * rows];
    for r in 0..rows {
        let mut dot = 0.0f64;
        for c in 0..rows {
            dot += f64::from(trace.attn[r * rows + c]) * f64::from(d_attn[r * rows + c]);
        }
        for c in 0..rows {
            let a = f64::from(trace.attn[r * rows + c]);
            d_raw[r * rows + c] = a * (f64::from(d_attn[r * rows + c]) - dot);
        }
    }

    // raw[r, c] = scale * q_r . k_c.
    let mut d_q = vec![0.0f32; rows * dim];
    let mut d_k = vec![0.0f32; rows * dim];
    for r in 0..rows {
        for c in 0..rows {
            let g = d_raw[r * rows + c] * scale;
            for i in 0..dim {
                d_q[r * dim + i] += (g * f64::from(trace.k[c * dim + i])) as f32;
                d_k[c * dim + i] += (g * f64::from(trace.q[r * dim + i])) as f32;
            }
        }
    }

    // Projections back to the sequence.
    let d_wq = matmul_dw(&trace.seq, &d_q, rows, dim, dim);
    let d_wk = matmul_dw(&trace.seq, &d_k, rows, dim, dim);
    let d_wv = matmul_dw(&trace.seq, &d_v, rows, dim, dim);
    for (dy, w) in [(&d_q, &wq), (&d_k, &wk), (&d_v, &wv)] {
        let dx = matmul_dx(dy, w, rows, dim, dim);
        for (g, add) in d_seq.iter_mut().zip(&dx) {
            *g += add;
        }
    }

    params.accumulate_grad(HEAD_WH, &d_wh)?;
    params.accumulate_grad(HEAD_BH, &d_bh)?;
    params.accumulate_grad(POLICY_FFN_W2, &d_w2)?;
    params.accumulate_grad(POLICY_FFN_W1, &d_w1)?;
    params.accumulate_grad(POLICY_WO, &d_wo)?;
    params.accumulate_grad(POLICY_WQ, &d_wq)?;
    params.accumulate_grad(POLICY_WK, &d_wk)?;
    params.accumulate_grad(POLICY_WV, &d_wv)?;
    params.accumulate_grad(POLICY_QUERY, &d_seq[0..dim])?;
    Ok(d_seq[dim..].to_vec())
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;

    fn init(dim: usize, cfg: &PolicyConfig, seed: u64) -> ParameterStore {
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(seed);
        init_policy_params(&mut store, dim, cfg, &mut rng).unwrap();
        store
    }

    fn zero_store(dim: usize, cfg: &PolicyConfig) -> ParameterStore {
        let mut store = ParameterStore::new();
        let ffn = cfg.ffn_expand * dim;
        for name in [POLICY_WQ, POLICY_WK, POLICY_WV, POLICY_WO] {
            store.insert(name, &[dim, dim], vec![0.0; dim * dim]).unwrap();
        }
        store.insert(POLICY_FFN_W1, &[dim, ffn], vec![0.0; dim * ffn]).unwrap();
        store.insert(POLICY_FFN_W2, &[ffn, dim], vec![0.0; ffn * dim]).unwrap();
        store.insert(POLICY_QUERY, &[dim], vec![0.0; dim]).unwrap();
        store.insert(HEAD_WH, &[dim, 2], vec![0.0; dim * 2]).unwrap();
        store.insert(HEAD_BH, &[2], vec![0.0; 2]).unwrap();
        store
    }

    fn random_tokens(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = Rng::new(seed);
        (0..n * dim).map(|_| rng.range_f32(-1.0, 1.0)).collect()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let dim = 6;
        let cfg = PolicyConfig::default();
        let store = init(dim, &cfg, 5);
        let trace =
            attention_forward(&random_tokens(4, dim, 7), dim, &store, &cfg).unwrap();
        assert_eq!(trace.rows, 5);
        for r in 0..trace.rows {
            let sum: f64 = (0..trace.rows)
                .map(|c| f64::from(trace.attn[r * trace.rows + c]))
                .sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            for c in 0..trace.rows {
                assert!(trace.attn[r * trace.rows + c] >= 0.0);
            }
        }
    }

    #[test]
    fn query_only_sequence_attends_to_itself() {
        let dim = 4;
        let cfg = PolicyConfig::default();
        let store = init(dim, &cfg, 11);
        let trace = attention_forward(&[], dim, &store, &cfg).unwrap();
        assert_eq!(trace.rows, 1);
        assert!((trace.attn[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn identical_tokens_mix_to_the_shared_value_row() {
        // When every sequence row is the same vector, every value row is the
        // same, so any convex attention combination returns that row.
        let dim = 5;
        let cfg = PolicyConfig::default();
        let store = init(dim, &cfg, 13);
        let row: Vec<f32> = (0..dim).map(|i| 0.2 * i as f32 - 0.3).collect();
        // Also force the query to the same row so all rows coincide.
        let mut store = store;
        store.get_mut(POLICY_QUERY).unwrap().values = row.clone();
        let tokens: Vec<f32> = row.iter().cycle().take(3 * dim).copied().collect();
        let trace = attention_forward(&tokens, dim, &store, &cfg).unwrap();
        for r in 0..trace.rows {
            for i in 0..dim {
                assert!(
                    (trace.mix[r * dim + i] - trace.v[i]).abs() < 1e-6,
                    "row {r} dim {i}"
                );
            }
        }
    }

    #[test]
    fn zero_parameters_predict_the_center_with_known_loss() {
        let dim = 3;
        let cfg = PolicyConfig::default();
        let store = zero_store(dim, &cfg);
        let trace = attention_forward(&random_tokens(2, dim, 3), dim, &store, &cfg).unwrap();
        let head = head_and_loss(&trace, &store, (0.3, 0.5)).unwrap();
        assert_eq!(head.prediction, (0.5, 0.5));
        assert!((head.loss - 0.02).abs() < 1e-7);
        let centered = head_and_loss(&trace, &store, (0.5, 0.5)).unwrap();
        assert_eq!(centered.loss, 0.0);
    }

    #[test]
    fn matches_independent_forward_oracle() {
        // A from-scratch f64 re-implementation with different loop
        // structure; checks x2 and the loss end to end.
        let dim = 4;
        let cfg = PolicyConfig { ffn_expand: 2 };
        let store = init(dim, &cfg, 29);
        let n = 3;
        let tokens = random_tokens(n, dim, 31);
        let target = (0.25f32, 0.6f32);
        let trace = attention_forward(&tokens, dim, &store, &cfg).unwrap();
        let head = head_and_loss(&trace, &store, target).unwrap();

        let at = |m: &[f32], r: usize, c: usize, w: usize| f64::from(m[r * w + c]);
        let rows = n + 1;
        let ffn = cfg.ffn_expand * dim;
        let mut seq = vec![0.0f64; rows * dim];
        for i in 0..dim {
            seq[i] = f64::from(store.values(POLICY_QUERY, &[dim]).unwrap()[i]);
        }
        for r in 0..n {
            for i in 0..dim {
                seq[(r + 1) * dim + i] = at(&tokens, r, i, dim);
            }
        }
        let proj = |name: &str, seq: &[f64]| -> Vec<f64> {
            let w = store.values(name, &[dim, dim]).unwrap();
            let mut out = vec![0.0f64; rows * dim];
            for r in 0..rows {
                for o in 0..dim {
                    out[r * dim + o] = (0..dim)
                        .map(|i| seq[r * dim + i] * f64::from(w[i * dim + o]))
                        .sum();
                }
            }
            out
        };
        let (q, k, v) = (proj(POLICY_WQ, &seq), proj(POLICY_WK, &seq), proj(POLICY_WV, &seq));
        let mut x1 = vec![0.0f64; rows * dim];
        let wo = store.values(POLICY_WO, &[dim, dim]).unwrap();
        for r in 0..rows {
            let raw: Vec<f64> = (0..rows)
                .map(|c| {
                    (0..dim).map(|i| q[r * dim + i] * k[c * dim + i]).sum::<f64>()
                        / (dim as f64).sqrt()
                })
                .collect();
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut mixed = vec![0.0f64; dim];
            for (c, e) in exps.iter().enumerate() {
                for (i, m) in mixed.iter_mut().enumerate() {
                    *m += e / total * v[c * dim + i];
                }
            }
            for o in 0..dim {
                let out: f64 = (0..dim).map(|i| mixed[i] * f64::from(wo[i * dim + o])).sum();
                x1[r * dim + o] = seq[r * dim + o] + out;
            }
        }
        let w1 = store.values(POLICY_FFN_W1, &[dim, ffn]).unwrap();
        let w2 = store.values(POLICY_FFN_W2, &[ffn, dim]).unwrap();
        let mut x2 = vec![0.0f64; rows * dim];
        for r in 0..rows {
            let act: Vec<f64> = (0..ffn)
                .map(|o| {
                    (0..dim)
                        .map(|i| x1[r * dim + i] * f64::from(w1[i * ffn + o]))
                        .sum::<f64>()
                        .tanh()
                })
                .collect();
            for o in 0..dim {
                let out: f64 = (0..ffn).map(|i| act[i] * f64::from(w2[i * dim + o])).sum();
                x2[r * dim + o] = x1[r * dim + o] + out;
            }
        }
        for (got, want) in trace.x2.iter().zip(&x2) {
            assert!((f64::from(*got) - want).abs() < 1e-5);
        }
        let wh = store.values(HEAD_WH, &[dim, 2]).unwrap();
        let bh = store.values(HEAD_BH, &[2]).unwrap();
        let mut logits = [f64::from(bh[0]), f64::from(bh[1])];
        for i in 0..dim {
            logits[0] += x2[i] * f64::from(wh[i * 2]);
            logits[1] += x2[i] * f64::from(wh[i * 2 + 1]);
        }
        let p = (
            1.0 / (1.0 + (-logits[0]).exp()),
            1.0 / (1.0 + (-logits[1]).exp()),
        );
        let want_loss = ((p.0 - f64::from(target.0)).powi(2)
            + (p.1 - f64::from(target.1)).powi(2))
            / 2.0;
        assert!((f64::from(head.loss) - want_loss).abs() < 1e-6);
    }

    #[test]
    fn prediction_is_invariant_to_token_order() {
        let dim = 6;
        let cfg = PolicyConfig::default();
        let store = init(dim, &cfg, 37);
        let tokens = random_tokens(5, dim, 41);
        let trace = attention_forward(&tokens, dim, &store, &cfg).unwrap();
        let base = head_and_loss(&trace, &store, (0.4, 0.4)).unwrap();

        // Reverse the token rows; the query row's output must not move.
        let mut reversed = Vec::with_capacity(tokens.len());
        for r in (0..5).rev() {
            reversed.extend_from_slice(&tokens[r * dim..(r + 1) * dim]);
        }
        let rev_trace = attention_forward(&reversed, dim, &store, &cfg).unwrap();
        let rev = head_and_loss(&rev_trace, &store, (0.4, 0.4)).unwrap();
        assert!((base.prediction.0 - rev.prediction.0).abs() < 1e-5);
        assert!((base.prediction.1 - rev.prediction.1).abs() < 1e-5);
        assert!((base.loss - rev.loss).abs() < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dim = 4;
        let cfg = PolicyConfig { ffn_expand: 2 };
        let store_init = init(dim, &cfg, 43);
        let tokens = random_tokens(3, dim, 47);
        let target = (0.2f32, 0.7f32);
        let loss_of = |store: &ParameterStore, tokens: &[f32]| -> f64 {
            let trace = attention_forward(tokens, dim, store, &cfg).unwrap();
            f64::from(head_and_loss(&trace, store, target).unwrap().loss)
        };

        let trace = attention_forward(&tokens, dim, &store_init, &cfg).unwrap();
        let head = head_and_loss(&trace, &store_init, target).unwrap();
        let mut store = store_init.clone();
        store.zero_grads();
        let d_tokens = policy_backward(&trace, &head, target, 1.0, &mut store).unwrap();
        assert_eq!(d_tokens.len(), tokens.len());

        let h = 1e-2f32;
        for name in [
            POLICY_WQ,
            POLICY_WK,
            POLICY_WV,
            POLICY_WO,
            POLICY_FFN_W1,
            POLICY_FFN_W2,
            POLICY_QUERY,
            HEAD_WH,
            HEAD_BH,
        ] {
            for idx in [0usize, 1] {
                if idx >= store.get(name).unwrap().numel() {
                    continue;
                }
                let analytic = f64::from(store.get(name).unwrap().grads[idx]);
                let mut plus = store_init.clone();
                plus.get_mut(name).unwrap().values[idx] += h;
                let mut minus = store_init.clone();
                minus.get_mut(name).unwrap().values[idx] -= h;
                let fd = (loss_of(&plus, &tokens) - loss_of(&minus, &tokens)) / (2.0 * f64::from(h));
                assert!(
                    (analytic - fd).abs() < 1e-3 * fd.abs().max(analytic.abs()) + 1e-5,
                    "{name}[{idx}]: analytic {analytic} vs fd {fd}"
                );
            }
        }
        for idx in [0usize, 5, 11] {
            let analytic = f64::from(d_tokens[idx]);
            let mut plus = tokens.clone();
            plus[idx] += h;
            let mut minus = tokens.clone();
            minus[idx] -= h;
            let fd =
                (loss_of(&store_init, &plus) - loss_of(&store_init, &minus)) / (2.0 * f64::from(h));
            assert!(
                (analytic - fd).abs() < 1e-3 * fd.abs().max(analytic.abs()) + 1e-5,
                "token[{idx}]: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn loss_scale_multiplies_every_gradient() {
        let dim = 4;
        let cfg = PolicyConfig::default();
        let store_init = init(dim, &cfg, 53);
        let tokens = random_tokens(2, dim, 59);
        let target = (0.6f32, 0.3f32);
        let trace = attention_forward(&tokens, dim, &store_init, &cfg).unwrap();
        let head = head_and_loss(&trace, &store_init, target).unwrap();

        let mut unit = store_init.clone();
        unit.zero_grads();
        let d_unit = policy_backward(&trace, &head, target, 1.0, &mut unit).unwrap();
        let mut half = store_init.clone();
        half.zero_grads();
        let d_half = policy_backward(&trace, &head, target, 0.5, &mut half).unwrap();

        for (u, h) in unit.iter().zip(half.iter()) {
            for (gu, gh) in u.grads.iter().zip(&h.grads) {
                assert!((gu * 0.5 - gh).abs() < 1e-7, "{}", u.name);
            }
        }
        for (u, h) in d_unit.iter().zip(&d_half) {
            assert!((u * 0.5 - h).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_ragged_token_buffers() {
        let cfg = PolicyConfig::default();
        let store = init(4, &cfg, 3);
        assert!(matches!(
            attention_forward(&[0.0; 7], 4, &store, &cfg),
            Err(ModelError::LengthMismatch { .. })
        ));
    }
}
