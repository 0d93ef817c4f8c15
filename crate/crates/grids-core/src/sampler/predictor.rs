//! Coordinate prediction and coordinate encoding.
//!
//! The predictor is a one-hidden-layer MLP over the pooled context vector:
//! `p = sigmoid(W2^T tanh(W1^T z + b1) + b2)`, reshaped to `K` normalized
//! `(x, y)` pairs (x at even indices, y at odd). The sigmoid keeps every
//! coordinate strictly inside `(0, 1)`.
//!
//! The encoder turns a normalized coordinate into a `C`-dim position
//! embedding: Fourier features
//! `[sin(2^l pi x), cos(2^l pi x), sin(2^l pi y), cos(2^l pi y)]` for
//! `l = 0..L-1` (length `4L`, grouped by band), followed by a learned linear
//! projection `Wp^T feat + bp`. Injecting the embedding into each token is
//! what lets the policy know where a sample came from.
//!
//! Parameter names and shapes (row-major `[rows, cols]`):
//!
//! | name           | shape       |
//! |----------------|-------------|
//! | `predictor.w1` | `[C, hidden]` |
//! | `predictor.b1` | `[hidden]`    |
//! | `predictor.w2` | `[hidden, 2K]`|
//! | `predictor.b2` | `[2K]`        |
//! | `encoder.wp`   | `[4L, C]`     |
//! | `encoder.bp`   | `[C]`         |
//!
//! Weights initialize to `N(0, 0.02^2)`, biases to zero, except
//! `predictor.b2` which is the inverse sigmoid of a near-uniform
//! `ceil(sqrt(K))^2` lattice jittered by `+-0.01` - so an untrained sampler
//! starts from spread-out coordinates instead of collapsing every point at
//! the image center.

use crate::error::ModelError;
use crate::grid::ContextVector;
use crate::params::ParameterStore;
use crate::rng::Rng;
use super::{Coord, CoordinateSet, SamplerConfig};

pub const PREDICTOR_W1: &str = "predictor.w1";
pub const PREDICTOR_B1: &str = "predictor.b1";
pub const PREDICTOR_W2: &str = "predictor.w2";
pub const PREDICTOR_B2: &str = "predictor.b2";
pub const ENCODER_WP: &str = "encoder.wp";
pub const ENCODER_BP: &str = "encoder.bp";

/// Numerically plain logistic function, evaluated in `f64`.
pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-f64::from(x)).exp())) as f32
}

/// Inverse of [`sigmoid`]; requires `p` strictly inside `(0, 1)`.
pub fn logit(p: f32) -> f32 {
    let p = f64::from(p);
    (p / (1.0 - p)).ln() as f32
}

/// Near-uniform lattice of `k` points in `(0, 1)^2`: the first `k` cells of
/// a `ceil(sqrt(k))`-per-side subdivision, row-major, at cell centers.
pub fn lattice_coordinates(k: usize) -> Vec<Coord> {
    let side = (k as f64).sqrt().ceil() as usize;
    (0..k)
        .map(|idx| {
            let row = idx / side;
            let col = idx % side;
            Coord {
                x: (col as f32 + 0.5) / side as f32,
                y: (row as f32 + 0.5) / side as f32,
            }
        })
        .collect()
}

/// Inserts freshly initialized predictor and encoder parameters for a grid
/// with `channels` channels.
pub fn init_sampler_params(
    store: &mut ParameterStore,
    channels: usize,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<(), ModelError> {
    cfg.validate()?;
    let hidden = cfg.hidden_for(channels);
    let k = cfg.num_tokens;
    let bands = cfg.fourier_bands;

    fn gauss(rng: &mut Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.next_gaussian() * 0.02).collect()
    }

    let w1 = gauss(rng, channels * hidden);
    store.insert(PREDICTOR_W1, &[channels, hidden], w1)?;
    store.insert(PREDICTOR_B1, &[hidden], vec![0.0; hidden])?;
    let w2 = gauss(rng, hidden * 2 * k);
    store.insert(PREDICTOR_W2, &[hidden, 2 * k], w2)?;

    let mut b2 = Vec::with_capacity(2 * k);
    for c in lattice_coordinates(k) {
        for v in [c.x, c.y] {
            let jittered = (v + rng.range_f32(-0.01, 0.01)).clamp(1e-4, 1.0 - 1e-4);
            b2.push(logit(jittered));
        }
    }
    store.insert(PREDICTOR_B2, &[2 * k], b2)?;

    let wp = gauss(rng, 4 * bands * channels);
    store.insert(ENCODER_WP, &[4 * bands, channels], wp)?;
    store.insert(ENCODER_BP, &[channels], vec![0.0; channels])?;
    Ok(())
}

/// Intermediates cached by [`predict_coordinates`] for the backward pass.
#[derive(Debug, Clone)]
pub struct PredictorTrace {
    /// Hidden pre-activations `W1^T z + b1`.
    pub hidden_pre: Vec<f32>,
    /// `tanh` of the above.
    pub hidden: Vec<f32>,
    /// Output pre-activations `W2^T h + b2`.
    pub logits: Vec<f32>,
    /// Sigmoid outputs, length `2K` (the flattened coordinates).
    pub probs: Vec<f32>,
}

/// Runs the coordinate MLP on a pooled context vector.
pub fn predict_coordinates(
    context: &ContextVector,
    params: &ParameterStore,
    cfg: &SamplerConfig,
) -> Result<(CoordinateSet, PredictorTrace), ModelError> {
    let channels = context.channels();
    let hidden = cfg.hidden_for(channels);
    let k = cfg.num_tokens;
    let w1 = params.values(PREDICTOR_W1, &[channels, hidden])?;
    let b1 = params.values(PREDICTOR_B1, &[hidden])?;
    let w2 = params.values(PREDICTOR_W2, &[hidden, 2 * k])?;
    let b2 = params.values(PREDICTOR_B2, &[2 * k])?;
    let z = context.values();

    let mut hidden_pre = Vec::with_capacity(hidden);
    for h in 0..hidden {
        let mut acc = f64::from(b1[h]);
        for (c, zc) in z.iter().enumerate() {
            acc += f64::from(*zc) * f64::from(w1[c * hidden + h]);
        }
        hidden_pre.push(acc as f32);
    }
    if hidden_pre.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite {
            stage: "predictor hidden layer",
        });
    }
    let hidden_act: Vec<f32> = hidden_pre.iter().map(|v| v.tanh()).collect();

    let mut logits = Vec::with_capacity(2 * k);
    for m in 0..2 * k {
        let mut acc = f64::from(b2[m]);
        for (h, hv) in hidden_act.iter().enumerate() {
            acc += f64::from(*hv) * f64::from(w2[h * 2 * k + m]);
        }
        logits.push(acc as f32);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite {
            stage: "predictor output layer",
        });
    }
    let probs: Vec<f32> = logits.iter().map(|v| sigmoid(*v)).collect();
    let coords = CoordinateSet {
        coords: (0..k)
            .map(|i| Coord {
                x: probs[2 * i],
                y: probs[2 * i + 1],
            })
            .collect(),
    };
    Ok((
        coords,
        PredictorTrace {
            hidden_pre,
            hidden: hidden_act,
            logits,
            probs,
        },
    ))
}

/// Exact adjoint of [`predict_coordinates`]: accumulates parameter
/// gradients from `dL/d(coords)` and returns `dL/dz`.
pub fn predictor_backward(
    context: &ContextVector,
    trace: &PredictorTrace,
    coord_grads: &[(f32, f32)],
    params: &mut ParameterStore,
    cfg: &SamplerConfig,
) -> Result<Vec<f32>, ModelError> {
    let channels = context.channels();
    let hidden = cfg.hidden_for(channels);
    let k = cfg.num_tokens;
    if coord_grads.len() != k {
        return Err(ModelError::LengthMismatch {
            what: "coordinate gradients",
            expected: k,
            got: coord_grads.len(),
        });
    }
    let z = context.values();

    // Sigmoid: d_logit = d_p * p * (1 - p).
    let mut d_logits = vec![0.0f32; 2 * k];
    for (i, (gx, gy)) in coord_grads.iter().enumerate() {
        for (m, g) in [(2 * i, *gx), (2 * i + 1, *gy)] {
            let p = f64::from(trace.probs[m]);
            d_logits[m] = (f64::from(g) * p * (1.0 - p)) as f32;
        }
    }

    // Output affine layer.
    let w2 = params.values(PREDICTOR_W2, &[hidden, 2 * k])?.to_vec();
    let mut d_w2 = vec![0.0f32; hidden * 2 * k];
    let mut d_hidden = vec![0.0f32; hidden];
    for h in 0..hidden {
        let hv = f64::from(trace.hidden[h]);
        let mut acc = 0.0f64;
        for (m, dl) in d_logits.iter().enumerate() {
            d_w2[h * 2 * k + m] = (hv * f64::from(*dl)) as f32;
            acc += f64::from(w2[h * 2 * k + m]) * f64::from(*dl);
        }
        d_hidden[h] = acc as f32;
    }

    // tanh: d_pre = d_h * (1 - h^2).
    let d_hidden_pre: Vec<f32> = d_hidden
        .iter()
        .zip(&trace.hidden)
        .map(|(dh, h)| {
            let hv = f64::from(*h);
            (f64::from(*dh) * (1.0 - hv * hv)) as f32
        })
        .collect();

    // Input affine layer.
    let w1 = params.values(PREDICTOR_W1, &[channels, hidden])?.to_vec();
    let mut d_w1 = vec![0.0f32; channels * hidden];
    let mut d_z = vec![0.0f32; channels];
    for c in 0..channels {
        let zc = f64::from(z[c]);
        let mut acc = 0.0f64;
        for (h, dp) in d_hidden_pre.iter().enumerate() {
            d_w1[c * hidden + h] = (zc * f64::from(*dp)) as f32;
            acc += f64::from(w1[c * hidden + h]) * f64::from(*dp);
        }
        d_z[c] = acc as f32;
    }

    params.accumulate_grad(PREDICTOR_B2, &d_logits)?;
    params.accumulate_grad(PREDICTOR_W2, &d_w2)?;
    params.accumulate_grad(PREDICTOR_B1, &d_hidden_pre)?;
    params.accumulate_grad(PREDICTOR_W1, &d_w1)?;
    Ok(d_z)
}

/// Fourier features of one coordinate, length `4 * bands`, grouped by band:
/// `[sin(2^l pi x), cos(2^l pi x), sin(2^l pi y), cos(2^l pi y)]`.
fn fourier_features(c: Coord, bands: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(4 * bands);
    for l in 0..bands {
        let freq = (1u64 << l) as f64 * std::f64::consts::PI;
        let ax = freq * f64::from(c.x);
        let ay = freq * f64::from(c.y);
        out.push(ax.sin() as f32);
        out.push(ax.cos() as f32);
        out.push(ay.sin() as f32);
        out.push(ay.cos() as f32);
    }
    out
}

/// Position embeddings for a coordinate set: `Wp^T feat + bp` per token.
/// Returns `(embeddings, fourier)` with shapes `K x C` and `K x 4L`.
pub fn encode_coordinates(
    coords: &CoordinateSet,
    params: &ParameterStore,
    cfg: &SamplerConfig,
    channels: usize,
) -> Result<(Vec<f32>, Vec<f32>), ModelError> {
    let bands = cfg.fourier_bands;
    let wp = params.values(ENCODER_WP, &[4 * bands, channels])?;
    let bp = params.values(ENCODER_BP, &[channels])?;

    let mut embeddings = Vec::with_capacity(coords.len() * channels);
    let mut fourier = Vec::with_capacity(coords.len() * 4 * bands);
    for coord in &coords.coords {
        if !coord.x.is_finite() || !coord.y.is_finite() {
            return Err(ModelError::NonFinite {
                stage: "coordinate encoder input",
            });
        }
        let feat = fourier_features(*coord, bands);
        for c in 0..channels {
            let mut acc = f64::from(bp[c]);
            for (m, fm) in feat.iter().enumerate() {
                acc += f64::from(*fm) * f64::from(wp[m * channels + c]);
            }
            embeddings.push(acc as f32);
        }
        fourier.extend_from_slice(&feat);
    }
    Ok((embeddings, fourier))
}

/// Adjoint of [`encode_coordinates`]: accumulates `encoder.wp` /
/// `encoder.bp` gradients and returns `dL/d(x, y)` per token.
///
/// The trig derivatives reuse the cached features: `d sin = freq * cos` and
/// `d cos = -freq * sin`, with both values already in `fourier`.
pub fn encoder_backward(
    coords: &CoordinateSet,
    fourier: &[f32],
    upstream: &[f32],
    params: &mut ParameterStore,
    channels: usize,
) -> Result<Vec<(f32, f32)>, ModelError> {
    let n = coords.len();
    let bands = fourier.len() / (4 * n.max(1));
    if upstream.len() != n * channels {
        return Err(ModelError::LengthMismatch {
            what: "encoder upstream gradient",
            expected: n * channels,
            got: upstream.len(),
        });
    }
    let wp = params.values(ENCODER_WP, &[4 * bands, channels])?.to_vec();

    let mut d_wp = vec![0.0f32; 4 * bands * channels];
    let mut d_bp = vec![0.0f32; channels];
    let mut coord_grads = Vec::with_capacity(n);
    for k in 0..n {
        let up = &upstream[k * channels..(k + 1) * channels];
        let feat = &fourier[k * 4 * bands..(k + 1) * 4 * bands];
        for (c, u) in up.iter().enumerate() {
            d_bp[c] += u;
        }
        let mut d_feat = vec![0.0f64; 4 * bands];
        for (m, fm) in feat.iter().enumerate() {
            let mut acc = 0.0f64;
            for (c, u) in up.iter().enumerate() {
                d_wp[m * channels + c] += fm * u;
                acc += f64::from(wp[m * channels + c]) * f64::from(*u);
            }
            d_feat[m] = acc;
        }
        let (mut d_x, mut d_y) = (0.0f64, 0.0f64);
        for l in 0..bands {
            let freq = (1u64 << l) as f64 * std::f64::consts::PI;
            let (sin_x, cos_x) = (f64::from(feat[4 * l]), f64::from(feat[4 * l + 1]));
            let (sin_y, cos_y) = (f64::from(feat[4 * l + 2]), f64::from(feat[4 * l + 3]));
            d_x += freq * (d_feat[4 * l] * cos_x - d_feat[4 * l + 1] * sin_x);
            d_y += freq * (d_feat[4 * l + 2] * cos_y - d_feat[4 * l + 3] * sin_y);
        }
        coord_grads.push((d_x as f32, d_y as f32));
    }
    params.accumulate_grad(ENCODER_WP, &d_wp)?;
    params.accumulate_grad(ENCODER_BP, &d_bp)?;
    Ok(coord_grads)
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
