//! Diagnostic instruments for the sampling pipeline.
//!
//! Three tools live here:
//!
//! * [`retention_map`] — for every grid patch, the best cosine match among the
//!   sampled feature vectors.  High values mean the sparse set still "covers"
//!   that region of the grid.
//! * [`self_similarity`] — the pairwise cosine matrix of a token set together
//!   with a scalar redundancy score (mean absolute off-diagonal entry).
//! * [`flops_estimate`] — a parametric operation-count model for a
//!   single-query transformer stack, with an optional term for the sampling
//!   front end, used to compare dense and pruned token budgets.
//!
//! All similarity arithmetic accumulates in `f64` and treats vectors with
//! norm below `1e-12` as matching nothing (similarity 0), so zero padding can
//! never manufacture a spurious score.

use crate::error::ModelError;
use crate::grid::FeatureGrid;
use crate::sampler::{SamplerConfig, SparseTokenSet};

/// Norm threshold below which a vector is considered zero for cosine
/// similarity; such pairs score exactly 0.
const ZERO_NORM: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Cosine helpers
// ---------------------------------------------------------------------------

/// Cosine similarity with the zero-norm convention, accumulated in `f64`.
fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += f64::from(x) * f64::from(y);
        na += f64::from(x) * f64::from(x);
        nb += f64::from(y) * f64::from(y);
    }
    let na = na.sqrt();
    let nb = nb.sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        0.0
    } else {
        dot / (na * nb)
    }
}

// ---------------------------------------------------------------------------
// Retention map
// ---------------------------------------------------------------------------

/// Per-patch best-match score of a sparse sample set against its source grid.
///
/// `scores[i * width + j]` is the maximum cosine similarity between patch
/// `(i, j)` and any sampled feature vector; values therefore lie in
/// `[-1, 1]`.  `mean_score` is the arithmetic mean of the scores.
#[derive(Debug, Clone)]
pub struct RetentionMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f32>,
    pub mean_score: f64,
}

impl RetentionMap {
    /// Score of patch `(i, j)`.
    pub fn score(&self, i: usize, j: usize) -> f32 {
        self.scores[i * self.width + j]
    }
}

/// Computes the retention map of `samples` against `grid`.
///
/// Only the raw sampled features participate; positional embeddings are
/// deliberately excluded so the map reflects what the sampler read off the
/// grid, not what the encoder added.
pub fn retention_map(
    grid: &FeatureGrid,
    samples: &SparseTokenSet,
) -> Result<RetentionMap, ModelError> {
    if samples.channels != grid.channels() {
        return Err(ModelError::LengthMismatch {
            what: "retention sample channels",
            expected: grid.channels(),
            got: samples.channels,
        });
    }
    retention_from_features(grid, &samples.features)
}

/// Retention map from a flat `K x C` feature buffer (row per sample).
///
/// The buffer length must be a nonzero multiple of the grid's channel count.
pub fn retention_from_features(
    grid: &FeatureGrid,
    features: &[f32],
) -> Result<RetentionMap, ModelError> {
    let c = grid.channels();
    if features.is_empty() || features.len() % c != 0 {
        return Err(ModelError::LengthMismatch {
            what: "retention sample features",
            expected: c,
            got: features.len(),
        });
    }
    let num_samples = features.len() / c;
    let (h, w) = (grid.height(), grid.width());
    let mut scores = Vec::with_capacity(h * w);
    let mut sum = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            let patch = grid.get(i, j)?;
            let mut best = f64::NEG_INFINITY;
            for k in 0..num_samples {
                let sample = &features[k * c..(k + 1) * c];
                best = best.max(cosine(patch, sample));
            }
            sum += best;
            scores.push(best as f32);
        }
    }
    Ok(RetentionMap {
        height: h,
        width: w,
        mean_score: sum / (h * w) as f64,
        scores,
    })
}

// ---------------------------------------------------------------------------
// Token self-similarity
// ---------------------------------------------------------------------------

/// Pairwise cosine matrix of a token set plus its redundancy score.
///
/// `values` is row-major `n x n`; the matrix is symmetric and has unit
/// diagonal for every token with nonzero norm.  `redundancy_score` is the
/// mean of the absolute off-diagonal entries (0 when `n == 1`): near 1 for a
/// set of clones, near 0 for mutually orthogonal tokens.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub n: usize,
    pub values: Vec<f32>,
    pub redundancy_score: f64,
}

impl SimilarityMatrix {
    /// Entry `(a, b)` of the matrix.
    pub fn value(&self, a: usize, b: usize) -> f32 {
        self.values[a * self.n + b]
    }
}

/// Computes the pairwise cosine matrix of a flat `n x channels` token buffer.
///
/// The buffer length must be a nonzero multiple of `channels`.
pub fn self_similarity(
    tokens: &[f32],
    channels: usize,
) -> Result<SimilarityMatrix, ModelError> {
    if channels == 0 || tokens.is_empty() || tokens.len() % channels != 0 {
        return Err(ModelError::LengthMismatch {
            what: "similarity token buffer",
            expected: channels.max(1),
            got: tokens.len(),
        });
    }
    let n = tokens.len() / channels;
    let row = |k: usize| &tokens[k * channels..(k + 1) * channels];
    let mut values = vec![0.0f32; n * n];
    let mut off_sum = 0.0f64;
    for a in 0..n {
        for b in a..n {
            let s = cosine(row(a), row(b));
            values[a * n + b] = s as f32;
            values[b * n + a] = s as f32;
            if a != b {
                off_sum += 2.0 * s.abs();
            }
        }
    }
    let off_count = n * n - n;
    let redundancy_score = if off_count == 0 {
        0.0
    } else {
        off_sum / off_count as f64
    };
    Ok(SimilarityMatrix {
        n,
        values,
        redundancy_score,
    })
}

// ---------------------------------------------------------------------------
// FLOPs model
// ---------------------------------------------------------------------------

/// Inputs for the sampling front end's operation count.
#[derive(Debug, Clone, Copy)]
pub struct SamplerCost {
    /// Dense grid height.
    pub height: u64,
    /// Dense grid width.
    pub width: u64,
    /// Channels per patch.
    pub channels: u64,
    /// Number of sampled tokens `K`.
    pub num_tokens: u64,
    /// Hidden width of the coordinate predictor.
    pub hidden: u64,
    /// Fourier frequency bands `L` in the coordinate encoder.
    pub fourier_bands: u64,
}

impl SamplerCost {
    /// Builds the cost inputs from a sampler configuration and grid shape,
    /// resolving the default hidden width exactly as the sampler does.
    pub fn from_config(
        cfg: &SamplerConfig,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Self {
        SamplerCost {
            height: height as u64,
            width: width as u64,
            channels: channels as u64,
            num_tokens: cfg.num_tokens as u64,
            hidden: cfg.hidden_for(channels) as u64,
            fourier_bands: cfg.fourier_bands as u64,
        }
    }

    /// Total front-end operation count.
    ///
    /// Conventions: one multiply-add counts as 2 operations, a plain add or
    /// multiply as 1, and each trigonometric evaluation as 1.  The terms are:
    ///
    /// * pooling — `H·W·C` adds to average the grid;
    /// * predictor — two dense layers of `C·hidden` and `hidden·2K`
    ///   multiply-adds, so `2·C·hidden + 4·hidden·K`;
    /// * gather — per token, `4·C` multiplies and `3·C` adds to blend four
    ///   neighbors;
    /// * encoder — per token, `4L` trig evaluations plus a `4L x C`
    ///   projection at 2 ops per multiply-add.
    pub fn overhead(&self) -> u64 {
        let pooling = self.height * self.width * self.channels;
        let predictor =
            2 * self.channels * self.hidden + 4 * self.hidden * self.num_tokens;
        let gather = 7 * self.num_tokens * self.channels;
        let encoder = self.num_tokens
            * (4 * self.fourier_bands + 8 * self.fourier_bands * self.channels);
        pooling + predictor + gather + encoder
    }
}

/// Parametric operation counts for a transformer stack over `tokens` tokens.
///
/// The attention and feed-forward fields are **per layer**; `total` folds in
/// the layer count and the optional sampling overhead:
/// `total = layers * (attn_quadratic + attn_linear + ffn) + sampler_overhead`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsReport {
    pub tokens: u64,
    pub model_dim: u64,
    pub layers: u64,
    /// Pairwise score and mix cost per layer: `4 * N^2 * d`.
    pub attn_quadratic: u64,
    /// Q/K/V/output projections per layer: `8 * N * d^2`.
    pub attn_linear: u64,
    /// Feed-forward (4x expansion) per layer: `16 * N * d^2`.
    pub ffn: u64,
    /// Sampling front-end cost; 0 when no sampler is attached.
    pub sampler_overhead: u64,
    pub total: u64,
}

/// Builds the operation-count report for `layers` transformer layers over
/// `tokens` tokens of width `dim`, optionally charging a sampling front end.
///
/// All three shape arguments must be positive.
pub fn flops_estimate(
    tokens: u64,
    dim: u64,
    layers: u64,
    sampler: Option<&SamplerCost>,
) -> FlopsReport {
    assert!(
        tokens > 0 && dim > 0 && layers > 0,
        "flops_estimate requires positive tokens, dim, and layers"
    );
    let attn_quadratic = 4 * tokens * tokens * dim;
    let attn_linear = 8 * tokens * dim * dim;
    let ffn = 16 * tokens * dim * dim;
    let sampler_overhead = sampler.map_or(0, SamplerCost::overhead);
    FlopsReport {
        tokens,
        model_dim: dim,
        layers,
        attn_quadratic,
        attn_linear,
        ffn,
        sampler_overhead,
        total: layers * (attn_quadratic + attn_linear + ffn) + sampler_overhead,
    }
}
