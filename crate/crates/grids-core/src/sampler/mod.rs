//! Token sampling strategies behind a common trait.
//!
//! Every strategy turns a dense [`FeatureGrid`] into a [`SparseTokenSet`]
//! plus a tape with whatever the exact backward pass needs. Strategies are
//! registered by name in [`registry`] and selected at runtime from config:
//!
//! * `grids`   - continuous coordinates predicted from pooled context, read
//!   with differentiable bilinear interpolation (the trainable flagship);
//! * `nearest` - same predictor, but coordinates are rounded to the nearest
//!   patch before lookup, which zeroes the feature-path coordinate gradient;
//! * `random`  - K distinct patches drawn uniformly without replacement;
//! * `topk`    - the K patches with the largest feature L2 norm;
//! * `dense`   - no pruning, all `H*W` patches in row-major order.
//!
//! Each token is `feature + position_embedding`, where the embedding is a
//! learned linear projection of Fourier features of the token's normalized
//! coordinate. The embedding path is trainable under every strategy, so
//! ablations differ only in how sampling positions are chosen.

mod bilinear;
mod dense;
mod grids;
mod nearest;
mod predictor;
mod random;
pub mod registry;
mod topk;

pub use bilinear::{
    bilinear_backward, bilinear_sample, bilinear_stencil, bilinear_weights, map_to_grid,
    AxisMap, BilinearGrads, BilinearStencil,
};
pub use dense::DenseStrategy;
pub use grids::GridStrategy;
pub use nearest::NearestStrategy;
pub use predictor::{
    encode_coordinates, init_sampler_params, lattice_coordinates, logit, predict_coordinates,
    sigmoid, PredictorTrace, ENCODER_BP, ENCODER_WP, PREDICTOR_B1, PREDICTOR_B2, PREDICTOR_W1,
    PREDICTOR_W2,
};
pub use random::RandomStrategy;
pub use topk::TopKStrategy;

use crate::error::ModelError;
use crate::grid::{ContextVector, FeatureGrid};
use crate::params::ParameterStore;
use crate::rng::Rng;

/// Normalized image-plane coordinate: `x` along columns, `y` along rows,
/// both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coord {
    pub x: f32,
    pub y: f32,
}

/// Ordered list of sampling coordinates, one per token.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateSet {
    pub coords: Vec<Coord>,
}

impl CoordinateSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Sampler hyperparameters, shared by all strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Number of tokens `K` to keep (ignored by `dense`).
    pub num_tokens: usize,
    /// Width of the coordinate predictor's hidden layer; `None` resolves to
    /// `max(2 * channels, 64)`.
    pub hidden_width: Option<usize>,
    /// Number of Fourier frequency bands `L` in the coordinate encoder
    /// (feature length `4 * L`).
    pub fourier_bands: usize,
    /// Clamp margin keeping grid coordinates strictly below `W - 1` /
    /// `H - 1` so the 2 x 2 stencil always fits.
    pub edge_epsilon: f32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_tokens: 4,
            hidden_width: None,
            fourier_bands: 8,
            edge_epsilon: 1e-4,
        }
    }
}

impl SamplerConfig {
    /// Resolved hidden width for a grid with `channels` channels.
    pub fn hidden_for(&self, channels: usize) -> usize {
        self.hidden_width.unwrap_or_else(|| (2 * channels).max(64))
    }

    /// Checks field ranges that do not depend on a grid.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_tokens == 0 {
            return Err(ModelError::InvalidConfig {
                what: "num_tokens must be at least 1".into(),
            });
        }
        if self.fourier_bands == 0 {
            return Err(ModelError::InvalidConfig {
                what: "fourier_bands must be at least 1".into(),
            });
        }
        if !(self.edge_epsilon > 0.0 && self.edge_epsilon < 0.5) {
            return Err(ModelError::InvalidConfig {
                what: format!("edge_epsilon {} outside (0, 0.5)", self.edge_epsilon),
            });
        }
        Ok(())
    }

    /// Checks this config against a concrete grid: budget and minimum size.
    /// `requested` is the strategy's token count for that grid.
    pub fn bind(&self, grid: &FeatureGrid, requested: usize) -> Result<(), ModelError> {
        self.validate()?;
        if grid.height() < 2 || grid.width() < 2 {
            return Err(ModelError::GridTooSmall {
                height: grid.height(),
                width: grid.width(),
            });
        }
        if requested > grid.patches() {
            return Err(ModelError::TokenBudget {
                requested,
                capacity: grid.patches(),
            });
        }
        Ok(())
    }
}

/// The pruned token set handed to the policy.
///
/// All three buffers are `num_tokens x channels`, row-major, and satisfy
/// `tokens = features + pos_embeddings` elementwise (the stored sum is the
/// `f32` sum of the stored addends, bit for bit).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTokenSet {
    pub num_tokens: usize,
    pub channels: usize,
    pub features: Vec<f32>,
    pub pos_embeddings: Vec<f32>,
    pub tokens: Vec<f32>,
    pub coords: CoordinateSet,
}

impl SparseTokenSet {
    pub fn token(&self, k: usize) -> &[f32] {
        &self.tokens[k * self.channels..(k + 1) * self.channels]
    }

    pub fn feature(&self, k: usize) -> &[f32] {
        &self.features[k * self.channels..(k + 1) * self.channels]
    }
}

/// Everything the forward pass caches for the exact backward pass.
#[derive(Debug, Clone)]
pub struct SamplerTape {
    /// Pooled context (present when the coordinate predictor ran).
    pub context: Option<ContextVector>,
    /// Predictor intermediates (present for `grids` and `nearest`).
    pub predictor: Option<PredictorTrace>,
    /// Normalized coordinates fed to the coordinate encoder.
    pub coords: CoordinateSet,
    /// Fourier features, `num_tokens x 4L` row-major.
    pub fourier: Vec<f32>,
    /// How features were read from the grid.
    pub feature_path: FeaturePath,
}

/// Feature-lookup record, per token.
#[derive(Debug, Clone)]
pub enum FeaturePath {
    /// Differentiable bilinear read: stencil plus whether the edge clamp was
    /// active per axis (an active clamp zeroes that coordinate's
    /// feature-path gradient).
    Bilinear {
        stencils: Vec<BilinearStencil>,
        clamped_x: Vec<bool>,
        clamped_y: Vec<bool>,
    },
    /// Discrete patch read at `(i, j)`; no coordinate gradient exists
    /// through the feature path.
    Cells(Vec<(usize, usize)>),
}

/// Gradients produced by a sampler backward pass, in addition to whatever
/// was accumulated into the parameter store.
#[derive(Debug, Clone)]
pub struct SamplerGradReport {
    /// Total `dL/d(x, y)` per token in normalized units (feature path plus
    /// encoder path). For discrete strategies this is a pure sensitivity;
    /// nothing trainable sits upstream of the coordinates.
    pub coord_grads: Vec<(f32, f32)>,
    /// The feature-path share of `coord_grads`: exactly zero for every
    /// strategy that reads whole patches (`nearest`, `random`, `topk`,
    /// `dense`).
    pub coord_feature_grads: Vec<(f32, f32)>,
    /// `dL/d(grid values)`, `H*W*C` row-major.
    pub grid_grad: Vec<f32>,
}

/// A forward sampling result: tokens plus the tape to run backward.
#[derive(Debug, Clone)]
pub struct SampleRun {
    pub tokens: SparseTokenSet,
    pub tape: SamplerTape,
}

/// A token sampling strategy. Object-safe so strategies can be picked from
/// the [`registry`] by name at runtime.
pub trait TokenSampler {
    /// Registry name (`grids`, `nearest`, `random`, `topk`, `dense`).
    fn name(&self) -> &'static str;

    fn config(&self) -> &SamplerConfig;

    /// Number of tokens this strategy emits for an `height x width` grid.
    fn token_count(&self, height: usize, width: usize) -> usize {
        let _ = (height, width);
        self.config().num_tokens
    }

    /// Forward pass: prune the grid to a token set.
    fn sample(
        &self,
        grid: &FeatureGrid,
        params: &ParameterStore,
        rng: &mut Rng,
    ) -> Result<SampleRun, ModelError>;

    /// Backward pass: given `dL/d(tokens)` (`num_tokens x channels`,
    /// row-major), accumulate parameter gradients and report coordinate and
    /// grid gradients.
    fn backward(
        &self,
        grid: &FeatureGrid,
        tape: &SamplerTape,
        upstream: &[f32],
        params: &mut ParameterStore,
    ) -> Result<SamplerGradReport, ModelError>;
}

/// Normalized center of patch `(i, j)` under the align-corners map:
/// `x = j / (W - 1)`, `y = i / (H - 1)`. This is the exact inverse of
/// [`map_to_grid`] at integer grid coordinates.
pub fn patch_center(i: usize, j: usize, height: usize, width: usize) -> Coord {
    Coord {
        x: j as f32 / (width - 1) as f32,
        y: i as f32 / (height - 1) as f32,
    }
}

/// Shared tail of every strategy's forward pass: encode coordinates, add
/// embeddings to features, assemble the token set and tape skeleton.
fn finish_tokens(
    grid: &FeatureGrid,
    features: Vec<f32>,
    coords: CoordinateSet,
    params: &ParameterStore,
    cfg: &SamplerConfig,
) -> Result<(SparseTokenSet, Vec<f32>), ModelError> {
    let channels = grid.channels();
    let (pos_embeddings, fourier) = encode_coordinates(&coords, params, cfg, channels)?;
    let tokens: Vec<f32> = features
        .iter()
        .zip(&pos_embeddings)
        .map(|(f, e)| f + e)
        .collect();
    Ok((
        SparseTokenSet {
            num_tokens: coords.len(),
            channels,
            features,
            pos_embeddings,
            tokens,
            coords,
        },
        fourier,
    ))
}

/// Shared backward for the strategies that read whole patches: accumulates
/// encoder gradients, scatters the upstream into the grid gradient at the
/// read cells, and reports zero feature-path coordinate gradients.
fn discrete_backward(
    grid: &FeatureGrid,
    tape: &SamplerTape,
    upstream: &[f32],
    params: &mut ParameterStore,
) -> Result<SamplerGradReport, ModelError> {
    let channels = grid.channels();
    let n = tape.coords.len();
    if upstream.len() != n * channels {
        return Err(ModelError::LengthMismatch {
            what: "sampler upstream gradient",
            expected: n * channels,
            got: upstream.len(),
        });
    }
    let cells = match &tape.feature_path {
        FeaturePath::Cells(cells) => cells,
        FeaturePath::Bilinear { .. } => {
            return Err(ModelError::InvalidConfig {
                what: "discrete backward called with a bilinear tape".into(),
            })
        }
    };

    // Tokens are feature + embedding, so the upstream flows unchanged into
    // both addends.
    let coord_grads =
        predictor::encoder_backward(&tape.coords, &tape.fourier, upstream, params, channels)?;

    let mut grid_grad = vec![0.0f32; grid.values().len()];
    for (k, &(i, j)) in cells.iter().enumerate() {
        let base = (i * grid.width() + j) * channels;
        let up = &upstream[k * channels..(k + 1) * channels];
        for (c, u) in up.iter().enumerate() {
            grid_grad[base + c] += u;
        }
    }

    Ok(SamplerGradReport {
        coord_grads,
        coord_feature_grads: vec![(0.0, 0.0); n],
        grid_grad,
    })
}
