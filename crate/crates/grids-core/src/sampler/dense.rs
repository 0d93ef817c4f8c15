//! Dense upper baseline: no pruning at all. Every patch becomes a token, in
//! row-major order, with the patch-center position embedding added.
//!
//! This is the quality ceiling the pruned strategies chase and the cost
//! ceiling they undercut; `token_count` is `H * W` regardless of the
//! configured budget.

use crate::error::ModelError;
use crate::grid::FeatureGrid;
use crate::params::ParameterStore;
use crate::rng::Rng;
use super::{
    discrete_backward, finish_tokens, patch_center, CoordinateSet, FeaturePath, SampleRun,
    SamplerConfig, SamplerGradReport, SamplerTape, TokenSampler,
};

/// Strategy `dense`: keep everything.
#[derive(Debug, Clone)]
pub struct DenseStrategy {
    cfg: SamplerConfig,
}

impl DenseStrategy {
    pub fn new(cfg: SamplerConfig) -> Self {
        DenseStrategy { cfg }
    }
}

impl TokenSampler for DenseStrategy {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn token_count(&self, height: usize, width: usize) -> usize {
        height * width
    }

    fn sample(
        &self,
        grid: &FeatureGrid,
        params: &ParameterStore,
        _rng: &mut Rng,
    ) -> Result<SampleRun, ModelError> {
        let (h, w) = (grid.height(), grid.width());
        self.cfg.bind(grid, h * w)?;
        let mut cells = Vec::with_capacity(h * w);
        let mut coords = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                cells.push((i, j));
                coords.push(patch_center(i, j, h, w));
            }
        }
        let features = grid.values().to_vec();
        let coords = CoordinateSet { coords };
        let (tokens, fourier) = finish_tokens(grid, features, coords.clone(), params, &self.cfg)?;
        Ok(SampleRun {
            tokens,
            tape: SamplerTape {
                context: None,
                predictor: None,
                coords,
                fourier,
                feature_path: FeaturePath::Cells(cells),
            },
        })
    }

    fn backward(
        &self,
        grid: &FeatureGrid,
        tape: &SamplerTape,
        upstream: &[f32],
        params: &mut ParameterStore,
    ) -> Result<SamplerGradReport, ModelError> {
        discrete_backward(grid, tape, upstream, params)
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
