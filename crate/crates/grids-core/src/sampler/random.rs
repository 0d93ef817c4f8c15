//! Random-patch baseline: `K` distinct patches drawn uniformly without
//! replacement, independent of the grid contents.
//!
//! Coordinates are the chosen patch centers, so the position-embedding path
//! still trains; nothing else does. This is the floor any learned strategy
//! has to beat.

use crate::error::ModelError;
use crate::grid::FeatureGrid;
use crate::params::ParameterStore;
use crate::rng::Rng;
use super::{
    discrete_backward, finish_tokens, patch_center, CoordinateSet, FeaturePath, SampleRun,
    SamplerConfig, SamplerGradReport, SamplerTape, TokenSampler,
};

/// Strategy `random`: uniform patch choice without replacement.
#[derive(Debug, Clone)]
pub struct RandomStrategy {
    cfg: SamplerConfig,
}

impl RandomStrategy {
    pub fn new(cfg: SamplerConfig) -> Self {
        RandomStrategy { cfg }
    }
}

impl TokenSampler for RandomStrategy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn sample(
        &self,
        grid: &FeatureGrid,
        params: &ParameterStore,
        rng: &mut Rng,
    ) -> Result<SampleRun, ModelError> {
        self.cfg.bind(grid, self.cfg.num_tokens)?;
        let (h, w, c) = (grid.height(), grid.width(), grid.channels());
        let flats = rng.choose_distinct(h * w, self.cfg.num_tokens);

        let mut features = Vec::with_capacity(self.cfg.num_tokens * c);
        let mut cells = Vec::with_capacity(self.cfg.num_tokens);
        let mut coords = Vec::with_capacity(self.cfg.num_tokens);
        for flat in flats {
            let (i, j) = (flat / w, flat % w);
            features.extend_from_slice(grid.get(i, j)?);
            coords.push(patch_center(i, j, h, w));
            cells.push((i, j));
        }

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
