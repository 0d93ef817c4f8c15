//! Magnitude top-K baseline: keep the `K` patches with the largest feature
//! L2 norm.
//!
//! A strong heuristic when salient content is high-energy, and a common
//! pruning baseline - but it is content-blind in the other direction: it
//! cannot learn that a *specific* low-energy region matters. Selection is
//! deterministic; ties break toward the smaller row-major index.

use crate::error::ModelError;
use crate::grid::FeatureGrid;
use crate::params::ParameterStore;
use crate::rng::Rng;
use super::{
    discrete_backward, finish_tokens, patch_center, CoordinateSet, FeaturePath, SampleRun,
    SamplerConfig, SamplerGradReport, SamplerTape, TokenSampler,
};

/// Strategy `topk`: largest-norm patches.
#[derive(Debug, Clone)]
pub struct TopKStrategy {
    cfg: SamplerConfig,
}

impl TopKStrategy {
    pub fn new(cfg: SamplerConfig) -> Self {
        TopKStrategy { cfg }
    }
}

/// Per-patch L2 norms, accumulated in `f64`.
fn patch_norms(grid: &FeatureGrid) -> Vec<f64> {
    grid.values()
        .chunks_exact(grid.channels())
        .map(|patch| {
            patch
                .iter()
                .map(|v| f64::from(*v) * f64::from(*v))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

impl TokenSampler for TopKStrategy {
    fn name(&self) -> &'static str {
        "topk"
    }

    fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn sample(
        &self,
        grid: &FeatureGrid,
        params: &ParameterStore,
        _rng: &mut Rng,
    ) -> Result<SampleRun, ModelError> {
        self.cfg.bind(grid, self.cfg.num_tokens)?;
        let (h, w, c) = (grid.height(), grid.width(), grid.channels());
        let norms = patch_norms(grid);
        let mut order: Vec<usize> = (0..h * w).collect();
        // Stable sort, descending by norm: ties keep ascending flat index.
        order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
        order.truncate(self.cfg.num_tokens);

        let mut features = Vec::with_capacity(self.cfg.num_tokens * c);
        let mut cells = Vec::with_capacity(self.cfg.num_tokens);
        let mut coords = Vec::with_capacity(self.cfg.num_tokens);
        for flat in order {
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
