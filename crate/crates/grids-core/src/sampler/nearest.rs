//! Nearest-patch ablation: the same coordinate predictor as `grids`, but
//! each feature is read from the single nearest patch instead of a bilinear
//! blend.
//!
//! Rounding is piecewise constant, so the feature read contributes exactly
//! zero coordinate gradient - the sampled values cannot tell the predictor
//! which way to move. The position-embedding path still uses the continuous
//! coordinates, so it remains the only trainable route into the predictor.
//! Comparing this strategy against `grids` isolates the value of the
//! interpolation gradient.

use crate::error::ModelError;
use crate::grid::{gap_backward, global_average_pool, FeatureGrid};
use crate::params::ParameterStore;
use crate::rng::Rng;
use super::bilinear::map_to_grid;
use super::predictor::{predict_coordinates, predictor_backward};
use super::{
    discrete_backward, finish_tokens, FeaturePath, SampleRun, SamplerConfig, SamplerGradReport,
    SamplerTape, TokenSampler,
};

/// Strategy `nearest`: predicted coordinates, rounded feature lookup.
#[derive(Debug, Clone)]
pub struct NearestStrategy {
    cfg: SamplerConfig,
}

impl NearestStrategy {
    pub fn new(cfg: SamplerConfig) -> Self {
        NearestStrategy { cfg }
    }
}

impl TokenSampler for NearestStrategy {
    fn name(&self) -> &'static str {
        "nearest"
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
        let context = global_average_pool(grid);
        let (coords, trace) = predict_coordinates(&context, params, &self.cfg)?;

        let mut features = Vec::with_capacity(coords.len() * grid.channels());
        let mut cells = Vec::with_capacity(coords.len());
        for coord in &coords.coords {
            let (ax, ay) = map_to_grid(*coord, grid.height(), grid.width(), self.cfg.edge_epsilon)?;
            let j = (ax.value.round() as usize).min(grid.width() - 1);
            let i = (ay.value.round() as usize).min(grid.height() - 1);
            features.extend_from_slice(grid.get(i, j)?);
            cells.push((i, j));
        }

        let (tokens, fourier) = finish_tokens(grid, features, coords.clone(), params, &self.cfg)?;
        Ok(SampleRun {
            tokens,
            tape: SamplerTape {
                context: Some(context),
                predictor: Some(trace),
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
        // Patch scatter plus encoder gradients; feature-path coordinate
        // gradients are identically zero.
        let mut report = discrete_backward(grid, tape, upstream, params)?;

        // Unlike the purely discrete strategies the coordinates here come
        // from the predictor, so the encoder's coordinate sensitivity
        // continues backward into it and, through pooling, into the grid.
        let context = tape.context.as_ref().ok_or(ModelError::InvalidConfig {
            what: "tape is missing the pooled context".into(),
        })?;
        let trace = tape.predictor.as_ref().ok_or(ModelError::InvalidConfig {
            what: "tape is missing the predictor trace".into(),
        })?;
        let d_context =
            predictor_backward(context, trace, &report.coord_grads, params, &self.cfg)?;
        let pooled = gap_backward(&d_context, grid.height(), grid.width())?;
        for (g, p) in report.grid_grad.iter_mut().zip(&pooled) {
            *g += p;
        }
        Ok(report)
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
