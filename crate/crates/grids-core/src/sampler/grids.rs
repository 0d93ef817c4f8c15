//! The differentiable sampling strategy: predicted continuous coordinates,
//! bilinear feature reads, gradient flow through both.
//!
//! Forward:
//! 1. pool the grid to a context vector (global average),
//! 2. predict `K` normalized coordinates from the context,
//! 3. map each to grid units (edge-clamped) and bilinearly interpolate a
//!    feature vector,
//! 4. add the Fourier position embedding of the same coordinate.
//!
//! Backward routes the upstream token gradient through four paths at once:
//! the bilinear neighbor weights (into the grid), the bilinear coordinate
//! sensitivities (into the predictor), the encoder projection (parameters
//! plus a second coordinate path), and the pooled-context chain (spread
//! uniformly back over the grid). Where the edge clamp was active the
//! feature-path coordinate gradient is zero, exactly like the clamp's true
//! local derivative.

use crate::error::ModelError;
use crate::grid::{gap_backward, global_average_pool, FeatureGrid};
use crate::params::ParameterStore;
use crate::rng::Rng;
use super::bilinear::{bilinear_backward, bilinear_sample, bilinear_stencil, map_to_grid};
use super::predictor::{encoder_backward, predict_coordinates, predictor_backward};
use super::{
    finish_tokens, FeaturePath, SampleRun, SamplerConfig, SamplerGradReport, SamplerTape,
    TokenSampler,
};

/// Strategy `grids`: end-to-end differentiable token pruning.
#[derive(Debug, Clone)]
pub struct GridStrategy {
    cfg: SamplerConfig,
}

impl GridStrategy {
    pub fn new(cfg: SamplerConfig) -> Self {
        GridStrategy { cfg }
    }
}

impl TokenSampler for GridStrategy {
    fn name(&self) -> &'static str {
        "grids"
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
        let mut stencils = Vec::with_capacity(coords.len());
        let mut clamped_x = Vec::with_capacity(coords.len());
        let mut clamped_y = Vec::with_capacity(coords.len());
        for coord in &coords.coords {
            let (ax, ay) = map_to_grid(*coord, grid.height(), grid.width(), self.cfg.edge_epsilon)?;
            let stencil = bilinear_stencil(ax.value, ay.value, grid.height(), grid.width())?;
            features.extend(bilinear_sample(grid, &stencil));
            stencils.push(stencil);
            clamped_x.push(ax.clamped);
            clamped_y.push(ay.clamped);
        }

        let (tokens, fourier) = finish_tokens(grid, features, coords.clone(), params, &self.cfg)?;
        Ok(SampleRun {
            tokens,
            tape: SamplerTape {
                context: Some(context),
                predictor: Some(trace),
                coords,
                fourier,
                feature_path: FeaturePath::Bilinear {
                    stencils,
                    clamped_x,
                    clamped_y,
                },
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
        let channels = grid.channels();
        let n = tape.coords.len();
        if upstream.len() != n * channels {
            return Err(ModelError::LengthMismatch {
                what: "sampler upstream gradient",
                expected: n * channels,
                got: upstream.len(),
            });
        }
        let (stencils, clamped_x, clamped_y) = match &tape.feature_path {
            FeaturePath::Bilinear {
                stencils,
                clamped_x,
                clamped_y,
            } => (stencils, clamped_x, clamped_y),
            FeaturePath::Cells(_) => {
                return Err(ModelError::InvalidConfig {
                    what: "bilinear backward called with a discrete tape".into(),
                })
            }
        };
        let context = tape.context.as_ref().ok_or(ModelError::InvalidConfig {
            what: "tape is missing the pooled context".into(),
        })?;
        let trace = tape.predictor.as_ref().ok_or(ModelError::InvalidConfig {
            what: "tape is missing the predictor trace".into(),
        })?;

        // Tokens are feature + embedding, so `upstream` is the gradient of
        // both addends. Encoder path first: parameter grads plus the
        // embedding's own coordinate sensitivity.
        let encoder_grads =
            encoder_backward(&tape.coords, &tape.fourier, upstream, params, channels)?;

        // Feature path: neighbor scatter into the grid, and coordinate
        // sensitivity converted from grid units to normalized units.
        let mut grid_grad = vec![0.0f32; grid.values().len()];
        let mut coord_feature_grads = Vec::with_capacity(n);
        let x_scale = (grid.width() - 1) as f32;
        let y_scale = (grid.height() - 1) as f32;
        for (k, stencil) in stencils.iter().enumerate() {
            let up = &upstream[k * channels..(k + 1) * channels];
            let grads = bilinear_backward(grid, stencil, up)?;
            let cells = [
                (stencil.i0, stencil.j0),
                (stencil.i0, stencil.j0 + 1),
                (stencil.i0 + 1, stencil.j0),
                (stencil.i0 + 1, stencil.j0 + 1),
            ];
            for ((i, j), ng) in cells.iter().zip(&grads.neighbor_grads) {
                let base = (i * grid.width() + j) * channels;
                for (c, g) in ng.iter().enumerate() {
                    grid_grad[base + c] += g;
                }
            }
            let fx = if clamped_x[k] { 0.0 } else { grads.d_x * x_scale };
            let fy = if clamped_y[k] { 0.0 } else { grads.d_y * y_scale };
            coord_feature_grads.push((fx, fy));
        }

        // Both coordinate paths meet in front of the predictor.
        let coord_grads: Vec<(f32, f32)> = encoder_grads
            .iter()
            .zip(&coord_feature_grads)
            .map(|((ex, ey), (fx, fy))| (ex + fx, ey + fy))
            .collect();
        let d_context = predictor_backward(context, trace, &coord_grads, params, &self.cfg)?;
        let pooled = gap_backward(&d_context, grid.height(), grid.width())?;
        for (g, p) in grid_grad.iter_mut().zip(&pooled) {
            *g += p;
        }

        Ok(SamplerGradReport {
            coord_grads,
            coord_feature_grads,
            grid_grad,
        })
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::predictor::{
        encode_coordinates, init_sampler_params, logit, PREDICTOR_B2, PREDICTOR_W2,
    };
    use crate::sampler::{patch_center, ENCODER_WP};

    fn cfg(k: usize) -> SamplerConfig {
        SamplerConfig {
            num_tokens: k,
            ..SamplerConfig::default()
        }
    }

    fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> FeatureGrid {
        let mut rng = Rng::new(seed);
        let values = (0..h * w * c).map(|_| rng.range_f32(-1.0, 1.0)).collect();
        FeatureGrid::new(h, w, c, values).unwrap()
    }

    fn init(channels: usize, cfg: &SamplerConfig, seed: u64) -> ParameterStore {
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(seed);
        init_sampler_params(&mut store, channels, cfg, &mut rng).unwrap();
        store
    }

    /// Zeroes the output weights and rebuilds the output bias so the
    /// predictor emits exactly these coordinates (through sigmoid(logit(.))).
    fn force_coordinates(store: &mut ParameterStore, coords: &[(f32, f32)]) {
        let w2 = store.get_mut(PREDICTOR_W2).unwrap();
        w2.values.iter_mut().for_each(|v| *v = 0.0);
        let b2 = store.get_mut(PREDICTOR_B2).unwrap();
        b2.values = coords
            .iter()
            .flat_map(|(x, y)| [logit(*x), logit(*y)])
            .collect();
    }

    #[test]
    fn forward_composes_bilinear_read_and_embedding() {
        let c = cfg(2);
        let grid = random_grid(6, 5, 3, 11);
        let forced = [(0.3f32, 0.7f32), (0.55, 0.2)];
        let mut store = init(3, &c, 42);
        force_coordinates(&mut store, &forced);
        let run = GridStrategy::new(c.clone())
            .sample(&grid, &store, &mut Rng::new(0))
            .unwrap();

        for (k, (x, y)) in forced.iter().enumerate() {
            let got = run.tokens.coords.coords[k];
            assert!((got.x - x).abs() < 1e-6 && (got.y - y).abs() < 1e-6);
            let (ax, ay) = map_to_grid(got, 6, 5, c.edge_epsilon).unwrap();
            let stencil = bilinear_stencil(ax.value, ay.value, 6, 5).unwrap();
            let want = bilinear_sample(&grid, &stencil);
            assert_eq!(run.tokens.feature(k), want.as_slice());
        }
        let (emb, _) = encode_coordinates(&run.tokens.coords, &store, &c, 3).unwrap();
        assert_eq!(run.tokens.pos_embeddings, emb);
        for (t, (f, e)) in run
            .tokens
            .tokens
            .iter()
            .zip(run.tokens.features.iter().zip(&emb))
        {
            assert_eq!(*t, f + e);
        }
    }

    #[test]
    fn patch_center_coordinates_read_back_the_patch() {
        // Interior patch centers hit grid cells exactly (up to the sigmoid
        // round trip); the far edge additionally feels the clamp margin.
        let grid = random_grid(5, 5, 2, 3);
        let c = cfg(1);
        let strategy = GridStrategy::new(c.clone());
        for i in 0..5 {
            for j in 0..5 {
                let p = patch_center(i, j, 5, 5);
                let forced = [(p.x.clamp(1e-4, 1.0 - 1e-4), p.y.clamp(1e-4, 1.0 - 1e-4))];
                let mut store = init(2, &c, 9);
                force_coordinates(&mut store, &forced);
                let run = strategy.sample(&grid, &store, &mut Rng::new(0)).unwrap();
                let want = grid.get(i, j).unwrap();
                let tol = if i == 4 || j == 4 || i == 0 || j == 0 {
                    2e-3
                } else {
                    1e-5
                };
                for (got, w) in run.tokens.feature(0).iter().zip(want) {
                    assert!(
                        (got - w).abs() < tol,
                        "patch ({i},{j}): {got} vs {w}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_grid_has_zero_feature_path_coordinate_grads() {
        let grid = FeatureGrid::constant(4, 4, 3, 0.8);
        let c = cfg(3);
        let store_init = init(3, &c, 5);
        let strategy = GridStrategy::new(c.clone());
        let run = strategy.sample(&grid, &store_init, &mut Rng::new(0)).unwrap();
        let mut store = store_init.clone();
        let upstream: Vec<f32> = (0..3 * 3).map(|i| 0.1 * (i as f32 + 1.0)).collect();
        let report = strategy.backward(&grid, &run.tape, &upstream, &mut store).unwrap();
        for (fx, fy) in &report.coord_feature_grads {
            assert_eq!(*fx, 0.0);
            assert_eq!(*fy, 0.0);
        }
        // Encoder path still produces coordinate sensitivity.
        assert!(report.coord_grads.iter().any(|(x, y)| *x != 0.0 || *y != 0.0));
    }

    #[test]
    fn zero_upstream_zeroes_every_gradient() {
        let grid = random_grid(4, 6, 2, 17);
        let c = cfg(2);
        let store_init = init(2, &c, 21);
        let strategy = GridStrategy::new(c.clone());
        let run = strategy.sample(&grid, &store_init, &mut Rng::new(0)).unwrap();
        let mut store = store_init.clone();
        let report = strategy
            .backward(&grid, &run.tape, &vec![0.0; 2 * 2], &mut store)
            .unwrap();
        assert!(report.grid_grad.iter().all(|g| *g == 0.0));
        assert!(report.coord_grads.iter().all(|(x, y)| *x == 0.0 && *y == 0.0));
        for p in store.iter() {
            assert!(p.grads.iter().all(|g| *g == 0.0), "{}", p.name);
        }
    }

    #[test]
    fn upstream_length_is_checked() {
        let grid = random_grid(4, 4, 2, 1);
        let c = cfg(2);
        let store_init = init(2, &c, 2);
        let strategy = GridStrategy::new(c.clone());
        let run = strategy.sample(&grid, &store_init, &mut Rng::new(0)).unwrap();
        let mut store = store_init.clone();
        assert!(matches!(
            strategy.backward(&grid, &run.tape, &[0.0; 3], &mut store),
            Err(ModelError::LengthMismatch { .. })
        ));
    }

    /// Scalar probe loss `L = sum(tokens * probe)` used for FD checks.
    fn probe_loss(
        strategy: &GridStrategy,
        grid: &FeatureGrid,
        store: &ParameterStore,
        probe: &[f32],
    ) -> f64 {
        let run = strategy.sample(grid, store, &mut Rng::new(0)).unwrap();
        run.tokens
            .tokens
            .iter()
            .zip(probe)
            .map(|(t, p)| f64::from(*t) * f64::from(*p))
            .sum()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // Few frequency bands keep the forward map's curvature low so the
        // central difference is truncation-clean at this step size; the
        // denominator is the step actually realized after f32 rounding.
        let grid = random_grid(5, 5, 3, 31);
        let c = SamplerConfig {
            num_tokens: 2,
            fourier_bands: 2,
            ..SamplerConfig::default()
        };
        let store_init = init(3, &c, 33);
        let strategy = GridStrategy::new(c.clone());
        let mut rng = Rng::new(99);
        let probe: Vec<f32> = (0..2 * 3).map(|_| rng.range_f32(-1.0, 1.0)).collect();

        let run = strategy.sample(&grid, &store_init, &mut Rng::new(0)).unwrap();
        let mut store = store_init.clone();
        store.zero_grads();
        strategy.backward(&grid, &run.tape, &probe, &mut store).unwrap();

        let h = 1e-2f32;
        for name in [PREDICTOR_W2, ENCODER_WP, "predictor.w1"] {
            for idx in [0usize, 3] {
                let analytic = f64::from(store.get(name).unwrap().grads[idx]);
                let mut plus = store_init.clone();
                plus.get_mut(name).unwrap().values[idx] += h;
                let mut minus = store_init.clone();
                minus.get_mut(name).unwrap().values[idx] -= h;
                let step = f64::from(plus.get(name).unwrap().values[idx])
                    - f64::from(minus.get(name).unwrap().values[idx]);
                let fd = (probe_loss(&strategy, &grid, &plus, &probe)
                    - probe_loss(&strategy, &grid, &minus, &probe))
                    / step;
                let err = (analytic - fd).abs();
                assert!(
                    err < 1e-3 * fd.abs().max(analytic.abs()) + 1e-4,
                    "{name}[{idx}]: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn grid_gradient_matches_finite_differences() {
        // Perturbing one grid value moves the loss through the direct
        // bilinear read *and* the pooled-context chain; the reported
        // grid_grad must capture both.
        let c = cfg(2);
        let store = init(3, &c, 7);
        let strategy = GridStrategy::new(c.clone());
        let grid = random_grid(4, 4, 3, 13);
        let mut rng = Rng::new(55);
        let probe: Vec<f32> = (0..2 * 3).map(|_| rng.range_f32(-1.0, 1.0)).collect();

        let run = strategy.sample(&grid, &store, &mut Rng::new(0)).unwrap();
        let mut scratch = store.clone();
        let report = strategy
            .backward(&grid, &run.tape, &probe, &mut scratch)
            .unwrap();

        let h = 1e-2f32;
        for flat in [0usize, 7, 20, 47] {
            let mut plus = grid.values().to_vec();
            plus[flat] += h;
            let plus = FeatureGrid::new(4, 4, 3, plus).unwrap();
            let mut minus = grid.values().to_vec();
            minus[flat] -= h;
            let minus = FeatureGrid::new(4, 4, 3, minus).unwrap();
            let fd = (probe_loss(&strategy, &plus, &store, &probe)
                - probe_loss(&strategy, &minus, &store, &probe))
                / (2.0 * f64::from(h));
            let analytic = f64::from(report.grid_grad[flat]);
            assert!(
                (analytic - fd).abs() < 1e-2 * fd.abs().max(analytic.abs()) + 1e-4,
                "grid[{flat}]: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn coordinate_grads_are_encoder_plus_feature_paths() {
        let grid = random_grid(5, 6, 3, 41);
        let c = cfg(2);
        let store_init = init(3, &c, 43);
        let strategy = GridStrategy::new(c.clone());
        let run = strategy.sample(&grid, &store_init, &mut Rng::new(0)).unwrap();
        let probe: Vec<f32> = (0..2 * 3).map(|i| (i as f32 - 2.5) * 0.3).collect();

        let mut store = store_init.clone();
        let report = strategy.backward(&grid, &run.tape, &probe, &mut store).unwrap();
        let mut scratch = store_init.clone();
        let encoder_only = encoder_backward(
            &run.tape.coords,
            &run.tape.fourier,
            &probe,
            &mut scratch,
            3,
        )
        .unwrap();
        for k in 0..2 {
            let want_x = encoder_only[k].0 + report.coord_feature_grads[k].0;
            let want_y = encoder_only[k].1 + report.coord_feature_grads[k].1;
            assert!((report.coord_grads[k].0 - want_x).abs() < 1e-6);
            assert!((report.coord_grads[k].1 - want_y).abs() < 1e-6);
        }
    }
}
