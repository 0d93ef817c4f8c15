//! Differentiable bilinear grid reads.
//!
//! Coordinates are normalized to `[0, 1]` and mapped to grid units with the
//! align-corners convention `x_grid = x * (W - 1)`, then clamped to
//! `[0, W - 1 - eps]` so the 2 x 2 neighborhood below-right of the floor
//! always exists. The four neighbors of a grid point `(x, y)` with
//! `j0 = floor(x)`, `i0 = floor(y)`, `dx = x - j0`, `dy = y - i0` are
//!
//! ```text
//! P1 = (i0,     j0)      weight w1 = (1 - dx) * (1 - dy)
//! P2 = (i0,     j0 + 1)  weight w2 = dx * (1 - dy)
//! P3 = (i0 + 1, j0)      weight w3 = (1 - dx) * dy
//! P4 = (i0 + 1, j0 + 1)  weight w4 = dx * dy
//! ```
//!
//! and the sampled feature is the weight-sum of the neighbor features. The
//! read is piecewise bilinear in `(x, y)`, so its coordinate gradient is
//! exact and cheap:
//!
//! ```text
//! dL/dx = sum_c u[c] * ((1 - dy) * (P2 - P1) + dy * (P4 - P3))[c]
//! dL/dy = sum_c u[c] * ((1 - dx) * (P3 - P1) + dx * (P4 - P2))[c]
//! ```
//!
//! where `u` is the upstream feature gradient. Writing the gradient as
//! neighbor differences makes it vanish exactly (not just approximately) on
//! constant grids.

use crate::error::ModelError;
use crate::grid::FeatureGrid;
use super::Coord;

/// Result of mapping one normalized coordinate onto one grid axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    /// Grid-unit coordinate after clamping.
    pub value: f32,
    /// Whether the clamp was active; an active clamp has zero gradient.
    pub clamped: bool,
}

fn map_axis(p: f32, extent: usize, eps: f32) -> AxisMap {
    let hi = (extent - 1) as f32 - eps;
    let raw = p * (extent - 1) as f32;
    if raw < 0.0 {
        AxisMap {
            value: 0.0,
            clamped: true,
        }
    } else if raw > hi {
        AxisMap {
            value: hi,
            clamped: true,
        }
    } else {
        AxisMap {
            value: raw,
            clamped: false,
        }
    }
}

/// Maps a normalized coordinate to grid units: `x = clamp(p.x * (W - 1), 0,
/// W - 1 - eps)` and likewise for `y` with `H`. Requires `H, W >= 2`.
pub fn map_to_grid(
    p: Coord,
    height: usize,
    width: usize,
    eps: f32,
) -> Result<(AxisMap, AxisMap), ModelError> {
    if height < 2 || width < 2 {
        return Err(ModelError::GridTooSmall { height, width });
    }
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(ModelError::NonFinite {
            stage: "coordinate mapping",
        });
    }
    Ok((map_axis(p.x, width, eps), map_axis(p.y, height, eps)))
}

/// Interpolation weights for fractional offsets `(dx, dy)` in `[0, 1]`:
/// `[(1-dx)(1-dy), dx(1-dy), (1-dx)dy, dx*dy]`.
pub fn bilinear_weights(dx: f32, dy: f32) -> [f32; 4] {
    [
        (1.0 - dx) * (1.0 - dy),
        dx * (1.0 - dy),
        (1.0 - dx) * dy,
        dx * dy,
    ]
}

/// One bilinear read site: anchor patch, fractional offsets, weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearStencil {
    /// Top-left neighbor row; `0 <= i0 <= H - 2`.
    pub i0: usize,
    /// Top-left neighbor column; `0 <= j0 <= W - 2`.
    pub j0: usize,
    pub dx: f32,
    pub dy: f32,
    pub weights: [f32; 4],
}

/// Builds the stencil for grid-unit coordinates `(x, y)`. Accepts the full
/// closed range `[0, W - 1]`; at exactly `W - 1` the anchor steps back one
/// cell and the fractional offset becomes 1, which is still a valid convex
/// stencil.
pub fn bilinear_stencil(
    x: f32,
    y: f32,
    height: usize,
    width: usize,
) -> Result<BilinearStencil, ModelError> {
    if height < 2 || width < 2 {
        return Err(ModelError::GridTooSmall { height, width });
    }
    if !(x.is_finite() && y.is_finite()) {
        return Err(ModelError::NonFinite { stage: "stencil" });
    }
    if x < 0.0 || x > (width - 1) as f32 {
        return Err(ModelError::IndexOutOfRange {
            axis: "grid x",
            index: x as usize,
            size: width,
        });
    }
    if y < 0.0 || y > (height - 1) as f32 {
        return Err(ModelError::IndexOutOfRange {
            axis: "grid y",
            index: y as usize,
            size: height,
        });
    }
    let j0 = (x.floor() as usize).min(width - 2);
    let i0 = (y.floor() as usize).min(height - 2);
    let dx = x - j0 as f32;
    let dy = y - i0 as f32;
    Ok(BilinearStencil {
        i0,
        j0,
        dx,
        dy,
        weights: bilinear_weights(dx, dy),
    })
}

/// Reads one interpolated feature vector; accumulates per channel in `f64`.
pub fn bilinear_sample(grid: &FeatureGrid, stencil: &BilinearStencil) -> Vec<f32> {
    let c = grid.channels();
    let [w1, w2, w3, w4] = stencil.weights;
    let p1 = grid.patch(stencil.i0, stencil.j0);
    let p2 = grid.patch(stencil.i0, stencil.j0 + 1);
    let p3 = grid.patch(stencil.i0 + 1, stencil.j0);
    let p4 = grid.patch(stencil.i0 + 1, stencil.j0 + 1);
    let mut out = Vec::with_capacity(c);
    for k in 0..c {
        let acc = f64::from(w1) * f64::from(p1[k])
            + f64::from(w2) * f64::from(p2[k])
            + f64::from(w3) * f64::from(p3[k])
            + f64::from(w4) * f64::from(p4[k]);
        out.push(acc as f32);
    }
    out
}

/// Gradients of one bilinear read.
#[derive(Debug, Clone)]
pub struct BilinearGrads {
    /// `dL/dx` in grid units.
    pub d_x: f32,
    /// `dL/dy` in grid units.
    pub d_y: f32,
    /// Per-neighbor feature gradients `w_k * upstream`, in the P1..P4 order.
    pub neighbor_grads: [Vec<f32>; 4],
}

/// Exact adjoint of [`bilinear_sample`] for one stencil.
pub fn bilinear_backward(
    grid: &FeatureGrid,
    stencil: &BilinearStencil,
    upstream: &[f32],
) -> Result<BilinearGrads, ModelError> {
    let c = grid.channels();
    if upstream.len() != c {
        return Err(ModelError::LengthMismatch {
            what: "bilinear upstream gradient",
            expected: c,
            got: upstream.len(),
        });
    }
    let p1 = grid.patch(stencil.i0, stencil.j0);
    let p2 = grid.patch(stencil.i0, stencil.j0 + 1);
    let p3 = grid.patch(stencil.i0 + 1, stencil.j0);
    let p4 = grid.patch(stencil.i0 + 1, stencil.j0 + 1);
    let dx = f64::from(stencil.dx);
    let dy = f64::from(stencil.dy);

    let (mut d_x, mut d_y) = (0.0f64, 0.0f64);
    for k in 0..c {
        let u = f64::from(upstream[k]);
        let (g1, g2, g3, g4) = (
            f64::from(p1[k]),
            f64::from(p2[k]),
            f64::from(p3[k]),
            f64::from(p4[k]),
        );
        d_x += u * ((1.0 - dy) * (g2 - g1) + dy * (g4 - g3));
        d_y += u * ((1.0 - dx) * (g3 - g1) + dx * (g4 - g2));
    }

    let neighbor = |w: f32| -> Vec<f32> { upstream.iter().map(|u| w * u).collect() };
    let [w1, w2, w3, w4] = stencil.weights;
    Ok(BilinearGrads {
        d_x: d_x as f32,
        d_y: d_y as f32,
        neighbor_grads: [neighbor(w1), neighbor(w2), neighbor(w3), neighbor(w4)],
    })
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> FeatureGrid {
        let mut rng = Rng::new(seed);
        let values: Vec<f32> = (0..h * w * c).map(|_| rng.range_f32(-2.0, 2.0)).collect();
        FeatureGrid::new(h, w, c, values).unwrap()
    }

    // ── mapping ──────────────────────────────────────────────────────────

    #[test]
    fn map_midpoint_of_17_grid() {
        let (mx, my) = map_to_grid(Coord { x: 0.5, y: 0.5 }, 17, 17, 1e-4).unwrap();
        assert_eq!(mx.value, 8.0);
        assert_eq!(my.value, 8.0);
        assert!(!mx.clamped && !my.clamped);
    }

    #[test]
    fn map_clamps_the_far_edge() {
        let p = Coord {
            x: 1.0 - 1e-9,
            y: 0.5,
        };
        let (mx, my) = map_to_grid(p, 16, 16, 1e-4).unwrap();
        // 15 * (1 - 1e-9) rounds to 15.0 in f32, which exceeds 15 - 1e-4.
        assert!((mx.value - 14.9999).abs() < 1e-5);
        assert!(mx.clamped);
        assert!(!my.clamped);
    }

    #[test]
    fn map_plain_interior_point() {
        let (mx, my) = map_to_grid(Coord { x: 0.25, y: 0.75 }, 16, 16, 1e-4).unwrap();
        assert!((mx.value - 3.75).abs() < 1e-6);
        assert!((my.value - 11.25).abs() < 1e-6);
    }

    #[test]
    fn map_rejects_degenerate_grids() {
        assert!(matches!(
            map_to_grid(Coord { x: 0.5, y: 0.5 }, 1, 8, 1e-4),
            Err(ModelError::GridTooSmall { .. })
        ));
    }

    // ── stencil ──────────────────────────────────────────────────────────

    #[test]
    fn stencil_on_grid_point_is_pure() {
        let s = bilinear_stencil(5.0, 3.0, 16, 16).unwrap();
        assert_eq!((s.i0, s.j0), (3, 5));
        assert_eq!(s.weights, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stencil_cell_center_is_uniform() {
        let s = bilinear_stencil(5.5, 3.5, 16, 16).unwrap();
        assert_eq!(s.weights, [0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn stencil_frozen_quarter_case() {
        // dx = 0.25, dy = 0.75 by hand:
        // w1 = 0.75*0.25 = 0.1875, w2 = 0.25*0.25 = 0.0625,
        // w3 = 0.75*0.75 = 0.5625, w4 = 0.25*0.75 = 0.1875.
        let s = bilinear_stencil(2.25, 7.75, 16, 16).unwrap();
        let want = [0.1875, 0.0625, 0.5625, 0.1875];
        for (got, want) in s.weights.iter().zip(want) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn stencil_bounds_are_enforced() {
        assert!(bilinear_stencil(-0.1, 0.0, 8, 8).is_err());
        assert!(bilinear_stencil(0.0, 7.1, 8, 8).is_err());
        // The closed far edge is legal: anchor steps back, offset becomes 1.
        let s = bilinear_stencil(7.0, 7.0, 8, 8).unwrap();
        assert_eq!((s.i0, s.j0), (6, 6));
        assert_eq!(s.weights, [0.0, 0.0, 0.0, 1.0]);
    }

    // ── sampling ─────────────────────────────────────────────────────────

    #[test]
    fn sample_constant_grid_returns_the_constant() {
        let grid = FeatureGrid::constant(8, 8, 3, 1.25);
        let s = bilinear_stencil(3.3, 4.7, 8, 8).unwrap();
        for v in bilinear_sample(&grid, &s) {
            assert!((v - 1.25).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_on_grid_point_is_bit_exact() {
        let grid = random_grid(8, 8, 5, 3);
        let s = bilinear_stencil(4.0, 2.0, 8, 8).unwrap();
        let got = bilinear_sample(&grid, &s);
        let want = grid.get(2, 4).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert_eq!(g.to_bits(), w.to_bits());
        }
    }

    /// Independent oracle: scalar loop over the four neighbors, no shared
    /// code with the implementation.
    fn sample_oracle(grid: &FeatureGrid, x: f64, y: f64) -> Vec<f64> {
        let j0 = (x.floor() as usize).min(grid.width() - 2);
        let i0 = (y.floor() as usize).min(grid.height() - 2);
        let dx = x - j0 as f64;
        let dy = y - i0 as f64;
        let mut out = vec![0.0f64; grid.channels()];
        for (di, dj, w) in [
            (0, 0, (1.0 - dx) * (1.0 - dy)),
            (0, 1, dx * (1.0 - dy)),
            (1, 0, (1.0 - dx) * dy),
            (1, 1, dx * dy),
        ] {
            let patch = grid.get(i0 + di, j0 + dj).unwrap();
            for (o, p) in out.iter_mut().zip(patch) {
                *o += w * f64::from(*p);
            }
        }
        out
    }

    #[test]
    fn sample_matches_scalar_oracle() {
        let grid = random_grid(10, 12, 7, 17);
        let mut rng = Rng::new(18);
        for _ in 0..200 {
            let x = rng.range_f32(0.0, 10.99);
            let y = rng.range_f32(0.0, 8.99);
            let s = bilinear_stencil(x, y, 10, 12).unwrap();
            let got = bilinear_sample(&grid, &s);
            let want = sample_oracle(&grid, f64::from(x), f64::from(y));
            for (g, w) in got.iter().zip(&want) {
                assert!((f64::from(*g) - w).abs() < 1e-6, "{g} vs {w} at ({x},{y})");
            }
        }
    }

    // ── backward ─────────────────────────────────────────────────────────

    #[test]
    fn backward_constant_grid_has_exactly_zero_coord_grads() {
        let grid = FeatureGrid::constant(8, 8, 4, 0.7);
        let s = bilinear_stencil(2.3, 5.8, 8, 8).unwrap();
        let g = bilinear_backward(&grid, &s, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(g.d_x, 0.0);
        assert_eq!(g.d_y, 0.0);
    }

    #[test]
    fn backward_zero_upstream_is_zero_everywhere() {
        let grid = random_grid(8, 8, 4, 5);
        let s = bilinear_stencil(2.3, 5.8, 8, 8).unwrap();
        let g = bilinear_backward(&grid, &s, &[0.0; 4]).unwrap();
        assert_eq!(g.d_x, 0.0);
        assert_eq!(g.d_y, 0.0);
        for n in &g.neighbor_grads {
            assert!(n.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn backward_neighbor_grads_are_weighted_upstream() {
        let grid = random_grid(8, 8, 2, 6);
        let s = bilinear_stencil(2.25, 5.75, 8, 8).unwrap();
        let up = [2.0, -4.0];
        let g = bilinear_backward(&grid, &s, &up).unwrap();
        for (k, n) in g.neighbor_grads.iter().enumerate() {
            for (c, v) in n.iter().enumerate() {
                assert!((v - s.weights[k] * up[c]).abs() < 1e-7);
            }
        }
    }

    /// Independent f64 re-implementation of the interpolated read, used as a
    /// noise-free oracle for finite differences (the production path stores
    /// everything in f32).
    fn oracle_read(grid: &FeatureGrid, x: f64, y: f64) -> Vec<f64> {
        let j0 = (x.floor() as usize).min(grid.width() - 2);
        let i0 = (y.floor() as usize).min(grid.height() - 2);
        let dx = x - j0 as f64;
        let dy = y - i0 as f64;
        let w = [
            (1.0 - dx) * (1.0 - dy),
            dx * (1.0 - dy),
            (1.0 - dx) * dy,
            dx * dy,
        ];
        let cells = [(i0, j0), (i0, j0 + 1), (i0 + 1, j0), (i0 + 1, j0 + 1)];
        let mut out = vec![0.0f64; grid.channels()];
        for (weight, (i, j)) in w.iter().zip(cells) {
            for (o, v) in out.iter_mut().zip(grid.get(i, j).unwrap()) {
                *o += weight * f64::from(*v);
            }
        }
        out
    }

    #[test]
    fn backward_coordinate_grads_match_central_differences() {
        // 200 interior probes; loss = dot(read, probe vector). Probes stay a
        // margin away from cell boundaries so the finite-difference window
        // sits inside one bilinear cell, where the read is smooth; there the
        // f64 oracle makes the central difference exact up to rounding.
        let grid = random_grid(9, 11, 6, 31);
        let mut rng = Rng::new(32);
        let h = 1e-4f64;
        let mut tested = 0;
        while tested < 200 {
            let x = rng.range_f32(0.1, 9.9);
            let y = rng.range_f32(0.1, 7.9);
            if (f64::from(x).fract() - 0.5).abs() > 0.49 - 100.0 * h
                || (f64::from(y).fract() - 0.5).abs() > 0.49 - 100.0 * h
            {
                continue;
            }
            let probe: Vec<f32> = (0..6).map(|_| rng.range_f32(-1.0, 1.0)).collect();
            let loss = |xx: f64, yy: f64| -> f64 {
                oracle_read(&grid, xx, yy)
                    .iter()
                    .zip(&probe)
                    .map(|(a, b)| a * f64::from(*b))
                    .sum()
            };
            let s = bilinear_stencil(x, y, 9, 11).unwrap();
            let g = bilinear_backward(&grid, &s, &probe).unwrap();
            // The oracle also cross-checks the forward read itself.
            let fwd = bilinear_sample(&grid, &s);
            for (a, b) in fwd.iter().zip(oracle_read(&grid, f64::from(x), f64::from(y))) {
                assert!((f64::from(*a) - b).abs() < 1e-5);
            }
            let fd_x = (loss(f64::from(x) + h, f64::from(y)) - loss(f64::from(x) - h, f64::from(y)))
                / (2.0 * h);
            let fd_y = (loss(f64::from(x), f64::from(y) + h) - loss(f64::from(x), f64::from(y) - h))
                / (2.0 * h);
            let check = |analytic: f32, fd: f64, axis: &str| {
                let err = (f64::from(analytic) - fd).abs();
                assert!(
                    err < 1e-4 * fd.abs().max(f64::from(analytic.abs())) + 1e-5,
                    "{axis} at ({x},{y}): analytic {analytic} vs fd {fd}"
                );
            };
            check(g.d_x, fd_x, "x");
            check(g.d_y, fd_y, "y");
            tested += 1;
        }
    }

    // ── property tests ───────────────────────────────────────────────────

    proptest! {
        /// Weights form a convex combination for any offsets in [0, 1].
        #[test]
        fn weights_are_a_simplex(dx in 0.0f32..=1.0, dy in 0.0f32..=1.0) {
            let w = bilinear_weights(dx, dy);
            for v in w {
                prop_assert!(v >= 0.0);
            }
            let sum: f32 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }

        /// Interpolation never escapes the neighbor min/max envelope.
        #[test]
        fn sample_stays_in_neighbor_envelope(
            seed in 0u64..1000,
            x in 0.0f32..6.99,
            y in 0.0f32..4.99,
        ) {
            let grid = random_grid(6, 8, 3, seed);
            let s = bilinear_stencil(x, y, 6, 8).unwrap();
            let got = bilinear_sample(&grid, &s);
            for c in 0..3 {
                let neigh = [
                    grid.get(s.i0, s.j0).unwrap()[c],
                    grid.get(s.i0, s.j0 + 1).unwrap()[c],
                    grid.get(s.i0 + 1, s.j0).unwrap()[c],
                    grid.get(s.i0 + 1, s.j0 + 1).unwrap()[c],
                ];
                let lo = neigh.iter().cloned().fold(f32::INFINITY, f32::min);
                let hi = neigh.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(got[c] >= lo - 1e-5 && got[c] <= hi + 1e-5,
                    "channel {} value {} outside [{}, {}]", c, got[c], lo, hi);
            }
        }

        /// Swapping dx and dy while transposing the neighborhood leaves the
        /// sampled value unchanged.
        #[test]
        fn transpose_symmetry(seed in 0u64..1000, x in 0.0f32..=6.0, y in 0.0f32..=6.0) {
            let grid = random_grid(7, 7, 2, seed);
            // Transposed grid: value at (i, j) becomes value at (j, i).
            let mut tvalues = vec![0.0f32; 7 * 7 * 2];
            for i in 0..7 {
                for j in 0..7 {
                    for c in 0..2 {
                        tvalues[(j * 7 + i) * 2 + c] = grid.get(i, j).unwrap()[c];
                    }
                }
            }
            let tgrid = FeatureGrid::new(7, 7, 2, tvalues).unwrap();
            let a = bilinear_sample(&grid, &bilinear_stencil(x, y, 7, 7).unwrap());
            let b = bilinear_sample(&tgrid, &bilinear_stencil(y, x, 7, 7).unwrap());
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-6);
            }
        }

        /// A small coordinate step moves the sample by at most the neighbor
        /// spread times the step (local Lipschitz bound, factor 2 slack).
        #[test]
        fn small_steps_are_continuous(seed in 0u64..500, x in 0.1f32..6.8, y in 0.1f32..4.8) {
            let grid = random_grid(6, 8, 3, seed);
            let step = 1e-5f32;
            let s0 = bilinear_stencil(x, y, 6, 8).unwrap();
            let s1 = bilinear_stencil(x + step, y, 6, 8).unwrap();
            let a = bilinear_sample(&grid, &s0);
            let b = bilinear_sample(&grid, &s1);
            for c in 0..3 {
                let mut spread = 0.0f32;
                for s in [&s0, &s1] {
                    let vals = [
                        grid.get(s.i0, s.j0).unwrap()[c],
                        grid.get(s.i0, s.j0 + 1).unwrap()[c],
                        grid.get(s.i0 + 1, s.j0).unwrap()[c],
                        grid.get(s.i0 + 1, s.j0 + 1).unwrap()[c],
                    ];
                    let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
                    let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    spread = spread.max(hi - lo);
                }
                prop_assert!((a[c] - b[c]).abs() <= spread * step * 2.0 + 1e-6);
            }
        }
    }
}
