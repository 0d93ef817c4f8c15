//! Synthetic hotspot-localization task.
//!
//! Each sample is a feature grid with one hotspot at a continuous location
//! and a per-sample *label payload* - the regression answer - written into
//! the grid only inside a Gaussian halo around that hotspot. The rest of the
//! grid is deliberately redundant: a low-rank background (shared per run)
//! whose smoothly-varying mixing coefficients are noisy copies of a *global
//! code* that encodes where the hotspot is, plus isotropic noise, plus
//! broadband clutter that is loud everywhere except near the hotspot. The
//! division of labor is deliberate:
//!
//! * the pooled context averages out the per-patch noise and recovers the
//!   code, so a learned coordinate predictor can steer samples toward the
//!   hotspot - pooling says *where* to look but carries almost nothing of
//!   the answer itself (the payload's pooled trace drowns in clutter);
//! * the answer lives only near the hotspot: two dedicated channel
//!   directions hold the centered label, attenuated by the halo Gaussian,
//!   next to a splat and a halo beacon of signal energy. A read close to
//!   the hotspot returns the label nearly verbatim; a read far away returns
//!   loud per-sample garbage that no static arrangement of reads can
//!   average out. Precision of aim converts directly into precision of
//!   prediction - the pressure that drags sampling coordinates onto the
//!   hotspot;
//! * the background being low-rank and smooth means dense token sets are
//!   highly self-similar - exactly the redundancy pruning should remove -
//!   while the hotspot itself shimmers with feature-rich texture, so a
//!   small token set aimed there is *less* mutually redundant than the
//!   dense blanket of near-duplicate background patches.
//!
//! One generator draw order is fixed forever (mixing fields pattern-major
//! with patches row-major inside each, then element noise row-major, then
//! clutter one draw per channel patch-major channel-minor, then shimmer in
//! the same order; the splat and halo draw nothing), so a seed pins every
//! sample bit for bit.

use crate::error::ModelError;
use crate::grid::{ContextVector, FeatureGrid};
use crate::rng::Rng;
use crate::sampler::{bilinear_stencil, map_to_grid, Coord};

/// Shape and strength parameters for the synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotTaskConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Standard deviation of the isotropic per-element noise.
    pub noise_std: f32,
    /// Magnitude of the signal splat at the target location.
    pub signal_amp: f32,
    /// Number of shared background patterns (the background rank).
    pub redundancy_rank: usize,
    /// Strength of the hotspot-location code carried by the background
    /// mixing coefficients; the first two patterns encode `x` and `y`.
    pub code_gain: f32,
    /// Peak amplitude of the Gaussian signal halo around the hotspot
    /// (0 disables it, leaving only the single-cell splat).
    pub halo_amp: f32,
    /// Halo radius in patch units (standard deviation of the Gaussian).
    pub halo_sigma: f32,
    /// Peak amplitude of the halo's content channels: two dedicated
    /// directions that carry the centered label payload, attenuated by the
    /// same Gaussian. 0 disables the content payload.
    pub halo_code: f32,
    /// Amplitude of per-patch broadband clutter, which fades as the halo
    /// rises. The clutter spans every channel direction orthogonal to the
    /// background patterns (so pooling still recovers the global code
    /// exactly), making any local read far from the target noisy on all the
    /// channels that matter. 0 disables the clutter.
    pub halo_clutter: f32,
    /// Amplitude of the hotspot's own texture: per-patch noise confined to
    /// channel directions orthogonal to the patterns, the signal direction,
    /// and the content directions, concentrated at the hotspot by the same
    /// Gaussian. It makes the interesting region feature-rich (tokens read
    /// there are mutually diverse) without perturbing the label payload or
    /// the pooled code. 0 disables it.
    pub halo_shimmer: f32,
}

impl Default for HotspotTaskConfig {
    fn default() -> Self {
        HotspotTaskConfig {
            height: 16,
            width: 16,
            channels: 32,
            noise_std: 0.1,
            signal_amp: 1.0,
            redundancy_rank: 2,
            code_gain: 40.0,
            halo_amp: 1.0,
            halo_sigma: 1.5,
            halo_code: 48.0,
            halo_clutter: 4.0,
            halo_shimmer: 8.0,
        }
    }
}

impl HotspotTaskConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.height < 2 || self.width < 2 {
            return Err(ModelError::GridTooSmall {
                height: self.height,
                width: self.width,
            });
        }
        if self.channels < 2 {
            return Err(ModelError::InvalidConfig {
                what: format!("channels {} too small; need at least 2", self.channels),
            });
        }
        // One signal direction, `rank` patterns, and two content directions
        // must fit as mutually orthogonal channel-space vectors.
        if self.redundancy_rank + 3 > self.channels {
            return Err(ModelError::InvalidConfig {
                what: format!(
                    "redundancy_rank {} needs channels >= rank + 3 (got {})",
                    self.redundancy_rank, self.channels
                ),
            });
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(ModelError::InvalidConfig {
                what: format!("noise_std {} must be finite and >= 0", self.noise_std),
            });
        }
        if !self.signal_amp.is_finite() || !self.code_gain.is_finite() {
            return Err(ModelError::InvalidConfig {
                what: "signal_amp and code_gain must be finite".into(),
            });
        }
        if !self.halo_amp.is_finite() || self.halo_amp < 0.0 {
            return Err(ModelError::InvalidConfig {
                what: format!("halo_amp {} must be finite and >= 0", self.halo_amp),
            });
        }
        if !self.halo_sigma.is_finite() || self.halo_sigma <= 0.0 {
            return Err(ModelError::InvalidConfig {
                what: format!("halo_sigma {} must be finite and > 0", self.halo_sigma),
            });
        }
        if !self.halo_code.is_finite() || self.halo_code < 0.0 {
            return Err(ModelError::InvalidConfig {
                what: format!("halo_code {} must be finite and >= 0", self.halo_code),
            });
        }
        if !self.halo_clutter.is_finite() || self.halo_clutter < 0.0 {
            return Err(ModelError::InvalidConfig {
                what: format!("halo_clutter {} must be finite and >= 0", self.halo_clutter),
            });
        }
        if !self.halo_shimmer.is_finite() || self.halo_shimmer < 0.0 {
            return Err(ModelError::InvalidConfig {
                what: format!("halo_shimmer {} must be finite and >= 0", self.halo_shimmer),
            });
        }
        Ok(())
    }
}

/// A task instance: fixed directions, per-sample grids.
#[derive(Debug, Clone)]
pub struct HotspotTask {
    cfg: HotspotTaskConfig,
    /// Unit vector along which the splat is injected.
    signal_dir: Vec<f32>,
    /// Orthonormal background patterns, each orthogonal to `signal_dir`.
    patterns: Vec<Vec<f32>>,
    /// Two unit vectors (orthogonal to everything above) carrying the halo's
    /// content payload: the centered label, x on the first, y on the second.
    content_dirs: [Vec<f32>; 2],
}

/// One generated sample: the grid, where its hotspot sits, and the label the
/// policy must regress. The label is recoverable only near the hotspot.
#[derive(Debug, Clone)]
pub struct TaskSample {
    pub grid: FeatureGrid,
    /// Continuous hotspot location in `[0, 1]^2` (what coordinates should
    /// find; encoded globally by the background code).
    pub hotspot: (f32, f32),
    /// Regression answer in `[0.1, 0.9]^2`, written only into the halo's
    /// content channels.
    pub label: (f32, f32),
}

/// Separable Gaussian blur over the patch lattice (each channel on its own),
/// with per-position variance renormalization so a unit-variance white field
/// stays unit-variance per patch while gaining spatial correlation. The
/// kernel has standard deviation 3 patches, radius 6.
fn blur_field(field: &mut [f64], h: usize, w: usize, c: usize) {
    const RADIUS: isize = 6;
    let kernel: Vec<f64> = (-RADIUS..=RADIUS)
        .map(|o| (-((o * o) as f64) / 18.0).exp())
        .collect();
    // One axis at a time: `n` lines of `len` positions at `stride`.
    let pass = |n: usize, stride_outer: usize, len: usize, stride: usize,
                field: &mut [f64]| {
        let mut sq = vec![0.0f64; len];
        for (pos, s) in sq.iter_mut().enumerate() {
            for (o, k) in kernel.iter().enumerate() {
                let q = pos as isize + o as isize - RADIUS;
                if q >= 0 && (q as usize) < len {
                    *s += k * k;
                }
            }
        }
        let mut line = vec![0.0f64; len];
        for outer in 0..n {
            for ch in 0..c {
                for (pos, l) in line.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for (o, k) in kernel.iter().enumerate() {
                        let q = pos as isize + o as isize - RADIUS;
                        if q >= 0 && (q as usize) < len {
                            acc += k * field[outer * stride_outer + q as usize * stride + ch];
                        }
                    }
                    *l = acc / sq[pos].sqrt();
                }
                for (pos, l) in line.iter().enumerate() {
                    field[outer * stride_outer + pos * stride + ch] = *l;
                }
            }
        }
    };
    // Along x (rows fixed), then along y (columns fixed). Each pass sees
    // white statistics along its own axis, so the renormalization is exact.
    pass(h, w * c, w, c, field);
    pass(w, c, h, w * c, field);
}

/// Draws a unit vector orthogonal to all of `against` via Gram-Schmidt,
/// redrawing in the (measure-zero) degenerate case.
fn orthonormal_draw(rng: &mut Rng, channels: usize, against: &[&[f32]]) -> Vec<f32> {
    loop {
        let mut v: Vec<f64> =
            (0..channels).map(|_| f64::from(rng.next_gaussian())).collect();
        for basis in against {
            let dot: f64 = v
                .iter()
                .zip(basis.iter())
                .map(|(a, b)| a * f64::from(*b))
                .sum();
            for (a, b) in v.iter_mut().zip(basis.iter()) {
                *a -= dot * f64::from(*b);
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|a| (a / norm) as f32).collect();
        }
    }
}

impl HotspotTask {
    /// Fixes the run-level directions from `rng` (one-time setup).
    pub fn new(cfg: HotspotTaskConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let signal_dir = orthonormal_draw(rng, cfg.channels, &[]);
        let mut patterns: Vec<Vec<f32>> = Vec::with_capacity(cfg.redundancy_rank);
        for _ in 0..cfg.redundancy_rank {
            let mut against: Vec<&[f32]> = vec![&signal_dir];
            against.extend(patterns.iter().map(|p| p.as_slice()));
            patterns.push(orthonormal_draw(rng, cfg.channels, &against));
        }
        let mut against: Vec<&[f32]> = vec![&signal_dir];
        against.extend(patterns.iter().map(|p| p.as_slice()));
        let content_x = orthonormal_draw(rng, cfg.channels, &against);
        against.push(&content_x);
        let content_y = orthonormal_draw(rng, cfg.channels, &against);
        Ok(HotspotTask {
            cfg,
            signal_dir,
            patterns,
            content_dirs: [content_x, content_y],
        })
    }

    pub fn config(&self) -> &HotspotTaskConfig {
        &self.cfg
    }

    pub fn signal_dir(&self) -> &[f32] {
        &self.signal_dir
    }

    pub fn patterns(&self) -> &[Vec<f32>] {
        &self.patterns
    }

    pub fn content_dirs(&self) -> [&[f32]; 2] {
        [&self.content_dirs[0], &self.content_dirs[1]]
    }

    /// The global code carried by pattern `r` for a given target: the first
    /// two patterns encode centered `x` and `y`, the rest carry nothing.
    fn code(&self, r: usize, target: (f32, f32)) -> f64 {
        let gain = f64::from(self.cfg.code_gain);
        match r {
            0 => (f64::from(target.0) - 0.5) * gain,
            1 => (f64::from(target.1) - 0.5) * gain,
            _ => 0.0,
        }
    }

    /// Generates one grid for a fixed hotspot in `[0, 1]^2` and a fixed
    /// label payload.
    pub fn gen_task_at(
        &self,
        target: (f32, f32),
        label: (f32, f32),
        rng: &mut Rng,
    ) -> Result<FeatureGrid, ModelError> {
        let (h, w, c) = (self.cfg.height, self.cfg.width, self.cfg.channels);
        let mut values = vec![0.0f64; h * w * c];

        // Background: each pattern's mixing coefficient is the global code
        // plus a smooth unit-variance field - neighboring patches get
        // near-identical mixtures, which is what makes a dense read of the
        // background so self-similar.
        for (r, pattern) in self.patterns.iter().enumerate() {
            let mut mix = vec![0.0f64; h * w];
            for m in mix.iter_mut() {
                *m = f64::from(rng.next_gaussian());
            }
            blur_field(&mut mix, h, w, 1);
            let code = self.code(r, target);
            for (patch, m) in mix.iter().enumerate() {
                let alpha = code + m;
                let base = patch * c;
                for (ch, p) in pattern.iter().enumerate() {
                    values[base + ch] += alpha * f64::from(*p);
                }
            }
        }

        // Isotropic element noise.
        if self.cfg.noise_std > 0.0 {
            let std = f64::from(self.cfg.noise_std);
            for v in values.iter_mut() {
                *v += f64::from(rng.next_gaussian()) * std;
            }
        }

        // Signal splat: bilinear footprint at the target location.
        let coord = Coord {
            x: target.0,
            y: target.1,
        };
        let (ax, ay) = map_to_grid(coord, h, w, 1e-4)?;
        let stencil = bilinear_stencil(ax.value, ay.value, h, w)?;
        let cells = [
            (stencil.i0, stencil.j0),
            (stencil.i0, stencil.j0 + 1),
            (stencil.i0 + 1, stencil.j0),
            (stencil.i0 + 1, stencil.j0 + 1),
        ];
        let amp = f64::from(self.cfg.signal_amp);
        for ((i, j), weight) in cells.iter().zip(stencil.weights) {
            let base = (i * w + j) * c;
            for (ch, s) in self.signal_dir.iter().enumerate() {
                values[base + ch] += amp * f64::from(weight) * f64::from(*s);
            }
        }

        // Halo: a smooth Gaussian bump centered on the hotspot. It stacks
        // the beacon (signal energy an interpolated read can climb) with the
        // content payload (the centered label on two dedicated channels),
        // both attenuated by the same Gaussian - so a read close to the
        // hotspot returns the answer nearly verbatim, and nothing else in
        // the grid knows the answer at all.
        let sigma = f64::from(self.cfg.halo_sigma);
        let (tx, ty) = (f64::from(ax.value), f64::from(ay.value));
        let gauss = |i: usize, j: usize| -> f64 {
            let d2 = (j as f64 - tx).powi(2) + (i as f64 - ty).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        };
        if self.cfg.halo_amp > 0.0 || self.cfg.halo_code > 0.0 {
            let beacon = f64::from(self.cfg.halo_amp);
            let payload_x = f64::from(self.cfg.halo_code) * (f64::from(label.0) - 0.5);
            let payload_y = f64::from(self.cfg.halo_code) * (f64::from(label.1) - 0.5);
            let mut bump = vec![0.0f64; c];
            for (b, s) in bump.iter_mut().zip(&self.signal_dir) {
                *b += beacon * f64::from(*s);
            }
            for (b, s) in bump.iter_mut().zip(&self.content_dirs[0]) {
                *b += payload_x * f64::from(*s);
            }
            for (b, s) in bump.iter_mut().zip(&self.content_dirs[1]) {
                *b += payload_y * f64::from(*s);
            }
            for i in 0..h {
                for j in 0..w {
                    let g = gauss(i, j);
                    let base = (i * w + j) * c;
                    for (ch, b) in bump.iter().enumerate() {
                        values[base + ch] += g * b;
                    }
                }
            }
        }

        // Broadband clutter: away from the hotspot every patch carries loud
        // garbage that fades exactly as the halo rises. The garbage spans
        // all channel directions orthogonal to the background patterns, so
        // pooling still recovers the global code exactly, but any local
        // read far from the hotspot is actively misleading on every channel
        // a policy might use - and because it is fresh noise each sample,
        // no static arrangement of reads can average or invert it away.
        // A smoothing pass correlates neighboring patches, so close reads
        // cannot cancel it either. Sampling near the hotspot is the only
        // place the grid is quiet.
        if self.cfg.halo_clutter > 0.0 {
            let amp = f64::from(self.cfg.halo_clutter);
            // Per-patch draws, projected off the pattern subspace (patterns
            // are orthonormal, so plain dot-and-subtract suffices).
            let mut field = vec![0.0f64; h * w * c];
            for patch in 0..h * w {
                let eta = &mut field[patch * c..(patch + 1) * c];
                for e in eta.iter_mut() {
                    *e = f64::from(rng.next_gaussian());
                }
                for pattern in &self.patterns {
                    let dot: f64 = eta
                        .iter()
                        .zip(pattern.iter())
                        .map(|(a, b)| a * f64::from(*b))
                        .sum();
                    for (a, b) in eta.iter_mut().zip(pattern.iter()) {
                        *a -= dot * f64::from(*b);
                    }
                }
            }
            // Spatial smoothing (so neither close nor far read pairs can
            // cancel it), then the 1 - G envelope around both sites.
            blur_field(&mut field, h, w, c);
            for i in 0..h {
                for j in 0..w {
                    let quiet = amp * (1.0 - gauss(i, j));
                    let base = (i * w + j) * c;
                    for ch in 0..c {
                        values[base + ch] += quiet * field[base + ch];
                    }
                }
            }
        }

        // Shimmer: the hotspot's own texture. Fresh per-patch noise, kept
        // orthogonal to the patterns, the signal direction, and both content
        // directions, rising with the same Gaussian the clutter fades by.
        // The interesting region is feature-rich: reads taken there differ
        // from each other, while the label payload (on the content
        // directions) and the pooled code (on the patterns) stay untouched.
        if self.cfg.halo_shimmer > 0.0 {
            let amp = f64::from(self.cfg.halo_shimmer);
            let mut against: Vec<&[f32]> = vec![&self.signal_dir];
            against.extend(self.patterns.iter().map(|p| p.as_slice()));
            against.push(&self.content_dirs[0]);
            against.push(&self.content_dirs[1]);
            let mut eta = vec![0.0f64; c];
            for i in 0..h {
                for j in 0..w {
                    for e in eta.iter_mut() {
                        *e = f64::from(rng.next_gaussian());
                    }
                    for basis in &against {
                        let dot: f64 = eta
                            .iter()
                            .zip(basis.iter())
                            .map(|(a, b)| a * f64::from(*b))
                            .sum();
                        for (a, b) in eta.iter_mut().zip(basis.iter()) {
                            *a -= dot * f64::from(*b);
                        }
                    }
                    let g = gauss(i, j);
                    let base = (i * w + j) * c;
                    for (ch, e) in eta.iter().enumerate() {
                        values[base + ch] += amp * g * e;
                    }
                }
            }
        }

        FeatureGrid::new(h, w, c, values.iter().map(|v| *v as f32).collect())
    }

    /// Generates one sample: uniform hotspot in `[0.1, 0.9]^2`, an
    /// independent uniform label in the same square, then the grid.
    pub fn gen_task(&self, rng: &mut Rng) -> Result<TaskSample, ModelError> {
        let hotspot = (rng.range_f32(0.1, 0.9), rng.range_f32(0.1, 0.9));
        let label = (rng.range_f32(0.1, 0.9), rng.range_f32(0.1, 0.9));
        let grid = self.gen_task_at(hotspot, label, rng)?;
        Ok(TaskSample {
            grid,
            hotspot,
            label,
        })
    }

    /// Reads the hotspot estimate carried by a pooled context: projects onto
    /// the first two patterns and inverts the code. Exposes how much
    /// location information survives pooling - useful as a diagnostic
    /// ceiling for what a context-driven coordinate predictor can achieve.
    pub fn decode_target(&self, context: &ContextVector) -> (f32, f32) {
        let gain = f64::from(self.cfg.code_gain);
        let project = |r: usize| -> f64 {
            if r >= self.patterns.len() || gain == 0.0 {
                return 0.5;
            }
            let dot: f64 = context
                .values()
                .iter()
                .zip(&self.patterns[r])
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum();
            (dot / gain + 0.5).clamp(0.0, 1.0)
        };
        (project(0) as f32, project(1) as f32)
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
