//! Differentiable grid-sample token pruning, end to end and at desk scale.
//!
//! A dense `H x W x C` feature grid is reduced to `K` tokens by one of five
//! interchangeable sampling strategies (see [`sampler::registry`]). The
//! flagship strategy predicts `K` continuous coordinates from a pooled
//! context vector and reads the grid with bilinear interpolation, so the
//! coordinates themselves receive exact analytic gradients from the
//! downstream task loss. A single-head attention policy regresses a 2-D
//! target from the sampled tokens; [`trainer`] wires the whole pipeline to
//! Adam on a synthetic hotspot-localization task, and [`analysis`] measures
//! information retention, token redundancy, and a parametric FLOPs budget.
//!
//! Numeric conventions used throughout the crate:
//!
//! * values are stored as `f32`; dot products and other reductions
//!   accumulate in `f64` and round once on output;
//! * grids are row-major: channel `c` of patch `(i, j)` lives at
//!   `(i * width + j) * channels + c`;
//! * normalized coordinates `(x, y)` live in `[0, 1]^2` with `x` along
//!   columns and `y` along rows, and map to grid coordinates via the
//!   align-corners convention `x_grid = x * (width - 1)`.
//!
//! Everything is deterministic given a seed: the only randomness source is
//! [`rng::Rng`], a documented xorshift64* generator.

pub mod analysis;
pub mod error;
pub mod export;
pub mod grid;
pub mod params;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{ModelError, PersistError, TrainError};
pub use grid::{ContextVector, FeatureGrid};
pub use params::ParameterStore;
pub use rng::Rng;
