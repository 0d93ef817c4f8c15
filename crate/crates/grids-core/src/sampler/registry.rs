//! Name-keyed strategy registry.
//!
//! Config files and CLI flags refer to strategies by these names; the
//! registry is the single place that maps a name to a constructor, so adding
//! a strategy means adding one row here.

use crate::error::ModelError;
use super::{
    DenseStrategy, GridStrategy, NearestStrategy, RandomStrategy, SamplerConfig, TokenSampler,
    TopKStrategy,
};

type Factory = fn(SamplerConfig) -> Box<dyn TokenSampler>;

fn make_dense(cfg: SamplerConfig) -> Box<dyn TokenSampler> {
    Box::new(DenseStrategy::new(cfg))
}

fn make_grids(cfg: SamplerConfig) -> Box<dyn TokenSampler> {
    Box::new(GridStrategy::new(cfg))
}

fn make_nearest(cfg: SamplerConfig) -> Box<dyn TokenSampler> {
    Box::new(NearestStrategy::new(cfg))
}

fn make_random(cfg: SamplerConfig) -> Box<dyn TokenSampler> {
    Box::new(RandomStrategy::new(cfg))
}

fn make_topk(cfg: SamplerConfig) -> Box<dyn TokenSampler> {
    Box::new(TopKStrategy::new(cfg))
}

/// Registered strategies, alphabetical by name.
const STRATEGIES: &[(&str, Factory)] = &[
    ("dense", make_dense),
    ("grids", make_grids),
    ("nearest", make_nearest),
    ("random", make_random),
    ("topk", make_topk),
];

/// All registered names, in registry order.
pub fn names() -> Vec<&'static str> {
    STRATEGIES.iter().map(|(n, _)| *n).collect()
}

/// Instantiates the strategy registered under `name`.
pub fn create(name: &str, cfg: SamplerConfig) -> Result<Box<dyn TokenSampler>, ModelError> {
    for (register_name, factory) in STRATEGIES {
        if *register_name == name {
            return Ok(factory(cfg));
        }
    }
    Err(ModelError::UnknownStrategy { name: name.into() })
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
