//! End-to-end training on the synthetic hotspot task.
//!
//! One run wires a sampling strategy, the attention policy, and Adam into a
//! simple batched loop. Reproducibility is strict: a single seed fans out
//! into labeled sub-streams (`init`, `task-setup`, `data`, `sampler`,
//! `heldout`), so two runs with the same seed are bit-identical, and runs
//! that differ *only* in strategy still see identical parameter init, task
//! directions, and per-step data - the ablation isolates the sampling rule
//! and nothing else.
//!
//! Per step: draw `batch_size` samples, average the policy's label loss,
//! route the gradient back through the policy and the active sampler, then
//! one Adam update. Each step records the batch loss and the mean (over the
//! batch) of the minimum normalized distance from any sample coordinate to
//! the hotspot - the most direct probe of "did the sampler look at the
//! right place". Final metrics average the last tenth of the run to damp
//! batch noise.

pub mod adam;
pub mod checkpoint;
pub mod task;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{checkpoint_bytes, fnv1a, load_checkpoint, save_checkpoint};
pub use task::{HotspotTask, HotspotTaskConfig, TaskSample};

use crate::error::TrainError;
use crate::params::ParameterStore;
use crate::policy::{
    attention_forward, head_and_loss, init_policy_params, policy_backward, PolicyConfig,
};
use crate::rng::Rng;
use crate::sampler::{init_sampler_params, registry, CoordinateSet, SamplerConfig};

/// Full specification of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// CSV logging cadence; every step is kept in memory regardless.
    pub log_every: usize,
    pub seed: u64,
    /// Registry name of the sampling strategy.
    pub strategy: String,
    pub optimizer: AdamConfig,
    pub sampler: SamplerConfig,
    pub policy: PolicyConfig,
    pub task: HotspotTaskConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            log_every: 50,
            seed: 42,
            strategy: "grids".to_string(),
            // The toy-task learning rate; AdamConfig's own default keeps the
            // textbook 1e-3 for standalone optimizer use.
            optimizer: AdamConfig {
                learning_rate: 3e-4,
                ..AdamConfig::default()
            },
            sampler: SamplerConfig::default(),
            policy: PolicyConfig::default(),
            task: HotspotTaskConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), crate::error::ModelError> {
        if self.batch_size == 0 {
            return Err(crate::error::ModelError::InvalidConfig {
                what: "batch_size must be at least 1".into(),
            });
        }
        if self.log_every == 0 {
            return Err(crate::error::ModelError::InvalidConfig {
                what: "log_every must be at least 1".into(),
            });
        }
        self.sampler.validate()?;
        self.policy.validate()?;
        self.task.validate()?;
        Ok(())
    }
}

/// One training step's scalar summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Batch-mean policy loss.
    pub loss: f64,
    /// Batch-mean of `min_k |coord_k - hotspot|` in normalized units.
    pub coord_dist: f64,
    /// Tokens per sample this step.
    pub tokens: usize,
}

/// Complete per-step history of one run plus CSV rendering.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub strategy: String,
    pub records: Vec<StepRecord>,
    pub log_every: usize,
}

impl RunLog {
    /// The last tenth of the records (at least one when any exist) used for
    /// final metrics.
    fn window(&self) -> &[StepRecord] {
        if self.records.is_empty() {
            return &[];
        }
        let n = (self.records.len() / 10).max(1);
        &self.records[self.records.len() - n..]
    }

    /// Mean loss over the final window; `NaN` for an empty run.
    pub fn final_loss(&self) -> f64 {
        let w = self.window();
        if w.is_empty() {
            return f64::NAN;
        }
        w.iter().map(|r| r.loss).sum::<f64>() / w.len() as f64
    }

    /// Mean coordinate distance over the final window; `NaN` for an empty
    /// run.
    pub fn final_coord_dist(&self) -> f64 {
        let w = self.window();
        if w.is_empty() {
            return f64::NAN;
        }
        w.iter().map(|r| r.coord_dist).sum::<f64>() / w.len() as f64
    }

    /// CSV with header `step,loss,coord_dist,tokens,strategy`, keeping step
    /// 0, every `log_every`-th step, and the final step.
    pub fn csv(&self) -> String {
        let mut out = String::from("step,loss,coord_dist,tokens,strategy\n");
        let last = self.records.len().saturating_sub(1);
        for (idx, r) in self.records.iter().enumerate() {
            if idx % self.log_every == 0 || idx == last {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{},{}\n",
                    r.step, r.loss, r.coord_dist, r.tokens, self.strategy
                ));
            }
        }
        out
    }
}

/// Everything a finished run hands back: history, trained parameters, and
/// the task instance (for held-out evaluation).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub params: ParameterStore,
    pub task: HotspotTask,
}

/// Minimum normalized euclidean distance from any coordinate to the target
/// point.
pub fn min_coord_distance(coords: &CoordinateSet, target: (f32, f32)) -> f64 {
    coords
        .coords
        .iter()
        .map(|c| {
            let dx = f64::from(c.x) - f64::from(target.0);
            let dy = f64::from(c.y) - f64::from(target.1);
            (dx * dx + dy * dy).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// The held-out data stream for a seed: disjoint from everything `train`
/// consumes, so post-training evaluation never reuses training samples.
pub fn heldout_stream(seed: u64) -> Rng {
    Rng::new(seed).derive("heldout")
}

/// Runs one full training loop.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut init_rng = root.derive("init");
    let mut setup_rng = root.derive("task-setup");
    let mut data_rng = root.derive("data");
    let mut sampler_rng = root.derive("sampler");

    // Identical parameter draws for every strategy: both init blocks run
    // unconditionally, in fixed order, from the dedicated stream.
    let mut params = ParameterStore::new();
    init_sampler_params(&mut params, cfg.task.channels, &cfg.sampler, &mut init_rng)?;
    init_policy_params(&mut params, cfg.task.channels, &cfg.policy, &mut init_rng)?;

    let task = HotspotTask::new(cfg.task.clone(), &mut setup_rng)?;
    let strategy = registry::create(&cfg.strategy, cfg.sampler.clone())?;
    let mut adam = Adam::new(cfg.optimizer.clone());

    let mut records = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / cfg.batch_size as f32;
    for step in 0..cfg.steps {
        params.zero_grads();
        let mut loss_sum = 0.0f64;
        let mut dist_sum = 0.0f64;
        let mut tokens = 0usize;
        for _ in 0..cfg.batch_size {
            let sample = task.gen_task(&mut data_rng)?;
            let run = strategy.sample(&sample.grid, &params, &mut sampler_rng)?;
            let trace = attention_forward(
                &run.tokens.tokens,
                run.tokens.channels,
                &params,
                &cfg.policy,
            )?;
            let head = head_and_loss(&trace, &params, sample.label)?;
            loss_sum += f64::from(head.loss);
            dist_sum += min_coord_distance(&run.tokens.coords, sample.hotspot);
            tokens = run.tokens.num_tokens;
            let d_tokens = policy_backward(&trace, &head, sample.label, scale, &mut params)?;
            strategy.backward(&sample.grid, &run.tape, &d_tokens, &mut params)?;
        }
        let loss = loss_sum / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        records.push(StepRecord {
            step,
            loss,
            coord_dist: dist_sum / cfg.batch_size as f64,
            tokens,
        });
        adam.step(&mut params, step)?;
    }

    Ok(TrainOutcome {
        log: RunLog {
            strategy: cfg.strategy.clone(),
            records,
            log_every: cfg.log_every,
        },
        params,
        task,
    })
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
