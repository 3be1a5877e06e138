use serde::{Deserialize, Serialize};

use super::{Block, CountingBlock, IntegratorKind, Schedule, StepContext, StepSize};
use crate::diffcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// How depth is realized from blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    /// `h <- F_i(h)` with K distinct blocks.
    Base,
    /// `h <- LayerNorm(h + F_i(h))` with K distinct blocks.
    Classic,
    /// `h <- 0.5 h + 0.5 F_i(h)` with K distinct blocks.
    Skip05,
    /// Shared block, integrator step with the scheduled `dt`.
    #[default]
    Score,
    /// Shared block, integrator step with `dt = 0.5`.
    ScoreSkip05,
}

impl Wiring {
    pub const ALL: [Wiring; 5] = [Self::Base, Self::Classic, Self::Skip05, Self::Score, Self::ScoreSkip05];

    pub fn is_shared(self) -> bool {
        matches!(self, Self::Score | Self::ScoreSkip05)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Classic => "classic",
            Self::Skip05 => "skip05",
            Self::Score => "score",
            Self::ScoreSkip05 => "score_skip05",
        }
    }
}

/// Everything that determines how depth is realized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthConfig {
    pub wiring: Wiring,
    /// Number of steps `K`.
    pub steps: usize,
    #[serde(default)]
    pub integrator: IntegratorKind,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            wiring: Wiring::Score,
            steps: 4,
            integrator: IntegratorKind::Euler,
            schedule: Schedule::InverseK,
        }
    }
}

impl DepthConfig {
    pub fn new(wiring: Wiring, steps: usize, integrator: IntegratorKind, schedule: Schedule) -> Result<Self> {
        let cfg = Self {
            wiring,
            steps,
            integrator,
            schedule,
        }
        .normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Skip05 variants always run with `dt = 0.5`.
    pub fn normalized(mut self) -> Self {
        if matches!(self.wiring, Wiring::Skip05 | Wiring::ScoreSkip05) {
            self.schedule = Schedule::HALF;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("depth.steps must be at least 1".into()));
        }
        if let Schedule::Fixed { value } = self.schedule {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("depth.schedule.value {value} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Number of distinct blocks this wiring needs.
    pub fn block_count(&self) -> usize {
        if self.wiring.is_shared() {
            1
        } else {
            self.steps
        }
    }

    /// Block evaluations for one pass through the stack.
    pub fn evaluations(&self) -> usize {
        if self.wiring.is_shared() {
            self.steps * self.integrator.evaluations()
        } else {
            self.steps
        }
    }

    /// Nominal `dt` (learnable schedules report their initial value).
    pub fn dt(&self) -> f64 {
        self.schedule.value(self.steps, None)
    }
}

/// States `h_0 ... h_K` of one pass.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Var>,
    pub dt_used: Vec<f64>,
    /// Block evaluations performed.
    pub evaluations: usize,
}

impl Trajectory {
    pub fn last(&self) -> Var {
        *self.states.last().expect("trajectory holds h_0")
    }
}

/// Blocks plus the auxiliary parameters one wiring needs.
#[derive(Clone, Debug)]
pub struct DepthStack<B> {
    config: DepthConfig,
    blocks: Vec<B>,
    /// `(gain, bias)` per step, classic wiring only.
    norms: Vec<(ParamId, ParamId)>,
    alpha: Option<ParamId>,
}

impl<B: Block> DepthStack<B> {
    /// Assembles a stack from pre-built parts, checking their counts
    /// against the wiring.
    pub fn new(config: DepthConfig, blocks: Vec<B>, norms: Vec<(ParamId, ParamId)>, alpha: Option<ParamId>) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let need = config.block_count();
        if blocks.len() != need {
            return Err(invalid(
                "depth_stack",
                format!("{} wiring with K = {} needs {need} block(s), got {}", config.wiring.name(), config.steps, blocks.len()),
            ));
        }
        let need_norms = if config.wiring == Wiring::Classic { config.steps } else { 0 };
        if norms.len() != need_norms {
            return Err(invalid("depth_stack", format!("expected {need_norms} layer norms, got {}", norms.len())));
        }
        let need_alpha = config.wiring == Wiring::Score && config.schedule.is_learnable();
        if alpha.is_some() != need_alpha {
            return Err(invalid("depth_stack", "learnable step size needs exactly one alpha parameter"));
        }
        if let Some(w) = blocks.first().map(Block::width) {
            if blocks.iter().any(|b| b.width() != w) {
                return Err(invalid("depth_stack", "blocks disagree on width"));
            }
        }
        Ok(Self {
            config,
            blocks,
            norms,
            alpha,
        })
    }

    /// Creates the blocks and auxiliary parameters in `store`, naming them
    /// under `prefix`. `make` builds one block given its name.
    pub fn build(
        config: DepthConfig,
        store: &mut ParamStore,
        prefix: &str,
        mut make: impl FnMut(&mut ParamStore, &str) -> Result<B>,
    ) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.block_count());
        for i in 0..config.block_count() {
            let name = if config.wiring.is_shared() { format!("{prefix}.shared") } else { format!("{prefix}.{i}") };
            blocks.push(make(store, &name)?);
        }
        let width = blocks[0].width();
        let mut norms = Vec::new();
        if config.wiring == Wiring::Classic {
            for i in 0..config.steps {
                let g = store.add(format!("{prefix}.{i}.norm.gain"), Tensor::full(&[width], 1.0))?;
                let b = store.add(format!("{prefix}.{i}.norm.bias"), Tensor::zeros(&[width]))?;
                norms.push((g, b));
            }
        }
        let alpha = match config.schedule {
            Schedule::Learnable { alpha_init } if config.wiring == Wiring::Score => {
                Some(store.add(format!("{prefix}.alpha"), Tensor::scalar(alpha_init))?)
            }
            _ => None,
        };
        Self::new(config, blocks, norms, alpha)
    }

    pub fn config(&self) -> &DepthConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[B] {
        &self.blocks
    }

    pub fn width(&self) -> usize {
        self.blocks[0].width()
    }

    pub fn alpha(&self) -> Option<ParamId> {
        self.alpha
    }

    /// Every parameter referenced by the stack, without duplicates.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.blocks.iter().flat_map(Block::param_ids).collect();
        ids.extend(self.norms.iter().flat_map(|&(g, b)| [g, b]));
        ids.extend(self.alpha);
        ids.sort();
        ids.dedup();
        ids
    }

    fn step_size(&self, tape: &mut Tape, store: &ParamStore) -> Result<StepSize> {
        if self.config.wiring == Wiring::ScoreSkip05 {
            return Ok(StepSize::Fixed(0.5));
        }
        match (self.config.schedule, self.alpha) {
            (Schedule::Learnable { .. }, Some(alpha)) => {
                let a = tape.param(store, alpha);
                let s = tape.sigmoid(a)?;
                let s = tape.scale(s, 0.4)?;
                Ok(StepSize::Learned(tape.shift(s, 0.1)?))
            }
            (schedule, _) => Ok(StepSize::Fixed(schedule.value(self.config.steps, None))),
        }
    }

    /// Applies the K steps to `h0` and returns every intermediate state.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, h0: Var, ctx: &StepContext) -> Result<Trajectory> {
        if !tape.value(h0).is_finite() {
            return Err(invalid("recurrence", "initial state is not finite"));
        }
        let k = self.config.steps;
        let mut states = Vec::with_capacity(k + 1);
        let mut dt_used = Vec::with_capacity(k);
        states.push(h0);
        let mut h = h0;
        let mut evaluations = 0;
        match self.config.wiring {
            Wiring::Score | Wiring::ScoreSkip05 => {
                let block = CountingBlock::new(&self.blocks[0]);
                let dt = self.step_size(tape, store)?;
                let dt_value = dt.value(tape);
                for _ in 0..k {
                    h = self.config.integrator.step(&block, tape, store, h, dt, ctx)?;
                    states.push(h);
                    dt_used.push(dt_value);
                }
                evaluations = block.calls();
            }
            wiring => {
                for (i, block) in self.blocks.iter().enumerate() {
                    let f = block.apply(tape, store, h, ctx)?;
                    evaluations += 1;
                    if tape.shape(f) != tape.shape(h) {
                        return Err(invalid("recurrence", "block changed the embedding width"));
                    }
                    h = match wiring {
                        Wiring::Base => {
                            dt_used.push(1.0);
                            f
                        }
                        Wiring::Classic => {
                            dt_used.push(1.0);
                            let sum = tape.add(h, f)?;
                            let (g, b) = self.norms[i];
                            let g = tape.param(store, g);
                            let b = tape.param(store, b);
                            tape.layer_norm(sum, g, b)?
                        }
                        _ => {
                            dt_used.push(0.5);
                            let keep = tape.scale(h, 0.5)?;
                            let take = tape.scale(f, 0.5)?;
                            tape.add(keep, take)?
                        }
                    };
                    states.push(h);
                }
            }
        }
        Ok(Trajectory {
            states,
            dt_used,
            evaluations,
        })
    }
}
