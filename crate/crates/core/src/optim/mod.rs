//! Direct optimization of per-pixel depth, pose, motion, uncertainty and brightness with Adam.

mod adam;
pub mod checkpoint;
mod gradcheck;

use alloc::format;
use alloc::vec::Vec;

pub use adam::AdamConfig;
pub use gradcheck::{grad_check, probe_params, GradCheckReport, Probe, ProbeStatus};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::depth_repr::decode;
use crate::error::{Error, Result};
use crate::grid::DepthMap;
use crate::losses::{compose, Diagnostics, EvalOptions, LossBreakdown, LossConfig};
use crate::params::{Group, Params, ScenePair};

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub params: Params,
    /// Adam first moments, shaped like `params`.
    pub m: Params,
    /// Adam second moments, shaped like `params`.
    pub v: Params,
    /// Global step counter.
    pub step: usize,
    /// Index into [`Schedule::levels`].
    pub level: usize,
    /// Steps taken at the current level.
    pub level_step: usize,
    pub seed: u64,
    /// Recent totals at the current level, for the convergence test.
    pub history: Vec<f64>,
}

impl OptimState {
    pub fn new(params: Params, seed: u64) -> Self {
        let (h, w) = (params.height(), params.width());
        Self { params, m: Params::zeros(h, w), v: Params::zeros(h, w), step: 0, level: 0, level_step: 0, seed, history: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub max_steps: usize,
    /// Overrides the configuration's motion warm-up when set.
    pub warm_up_steps: Option<usize>,
    /// Downscale factors, coarsest first; the last must be 1.
    pub levels: Vec<usize>,
    /// Relative loss change over `window` steps below which a level is converged.
    pub tolerance: f64,
    pub window: usize,
    /// Initial depth (meters) of every pixel.
    pub init_depth: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_steps: 20_000,
            warm_up_steps: None,
            levels: alloc::vec![4, 2, 1],
            tolerance: 1e-7,
            window: 100,
            init_depth: 10.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self, cfg: &LossConfig) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.levels.is_empty() || self.levels.last() != Some(&1) {
            return Err(Error::Config("levels must be non-empty and end at factor 1".into()));
        }
        if self.levels.iter().any(|f| *f == 0 || !f.is_power_of_two()) || self.levels.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!("levels must be strictly decreasing powers of two, got {:?}", self.levels)));
        }
        if self.levels.len() > self.max_steps {
            return Err(Error::Config("more levels than steps".into()));
        }
        if cfg.dynamic.motion_map && self.effective_warm_up(cfg) > self.max_steps {
            return Err(Error::Config(format!(
                "warm_up_steps {} exceeds max_steps {}",
                self.effective_warm_up(cfg),
                self.max_steps
            )));
        }
        if !(self.tolerance >= 0.0) || self.window == 0 {
            return Err(Error::Config("tolerance must be non-negative and window positive".into()));
        }
        if !(self.init_depth > 0.0 && self.init_depth.is_finite()) {
            return Err(Error::Config(format!("init_depth must be positive, got {}", self.init_depth)));
        }
        Ok(())
    }

    pub fn effective_warm_up(&self, cfg: &LossConfig) -> usize {
        self.warm_up_steps.unwrap_or(cfg.warm_up_steps)
    }

    /// Step budget of level `level`; the last level takes the remainder.
    pub fn level_budget(&self, level: usize) -> usize {
        let n = self.levels.len();
        let each = self.max_steps / n;
        if level + 1 == n {
            self.max_steps - each * (n - 1)
        } else {
            each
        }
    }
}

/// Groups that receive updates at `step`.
pub fn active_groups(cfg: &LossConfig, step: usize) -> Vec<Group> {
    let mut g = alloc::vec![Group::Depth, Group::Rotation, Group::Translation];
    if cfg.motion_active(step) {
        g.push(Group::Motion);
    }
    if cfg.dynamic.uncertainty {
        g.push(Group::LogSigma);
    }
    if cfg.illumination.brightness {
        g.push(Group::Gain);
        g.push(Group::Bias);
    }
    g
}

/// Loss of one evaluated step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRecord {
    pub step: usize,
    pub level: usize,
    pub terms: LossBreakdown,
}

/// One Adam update of the active groups of `state` on `pair`.
///
/// The record holds the loss evaluated before the update.
pub fn step(
    state: &mut OptimState,
    cfg: &LossConfig,
    adam: &AdamConfig,
    pair: &ScenePair,
) -> Result<(CurveRecord, Diagnostics)> {
    let opts = EvalOptions { step: state.step, gradients: true, ..Default::default() };
    let eval = compose(cfg, pair, &state.params, &opts)?;
    let grad = eval.grad.expect("gradients requested");
    let t = state.level_step as u64 + 1;
    for g in active_groups(cfg, state.step) {
        let lr = adam.lr_for(g);
        let grads = grad.values(g);
        let mut m = state.m.values(g);
        let mut v = state.v.values(g);
        state.params.for_each_mut(g, |k, x| adam.update(lr, t, x, grads[k], &mut m[k], &mut v[k]));
        state.m.for_each_mut(g, |k, x| *x = m[k]);
        state.v.for_each_mut(g, |k, x| *x = v[k]);
        if g == Group::Depth {
            state.params.for_each_mut(g, |_, x| *x = cfg.repr.clamp_param(*x));
        }
        if !state.params.is_finite(g) {
            return Err(Error::Divergence { step: state.step, term: format!("parameter {g}") });
        }
    }
    let record = CurveRecord { step: state.step, level: state.level, terms: eval.terms };
    state.step += 1;
    state.level_step += 1;
    Ok((record, eval.diagnostics))
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    /// Every level met the convergence tolerance.
    Converged,
    /// The step budget ran out first.
    MaxSteps,
    /// A decoded depth map lost its variance.
    Collapsed { step: usize },
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxSteps => "max_steps",
            RunStatus::Collapsed { .. } => "collapsed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub params: Params,
    pub status: RunStatus,
    pub steps: usize,
    pub curve: Vec<CurveRecord>,
    pub final_terms: LossBreakdown,
    pub final_diagnostics: Diagnostics,
}

impl FitReport {
    pub fn depth(&self, cfg: &LossConfig) -> Result<[DepthMap; 2]> {
        Ok([decode(&self.params.x[0], &cfg.repr)?.depth, decode(&self.params.x[1], &cfg.repr)?.depth])
    }
}

/// Drives the schedule over the image pyramid. Can be checkpointed between steps.
#[derive(Clone, Debug)]
pub struct Fitter {
    cfg: LossConfig,
    sched: Schedule,
    adam: AdamConfig,
    pyramid: Vec<ScenePair>,
    state: OptimState,
    curve: Vec<CurveRecord>,
    finished: Option<RunStatus>,
}

impl Fitter {
    pub fn new(cfg: &LossConfig, sched: &Schedule, adam: &AdamConfig, pair: &ScenePair, seed: u64) -> Result<Self> {
        let (cfg, pyramid) = Self::prepare(cfg, sched, pair)?;
        let coarse = &pyramid[0];
        let mut params = Params::init(&cfg.repr, coarse.height(), coarse.width(), sched.init_depth)?;
        jitter_depth(&mut params, &cfg, sched, seed);
        Ok(Self::assemble(cfg, sched, adam, pyramid, OptimState::new(params, seed)))
    }

    /// Continues from a checkpoint produced by [`Fitter::checkpoint`] with the same inputs.
    pub fn resume(cfg: &LossConfig, sched: &Schedule, adam: &AdamConfig, pair: &ScenePair, bytes: &[u8]) -> Result<Self> {
        let (cfg, pyramid) = Self::prepare(cfg, sched, pair)?;
        let state = checkpoint::decode(bytes)?;
        let level = pyramid
            .get(state.level)
            .ok_or_else(|| Error::Checkpoint(format!("level {} not in the schedule", state.level)))?;
        if state.params.height() != level.height() || state.params.width() != level.width() {
            return Err(Error::Checkpoint("parameter grid does not match the scene at the saved level".into()));
        }
        Ok(Self::assemble(cfg, sched, adam, pyramid, state))
    }

    fn prepare(cfg: &LossConfig, sched: &Schedule, pair: &ScenePair) -> Result<(LossConfig, Vec<ScenePair>)> {
        cfg.validate()?;
        sched.validate(cfg)?;
        let mut cfg = cfg.clone();
        cfg.warm_up_steps = sched.effective_warm_up(&cfg);
        let pyramid = sched.levels.iter().map(|f| pair.downscaled(*f)).collect::<Result<Vec<_>>>()?;
        Ok((cfg, pyramid))
    }

    fn assemble(cfg: LossConfig, sched: &Schedule, adam: &AdamConfig, pyramid: Vec<ScenePair>, state: OptimState) -> Self {
        Self {
            cfg,
            sched: sched.clone(),
            adam: adam.clone(),
            pyramid,
            state,
            curve: Vec::new(),
            finished: None,
        }
    }

    pub fn state(&self) -> &OptimState {
        &self.state
    }

    pub fn curve(&self) -> &[CurveRecord] {
        &self.curve
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        checkpoint::encode(&self.state)
    }

    pub fn finished(&self) -> Option<&RunStatus> {
        self.finished.as_ref()
    }

    fn converged(&self) -> bool {
        if self.cfg.dynamic.motion_map && self.state.step <= self.cfg.warm_up_steps {
            return false;
        }
        let h = &self.state.history;
        let w = self.sched.window;
        if h.len() <= w {
            return false;
        }
        let (old, new) = (h[h.len() - 1 - w], h[h.len() - 1]);
        (new - old).abs() <= self.sched.tolerance * old.abs().max(f64::MIN_POSITIVE)
    }

    fn advance_level(&mut self) {
        let next = self.state.level + 1;
        let pair = &self.pyramid[next];
        let (h, w) = (pair.height(), pair.width());
        self.state.params = self.state.params.resized(h, w);
        self.state.m = Params::zeros(h, w);
        self.state.v = Params::zeros(h, w);
        self.state.level = next;
        self.state.level_step = 0;
        self.state.history.clear();
    }

    /// Takes one step; returns the record, or `None` once the run has finished.
    pub fn step(&mut self) -> Result<Option<CurveRecord>> {
        if self.finished.is_some() {
            return Ok(None);
        }
        let last_level = self.pyramid.len() - 1;
        loop {
            let converged = self.converged();
            if !converged && self.state.level_step < self.sched.level_budget(self.state.level) {
                break;
            }
            if self.state.level == last_level {
                self.finished = Some(if converged { RunStatus::Converged } else { RunStatus::MaxSteps });
                return Ok(None);
            }
            self.advance_level();
        }
        let warm_up = self.cfg.warm_up_steps;
        if self.cfg.dynamic.motion_map && self.state.step == warm_up {
            self.state.history.clear();
        }
        let pair = &self.pyramid[self.state.level];
        let (record, diag) = step(&mut self.state, &self.cfg, &self.adam, pair)?;
        self.curve.push(record);
        if diag.collapsed {
            self.finished = Some(RunStatus::Collapsed { step: record.step });
            return Ok(Some(record));
        }
        self.state.history.push(record.terms.total);
        if self.state.history.len() > self.sched.window + 1 {
            self.state.history.remove(0);
        }
        Ok(Some(record))
    }

    /// Steps until the schedule ends.
    pub fn run(mut self) -> Result<FitReport> {
        while self.step()?.is_some() {}
        let status = self.finished.clone().expect("finished after the loop");
        let pair = &self.pyramid[self.state.level];
        let opts = EvalOptions { step: self.state.step, ..Default::default() };
        let eval = compose(&self.cfg, pair, &self.state.params, &opts)?;
        Ok(FitReport {
            params: self.state.params,
            status,
            steps: self.state.step,
            curve: self.curve,
            final_terms: eval.terms,
            final_diagnostics: eval.diagnostics,
        })
    }
}

/// Multiplies each initial depth by `1 + u`, `u` uniform in `[-INIT_JITTER, INIT_JITTER]`.
fn jitter_depth(params: &mut Params, cfg: &LossConfig, sched: &Schedule, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.for_each_mut(Group::Depth, |_, x| {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        *x = cfg.repr.encode_one(sched.init_depth * (1.0 + INIT_JITTER * (2.0 * u - 1.0)));
    });
}

/// Relative spread of the seeded initial depth.
pub const INIT_JITTER: f64 = 0.01;

/// Fits `pair` from the default initialization.
pub fn run(cfg: &LossConfig, sched: &Schedule, adam: &AdamConfig, pair: &ScenePair, seed: u64) -> Result<FitReport> {
    Fitter::new(cfg, sched, adam, pair, seed)?.run()
}
