//! Closed-loop operating strategies run against a simulated true plant:
//! clairvoyant optimal, nominal, min-max robust and adaptive.
//!
//! Only `(t1, u_s)` are decisions. The second switch and the dilution are
//! state feedback: the plant is diluted to `c1_f` the moment `c1/c2` reaches
//! the target ratio, so every batch that does not time out ends on target.

mod adaptive;
mod plant;
mod robust;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::OnceLock;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use robust::RobustObjective;

use crate::error::{Error, Result};
use crate::estimation::ParamBox;
use crate::policy::{compute_switch_times, singular_control};
use crate::process::{
    dilute, ControlProfile, Integrator, Measurement, PlantParams, PlantState, ProcessSpec, StopCondition,
    Trajectory,
};
use crate::reachability::{project_switch_windows_gamma, GammaBox, SwitchWindows};

use plant::{ArcCtl, Plant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Optimal,
    Nominal,
    Robust,
    Adaptive,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::Optimal, StrategyKind::Nominal, StrategyKind::Robust, StrategyKind::Adaptive];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Optimal => "optimal",
            StrategyKind::Nominal => "nominal",
            StrategyKind::Robust => "robust",
            StrategyKind::Adaptive => "adaptive",
        }
    }

    fn measures(self) -> bool {
        self == StrategyKind::Adaptive
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "optimal" => Ok(StrategyKind::Optimal),
            "nominal" => Ok(StrategyKind::Nominal),
            "robust" => Ok(StrategyKind::Robust),
            "adaptive" => Ok(StrategyKind::Adaptive),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Committed decisions. `t2` and the dilution are not decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyDecision {
    pub t1_commit: f64,
    pub u_s_commit: f64,
    /// Dilution onto the singular surface before anything else, when the
    /// model says the state is already past it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_dilution: Option<f64>,
}

impl StrategyDecision {
    pub fn new(t1: f64, u_s: f64) -> Self {
        Self { t1_commit: t1, u_s_commit: u_s, pre_dilution: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    /// Robust objective variant.
    pub robust_objective: RobustObjective,
    /// Latin-hypercube points in the robust scenario set (plus 8 vertices and the midpoint).
    pub robust_lhs: usize,
    /// Latin-hypercube points used for switching-time windows.
    pub window_lhs: usize,
    /// Worst-case cost-variation tolerance of the adaptive strategy [h^2].
    pub eps: f64,
    /// Keep the first committed `u_s` on the singular arc instead of refreshing it.
    pub hold_us: bool,
    /// Line-search resolution for `t1` [h].
    pub t1_resolution: f64,
    pub us_resolution: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            robust_objective: RobustObjective::DeviationFromBest,
            robust_lhs: 16,
            window_lhs: crate::reachability::DEFAULT_LHS,
            eps: (1.0f64 / 3600.0).powi(2),
            hold_us: false,
            t1_resolution: 1.0 / 3600.0,
            us_resolution: 1e-4,
        }
    }
}

/// Everything a strategy knows before the batch starts. Decisions that only
/// depend on the initial uncertainty are computed once and cached.
#[derive(Debug)]
pub struct Context {
    pub spec: ProcessSpec,
    /// Initial uncertainty in gamma-space; scenarios and truths are drawn here.
    pub gamma0: GammaBox,
    /// Enclosing p-box of `gamma0`; prior of the estimator.
    pub prior: ParamBox,
    pub cfg: StrategyConfig,
    windows0: OnceLock<SwitchWindows>,
    nominal: OnceLock<StrategyDecision>,
    robust: OnceLock<StrategyDecision>,
}

impl Context {
    pub fn new(spec: ProcessSpec, gamma0: GammaBox, cfg: StrategyConfig) -> Result<Self> {
        spec.validate()?;
        if !(cfg.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        let prior = gamma0.enclosing_pbox(spec.effective_area());
        Ok(Self {
            spec,
            gamma0,
            prior,
            cfg,
            windows0: OnceLock::new(),
            nominal: OnceLock::new(),
            robust: OnceLock::new(),
        })
    }

    /// Nominal parameters: the image of the gamma-box midpoint.
    pub fn p_nominal(&self) -> PlantParams {
        PlantParams::from_gamma(self.gamma0.mid(), self.spec.effective_area())
    }

    pub fn windows0(&self) -> Result<SwitchWindows> {
        if let Some(w) = self.windows0.get() {
            return Ok(*w);
        }
        let w = project_switch_windows_gamma(&self.gamma0, &self.spec, self.cfg.window_lhs)?;
        Ok(*self.windows0.get_or_init(|| w))
    }

    pub fn nominal_decision(&self) -> Result<StrategyDecision> {
        if let Some(d) = self.nominal.get() {
            return Ok(*d);
        }
        let p = self.p_nominal();
        let pi = compute_switch_times(&p, &self.spec)?;
        let d = StrategyDecision::new(pi.t1, singular_control(&p)?);
        Ok(*self.nominal.get_or_init(|| d))
    }

    pub fn robust_decision(&self) -> Result<StrategyDecision> {
        if let Some(d) = self.robust.get() {
            return Ok(*d);
        }
        let d = robust::robust_decision(self)?;
        Ok(*self.robust.get_or_init(|| d))
    }
}

/// Final time of decision `d` applied from `x` on a noise-free plant `p`,
/// with the ratio-triggered dilution.
pub fn decision_cost(x: &PlantState, d: &StrategyDecision, p: &PlantParams, spec: &ProcessSpec) -> Result<f64> {
    let target = spec.target_ratio();
    let mut integ = Integrator::new(spec);
    let mut x = *x;
    if let Some(c1) = d.pre_dilution {
        x = dilute(&x, c1)?;
    }
    if x.t < d.t1_commit {
        let out = integ.run(x, &ControlProfile::constant(0.0), p, StopCondition::RatioReached(target), Some(d.t1_commit), None)?;
        if out.hit {
            return Ok(out.state.t);
        }
        x = out.state;
    }
    let out = integ.run(x, &ControlProfile::constant(d.u_s_commit), p, StopCondition::RatioReached(target), None, None)?;
    Ok(out.state.t)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub record_trajectory: bool,
    pub keep_measurements: bool,
    pub keep_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub batch_id: u64,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub p_true: PlantParams,
    pub t1: f64,
    pub t2: f64,
    pub tf: f64,
    /// `tf - tf_opt(p_true)` [h].
    pub regret: f64,
    pub feasible: bool,
    pub reopt_count: u32,
    pub decision: Option<StrategyDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    #[serde(skip)]
    pub measurements: Option<Vec<Measurement>>,
    #[serde(skip)]
    pub bounds: Option<Vec<(f64, ParamBox)>>,
}

impl BatchResult {
    pub fn failed(batch_id: u64, strategy: StrategyKind, seed: u64, p_true: PlantParams, err: &Error) -> Self {
        Self {
            batch_id,
            strategy,
            seed,
            p_true,
            t1: f64::NAN,
            t2: f64::NAN,
            tf: f64::NAN,
            regret: f64::NAN,
            feasible: false,
            reopt_count: 0,
            decision: None,
            error: Some(err.to_string()),
            trajectory: None,
            measurements: None,
            bounds: None,
        }
    }
}

pub const RESULT_HEADER: [&str; 12] =
    ["batch_id", "strategy", "seed", "p1", "p2", "p3", "t1", "t2", "tf", "regret", "feasible", "reopt_count"];

/// One CSV record in [`RESULT_HEADER`] order.
pub fn result_record(r: &BatchResult) -> [String; 12] {
    [
        r.batch_id.to_string(),
        r.strategy.to_string(),
        r.seed.to_string(),
        r.p_true.p1.to_string(),
        r.p_true.p2.to_string(),
        r.p_true.p3.to_string(),
        r.t1.to_string(),
        r.t2.to_string(),
        r.tf.to_string(),
        r.regret.to_string(),
        r.feasible.to_string(),
        r.reopt_count.to_string(),
    ]
}

/// Write results as CSV with header [`RESULT_HEADER`].
pub fn write_results<W: Write>(w: W, results: &[BatchResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULT_HEADER)?;
    for r in results {
        out.write_record(result_record(r))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ResultRow {
    batch_id: u64,
    strategy: StrategyKind,
    seed: u64,
    p1: f64,
    p2: f64,
    p3: f64,
    t1: f64,
    t2: f64,
    tf: f64,
    regret: f64,
    feasible: bool,
    reopt_count: u32,
}

pub fn read_results<R: std::io::Read>(r: R) -> Result<Vec<BatchResult>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<ResultRow>()
        .map(|row| {
            let row = row?;
            Ok(BatchResult {
                batch_id: row.batch_id,
                strategy: row.strategy,
                seed: row.seed,
                p_true: PlantParams::new(row.p1, row.p2, row.p3),
                t1: row.t1,
                t2: row.t2,
                tf: row.tf,
                regret: row.regret,
                feasible: row.feasible,
                reopt_count: row.reopt_count,
                decision: None,
                error: None,
                trajectory: None,
                measurements: None,
                bounds: None,
            })
        })
        .collect()
}

struct Outcome {
    t1: f64,
    t2: f64,
    feasible: bool,
    reopt_count: u32,
    decision: StrategyDecision,
    bounds: Option<Vec<(f64, ParamBox)>>,
}

fn run_open_loop(plant: &mut Plant<'_>, d: StrategyDecision, target: f64) -> Result<Outcome> {
    if let Some(c1) = d.pre_dilution {
        plant.jump(c1)?;
    }
    let stop = StopCondition::RatioReached(target);
    let mut hit = false;
    if plant.state().t < d.t1_commit {
        hit = plant.drive(&mut ArcCtl::new(0.0, Some(d.t1_commit)), stop, |_, _| Ok(()))?;
    }
    let t1 = plant.state().t;
    if !hit {
        plant.drive(&mut ArcCtl::new(d.u_s_commit, None), stop, |_, _| Ok(()))?;
    }
    let t2 = plant.state().t;
    let feasible = plant.finish()?;
    Ok(Outcome { t1, t2, feasible, reopt_count: 0, decision: d, bounds: None })
}

/// Run one batch of `kind` against the plant `p_true`, drawing measurement
/// noise from `noise`.
pub fn run_strategy(
    kind: StrategyKind,
    ctx: &Context,
    p_true: &PlantParams,
    noise: ChaCha8Rng,
    opts: RunOptions,
) -> Result<BatchResult> {
    let spec = &ctx.spec;
    p_true.validate()?;
    let opt = compute_switch_times(p_true, spec)?;
    let sampling = kind.measures() || opts.keep_measurements;
    let mut plant = Plant::new(spec, *p_true, noise, sampling, opts.record_trajectory, opts.keep_measurements);
    let target = spec.target_ratio();
    let out = match kind {
        StrategyKind::Optimal => {
            let d = StrategyDecision::new(opt.t1, singular_control(p_true)?);
            run_open_loop(&mut plant, d, target)
        }
        StrategyKind::Nominal => run_open_loop(&mut plant, ctx.nominal_decision()?, target),
        StrategyKind::Robust => run_open_loop(&mut plant, ctx.robust_decision()?, target),
        StrategyKind::Adaptive => adaptive::run(&mut plant, ctx, opts.keep_bounds),
    }
    .map_err(|e| e.with_params(*p_true))?;
    let (trajectory, measurements) = plant.into_records();
    Ok(BatchResult {
        batch_id: 0,
        strategy: kind,
        seed: 0,
        p_true: *p_true,
        t1: out.t1,
        t2: out.t2,
        tf: out.t2,
        regret: out.t2 - opt.tf,
        feasible: out.feasible,
        reopt_count: out.reopt_count,
        decision: Some(out.decision),
        error: None,
        trajectory,
        measurements,
        bounds: out.bounds,
    })
}
