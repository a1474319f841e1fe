//! Min-max robust choice of `(t1, u_s)` over a scenario set.

use serde::{Deserialize, Serialize};

use super::{decision_cost, Context, StrategyDecision};
use crate::error::{Error, Result};
use crate::policy::compute_switch_times;
use crate::process::{GammaParams, PlantParams};
use crate::reachability::box_samples;

const SCENARIO_SEED: u64 = 0x0b5e_55ed;
const MAX_ROUNDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustObjective {
    /// `max_p (J(p; d) - J(p_nom; d))^2`
    DeviationFromNominal,
    /// `max_p (J(p; d) - J*(p))^2`, the squared regret.
    DeviationFromBest,
}

/// Vertices, midpoint and LHS points of the initial gamma-box, mapped to p.
pub(crate) fn scenario_set(ctx: &Context) -> Vec<PlantParams> {
    let g = &ctx.gamma0;
    box_samples(g.lo, g.hi, ctx.cfg.robust_lhs, SCENARIO_SEED)
        .into_iter()
        .map(|a| PlantParams::from_gamma(GammaParams::from_array(a), ctx.spec.effective_area()))
        .collect()
}

/// Golden-section search for the minimum of `f` on `[a, b]` down to `res`.
fn golden(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, res: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    while b - a > res {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        for cand in [(c, fc), (d, fd)] {
            if cand.1 < best.1 {
                best = cand;
            }
        }
    }
    best
}

pub(crate) fn robust_decision(ctx: &Context) -> Result<StrategyDecision> {
    let spec = &ctx.spec;
    let x0 = spec.initial_state();
    let nominal = ctx.nominal_decision()?;
    let p_nom = ctx.p_nominal();
    let all = scenario_set(ctx);

    let mut scen: Vec<(PlantParams, f64)> = Vec::with_capacity(all.len());
    for p in &all {
        match compute_switch_times(p, spec) {
            Ok(pi) => scen.push((*p, pi.tf)),
            Err(e) if e.is_simulation_failure() => log::warn!("robust scenario excluded: {e}"),
            Err(e) => return Err(e),
        }
    }
    let excluded = all.len() - scen.len();
    if excluded * 10 > all.len() {
        return Err(Error::Config(format!(
            "{excluded} of {} robust scenarios failed to simulate",
            all.len()
        )));
    }

    let objective = ctx.cfg.robust_objective;
    let cost = |d: &StrategyDecision| -> f64 {
        let j = |p: &PlantParams| decision_cost(&x0, d, p, spec).unwrap_or(spec.t_max);
        let reference = match objective {
            RobustObjective::DeviationFromNominal => Some(j(&p_nom)),
            RobustObjective::DeviationFromBest => None,
        };
        scen.iter()
            .map(|(p, best)| {
                let dev = j(p) - reference.unwrap_or(*best);
                dev * dev
            })
            .fold(0.0, f64::max)
    };

    let w = ctx.windows0()?;
    let t_range = [w.t1[0].max(0.0), w.t1[1]];
    let u_range = ctx.gamma0.u_band();
    let mut best = (nominal, cost(&nominal));
    for _ in 0..MAX_ROUNDS {
        let mut improved = false;
        let u = best.0.u_s_commit;
        let (t, c) = golden(|t| cost(&StrategyDecision::new(t, u)), t_range[0], t_range[1], ctx.cfg.t1_resolution);
        if c < best.1 {
            best = (StrategyDecision::new(t, u), c);
            improved = true;
        }
        if u_range[1] - u_range[0] > ctx.cfg.us_resolution {
            let t = best.0.t1_commit;
            let (u, c) = golden(|u| cost(&StrategyDecision::new(t, u)), u_range[0], u_range[1], ctx.cfg.us_resolution);
            if c < best.1 {
                best = (StrategyDecision::new(t, u), c);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(best.0)
}
