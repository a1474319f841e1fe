//! Adaptive strategy: concentrate while estimating, re-optimize one sample
//! before the earliest possible switch, commit once the worst-case cost
//! variation is below `eps` or the switching window stops moving, then track
//! `u_s` of the current estimate on the singular arc.

use super::plant::{ArcCtl, Plant};
use super::{decision_cost, Context, Outcome, StrategyDecision};
use crate::error::{Error, Result};
use crate::estimation::{ParamBox, SetMembershipEstimator};
use crate::policy::{plan_from, singular_control};
use crate::process::{Measurement, PlantState, ProcessSpec, StopCondition};
use crate::reachability::{project_windows_from, GammaBox};

/// `max_v (J(v; d | x) - J*(v | x))^2` over the box vertices; a failed
/// evaluation counts as infinite.
pub(crate) fn worst_variation(x: &PlantState, d: &StrategyDecision, pk: &ParamBox, spec: &ProcessSpec) -> f64 {
    pk.vertices()
        .iter()
        .map(|v| {
            let best = plan_from(x, v, spec).map(|pl| pl.tf);
            let got = decision_cost(x, d, v, spec);
            match (got, best) {
                (Ok(a), Ok(b)) => (a - b) * (a - b),
                _ => f64::INFINITY,
            }
        })
        .fold(0.0, f64::max)
}

/// First sample time at or after `t`.
fn sample_at_or_after(t: f64, dt: f64) -> f64 {
    (t / dt).ceil().max(0.0) * dt
}

struct Scheduler<'c> {
    ctx: &'c Context,
    est: SetMembershipEstimator,
    next_reopt: f64,
    last_t1_lo: f64,
    reopt_count: u32,
    committed: Option<StrategyDecision>,
    bounds: Option<Vec<(f64, ParamBox)>>,
}

impl Scheduler<'_> {
    fn observe(&mut self, m: &Measurement) -> Result<ParamBox> {
        let b = *self.est.push(m)?;
        if let Some(rows) = self.bounds.as_mut() {
            rows.push((m.t, b));
        }
        Ok(b)
    }

    fn reoptimize(&mut self, m: &Measurement, pk: &ParamBox) -> Result<Option<StrategyDecision>> {
        let spec = &self.ctx.spec;
        let dt = spec.dt_hours();
        self.reopt_count += 1;
        let gk = GammaBox::enclosing_preimage(pk, spec.effective_area())
            .ok()
            .and_then(|g| g.intersect(&self.ctx.gamma0))
            .ok_or_else(|| {
                Error::ModelInvalidated(format!(
                    "parameter estimate at t = {} h left the initial uncertainty set",
                    m.t
                ))
            })?;
        let x = PlantState::new(m.t, m.c1, m.c2);
        let w = project_windows_from(&x, &gk, spec, self.ctx.cfg.window_lhs)?;
        let plan = plan_from(&x, &pk.mid(), spec)?;
        let d = StrategyDecision { t1_commit: plan.t1, u_s_commit: plan.u_s, pre_dilution: plan.pre_dilution };

        let converged = worst_variation(&x, &d, pk, spec) < self.ctx.cfg.eps;
        let improved = w.t1[0] > self.last_t1_lo + dt;
        let next = sample_at_or_after(w.t1[0] - dt, dt);
        let room = next > m.t + 0.5 * dt;
        if converged || !improved || !room {
            return Ok(Some(d));
        }
        self.next_reopt = next;
        self.last_t1_lo = w.t1[0];
        Ok(None)
    }
}

pub(crate) fn run(plant: &mut Plant<'_>, ctx: &Context, keep_bounds: bool) -> Result<Outcome> {
    let spec = &ctx.spec;
    let dt = spec.dt_hours();
    let target = spec.target_ratio();
    let stop = StopCondition::RatioReached(target);
    let w0 = ctx.windows0()?;

    let mut sch = Scheduler {
        ctx,
        est: SetMembershipEstimator::new(ctx.prior, spec.sigma)?,
        next_reopt: sample_at_or_after(w0.t1[0] - dt, dt),
        last_t1_lo: w0.t1[0],
        reopt_count: 0,
        committed: None,
        bounds: keep_bounds.then(Vec::new),
    };

    // Concentrate and estimate until a decision is committed and its t1 reached.
    let mut ctl = ArcCtl::new(0.0, None);
    let mut hit = plant.drive(&mut ctl, stop, |m, ctl| {
        let pk = sch.observe(m)?;
        if sch.committed.is_none() && m.t >= sch.next_reopt {
            if let Some(d) = sch.reoptimize(m, &pk)? {
                sch.committed = Some(d);
                ctl.jump = d.pre_dilution;
                ctl.until = Some(d.t1_commit.max(m.t));
            }
        }
        Ok(())
    })?;
    let t1 = plant.state().t;
    let decision = sch.committed.ok_or_else(|| Error::Infeasible("batch ended before the switch".into()))?;

    if !hit {
        let u0 = if ctx.cfg.hold_us { decision.u_s_commit } else { singular_control(&sch.est.bounds().mid())? };
        let hold = ctx.cfg.hold_us;
        let mut ctl = ArcCtl::new(u0, None);
        hit = plant.drive(&mut ctl, stop, |m, ctl| {
            let pk = sch.observe(m)?;
            if !hold {
                ctl.u = singular_control(&pk.mid())?;
            }
            Ok(())
        })?;
    }
    debug_assert!(hit);
    let t2 = plant.state().t;
    let feasible = plant.finish()?;
    Ok(Outcome { t1, t2, feasible, reopt_count: sch.reopt_count, decision, bounds: sch.bounds })
}
