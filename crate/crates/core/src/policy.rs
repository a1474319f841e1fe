//! Closed-form optimal structure for the diafiltration case: switching
//! function, singular control and the concentrate / singular / dilute policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{
    advance, dilute, flux, ControlProfile, PlantParams, PlantState, ProcessSpec, StopCondition,
};

/// `S = q - p2 - p3`. Positive: concentrate; zero: singular arc.
pub fn switching_function(state: &PlantState, p: &PlantParams) -> Result<f64> {
    Ok(flux(state.c1, state.c2, p)? - p.p2 - p.p3)
}

/// `u_s = p2 / (p2 + p3)`; keeps the flux pinned at `p2 + p3`.
pub fn singular_control(p: &PlantParams) -> Result<f64> {
    let d = p.p2 + p.p3;
    if !(d.abs() > 0.0) {
        return Err(Error::DegenerateModel("p2 + p3 = 0, singular control undefined".into()));
    }
    Ok(p.p2 / d)
}

/// Parameters of the three-arc policy. Serialized flat as `p1,p2,p3,t1,t2,tf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    #[serde(flatten)]
    pub p: PlantParams,
    pub t1: f64,
    pub t2: f64,
    pub tf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcKind {
    Concentrate,
    Singular,
    Dilute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlArc {
    pub kind: ArcKind,
    pub start: f64,
    pub end: f64,
    /// Control ratio; `inf` for the dilution jump.
    pub u_value: f64,
}

/// What the policy asks for at a given instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyAction {
    Control(f64),
    Dilute,
}

impl PolicyParams {
    pub fn u_s(&self) -> Result<f64> {
        singular_control(&self.p)
    }

    pub fn arcs(&self) -> Result<Vec<ControlArc>> {
        let us = self.u_s()?;
        Ok(vec![
            ControlArc { kind: ArcKind::Concentrate, start: 0.0, end: self.t1, u_value: 0.0 },
            ControlArc { kind: ArcKind::Singular, start: self.t1, end: self.t2, u_value: us },
            ControlArc { kind: ArcKind::Dilute, start: self.t2, end: self.tf, u_value: f64::INFINITY },
        ])
    }

    /// Piecewise-constant profile of the first two arcs.
    pub fn profile(&self) -> Result<ControlProfile> {
        if self.t1 > 0.0 {
            ControlProfile::piecewise(vec![(f64::NEG_INFINITY, 0.0), (self.t1, self.u_s()?)])
        } else {
            Ok(ControlProfile::constant(self.u_s()?))
        }
    }
}

/// Optimal remaining schedule from an arbitrary state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Start of the singular arc [h].
    pub t1: f64,
    pub u_s: f64,
    /// Time of the final dilution [h]; equals the final time.
    pub t2: f64,
    pub tf: f64,
    /// When the state is already past the singular surface, water is added
    /// at the current instant to bring `c1` to this value first.
    pub pre_dilution: Option<f64>,
    /// State right before the final dilution.
    pub pre_final: PlantState,
}

/// Shrinking-horizon optimum for known `p` starting at `state`.
///
/// With `S > 0` the plant concentrates until `S = 0`; with `S < 0` it is
/// diluted onto the surface at once (`c -> alpha c`, `ln alpha = S/(p2+p3)`).
/// It then follows the singular arc until `c1/c2` hits the target ratio.
pub fn plan_from(state: &PlantState, p: &PlantParams, spec: &ProcessSpec) -> Result<Plan> {
    p.validate()?;
    let us = singular_control(p)?;
    let target = spec.target_ratio();
    let s = switching_function(state, p)?;

    let mut pre_dilution = None;
    let mut x = *state;
    if state.ratio() < target {
        if s > 0.0 {
            x = advance(x, &ControlProfile::constant(0.0), p, StopCondition::SwitchingSurface, spec)?;
            if x.ratio() > target * (1.0 + 1e-12) {
                return Err(Error::Infeasible(format!(
                    "concentration ratio {} passed the target {target} before the singular surface",
                    x.ratio()
                )));
            }
        } else if s < 0.0 {
            let alpha = (s / (p.p2 + p.p3)).exp();
            x = dilute(&x, x.c1 * alpha)?;
            pre_dilution = Some(x.c1);
        }
    } else if state.ratio() > target * (1.0 + 1e-9) {
        return Err(Error::Infeasible(format!(
            "concentration ratio {} already exceeds the target {target}",
            state.ratio()
        )));
    }
    let t1 = x.t;
    let x2 = advance(x, &ControlProfile::constant(us), p, StopCondition::RatioReached(target), spec)?;
    if x2.c1 < spec.c1_f * (1.0 - 1e-12) {
        return Err(Error::Infeasible(format!(
            "c1 = {} below c1_f = {} when the ratio target is met",
            x2.c1, spec.c1_f
        )));
    }
    Ok(Plan { t1, u_s: us, t2: x2.t, tf: x2.t, pre_dilution, pre_final: x2 })
}

/// Optimal switching times from the initial state for known `p`.
pub fn compute_switch_times(p: &PlantParams, spec: &ProcessSpec) -> Result<PolicyParams> {
    let x0 = spec.initial_state();
    p.validate()?;
    let s0 = switching_function(&x0, p)?;
    if !(s0 > 0.0) {
        return Err(Error::unsupported(format!(
            "initial state not on the concentrating side of the singular surface (S = {s0})"
        ))
        .with_params(*p));
    }
    let plan = plan_from(&x0, p, spec).map_err(|e| e.with_params(*p))?;
    Ok(PolicyParams { p: *p, t1: plan.t1, t2: plan.t2, tf: plan.tf })
}

/// Control requested by the policy at time `t`.
pub fn evaluate_policy(t: f64, state: &PlantState, pi: &PolicyParams) -> Result<PolicyAction> {
    if t >= pi.t2 {
        return Ok(PolicyAction::Dilute);
    }
    if t < pi.t1 && switching_function(state, &pi.p)? > 0.0 {
        return Ok(PolicyAction::Control(0.0));
    }
    Ok(PolicyAction::Control(pi.u_s()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{integrate, GammaParams};
    use proptest::prelude::*;

    fn p_case(g3: f64) -> PlantParams {
        PlantParams::from_gamma(GammaParams::new(3e-2, 1000.0, g3), 100.0)
    }

    #[test]
    fn switching_function_values() {
        let p = p_case(0.0);
        let s = switching_function(&PlantState::new(0.0, 50.0, 50.0), &p).unwrap();
        assert!((s - 5.987).abs() < 1e-3);
        let c1 = 1000.0 / std::f64::consts::E;
        assert!(switching_function(&PlantState::new(0.0, c1, 7.0), &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn singular_control_values() {
        assert_eq!(singular_control(&p_case(0.0)).unwrap(), 1.0);
        assert!((singular_control(&p_case(0.1)).unwrap() - 1.0 / 1.1).abs() < 1e-12);
        assert_eq!(singular_control(&PlantParams::new(1.0, 2.0, 2.0)).unwrap(), 0.5);
        assert!(matches!(
            singular_control(&PlantParams::new(1.0, 0.0, 0.0)),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn nominal_switch_times() {
        let spec = ProcessSpec::default();
        let pi = compute_switch_times(&p_case(0.0), &spec).unwrap();
        assert!((pi.t1 / 2.625 - 1.0).abs() <= 0.1, "t1 = {}", pi.t1);
        assert!(pi.tf >= 7.9 && pi.tf <= 8.6, "tf = {}", pi.tf);
        let pi2 = compute_switch_times(&p_case(0.1), &spec).unwrap();
        assert!((pi2.t1 / 2.561 - 1.0).abs() <= 0.1, "t1 = {}", pi2.t1);
        assert!((pi2.tf / 9.277 - 1.0).abs() <= 0.1, "tf = {}", pi2.tf);
    }

    #[test]
    fn open_loop_replay_hits_terminal_state() {
        let spec = ProcessSpec::default();
        for g3 in [0.0, 0.1] {
            let p = p_case(g3);
            let pi = compute_switch_times(&p, &spec).unwrap();
            let x = advance(spec.initial_state(), &pi.profile().unwrap(), &p, StopCondition::Time(pi.t2), &spec)
                .unwrap();
            let xf = dilute(&x, spec.c1_f).unwrap();
            assert!((xf.c2 / spec.c2_f - 1.0).abs() <= 1e-6, "c2 = {}", xf.c2);
            assert_eq!(xf.c1, spec.c1_f);
        }
    }

    #[test]
    fn singular_arc_keeps_flux_pinned() {
        let spec = ProcessSpec::default();
        let p = p_case(0.1);
        let pi = compute_switch_times(&p, &spec).unwrap();
        let x1 = advance(spec.initial_state(), &ControlProfile::constant(0.0), &p, StopCondition::Time(pi.t1), &spec)
            .unwrap();
        let tr = integrate(x1, &ControlProfile::constant(pi.u_s().unwrap()), &p, StopCondition::Time(pi.t2), &spec)
            .unwrap();
        for pt in &tr.points {
            let s = switching_function(&pt.state(), &p).unwrap();
            assert!(s.abs() <= 1e-6 * (p.p2 + p.p3), "S = {s} at t = {}", pt.t);
        }
    }

    #[test]
    fn s_crossing_equals_c1_target_when_p3_zero() {
        let spec = ProcessSpec::default();
        let p = p_case(0.0);
        let pi = compute_switch_times(&p, &spec).unwrap();
        let x = advance(
            spec.initial_state(),
            &ControlProfile::constant(0.0),
            &p,
            StopCondition::C1Reached(1000.0 / std::f64::consts::E),
            &spec,
        )
        .unwrap();
        assert!((x.t - pi.t1).abs() <= spec.tol_event);
    }

    #[test]
    fn unsupported_when_starting_past_surface() {
        let spec = ProcessSpec { c1_0: 500.0, c1_f: 600.0, ..Default::default() };
        let err = compute_switch_times(&p_case(0.0), &spec).unwrap_err();
        assert!(matches!(err, Error::UnsupportedStructure { params: Some(_), .. }));
    }

    #[test]
    fn plan_from_over_concentrated_state() {
        let spec = ProcessSpec::default();
        let p = p_case(0.1);
        let x = PlantState::new(3.0, 450.0, 40.0);
        let plan = plan_from(&x, &p, &spec).unwrap();
        let c1 = plan.pre_dilution.unwrap();
        assert!(c1 < 450.0);
        assert_eq!(plan.t1, 3.0);
        let xs = dilute(&x, c1).unwrap();
        assert!(switching_function(&xs, &p).unwrap().abs() < 1e-10);
        assert!((plan.pre_final.ratio() / spec.target_ratio() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plan_from_start_matches_switch_times() {
        let spec = ProcessSpec::default();
        let p = p_case(0.1);
        let pi = compute_switch_times(&p, &spec).unwrap();
        // restart from a state on the optimal u = 0 arc
        let x = advance(spec.initial_state(), &ControlProfile::constant(0.0), &p, StopCondition::Time(1.0), &spec)
            .unwrap();
        let plan = plan_from(&x, &p, &spec).unwrap();
        assert!((plan.t1 - pi.t1).abs() < 1e-6);
        assert!((plan.tf - pi.tf).abs() < 1e-6);
    }

    #[test]
    fn policy_evaluation() {
        let spec = ProcessSpec::default();
        let p = p_case(0.0);
        let pi = compute_switch_times(&p, &spec).unwrap();
        let x0 = spec.initial_state();
        assert_eq!(evaluate_policy(1.0, &x0, &pi).unwrap(), PolicyAction::Control(0.0));
        assert_eq!(evaluate_policy(pi.t1 + 0.1, &x0, &pi).unwrap(), PolicyAction::Control(1.0));
        assert_eq!(evaluate_policy(pi.t2, &x0, &pi).unwrap(), PolicyAction::Dilute);
        let arcs = pi.arcs().unwrap();
        assert_eq!(arcs.len(), 3);
        assert_eq!(arcs[2].start, arcs[2].end);
        let js = serde_json::to_value(pi).unwrap();
        for k in ["p1", "p2", "p3", "t1", "t2", "tf"] {
            assert!(js.get(k).is_some(), "missing {k}");
        }
    }

    #[test]
    fn monotone_in_gamma() {
        let spec = ProcessSpec::default();
        let t1 = |g1: f64, g2: f64| {
            let p = PlantParams::from_gamma(GammaParams::new(g1, g2, 0.1), 100.0);
            compute_switch_times(&p, &spec).unwrap().t1
        };
        // a larger gamma2 moves the surface out but raises the flux more: t1 falls
        let g2s = [900.0, 950.0, 1000.0, 1050.0, 1100.0];
        for w in g2s.windows(2) {
            assert!(t1(3e-2, w[1]) <= t1(3e-2, w[0]));
        }
        let g1s = [2.7e-2, 2.85e-2, 3e-2, 3.15e-2, 3.3e-2];
        for w in g1s.windows(2) {
            assert!(t1(w[1], 1000.0) <= t1(w[0], 1000.0));
        }
    }

    /// Time on the u = 0 arc as a quadrature of `dt = m dc1 / (c1^2 q)`.
    fn t1_quadrature(p: &PlantParams, spec: &ProcessSpec) -> f64 {
        let ln_c2 = spec.c2_0.ln();
        let c1s = ((p.p1 - p.p3 * ln_c2 - p.p2 - p.p3) / p.p2).exp();
        let f = |c: f64| spec.solute_mass() / (c * c * (p.p1 - p.p2 * c.ln() - p.p3 * ln_c2));
        let n = 20_000;
        let h = (c1s - spec.c1_0) / n as f64;
        let mut acc = f(spec.c1_0) + f(c1s);
        for i in 1..n {
            acc += f(spec.c1_0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn t1_matches_quadrature() {
        let spec = ProcessSpec::default();
        for (g2, g3) in [(900.0, 0.0), (1000.0, 0.0), (1100.0, 0.1), (1000.0, 0.1)] {
            let p = PlantParams::from_gamma(GammaParams::new(3e-2, g2, g3), 100.0);
            let t1 = compute_switch_times(&p, &spec).unwrap().t1;
            let oracle = t1_quadrature(&p, &spec);
            assert!((t1 - oracle).abs() < 1e-6, "{t1} vs {oracle}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scaling_invariance(alpha in 0.3f64..3.0, g2 in 900.0f64..1100.0, g3 in 0.0f64..0.12) {
            let spec = ProcessSpec::default();
            let p = PlantParams::from_gamma(GammaParams::new(3e-2, g2, g3), 100.0);
            let a = compute_switch_times(&p, &spec).unwrap();
            let b = compute_switch_times(&p.scaled(alpha), &spec).unwrap();
            prop_assert!((singular_control(&p).unwrap() - singular_control(&p.scaled(alpha)).unwrap()).abs() < 1e-14);
            prop_assert!((b.t1 * alpha / a.t1 - 1.0).abs() < 1e-6);
            prop_assert!((b.tf * alpha / a.tf - 1.0).abs() < 1e-6);
        }
    }
}
