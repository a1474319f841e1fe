//! Projection of parameter uncertainty onto the switching times and the
//! singular-control band.
//!
//! Windows are sampling-based: the switch times are evaluated at the box
//! vertices, its midpoint and Latin-hypercube interior points; the hull is
//! widened by a guard factor and the event tolerance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::ParamBox;
use crate::policy::{compute_switch_times, plan_from, PolicyParams};
use crate::process::{GammaParams, PlantParams, PlantState, ProcessSpec};

pub type Interval = [f64; 2];

/// Relative widening of each sampled hull.
pub const GUARD: f64 = 0.05;
pub const DEFAULT_LHS: usize = 64;
const LHS_SEED: u64 = 0x5eed_0f_7a11;

/// Box in gamma-space `(gamma1, gamma2, gamma3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

fn corners_hull(a: Interval, b: Interval, f: impl Fn(f64, f64) -> f64) -> Interval {
    let v = [f(a[0], b[0]), f(a[0], b[1]), f(a[1], b[0]), f(a[1], b[1])];
    [v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max)]
}

impl GammaBox {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        for j in 0..3 {
            if !(lo[j].is_finite() && hi[j].is_finite() && lo[j] <= hi[j]) {
                return Err(Error::Config("invalid gamma box".into()));
            }
        }
        if !(lo[0] > 0.0 && lo[1] > 0.0 && lo[2] >= 0.0) {
            return Err(Error::Config("gamma box requires gamma1 > 0, gamma2 > 0, gamma3 >= 0".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `nominal * (1 +- pct)` componentwise.
    pub fn around(nominal: GammaParams, pct: f64) -> Result<Self> {
        let c = nominal.to_array();
        Self::new(
            std::array::from_fn(|j| c[j] * (1.0 - pct)),
            std::array::from_fn(|j| c[j] * (1.0 + pct)),
        )
    }

    pub fn point(g: GammaParams) -> Self {
        Self { lo: g.to_array(), hi: g.to_array() }
    }

    pub fn mid(&self) -> GammaParams {
        GammaParams::from_array(std::array::from_fn(|j| 0.5 * (self.lo[j] + self.hi[j])))
    }

    pub fn contains(&self, g: &GammaParams) -> bool {
        let a = g.to_array();
        (0..3).all(|j| self.lo[j] <= a[j] && a[j] <= self.hi[j])
    }

    pub fn intersect(&self, other: &GammaBox) -> Option<GammaBox> {
        let lo: [f64; 3] = std::array::from_fn(|j| self.lo[j].max(other.lo[j]));
        let hi: [f64; 3] = std::array::from_fn(|j| self.hi[j].min(other.hi[j]));
        (0..3).all(|j| lo[j] <= hi[j]).then_some(GammaBox { lo, hi })
    }

    /// Tightest p-box containing the image of this box (monotone interval evaluation).
    pub fn enclosing_pbox(&self, effective_area: f64) -> ParamBox {
        let a = effective_area;
        let g1 = [self.lo[0], self.hi[0]];
        let lng2 = [self.lo[1].ln(), self.hi[1].ln()];
        let g3 = [self.lo[2], self.hi[2]];
        let p1 = corners_hull(g1, lng2, |x, y| a * x * y);
        let p3 = corners_hull(g1, g3, |x, y| a * x * y);
        ParamBox { lo: [p1[0], a * g1[0], p3[0]], hi: [p1[1], a * g1[1], p3[1]] }
    }

    /// Gamma-box enclosing the preimage of a p-box (requires `p2 > 0` throughout),
    /// widened by a relative `1e-12` to absorb rounding in `ln`/`exp`.
    pub fn enclosing_preimage(p: &ParamBox, effective_area: f64) -> Result<GammaBox> {
        if !(p.lo[1] > 0.0) {
            return Err(Error::Domain("p2 interval must be positive to map back to gamma".into()));
        }
        let p1 = [p.lo[0], p.hi[0]];
        let p2 = [p.lo[1], p.hi[1]];
        let p3 = [p.lo[2].max(0.0), p.hi[2].max(0.0)];
        let r = corners_hull(p1, p2, |x, y| x / y);
        let g3 = corners_hull(p3, p2, |x, y| x / y);
        const WIDEN: f64 = 1e-12;
        let lo = [p2[0] / effective_area, r[0].exp(), g3[0]];
        let hi = [p2[1] / effective_area, r[1].exp(), g3[1]];
        Ok(GammaBox { lo: lo.map(|v| v * (1.0 - WIDEN)), hi: hi.map(|v| v * (1.0 + WIDEN)) })
    }

    /// `[1/(1+g3_hi), 1/(1+g3_lo)]`.
    pub fn u_band(&self) -> Interval {
        [1.0 / (1.0 + self.hi[2]), 1.0 / (1.0 + self.lo[2])]
    }
}

/// Vertices, midpoint and `n_lhs` Latin-hypercube points of `[lo, hi]`.
/// Degenerate axes collapse; duplicate points are removed.
pub fn box_samples(lo: [f64; 3], hi: [f64; 3], n_lhs: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut pts: Vec<[f64; 3]> = (0..8)
        .map(|k| std::array::from_fn(|j| if k >> j & 1 == 1 { hi[j] } else { lo[j] }))
        .collect();
    pts.push(std::array::from_fn(|j| 0.5 * (lo[j] + hi[j])));
    if n_lhs > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut strata: Vec<Vec<usize>> = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut s: Vec<usize> = (0..n_lhs).collect();
            s.shuffle(&mut rng);
            strata.push(s);
        }
        for i in 0..n_lhs {
            let p: [f64; 3] = std::array::from_fn(|j| {
                let u: f64 = rng.gen();
                lo[j] + (hi[j] - lo[j]) * (strata[j][i] as f64 + u) / n_lhs as f64
            });
            pts.push(p);
        }
    }
    let mut uniq: Vec<[f64; 3]> = Vec::with_capacity(pts.len());
    for p in pts {
        if !uniq.iter().any(|q| q.map(f64::to_bits) == p.map(f64::to_bits)) {
            uniq.push(p);
        }
    }
    uniq
}

/// Projected uncertainty of the switching decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchWindows {
    pub t1: Interval,
    pub t2: Interval,
    pub tf: Interval,
    pub us: Interval,
}

impl SwitchWindows {
    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [("t1", self.t1), ("t2", self.t2), ("tf", self.tf), ("us", self.us)] {
            if !(iv[0] <= iv[1]) {
                return Err(Error::Config(format!("window {name} is empty")));
            }
        }
        if !(self.us[0] > 0.0 && self.us[1] <= 1.0 + 1e-12) {
            return Err(Error::Config("singular-control band must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Closed interval membership with a relative slack of a few ulp.
pub fn within(iv: Interval, v: f64) -> bool {
    let slack = 4.0 * f64::EPSILON * v.abs().max(1.0);
    iv[0] - slack <= v && v <= iv[1] + slack
}

/// Exact singular-control band of a p-box by monotonicity of `p2/(p2+p3)`.
pub fn project_u_band(p: &ParamBox) -> Result<Interval> {
    if !(p.lo[1] > 0.0) {
        return Err(Error::DegenerateModel("p2 lower bound must be positive".into()));
    }
    let d_lo = p.lo[1] + p.hi[2];
    let d_hi = p.hi[1] + p.lo[2];
    if !(d_lo > 0.0 && d_hi > 0.0) {
        return Err(Error::DegenerateModel("p2 + p3 vanishes inside the box".into()));
    }
    Ok([p.lo[1] / d_lo, p.hi[1] / d_hi])
}

/// Source of optimal switching times for one parameter vector.
pub trait SwitchTimeBackend {
    fn switch_times(&self, p: &PlantParams, spec: &ProcessSpec) -> Result<PolicyParams>;
}

/// Forward simulation with event detection.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulationBackend;

impl SwitchTimeBackend for SimulationBackend {
    fn switch_times(&self, p: &PlantParams, spec: &ProcessSpec) -> Result<PolicyParams> {
        compute_switch_times(p, spec)
    }
}

/// Closed form for the limiting-flux case (`p3 = 0`).
///
/// On `u = 0` with `s = ln(gamma2/c1)`, `dt = -(m/(gamma2 p2)) e^s/s ds`, so
/// `t1 = m/(gamma2 p2) (Ei(s0) - Ei(1))`. On `u = 1` the flux is `p2` and `c2`
/// decays exponentially at rate `c1* p2 / m`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExplicitLimitingFlux;

/// Exponential integral `Ei(x)` for moderate `x > 0` (power series).
pub fn expint_ei(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..400 {
        term *= x / k as f64;
        let add = term / k as f64;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    EULER + x.ln() + sum
}

impl SwitchTimeBackend for ExplicitLimitingFlux {
    fn switch_times(&self, p: &PlantParams, spec: &ProcessSpec) -> Result<PolicyParams> {
        p.validate()?;
        if p.p3 != 0.0 {
            return Err(Error::unsupported("explicit backend requires p3 = 0").with_params(*p));
        }
        let m = spec.solute_mass();
        let ln_g2 = p.p1 / p.p2;
        let s0 = ln_g2 - spec.c1_0.ln();
        if !(s0 > 1.0) {
            return Err(Error::unsupported("initial state not before the singular surface").with_params(*p));
        }
        let g2 = ln_g2.exp();
        let t1 = m / (g2 * p.p2) * (expint_ei(s0) - expint_ei(1.0));
        let c1s = g2 / std::f64::consts::E;
        let c2_end = c1s / spec.target_ratio();
        if !(c2_end < spec.c2_0) || c1s < spec.c1_f {
            return Err(Error::Infeasible("target ratio not reachable on the singular arc".into()));
        }
        let t2 = t1 + m / (c1s * p.p2) * (spec.c2_0 / c2_end).ln();
        Ok(PolicyParams { p: *p, t1, t2, tf: t2 })
    }
}

fn hull(values: impl Iterator<Item = f64>) -> Interval {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |acc, v| [acc[0].min(v), acc[1].max(v)])
}

fn widen(iv: Interval, tol: f64) -> Interval {
    let w = iv[1] - iv[0];
    [iv[0] - GUARD * w - tol, iv[1] + GUARD * w + tol]
}

fn windows_from_times(times: &[(f64, f64, f64)], us: Interval, tol: f64) -> SwitchWindows {
    SwitchWindows {
        t1: widen(hull(times.iter().map(|t| t.0)), tol),
        t2: widen(hull(times.iter().map(|t| t.1)), tol),
        tf: widen(hull(times.iter().map(|t| t.2)), tol),
        us,
    }
}

fn eval_all(
    points: &[PlantParams],
    f: impl Fn(&PlantParams) -> Result<(f64, f64, f64)>,
) -> Result<Vec<(f64, f64, f64)>> {
    points.iter().map(|p| f(p).map_err(|e| e.with_params(*p))).collect()
}

/// Windows over a p-box with the given number of LHS points.
pub fn project_switch_windows_with(
    p: &ParamBox,
    spec: &ProcessSpec,
    n_lhs: usize,
    backend: &dyn SwitchTimeBackend,
) -> Result<SwitchWindows> {
    p.validate()?;
    let us = project_u_band(p)?;
    let pts: Vec<PlantParams> = box_samples(p.lo, p.hi, n_lhs, LHS_SEED)
        .into_iter()
        .map(PlantParams::from_array)
        .collect();
    let times = eval_all(&pts, |q| {
        let pi = backend.switch_times(q, spec)?;
        Ok((pi.t1, pi.t2, pi.tf))
    })?;
    Ok(windows_from_times(&times, us, spec.tol_event))
}

/// Windows over a p-box (vertices, midpoint and 64 LHS points).
pub fn project_switch_windows(p: &ParamBox, spec: &ProcessSpec) -> Result<SwitchWindows> {
    project_switch_windows_with(p, spec, DEFAULT_LHS, &SimulationBackend)
}

fn gamma_points(g: &GammaBox, spec: &ProcessSpec, n_lhs: usize) -> Vec<PlantParams> {
    box_samples(g.lo, g.hi, n_lhs, LHS_SEED)
        .into_iter()
        .map(|a| PlantParams::from_gamma(GammaParams::from_array(a), spec.effective_area()))
        .collect()
}

/// Windows over a gamma-box; scenarios are sampled in gamma-space.
pub fn project_switch_windows_gamma(g: &GammaBox, spec: &ProcessSpec, n_lhs: usize) -> Result<SwitchWindows> {
    let pts = gamma_points(g, spec, n_lhs);
    let times = eval_all(&pts, |q| {
        let pi = compute_switch_times(q, spec)?;
        Ok((pi.t1, pi.t2, pi.tf))
    })?;
    Ok(windows_from_times(&times, g.u_band(), spec.tol_event))
}

/// Windows of the remaining optimal schedule from `state` over a gamma-box.
pub fn project_windows_from(
    state: &PlantState,
    g: &GammaBox,
    spec: &ProcessSpec,
    n_lhs: usize,
) -> Result<SwitchWindows> {
    let pts = gamma_points(g, spec, n_lhs);
    let times = eval_all(&pts, |q| {
        let plan = plan_from(state, q, spec)?;
        Ok((plan.t1, plan.t2, plan.tf))
    })?;
    Ok(windows_from_times(&times, g.u_band(), spec.tol_event))
}

/// Time intervals on which the optimal control is the same for every
/// parameter in the box: `[0, T1lo]`, `[T1hi, T2lo]`, `[T2hi, Tflo]`.
pub fn invariant_windows(w: &SwitchWindows) -> Vec<Interval> {
    [[0.0, w.t1[0]], [w.t1[1], w.t2[0]], [w.t2[1], w.tf[0]]]
        .into_iter()
        .filter(|iv| iv[0] <= iv[1])
        .collect()
}
