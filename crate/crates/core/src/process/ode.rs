//! Adaptive Dormand-Prince 5(4) integration of the plant equations with
//! event localization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{flux_unchecked, PlantParams, PlantState, ProcessSpec};
use crate::error::{Error, Result};

/// Where an integration arc ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopCondition {
    /// Absolute time [h].
    Time(f64),
    /// Zero crossing of the switching function `S = q - p2 - p3`.
    SwitchingSurface,
    /// `c1/c2` reaches the given ratio.
    RatioReached(f64),
    /// `c1` reaches the given concentration.
    C1Reached(f64),
}

impl StopCondition {
    /// Event function; positive before the event, non-positive at or after it.
    fn eval(&self, c1: f64, c2: f64, p: &PlantParams) -> Option<f64> {
        match *self {
            StopCondition::Time(_) => None,
            StopCondition::SwitchingSurface => Some(flux_unchecked(c1, c2, p) - p.p2 - p.p3),
            StopCondition::RatioReached(r) => Some(r.ln() - (c1 / c2).ln()),
            StopCondition::C1Reached(c) => Some(c.ln() - c1.ln()),
        }
    }

    fn scale(&self, p: &PlantParams) -> f64 {
        match self {
            StopCondition::SwitchingSurface => (p.p2 + p.p3).abs().max(1e-300),
            _ => 1.0,
        }
    }
}

/// Piecewise-constant control: each segment `(start, u)` holds from its start
/// time until the next segment starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProfile {
    segments: Vec<(f64, f64)>,
}

impl ControlProfile {
    pub fn constant(u: f64) -> Self {
        Self {
            segments: vec![(f64::NEG_INFINITY, u)],
        }
    }

    pub fn piecewise(segments: Vec<(f64, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("empty control profile".into()));
        }
        for w in segments.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::Config("control segments must have increasing start times".into()));
            }
        }
        if segments.iter().any(|&(_, u)| !(u >= 0.0 && u.is_finite())) {
            return Err(Error::Config("control values must be finite and >= 0".into()));
        }
        Ok(Self { segments })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|&(s, _)| s <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    fn next_break(&self, t: f64) -> Option<f64> {
        let idx = self.segments.partition_point(|&(s, _)| s <= t);
        self.segments.get(idx).map(|&(s, _)| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t: f64,
    pub c1: f64,
    pub c2: f64,
    pub u: f64,
}

impl TrajPoint {
    pub fn state(&self) -> PlantState {
        PlantState::new(self.t, self.c1, self.c2)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
}

impl Trajectory {
    pub fn last_state(&self) -> Option<PlantState> {
        self.points.last().map(TrajPoint::state)
    }

    /// CSV with header `t,c1,c2,V,u,q`; `q` is the flux under `p`.
    pub fn write_csv<W: Write>(&self, w: W, spec: &ProcessSpec, p: &PlantParams) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "c1", "c2", "V", "u", "q"])?;
        for pt in &self.points {
            let v = spec.solute_mass() / pt.c1;
            let q = flux_unchecked(pt.c1, pt.c2, p);
            out.write_record([
                pt.t.to_string(),
                pt.c1.to_string(),
                pt.c2.to_string(),
                v.to_string(),
                pt.u.to_string(),
                q.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcOutcome {
    pub state: PlantState,
    /// True when the stop condition fired, false when the horizon was reached first.
    pub hit: bool,
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const H_MAX: f64 = 0.5;
const H_MIN: f64 = 1e-13;

/// Stateful integrator; keeps the last accepted step size as a hint for the next arc.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    spec: &'a ProcessSpec,
    h: f64,
}

impl<'a> Integrator<'a> {
    pub fn new(spec: &'a ProcessSpec) -> Self {
        Self { spec, h: 1e-3 }
    }

    #[inline]
    fn deriv(&self, c1: f64, c2: f64, u: f64, p: &PlantParams) -> [f64; 2] {
        let q = flux_unchecked(c1, c2, p);
        let m = self.spec.solute_mass();
        [c1 * c1 * q * (1.0 - u) / m, -c1 * c2 * q * u / m]
    }

    /// One embedded step; returns the 5th-order solution and the scaled error norm.
    fn step(&self, x: [f64; 2], h: f64, u: f64, p: &PlantParams) -> ([f64; 2], f64) {
        let mut k = [[0.0f64; 2]; 7];
        for s in 0..7 {
            let mut y = x;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    y[0] += h * a * kj[0];
                    y[1] += h * a * kj[1];
                }
            }
            k[s] = self.deriv(y[0], y[1], u, p);
        }
        let mut out = x;
        let mut err = [0.0; 2];
        for s in 0..7 {
            out[0] += h * B[s] * k[s][0];
            out[1] += h * B[s] * k[s][1];
            err[0] += h * E[s] * k[s][0];
            err[1] += h * E[s] * k[s][1];
        }
        let mut norm = 0.0f64;
        for i in 0..2 {
            let sc = self.spec.atol + self.spec.rtol * x[i].abs().max(out[i].abs());
            norm = norm.max(err[i].abs() / sc);
        }
        if !(out[0] > 0.0 && out[1] > 0.0) || !norm.is_finite() {
            norm = f64::INFINITY;
        }
        (out, norm)
    }

    /// Integrate from `state0` until `stop` fires, the optional `horizon` is
    /// reached, or `t_max` runs out (timeout). Sample points at multiples of
    /// the sampling period, and the final point, are appended to `record`.
    pub fn run(
        &mut self,
        state0: PlantState,
        control: &ControlProfile,
        p: &PlantParams,
        stop: StopCondition,
        horizon: Option<f64>,
        mut record: Option<&mut Vec<TrajPoint>>,
    ) -> Result<ArcOutcome> {
        let spec = self.spec;
        if !(state0.c1 > 0.0 && state0.c2 > 0.0) {
            return Err(Error::Domain("non-positive concentration in initial state".into()));
        }
        let dt = spec.dt_hours();

        let (mut end, end_is_stop) = match stop {
            StopCondition::Time(t) => (t, true),
            _ => (f64::INFINITY, false),
        };
        let mut end_is_horizon = false;
        if let Some(h) = horizon {
            if h < end {
                end = h;
                end_is_horizon = true;
            }
        }
        let timeout = end > spec.t_max;
        if timeout {
            end = spec.t_max;
        }

        let mut t = state0.t;
        let mut x = [state0.c1, state0.c2];

        if let Some(g0) = stop.eval(x[0], x[1], p) {
            if g0 <= 0.0 {
                return Ok(ArcOutcome { state: state0, hit: true });
            }
        }
        if t >= end {
            return self.finish_at_end(state0, timeout, end_is_stop && !end_is_horizon, p);
        }

        let q0 = flux_unchecked(x[0], x[1], p);
        if q0 <= 0.0 {
            return Err(Error::Stall { t, flux: q0, params: None });
        }

        let next_sample = |t: f64| -> f64 {
            let mut k = (t / dt).floor() + 1.0;
            if k * dt - t <= 1e-12 * t.abs().max(1.0) {
                k += 1.0;
            }
            k * dt
        };
        let mut ts = next_sample(t);

        loop {
            let u = control.value_at(t);
            let mut target = end;
            if let Some(b) = control.next_break(t) {
                target = target.min(b);
            }
            if record.is_some() {
                target = target.min(ts);
            }
            let remaining = target - t;
            let mut h = self.h.min(H_MAX);
            let lands = h >= remaining * (1.0 - 1e-12);
            if lands {
                h = remaining;
            }

            let (xn, err) = self.step(x, h, u, p);
            if err > 1.0 {
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.1) } else { 0.1 };
                self.h = h * fac;
                if self.h < H_MIN {
                    let q = flux_unchecked(x[0], x[1], p);
                    return Err(Error::Stall { t, flux: q, params: None });
                }
                continue;
            }

            // accepted
            let t_new = if lands { target } else { t + h };
            if let Some(g_new) = stop.eval(xn[0], xn[1], p) {
                if g_new <= 0.0 {
                    let (te, xe) = self.localize(t, x, h, u, p, &stop);
                    let state = PlantState::new(te, xe[0], xe[1]);
                    if let Some(rec) = record.as_deref_mut() {
                        rec.push(TrajPoint { t: te, c1: xe[0], c2: xe[1], u });
                    }
                    return Ok(ArcOutcome { state, hit: true });
                }
            }
            let q = flux_unchecked(xn[0], xn[1], p);
            if q <= 0.0 {
                return Err(Error::Stall { t: t_new, flux: q, params: None });
            }

            t = t_new;
            x = xn;
            let grow = if err > 0.0 { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
            if !lands || h >= self.h * 0.5 {
                self.h = (h * grow).min(H_MAX);
            }

            if let Some(rec) = record.as_deref_mut() {
                if lands && target == ts {
                    rec.push(TrajPoint { t, c1: x[0], c2: x[1], u: control.value_at(t) });
                }
            }
            if t >= ts {
                ts = next_sample(t);
            }
            if lands && target == end {
                let state = PlantState::new(t, x[0], x[1]);
                if let Some(rec) = record.as_deref_mut() {
                    if rec.last().map_or(true, |l| l.t != t) {
                        rec.push(TrajPoint { t, c1: x[0], c2: x[1], u });
                    }
                }
                return self.finish_at_end(state, timeout, end_is_stop && !end_is_horizon, p);
            }
        }
    }

    fn finish_at_end(
        &self,
        state: PlantState,
        timeout: bool,
        stop_reached: bool,
        _p: &PlantParams,
    ) -> Result<ArcOutcome> {
        if timeout {
            return Err(Error::Timeout { t_max: self.spec.t_max, params: None });
        }
        Ok(ArcOutcome { state, hit: stop_reached })
    }

    /// Bisection to `tol_event`, then Illinois refinement of the bracketed root.
    fn localize(
        &self,
        t0: f64,
        x0: [f64; 2],
        h: f64,
        u: f64,
        p: &PlantParams,
        stop: &StopCondition,
    ) -> (f64, [f64; 2]) {
        let at = |tau: f64| -> ([f64; 2], f64) {
            if tau == 0.0 {
                let g = stop.eval(x0[0], x0[1], p).unwrap_or(0.0);
                return (x0, g);
            }
            let (x, _) = self.step(x0, tau, u, p);
            (x, stop.eval(x[0], x[1], p).unwrap_or(0.0))
        };
        let (mut lo, mut hi) = (0.0, h);
        let (_, mut g_lo) = at(lo);
        let (mut x_hi, mut g_hi) = at(hi);
        while hi - lo > self.spec.tol_event {
            let mid = 0.5 * (lo + hi);
            let (xm, gm) = at(mid);
            if gm > 0.0 {
                lo = mid;
                g_lo = gm;
            } else {
                hi = mid;
                g_hi = gm;
                x_hi = xm;
            }
        }

        let gtol = 1e-13 * stop.scale(p);
        let ttol = 1e-15 * (t0.abs() + h).max(1.0);
        let mut best = (hi, x_hi, g_hi);
        let mut side = 0i8;
        for _ in 0..60 {
            if best.2.abs() <= gtol || hi - lo <= ttol {
                break;
            }
            let denom = g_hi - g_lo;
            let mut c = if denom != 0.0 { (lo * g_hi - hi * g_lo) / denom } else { 0.5 * (lo + hi) };
            if !(c > lo && c < hi) {
                c = 0.5 * (lo + hi);
            }
            let (xc, gc) = at(c);
            best = (c, xc, gc);
            if gc > 0.0 {
                lo = c;
                g_lo = gc;
                if side == -1 {
                    g_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = c;
                g_hi = gc;
                if side == 1 {
                    g_lo *= 0.5;
                }
                side = 1;
            }
        }
        (t0 + best.0, best.1)
    }
}

/// Integrate and return the trajectory sampled at the sampling period,
/// including the initial state and the exact final (event) point.
pub fn integrate(
    state0: PlantState,
    control: &ControlProfile,
    p: &PlantParams,
    stop: StopCondition,
    spec: &ProcessSpec,
) -> Result<Trajectory> {
    let mut points = vec![TrajPoint {
        t: state0.t,
        c1: state0.c1,
        c2: state0.c2,
        u: control.value_at(state0.t),
    }];
    let out = Integrator::new(spec).run(state0, control, p, stop, None, Some(&mut points))?;
    if points.last().map_or(true, |l| l.t != out.state.t) {
        points.push(TrajPoint {
            t: out.state.t,
            c1: out.state.c1,
            c2: out.state.c2,
            u: control.value_at(out.state.t),
        });
    }
    Ok(Trajectory { points })
}

/// Integrate to the stop condition without recording.
pub fn advance(
    state0: PlantState,
    control: &ControlProfile,
    p: &PlantParams,
    stop: StopCondition,
    spec: &ProcessSpec,
) -> Result<PlantState> {
    Ok(Integrator::new(spec).run(state0, control, p, stop, None, None)?.state)
}
