//! Diafiltration plant: permeate-flux model, concentration dynamics,
//! instantaneous dilution and bounded-noise flux measurements.
//!
//! The flux law is linear in the reparameterized vector `p`:
//!
//! ```text
//! q(c1, c2; p) = p1 - p2 ln c1 - p3 ln c2
//! ```
//!
//! and the concentrations evolve as
//!
//! ```text
//! dc1/dt =  c1^2 q (1 - u) / (c1_0 V0)
//! dc2/dt = -c1 c2 q u      / (c1_0 V0)
//! ```
//!
//! where `u` is the ratio of fresh-water inflow to permeate outflow.

mod ode;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ode::{
    advance, integrate, ArcOutcome, ControlProfile, Integrator, StopCondition, TrajPoint,
    Trajectory,
};

/// Flux-model parameters in the reparameterized (linear) form, all in L/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

/// Phenomenological flux parameters: mass-transfer coefficient, limiting
/// macro-solute concentration and the dimensionless non-ideality factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl PlantParams {
    pub const fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Self { p1, p2, p3 }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }

    /// `p1 = A g1 ln g2`, `p2 = A g1`, `p3 = A g1 g3`, with `A` the
    /// effective membrane area (see [`ProcessSpec::effective_area`]).
    pub fn from_gamma(g: GammaParams, effective_area: f64) -> Self {
        let ag1 = effective_area * g.gamma1;
        Self::new(ag1 * g.gamma2.ln(), ag1, ag1 * g.gamma3)
    }

    pub fn to_gamma(self, effective_area: f64) -> GammaParams {
        GammaParams {
            gamma1: self.p2 / effective_area,
            gamma2: (self.p1 / self.p2).exp(),
            gamma3: self.p3 / self.p2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p1.is_finite() && self.p2.is_finite() && self.p3.is_finite()) {
            return Err(Error::Domain("non-finite flux parameter".into()));
        }
        if self.p2 <= 0.0 {
            return Err(Error::Domain(format!("p2 must be positive, got {}", self.p2)));
        }
        if self.p3 < 0.0 {
            return Err(Error::Domain(format!("p3 must be non-negative, got {}", self.p3)));
        }
        Ok(())
    }

    /// Multiply every component by `alpha`.
    pub fn scaled(self, alpha: f64) -> Self {
        Self::new(self.p1 * alpha, self.p2 * alpha, self.p3 * alpha)
    }
}

impl GammaParams {
    pub const fn new(gamma1: f64, gamma2: f64, gamma3: f64) -> Self {
        Self {
            gamma1,
            gamma2,
            gamma3,
        }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.gamma1, self.gamma2, self.gamma3]
    }
}

/// Plant state. Volume is not stored: it follows from macro-solute
/// conservation, `V = c1_0 V0 / c1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: f64,
    pub c1: f64,
    pub c2: f64,
}

impl PlantState {
    pub const fn new(t: f64, c1: f64, c2: f64) -> Self {
        Self { t, c1, c2 }
    }

    pub fn volume(&self, spec: &ProcessSpec) -> f64 {
        spec.solute_mass() / self.c1
    }

    pub fn ratio(&self) -> f64 {
        self.c1 / self.c2
    }
}

fn default_flux_scale() -> f64 {
    100.0
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-12
}
fn default_tol_event() -> f64 {
    1e-6
}

/// Process setup. Field names match the keys of the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    /// Initial macro-solute concentration [g/L].
    pub c1_0: f64,
    /// Initial micro-solute concentration [g/L].
    pub c2_0: f64,
    /// Final macro-solute concentration [g/L].
    pub c1_f: f64,
    /// Final micro-solute concentration [g/L].
    pub c2_f: f64,
    /// Initial volume [L].
    #[serde(rename = "V0")]
    pub v0: f64,
    /// Membrane area [m^2].
    #[serde(rename = "A")]
    pub area: f64,
    /// Bound on the permeate-flux measurement noise [L/h].
    pub sigma: f64,
    /// Sampling period [s].
    pub dt_sample: f64,
    /// Simulation time cap [h].
    pub t_max: f64,
    /// Unit conversion applied to `A * gamma1`. With the default of 100 the
    /// nominal `gamma1 = 3e-2` gives `A gamma1 = 3 L/h`; 1 is the literal reading.
    #[serde(default = "default_flux_scale")]
    pub flux_scale: f64,
    /// Relative tolerance of the adaptive integrator.
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    /// Event localization tolerance [h].
    #[serde(default = "default_tol_event")]
    pub tol_event: f64,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        Self {
            c1_0: 50.0,
            c2_0: 50.0,
            c1_f: 150.0,
            c2_f: 0.05,
            v0: 20.0,
            area: 1.0,
            sigma: 0.1,
            dt_sample: 1.0,
            t_max: 100.0,
            flux_scale: default_flux_scale(),
            rtol: default_rtol(),
            atol: default_atol(),
            tol_event: default_tol_event(),
        }
    }
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let all = [
            self.c1_0,
            self.c2_0,
            self.c1_f,
            self.c2_f,
            self.v0,
            self.area,
            self.sigma,
            self.dt_sample,
            self.t_max,
            self.flux_scale,
            self.rtol,
            self.atol,
            self.tol_event,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value in process spec");
        }
        if !(self.c1_0 > 0.0 && self.c1_f > self.c1_0) {
            return bad("require c1_f > c1_0 > 0");
        }
        if !(self.c2_f > 0.0 && self.c2_f < self.c2_0) {
            return bad("require 0 < c2_f < c2_0");
        }
        if self.v0 <= 0.0 || self.area <= 0.0 || self.flux_scale <= 0.0 {
            return bad("V0, A and flux_scale must be positive");
        }
        if self.sigma < 0.0 {
            return bad("sigma must be non-negative");
        }
        if self.dt_sample <= 0.0 || self.t_max <= 0.0 {
            return bad("dt_sample and t_max must be positive");
        }
        if self.rtol <= 0.0 || self.atol <= 0.0 || self.tol_event <= 0.0 {
            return bad("integration tolerances must be positive");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ProcessSpec = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid process spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn initial_state(&self) -> PlantState {
        PlantState::new(0.0, self.c1_0, self.c2_0)
    }

    /// Concentration ratio `c1/c2` that must hold right before the final dilution.
    pub fn target_ratio(&self) -> f64 {
        self.c1_f / self.c2_f
    }

    /// Sampling period in hours.
    pub fn dt_hours(&self) -> f64 {
        self.dt_sample / 3600.0
    }

    /// `c1_0 V0`, the conserved macro-solute mass [g].
    pub fn solute_mass(&self) -> f64 {
        self.c1_0 * self.v0
    }

    pub fn effective_area(&self) -> f64 {
        self.area * self.flux_scale
    }
}

/// A flux sample with exactly known concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: f64,
    pub q_m: f64,
    pub c1: f64,
    pub c2: f64,
}

#[inline]
pub(crate) fn flux_unchecked(c1: f64, c2: f64, p: &PlantParams) -> f64 {
    p.p1 - p.p2 * c1.ln() - p.p3 * c2.ln()
}

/// Permeate flux [L/h]. May be non-positive; callers decide what that means.
pub fn flux(c1: f64, c2: f64, p: &PlantParams) -> Result<f64> {
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Domain(format!(
            "concentrations must be positive, got c1 = {c1}, c2 = {c2}"
        )));
    }
    Ok(flux_unchecked(c1, c2, p))
}

/// Time derivatives `(dc1/dt, dc2/dt)` under control ratio `u`.
pub fn rhs(state: &PlantState, u: f64, p: &PlantParams, spec: &ProcessSpec) -> Result<(f64, f64)> {
    if u < 0.0 || !u.is_finite() {
        return Err(Error::Domain(format!("control ratio must be finite and >= 0, got {u}")));
    }
    let q = flux(state.c1, state.c2, p)?;
    let m = spec.solute_mass();
    Ok((
        state.c1 * state.c1 * q * (1.0 - u) / m,
        -state.c1 * state.c2 * q * u / m,
    ))
}

/// Instantaneous water addition bringing `c1` down to `c1_target`.
/// The ratio `c1/c2` is preserved.
pub fn dilute(state: &PlantState, c1_target: f64) -> Result<PlantState> {
    if !(c1_target > 0.0) {
        return Err(Error::Domain(format!("dilution target must be positive, got {c1_target}")));
    }
    if c1_target > state.c1 {
        return Err(Error::Domain(format!(
            "dilution cannot concentrate: target {c1_target} > c1 = {}",
            state.c1
        )));
    }
    if c1_target == state.c1 {
        return Ok(*state);
    }
    let factor = c1_target / state.c1;
    Ok(PlantState::new(state.t, c1_target, state.c2 * factor))
}

/// Flux measurement with additive noise `eta ~ U(-sigma, sigma)`. Exactly
/// one uniform draw is consumed per call, also when `sigma == 0`.
pub fn measure<R: Rng + ?Sized>(
    state: &PlantState,
    p_true: &PlantParams,
    spec: &ProcessSpec,
    rng: &mut R,
) -> Result<Measurement> {
    let q = flux(state.c1, state.c2, p_true)?;
    let u: f64 = rng.gen();
    let eta = spec.sigma * (2.0 * u - 1.0);
    Ok(Measurement {
        t: state.t,
        q_m: q + eta,
        c1: state.c1,
        c2: state.c2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nominal() -> PlantParams {
        PlantParams::from_gamma(GammaParams::new(3e-2, 1000.0, 0.0), 100.0)
    }

    #[test]
    fn flux_at_unit_concentrations_is_offset() {
        let p = PlantParams::new(4.2, 3.0, 0.7);
        assert_eq!(flux(1.0, 1.0, &p).unwrap(), 4.2);
    }

    #[test]
    fn flux_nominal_values() {
        let p = nominal();
        assert_relative_eq!(p.p1, 20.7233, epsilon = 1e-4);
        assert_relative_eq!(flux(50.0, 50.0, &p).unwrap(), 3.0 * (20.0f64).ln(), epsilon = 1e-12);
        assert_relative_eq!(flux(50.0, 50.0, &p).unwrap(), 8.987, epsilon = 1e-3);
        let c1 = 1000.0 / std::f64::consts::E;
        assert_relative_eq!(flux(c1, 3.0, &p).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn flux_rejects_non_positive() {
        let p = nominal();
        assert!(matches!(flux(0.0, 1.0, &p), Err(Error::Domain(_))));
        assert!(matches!(flux(1.0, -2.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma_round_trip() {
        let g = GammaParams::new(3e-2, 1000.0, 0.1);
        let p = PlantParams::from_gamma(g, 100.0);
        assert_relative_eq!(p.p2, 3.0, epsilon = 1e-14);
        assert_relative_eq!(p.p3, 0.3, epsilon = 1e-14);
        let back = p.to_gamma(100.0);
        assert_relative_eq!(back.gamma1, g.gamma1, max_relative = 1e-14);
        assert_relative_eq!(back.gamma2, g.gamma2, max_relative = 1e-13);
        assert_relative_eq!(back.gamma3, g.gamma3, max_relative = 1e-14);
    }

    #[test]
    fn rhs_limits() {
        let spec = ProcessSpec::default();
        let p = nominal();
        let s = PlantState::new(0.0, 50.0, 50.0);
        let (d1, d2) = rhs(&s, 1.0, &p, &spec).unwrap();
        assert_eq!(d1, 0.0);
        assert!(d2 < 0.0);
        let (d1, d2) = rhs(&s, 0.0, &p, &spec).unwrap();
        assert_eq!(d2, 0.0);
        assert_relative_eq!(d1, 22.47, epsilon = 1e-2);
        assert!(rhs(&s, -0.1, &p, &spec).is_err());
    }

    #[test]
    fn dilution_cases() {
        let s = PlantState::new(1.0, 100.0, 4.0);
        assert_eq!(dilute(&s, 100.0).unwrap(), s);
        let half = dilute(&s, 50.0).unwrap();
        assert_eq!(half.c2, 2.0);
        assert!(dilute(&s, 101.0).is_err());

        let c1 = 1000.0 / std::f64::consts::E;
        let pre = PlantState::new(8.0, c1, c1 / 3000.0);
        let post = dilute(&pre, 150.0).unwrap();
        assert_relative_eq!(pre.c2, 0.122626, epsilon = 1e-6);
        assert_relative_eq!(post.c2, 0.05, max_relative = 1e-14);
    }

    #[test]
    fn measurement_noise_law() {
        let spec = ProcessSpec { sigma: 0.0, ..Default::default() };
        let p = nominal();
        let s = PlantState::new(0.0, 50.0, 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = measure(&s, &p, &spec, &mut rng).unwrap();
        assert_eq!(m.q_m, flux(50.0, 50.0, &p).unwrap());

        let spec = ProcessSpec { sigma: 0.1, ..Default::default() };
        let q = flux(50.0, 50.0, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let eta = measure(&s, &p, &spec, &mut rng).unwrap().q_m - q;
            assert!(eta.abs() <= 0.1 + 1e-12);
            sum += eta.abs();
        }
        let mean = sum / n as f64;
        assert!((mean - 0.05).abs() < 0.002, "mean |eta| = {mean}");
    }

    #[test]
    fn measurement_replay() {
        let spec = ProcessSpec::default();
        let p = nominal();
        let s = PlantState::new(0.0, 60.0, 40.0);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..16)
                .map(|_| measure(&s, &p, &spec, &mut rng).unwrap().q_m)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn spec_json_keys() {
        let spec = ProcessSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"V0\"") && text.contains("\"A\""));
        let back = ProcessSpec::from_json(&text).unwrap();
        assert_eq!(back, spec);
        let minimal = r#"{"c1_0":50,"c2_0":50,"c1_f":150,"c2_f":0.05,"V0":20,"A":1,
            "sigma":0.1,"dt_sample":60,"t_max":100}"#;
        let s = ProcessSpec::from_json(minimal).unwrap();
        assert_eq!(s.dt_sample, 60.0);
        assert_eq!(s.flux_scale, 100.0);
        assert!(ProcessSpec::from_json(r#"{"c1_0":50}"#).is_err());
        let bad = ProcessSpec { c1_f: 10.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
