//! Simulated plant driven by a strategy: integrates the true dynamics,
//! takes flux samples on the sampling grid and applies dilutions.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::process::{
    dilute, measure, ControlProfile, Integrator, Measurement, PlantParams, PlantState, ProcessSpec,
    StopCondition, TrajPoint, Trajectory,
};

/// Control for the arc in progress; a hook may change it at every sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ArcCtl {
    pub u: f64,
    /// End the arc at this time (if the stop condition has not fired first).
    pub until: Option<f64>,
    /// Instantaneous dilution to this `c1`, applied right after the hook.
    pub jump: Option<f64>,
}

impl ArcCtl {
    pub fn new(u: f64, until: Option<f64>) -> Self {
        Self { u, until, jump: None }
    }
}

pub(crate) struct Plant<'s> {
    spec: &'s ProcessSpec,
    p: PlantParams,
    state: PlantState,
    rng: ChaCha8Rng,
    integ: Integrator<'s>,
    traj: Option<Vec<TrajPoint>>,
    meas: Option<Vec<Measurement>>,
    sampling: bool,
    k_next: u64,
}

impl<'s> Plant<'s> {
    pub fn new(
        spec: &'s ProcessSpec,
        p: PlantParams,
        rng: ChaCha8Rng,
        sampling: bool,
        record: bool,
        keep_measurements: bool,
    ) -> Self {
        let state = spec.initial_state();
        let traj = record.then(|| vec![TrajPoint { t: state.t, c1: state.c1, c2: state.c2, u: 0.0 }]);
        Self {
            spec,
            p,
            state,
            rng,
            integ: Integrator::new(spec),
            traj,
            meas: keep_measurements.then(Vec::new),
            sampling,
            k_next: 0,
        }
    }

    pub fn state(&self) -> PlantState {
        self.state
    }

    fn sample_time(&self) -> f64 {
        self.k_next as f64 * self.spec.dt_hours()
    }

    fn due(&self) -> bool {
        self.sampling && self.state.t >= self.sample_time()
    }

    fn measure(&mut self) -> Result<Measurement> {
        let m = measure(&self.state, &self.p, self.spec, &mut self.rng)?;
        self.k_next += 1;
        if let Some(ms) = self.meas.as_mut() {
            ms.push(m);
        }
        Ok(m)
    }

    fn advance(&mut self, u: f64, stop: StopCondition, until: f64) -> Result<bool> {
        let out = self.integ.run(
            self.state,
            &ControlProfile::constant(u),
            &self.p,
            stop,
            Some(until),
            self.traj.as_mut(),
        )?;
        self.state = out.state;
        Ok(out.hit)
    }

    pub fn jump(&mut self, c1: f64) -> Result<()> {
        self.state = dilute(&self.state, c1)?;
        if let Some(tr) = self.traj.as_mut() {
            tr.push(TrajPoint { t: self.state.t, c1: self.state.c1, c2: self.state.c2, u: f64::INFINITY });
        }
        Ok(())
    }

    /// Run one arc. `hook` sees every sample taken during the arc and may
    /// update the control. Returns true when `stop` fired, false when `until` was reached.
    pub fn drive(
        &mut self,
        ctl: &mut ArcCtl,
        stop: StopCondition,
        mut hook: impl FnMut(&Measurement, &mut ArcCtl) -> Result<()>,
    ) -> Result<bool> {
        loop {
            if self.due() {
                let m = self.measure()?;
                hook(&m, ctl)?;
                if let Some(c1) = ctl.jump.take() {
                    self.jump(c1)?;
                }
            }
            if let Some(until) = ctl.until {
                if self.state.t >= until {
                    return Ok(false);
                }
            }
            let mut end = ctl.until.unwrap_or(f64::INFINITY);
            if self.sampling {
                end = end.min(self.sample_time());
            }
            if self.advance(ctl.u, stop, end)? {
                return Ok(true);
            }
        }
    }

    /// Final dilution to `c1_f`; the batch is feasible when `c2` lands on `c2_f`.
    pub fn finish(&mut self) -> Result<bool> {
        if self.state.c1 < self.spec.c1_f {
            return Err(Error::Infeasible(format!(
                "c1 = {} below c1_f when the ratio target was met",
                self.state.c1
            )));
        }
        self.jump(self.spec.c1_f)?;
        Ok((self.state.c2 / self.spec.c2_f - 1.0).abs() <= 1e-6)
    }

    pub fn into_records(self) -> (Option<Trajectory>, Option<Vec<Measurement>>) {
        (self.traj.map(|points| Trajectory { points }), self.meas)
    }
}
