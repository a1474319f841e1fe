//! Set-membership estimation of the flux parameters.
//!
//! Concentrations are measured exactly, so each flux sample `q_m` gives the
//! pair of half-spaces `q_m - sigma <= p1 - p2 ln c1 - p3 ln c2 <= q_m + sigma`.
//! The guaranteed box is found by six LPs (min and max of each `p_j`).

mod lp;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use lp::{solve_lp, solve_lp_warm, HalfSpace, LpError, LpSolution};

use crate::error::{Error, Result};
use crate::process::{Measurement, PlantParams};

/// Axis-aligned box `[lo, hi]` in p-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl ParamBox {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn point(p: PlantParams) -> Self {
        let a = p.to_array();
        Self { lo: a, hi: a }
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..3 {
            if !(self.lo[j].is_finite() && self.hi[j].is_finite()) {
                return Err(Error::Config("parameter box must be finite".into()));
            }
            if self.lo[j] > self.hi[j] {
                return Err(Error::Config(format!(
                    "parameter box has lo > hi in component {}",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    pub fn mid(&self) -> PlantParams {
        PlantParams::new(
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
            0.5 * (self.lo[2] + self.hi[2]),
        )
    }

    pub fn width(&self) -> [f64; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    /// The 8 corners, bit `j` of the index selecting `hi[j]`.
    pub fn vertices(&self) -> [PlantParams; 8] {
        std::array::from_fn(|k| {
            let pick = |j: usize| if k >> j & 1 == 1 { self.hi[j] } else { self.lo[j] };
            PlantParams::new(pick(0), pick(1), pick(2))
        })
    }

    pub fn contains(&self, p: &PlantParams) -> bool {
        let a = p.to_array();
        (0..3).all(|j| self.lo[j] <= a[j] && a[j] <= self.hi[j])
    }

    pub fn contains_box(&self, other: &ParamBox) -> bool {
        (0..3).all(|j| self.lo[j] <= other.lo[j] && other.hi[j] <= self.hi[j])
    }

    pub fn intersect(&self, other: &ParamBox) -> Option<ParamBox> {
        let lo = std::array::from_fn(|j| self.lo[j].max(other.lo[j]));
        let hi = std::array::from_fn(|j| self.hi[j].min(other.hi[j]));
        (0..3).all(|j| lo[j] <= hi[j]).then_some(ParamBox { lo, hi })
    }

    /// Box around `center` with half-widths `pct * |center_j|`.
    pub fn around(center: PlantParams, pct: f64) -> Self {
        let c = center.to_array();
        let lo = std::array::from_fn(|j| c[j] - pct * c[j].abs());
        let hi = std::array::from_fn(|j| c[j] + pct * c[j].abs());
        Self { lo, hi }
    }
}

/// Relative slack added to every bound so that exact data (`sigma = 0`)
/// stays feasible under rounding.
const FEAS_SLACK: f64 = 1e-9;
/// Outward rounding of reported bounds.
const OUTWARD: f64 = 1e-10;

/// Measurement constraints, two half-spaces per sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    rows: Vec<HalfSpace>,
    sigma: f64,
}

impl ConstraintSet {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise bound must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { rows: Vec::new(), sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Regressor `(1, -ln c1, -ln c2)`.
    pub fn regressor(c1: f64, c2: f64) -> [f64; 3] {
        [1.0, -c1.ln(), -c2.ln()]
    }

    pub fn add_measurement(&mut self, m: &Measurement) -> Result<()> {
        if !(m.c1 > 0.0 && m.c2 > 0.0) {
            return Err(Error::Domain(format!(
                "measurement concentrations must be positive, got c1 = {}, c2 = {}",
                m.c1, m.c2
            )));
        }
        if !m.q_m.is_finite() {
            return Err(Error::Domain("non-finite flux measurement".into()));
        }
        let a = Self::regressor(m.c1, m.c2);
        let slack = FEAS_SLACK * m.q_m.abs().max(1.0);
        self.rows.push(HalfSpace::new(a, m.q_m + self.sigma + slack));
        self.rows.push(HalfSpace::new([-a[0], -a[1], -a[2]], -(m.q_m - self.sigma) + slack));
        Ok(())
    }

    pub fn with_measurement(mut self, m: &Measurement) -> Result<Self> {
        self.add_measurement(m)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.rows
    }

    /// Drop rows implied by another row with the identical regressor.
    pub fn pruned(&self) -> ConstraintSet {
        let mut keep: Vec<HalfSpace> = Vec::with_capacity(self.rows.len());
        for h in &self.rows {
            match keep.iter_mut().find(|k| k.a == h.a) {
                Some(k) => k.b = k.b.min(h.b),
                None => keep.push(*h),
            }
        }
        ConstraintSet { rows: keep, sigma: self.sigma }
    }
}

fn objective(k: usize) -> [f64; 3] {
    let mut c = [0.0; 3];
    c[k / 2] = if k % 2 == 0 { -1.0 } else { 1.0 };
    c
}

fn lp_failure(e: LpError) -> Error {
    match e {
        LpError::Infeasible => Error::ModelInvalidated(
            "no parameter vector is consistent with the measurements and the prior box".into(),
        ),
        LpError::Unbounded => Error::ModelInvalidated("unbounded estimation LP".into()),
    }
}

/// Widen `v` by the outward margin and snap it to a power-of-two grid, so
/// LP optima that differ only in the last bits report the same bound.
fn outward(v: f64, up: bool) -> f64 {
    let scale = v.abs().max(1.0);
    let q = (2.0f64).powi(scale.log2().floor() as i32 - 34);
    if up {
        ((v + OUTWARD * scale) / q).ceil() * q
    } else {
        ((v - OUTWARD * scale) / q).floor() * q
    }
}

fn assemble(prior: &ParamBox, x: &[[f64; 3]; 6]) -> ParamBox {
    let mut out = *prior;
    for j in 0..3 {
        out.lo[j] = outward(x[2 * j][j], false).max(prior.lo[j]);
        out.hi[j] = outward(x[2 * j + 1][j], true).min(prior.hi[j]);
    }
    out
}

/// Guaranteed box: the bounds of `p` over all half-spaces of `cs` and `prior`.
pub fn bound_params(cs: &ConstraintSet, prior: &ParamBox) -> Result<ParamBox> {
    prior.validate()?;
    if cs.is_empty() {
        return Ok(*prior);
    }
    let mut x = [[0.0; 3]; 6];
    for (k, xk) in x.iter_mut().enumerate() {
        *xk = solve_lp(objective(k), cs.halfspaces(), prior).map_err(lp_failure)?.x;
    }
    Ok(assemble(prior, &x))
}

/// Streaming estimator: keeps the six LP optima and only re-solves the LPs
/// whose optimum is cut by a new measurement. Reported boxes are nested.
#[derive(Debug, Clone)]
pub struct SetMembershipEstimator {
    cs: ConstraintSet,
    prior: ParamBox,
    sols: [Option<LpSolution>; 6],
    current: ParamBox,
}

impl SetMembershipEstimator {
    pub fn new(prior: ParamBox, sigma: f64) -> Result<Self> {
        prior.validate()?;
        Ok(Self {
            cs: ConstraintSet::new(sigma)?,
            prior,
            sols: Default::default(),
            current: prior,
        })
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.current
    }

    pub fn prior(&self) -> &ParamBox {
        &self.prior
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.cs
    }

    pub fn push(&mut self, m: &Measurement) -> Result<&ParamBox> {
        self.cs.add_measurement(m)?;
        let rows = self.cs.halfspaces();
        let new_idx = [rows.len() - 2, rows.len() - 1];
        let mut changed = false;
        for k in 0..6 {
            let cut = match &self.sols[k] {
                None => true,
                Some(s) => new_idx.iter().any(|&i| rows[i].violation(&s.x) > 1e-12 * rows[i].b.abs().max(1.0)),
            };
            if !cut {
                continue;
            }
            let mut warm: Vec<usize> = match &self.sols[k] {
                Some(s) => s
                    .working_set
                    .iter()
                    .copied()
                    .filter(|&i| rows[i].violation(&s.x) >= -1e-9 * rows[i].b.abs().max(1.0))
                    .collect(),
                None => Vec::new(),
            };
            warm.extend(new_idx);
            let sol = solve_lp_warm(objective(k), rows, &self.prior, warm).map_err(lp_failure)?;
            self.sols[k] = Some(sol);
            changed = true;
        }
        if changed {
            let x: [[f64; 3]; 6] = std::array::from_fn(|k| self.sols[k].as_ref().map_or([0.0; 3], |s| s.x));
            let fresh = assemble(&self.prior, &x);
            // Keep nesting exact under rounding.
            self.current = fresh.intersect(&self.current).ok_or_else(|| {
                Error::ModelInvalidated("estimated box became empty".into())
            })?;
        }
        Ok(&self.current)
    }
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    t: f64,
    q_m: f64,
    c1: f64,
    c2: f64,
}

/// Read measurements from CSV with header `t,q_m,c1,c2`.
pub fn read_measurements<R: Read>(r: R) -> Result<Vec<Measurement>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    for key in ["t", "q_m", "c1", "c2"] {
        if !headers.iter().any(|h| h == key) {
            return Err(Error::Config(format!("measurement CSV lacks column `{key}`")));
        }
    }
    rdr.deserialize::<MeasurementRow>()
        .map(|row| {
            let row = row?;
            Ok(Measurement { t: row.t, q_m: row.q_m, c1: row.c1, c2: row.c2 })
        })
        .collect()
}

pub fn write_measurements<W: Write>(w: W, ms: &[Measurement]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "q_m", "c1", "c2"])?;
    for m in ms {
        out.write_record([m.t.to_string(), m.q_m.to_string(), m.c1.to_string(), m.c2.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Write boxes as CSV rows `t,p1_lo,p1_hi,p2_lo,p2_hi,p3_lo,p3_hi`.
pub fn write_bounds<W: Write>(w: W, rows: &[(f64, ParamBox)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "p1_lo", "p1_hi", "p2_lo", "p2_hi", "p3_lo", "p3_hi"])?;
    for (t, b) in rows {
        let mut rec = vec![t.to_string()];
        for j in 0..3 {
            rec.push(b.lo[j].to_string());
            rec.push(b.hi[j].to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Run the streaming estimator over `ms`, returning the box after each sample.
pub fn estimate_stream(prior: &ParamBox, sigma: f64, ms: &[Measurement]) -> Result<Vec<(f64, ParamBox)>> {
    let mut est = SetMembershipEstimator::new(*prior, sigma)?;
    ms.iter().map(|m| Ok((m.t, *est.push(m)?))).collect()
}
