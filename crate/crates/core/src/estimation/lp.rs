//! Three-variable linear programs over a box and a list of half-spaces.
//!
//! The dense simplex (dictionary form, Bland's rule, auxiliary-variable
//! phase 1) runs on a small working set of constraints; a cutting-plane loop
//! adds the most violated remaining constraints until none is violated.

use serde::{Deserialize, Serialize};

use super::ParamBox;

/// `a . x <= b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub a: [f64; 3],
    pub b: f64,
}

impl HalfSpace {
    pub const fn new(a: [f64; 3], b: f64) -> Self {
        Self { a, b }
    }

    #[inline]
    pub fn violation(&self, x: &[f64; 3]) -> f64 {
        dot(&self.a, x) - self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: [f64; 3],
    pub value: f64,
    /// Indices of the half-spaces the final simplex run was given.
    pub working_set: Vec<usize>,
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

const PIVOT_TOL: f64 = 1e-12;
const MAX_ADD: usize = 8;

/// Maximize `objective . x` subject to `halfspaces` and `bx`.
pub fn solve_lp(objective: [f64; 3], halfspaces: &[HalfSpace], bx: &ParamBox) -> Result<LpSolution, LpError> {
    solve_lp_warm(objective, halfspaces, bx, Vec::new())
}

/// As [`solve_lp`], seeding the working set with `working` (indices into `halfspaces`).
pub fn solve_lp_warm(
    objective: [f64; 3],
    halfspaces: &[HalfSpace],
    bx: &ParamBox,
    mut working: Vec<usize>,
) -> Result<LpSolution, LpError> {
    working.sort_unstable();
    working.dedup();
    working.retain(|&i| i < halfspaces.len());
    let mut in_set = vec![false; halfspaces.len()];
    for &i in &working {
        in_set[i] = true;
    }
    loop {
        let rows: Vec<HalfSpace> = working.iter().map(|&i| halfspaces[i]).collect();
        let x = solve_dense(&objective, &rows, bx)?;

        let mut worst: Vec<(f64, usize)> = Vec::new();
        for (i, h) in halfspaces.iter().enumerate() {
            if in_set[i] {
                continue;
            }
            let v = h.violation(&x);
            if v > 1e-12 * h.b.abs().max(1.0) {
                worst.push((v, i));
            }
        }
        if worst.is_empty() {
            return Ok(LpSolution { x, value: dot(&objective, &x), working_set: working });
        }
        worst.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in worst.iter().take(MAX_ADD) {
            in_set[i] = true;
            working.push(i);
        }
        working.sort_unstable();
    }
}

/// Simplex in shifted variables `y = x - lo >= 0`; box upper bounds become rows.
fn solve_dense(c: &[f64; 3], rows: &[HalfSpace], bx: &ParamBox) -> Result<[f64; 3], LpError> {
    let n = 3;
    let mut a: Vec<[f64; 3]> = Vec::with_capacity(rows.len() + n);
    let mut b: Vec<f64> = Vec::with_capacity(rows.len() + n);
    for j in 0..n {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        a.push(e);
        b.push(bx.hi[j] - bx.lo[j]);
    }
    for h in rows {
        a.push(h.a);
        b.push(h.b - dot(&h.a, &bx.lo));
    }
    let mut tab = Tableau::new(&a, &b, c);
    tab.initialize()?;
    tab.optimize()?;
    let y = tab.primal();
    let mut x = [bx.lo[0] + y[0], bx.lo[1] + y[1], bx.lo[2] + y[2]];

    // Recompute the vertex from the original data of its three tight rows.
    let tight = tab.tight_rows();
    if tight.len() == n {
        let mut m = [[0.0; 3]; 3];
        let mut r = [0.0; 3];
        for (k, &row) in tight.iter().enumerate() {
            if row < n {
                m[k][row] = 1.0;
                r[k] = bx.hi[row];
            } else if row < a.len() {
                let h = &rows[row - n];
                m[k] = h.a;
                r[k] = h.b;
            } else {
                let j = row - a.len();
                m[k][j] = 1.0;
                r[k] = bx.lo[j];
            }
        }
        if let Some(xs) = solve3(m, r) {
            if xs.iter().zip(x.iter()).all(|(p, q)| (p - q).abs() <= 1e-6 * q.abs().max(1.0)) {
                x = xs;
            }
        }
    }
    for j in 0..n {
        x[j] = x[j].clamp(bx.lo[j], bx.hi[j]);
    }
    Ok(x)
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for i in col + 1..3 {
            let f = m[i][col] / m[col][col];
            for k in col..3 {
                m[i][k] -= f * m[col][k];
            }
            r[i] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut s = r[i];
        for k in i + 1..3 {
            s -= m[i][k] * x[k];
        }
        x[i] = s / m[i][i];
    }
    Some(x)
}

/// Dictionary `x_B = b - A x_N`, `z = v + c . x_N`. Variable ids: originals
/// `0..n`, slacks `n..n+m`, auxiliary `n+m`.
struct Tableau {
    n: usize,
    m: usize,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    v: f64,
    basic: Vec<usize>,
    nonbasic: Vec<usize>,
    orig_c: [f64; 3],
}

impl Tableau {
    fn new(a: &[[f64; 3]], b: &[f64], c: &[f64; 3]) -> Self {
        let n = 3;
        let m = a.len();
        Self {
            n,
            m,
            a: a.iter().map(|r| r.to_vec()).collect(),
            b: b.to_vec(),
            c: c.to_vec(),
            v: 0.0,
            basic: (n..n + m).collect(),
            nonbasic: (0..n).collect(),
            orig_c: *c,
        }
    }

    fn pivot(&mut self, l: usize, e: usize) {
        let ale = self.a[l][e];
        let cols = self.nonbasic.len();
        self.b[l] /= ale;
        for j in 0..cols {
            if j != e {
                self.a[l][j] /= ale;
            }
        }
        self.a[l][e] = 1.0 / ale;
        let (bl, rowl) = (self.b[l], self.a[l].clone());
        for i in 0..self.m {
            if i == l {
                continue;
            }
            let f = self.a[i][e];
            if f == 0.0 {
                continue;
            }
            self.b[i] -= f * bl;
            for j in 0..cols {
                if j != e {
                    self.a[i][j] -= f * rowl[j];
                }
            }
            self.a[i][e] = -f * rowl[e];
        }
        let ce = self.c[e];
        self.v += ce * bl;
        for j in 0..cols {
            if j != e {
                self.c[j] -= ce * rowl[j];
            }
        }
        self.c[e] = -ce * rowl[e];
        std::mem::swap(&mut self.basic[l], &mut self.nonbasic[e]);
    }

    /// Bland's rule: lowest-index improving variable enters; ratio ties go to
    /// the lowest-index basic variable.
    fn optimize(&mut self) -> Result<(), LpError> {
        for _ in 0..10_000 {
            let cscale = self.c.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            let mut enter: Option<usize> = None;
            for j in 0..self.nonbasic.len() {
                if self.c[j] > 1e-13 * cscale && enter.map_or(true, |e| self.nonbasic[j] < self.nonbasic[e]) {
                    enter = Some(j);
                }
            }
            let Some(e) = enter else { return Ok(()) };
            let mut leave: Option<(f64, usize)> = None;
            for i in 0..self.m {
                let aie = self.a[i][e];
                if aie > PIVOT_TOL {
                    let ratio = self.b[i].max(0.0) / aie;
                    leave = match leave {
                        None => Some((ratio, i)),
                        Some((r, li)) => {
                            if ratio < r || (ratio == r && self.basic[i] < self.basic[li]) {
                                Some((ratio, i))
                            } else {
                                Some((r, li))
                            }
                        }
                    };
                }
            }
            let Some((_, l)) = leave else { return Err(LpError::Unbounded) };
            self.pivot(l, e);
        }
        // Bland's rule cannot cycle in exact arithmetic; treat runaway as numerical trouble.
        Err(LpError::Infeasible)
    }

    fn initialize(&mut self) -> Result<(), LpError> {
        let (kmin, bmin) = self
            .b
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        if bmin >= 0.0 {
            return Ok(());
        }
        let bscale = self.b.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        let aux = self.n + self.m;
        for row in self.a.iter_mut() {
            row.push(-1.0);
        }
        self.nonbasic.push(aux);
        let e_aux = self.nonbasic.len() - 1;
        self.c = vec![0.0; self.nonbasic.len()];
        self.c[e_aux] = -1.0;
        self.v = 0.0;
        self.pivot(kmin, e_aux);
        self.optimize()?;
        if self.v < -1e-13 * bscale {
            return Err(LpError::Infeasible);
        }
        if let Some(l) = self.basic.iter().position(|&x| x == aux) {
            let e = (0..self.nonbasic.len())
                .filter(|&j| self.a[l][j].abs() > PIVOT_TOL)
                .max_by(|&i, &j| self.a[l][i].abs().total_cmp(&self.a[l][j].abs()).then(j.cmp(&i)))
                .ok_or(LpError::Infeasible)?;
            self.pivot(l, e);
        }
        let e_aux = self.nonbasic.iter().position(|&x| x == aux).expect("auxiliary is nonbasic");
        self.nonbasic.remove(e_aux);
        for row in self.a.iter_mut() {
            row.remove(e_aux);
        }
        for bi in self.b.iter_mut() {
            if *bi < 0.0 {
                *bi = 0.0;
            }
        }
        // Restore the original objective over the current nonbasic set.
        self.c = vec![0.0; self.nonbasic.len()];
        self.v = 0.0;
        for var in 0..self.n {
            let cv = self.orig_c[var];
            if cv == 0.0 {
                continue;
            }
            if let Some(j) = self.nonbasic.iter().position(|&x| x == var) {
                self.c[j] += cv;
            } else if let Some(i) = self.basic.iter().position(|&x| x == var) {
                self.v += cv * self.b[i];
                for j in 0..self.nonbasic.len() {
                    self.c[j] -= cv * self.a[i][j];
                }
            }
        }
        Ok(())
    }

    fn primal(&self) -> [f64; 3] {
        let mut y = [0.0; 3];
        for (i, &var) in self.basic.iter().enumerate() {
            if var < self.n {
                y[var] = self.b[i].max(0.0);
            }
        }
        y
    }

    /// Rows tight at the vertex, numbered as: box-upper rows `0..n`, half-space
    /// rows `n..m`, box-lower bounds `m..m+n`.
    fn tight_rows(&self) -> Vec<usize> {
        self.nonbasic
            .iter()
            .map(|&var| if var < self.n { self.m + var } else { var - self.n })
            .collect()
    }
}
