//! Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero
//! when a criterion outside `KNOWN_UNMET` fails, or when one inside it passes.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use diafilt_rto::estimation::{bound_params, estimate_stream, ConstraintSet, ParamBox};
use diafilt_rto::harness::{draw_truth, monte_carlo, noise_rng, summarize, truth_rng, Case, ExperimentConfig};
use diafilt_rto::policy::{compute_switch_times, singular_control};
use diafilt_rto::process::{flux, GammaParams, Measurement, PlantParams, ProcessSpec};
use diafilt_rto::reachability::{project_switch_windows_gamma, within, GammaBox, DEFAULT_LHS};
use diafilt_rto::strategy::{run_strategy, BatchResult, Context, RunOptions, StrategyConfig, StrategyKind};

// Pinned tolerances.
const REFERENCE_REL_TOL: f64 = 0.10;
const ORACLE_TOL_H: f64 = 1e-3;
const SWITCH_RUNTIME_S: f64 = 1.0;
const PIN_REL_TOL: f64 = 1e-6;
const ESTIMATION_BATCHES: u64 = 100;
const GRID_N: usize = 101;
const FULL_ESTIMATION_RUNTIME_S: f64 = 10.0;
const P3_BEFORE_MAX_REDUCTION: f64 = 0.01;
const P3_AFTER_MIN_REDUCTION: f64 = 0.50;
const P3_AFTER_WINDOW_H: f64 = 0.5;
const P12_BEFORE_MIN_REDUCTION: f64 = 0.50;
const IDENT_BATCHES: u64 = 20;
const CONTAINMENT_DRAWS: u64 = 1000;
/// Rounding slack on point-box window widths [h].
const POINT_WIDTH_SLACK_H: f64 = 1e-12;
const MC_BATCHES: usize = 1000;
const MC_SEED: u64 = 1;
const MEDIAN_SPREAD_H: f64 = 0.1;
const SINGLE_REOPT_SHARE: f64 = 0.90;
const MC_RUNTIME_S: f64 = 600.0;

/// Criteria implemented faithfully that this model does not meet; see the README.
const KNOWN_UNMET: &[u32] = &[7];

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
}

fn spec() -> ProcessSpec {
    ProcessSpec::default()
}

fn gamma0(case: Case) -> GammaBox {
    GammaBox::around(case.nominal_gamma(), 0.10).unwrap()
}

fn context(case: Case) -> Context {
    Context::new(spec(), gamma0(case), StrategyConfig::default()).unwrap()
}

fn p_of(g: GammaParams) -> PlantParams {
    PlantParams::from_gamma(g, spec().effective_area())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---------------------------------------------------------------- oracle

/// Fixed-step RK4 of the two-arc policy: u = 0 until the flux reaches p2 + p3,
/// then u = p2 / (p2 + p3) until c1/c2 reaches the final ratio.
fn rk4_policy(p: &PlantParams, s: &ProcessSpec, h: f64) -> (f64, f64) {
    let m = s.c1_0 * s.v0;
    let q = |c1: f64, c2: f64| p.p1 - p.p2 * c1.ln() - p.p3 * c2.ln();
    let f = |y: [f64; 2], u: f64| {
        let qq = q(y[0], y[1]);
        [y[0] * y[0] * qq * (1.0 - u) / m, -y[0] * y[1] * qq * u / m]
    };
    let step = |y: [f64; 2], u: f64, h: f64| {
        let k1 = f(y, u);
        let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]], u);
        let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]], u);
        let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]], u);
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    };
    // march until g changes sign, then bisect the last step length
    let run = |y0: [f64; 2], t0: f64, u: f64, g: &dyn Fn([f64; 2]) -> f64| {
        let (mut y, mut t) = (y0, t0);
        loop {
            let yn = step(y, u, h);
            if g(yn) <= 0.0 {
                let (mut a, mut b) = (0.0, h);
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    if g(step(y, u, mid)) > 0.0 { a = mid } else { b = mid }
                }
                return (t + b, step(y, u, b));
            }
            y = yn;
            t += h;
        }
    };
    let us = p.p2 / (p.p2 + p.p3);
    let (t1, y1) = run([s.c1_0, s.c2_0], 0.0, 0.0, &|y| q(y[0], y[1]) - p.p2 - p.p3);
    let target = s.c1_f / s.c2_f;
    let (t2, _) = run(y1, t1, us, &|y| target - y[0] / y[1]);
    (t1, t2)
}

fn criterion_1() -> Verdict {
    let s = spec();
    let mut pass = true;
    let mut parts = Vec::new();
    for (case, t1_ref, tf_ref) in [(Case::LimitingFlux, 2.625, 8.327), (Case::Generalized, 2.561, 9.277)] {
        let p = p_of(case.nominal_gamma());
        let clock = Instant::now();
        let pi = compute_switch_times(&p, &s).unwrap();
        let dt = clock.elapsed().as_secs_f64();
        let (o1, of) = rk4_policy(&p, &s, 1e-3);
        let ok = rel(pi.t1, t1_ref) <= REFERENCE_REL_TOL
            && rel(pi.tf, tf_ref) <= REFERENCE_REL_TOL
            && (pi.t1 - o1).abs() <= ORACLE_TOL_H
            && (pi.tf - of).abs() <= ORACLE_TOL_H
            && dt < SWITCH_RUNTIME_S;
        pass &= ok;
        parts.push(format!(
            "{case}: t1 {:.4} (ref {t1_ref}, rk4 {o1:.4}) tf {:.4} (ref {tf_ref}, rk4 {of:.4}) {:.1} ms",
            pi.t1,
            pi.tf,
            dt * 1e3
        ));
    }
    Verdict { id: 1, pass, detail: parts.join("; ") }
}

fn criterion_2() -> Verdict {
    let s = spec();
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for case in [Case::LimitingFlux, Case::Generalized] {
        let ctx = context(case);
        let mut truths = vec![ctx.p_nominal()];
        truths.extend((0..10).map(|i| draw_truth(&ctx.gamma0, s.effective_area(), &mut truth_rng(3, i))));
        for p in truths {
            let opts = RunOptions { record_trajectory: true, ..Default::default() };
            let r = run_strategy(StrategyKind::Optimal, &ctx, &p, noise_rng(3, 0), opts).unwrap();
            let us = singular_control(&p).unwrap();
            for pt in &r.trajectory.unwrap().points {
                if pt.u == us && pt.t >= r.t1 && pt.t <= r.t2 {
                    let q = flux(pt.c1, pt.c2, &p).unwrap();
                    worst = worst.max((q - p.p2 - p.p3).abs() / (p.p2 + p.p3));
                    checked += 1;
                }
            }
        }
    }
    Verdict {
        id: 2,
        pass: checked > 1000 && worst <= PIN_REL_TOL,
        detail: format!("{checked} singular-arc samples, max |q - (p2+p3)|/(p2+p3) = {worst:.2e}"),
    }
}

/// Bounding boxes of the 101^3 grid nodes of `grid` that satisfy every
/// constraint exactly (`.0`) and within the change across half a cell (`.1`).
/// Every feasible point has a relaxed-feasible node within half a cell, so
/// the true hull lies between the two up to one cell.
fn grid_hulls(cs: &ConstraintSet, grid: &ParamBox) -> (Option<ParamBox>, Option<ParamBox>) {
    let step: [f64; 3] = std::array::from_fn(|j| (grid.hi[j] - grid.lo[j]) / (GRID_N - 1) as f64);
    let axis = |j: usize| -> Vec<f64> {
        if step[j] > 0.0 {
            (0..GRID_N).map(|k| grid.lo[j] + step[j] * k as f64).collect()
        } else {
            vec![grid.lo[j]]
        }
    };
    let (a0, a1, a2) = (axis(0), axis(1), axis(2));
    let hs = cs.halfspaces();
    let slack: Vec<f64> = hs.iter().map(|h| 0.5 * (0..3).map(|j| h.a[j].abs() * step[j]).sum::<f64>()).collect();
    let mut hull = [([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]); 2];
    for &x in &a0 {
        for &y in &a1 {
            for &z in &a2 {
                let mut strict = true;
                let mut relaxed = true;
                for (h, sl) in hs.iter().zip(&slack) {
                    let v = h.a[0] * x + h.a[1] * y + h.a[2] * z - h.b;
                    if v > 0.0 {
                        strict = false;
                        if v > *sl {
                            relaxed = false;
                            break;
                        }
                    }
                }
                for (k, hit) in [strict, relaxed].into_iter().enumerate() {
                    if hit {
                        for (j, c) in [x, y, z].into_iter().enumerate() {
                            hull[k].0[j] = hull[k].0[j].min(c);
                            hull[k].1[j] = hull[k].1[j].max(c);
                        }
                    }
                }
            }
        }
    }
    let mk = |(lo, hi): ([f64; 3], [f64; 3])| (lo[0] <= hi[0]).then_some(ParamBox { lo, hi });
    (mk(hull[0]), mk(hull[1]))
}

fn criterion_3() -> Verdict {
    let s = spec();
    let mut sound = true;
    let mut nested = true;
    let mut boxes = 0usize;
    let mut stream: Vec<Measurement> = Vec::new();
    for i in 0..ESTIMATION_BATCHES {
        let case = if i % 2 == 0 { Case::LimitingFlux } else { Case::Generalized };
        let ctx = context(case);
        let p = draw_truth(&ctx.gamma0, s.effective_area(), &mut truth_rng(17, i));
        let opts = RunOptions { keep_bounds: true, keep_measurements: i == 1, ..Default::default() };
        let r = run_strategy(StrategyKind::Adaptive, &ctx, &p, noise_rng(17, i), opts).unwrap();
        if i == 1 {
            stream = r.measurements.clone().unwrap();
        }
        let rows = r.bounds.unwrap();
        boxes += rows.len();
        sound &= rows.iter().all(|(_, b)| b.contains(&p));
        nested &= rows.windows(2).all(|w| w[0].1.contains_box(&w[1].1));
    }

    // grid oracle on prefixes of one generalized-case stream
    let ctx = context(Case::Generalized);
    let mut grid_ok = true;
    let mut grid_notes = Vec::new();
    for n in [1usize, 5, 20, 100, 400] {
        let mut cs = ConstraintSet::new(s.sigma).unwrap();
        for m in &stream[..n] {
            cs.add_measurement(m).unwrap();
        }
        let lp = bound_params(&cs, &ctx.prior).unwrap();
        let pad: [f64; 3] = std::array::from_fn(|j| 0.05 * lp.width()[j]);
        let grid = ParamBox {
            lo: std::array::from_fn(|j| (lp.lo[j] - pad[j]).max(ctx.prior.lo[j])),
            hi: std::array::from_fn(|j| (lp.hi[j] + pad[j]).min(ctx.prior.hi[j])),
        };
        let cell: [f64; 3] = std::array::from_fn(|j| grid.width()[j] / (GRID_N - 1) as f64);
        let ok = match grid_hulls(&cs, &grid) {
            (Some(strict), Some(relaxed)) => (0..3).all(|j| {
                let tiny = 1e-9 * lp.hi[j].abs().max(1.0);
                strict.lo[j] >= lp.lo[j] - tiny
                    && strict.hi[j] <= lp.hi[j] + tiny
                    && relaxed.lo[j] <= lp.lo[j] + cell[j] + tiny
                    && relaxed.hi[j] >= lp.hi[j] - cell[j] - tiny
            }),
            _ => false,
        };
        grid_ok &= ok;
        grid_notes.push(format!("{n}:{}", if ok { "ok" } else { "off" }));
    }

    let clock = Instant::now();
    let rows = estimate_stream(&ctx.prior, s.sigma, &stream).unwrap();
    let dt = clock.elapsed().as_secs_f64();
    let fast = dt < FULL_ESTIMATION_RUNTIME_S && rows.len() == stream.len();
    Verdict {
        id: 3,
        pass: sound && nested && grid_ok && fast,
        detail: format!(
            "{boxes} boxes over {ESTIMATION_BATCHES} batches, sound {sound}, nested {nested}; grid {}; full stream {} samples in {dt:.2} s",
            grid_notes.join(" "),
            stream.len()
        ),
    }
}

fn criterion_4() -> Verdict {
    let s = spec();
    let ctx = context(Case::Generalized);
    let prior = ctx.prior.width();
    let mut pass = true;
    let (mut p3_before, mut p3_after, mut p12_before) = (0.0f64, 1.0f64, 1.0f64);
    for i in 0..IDENT_BATCHES {
        let p = draw_truth(&ctx.gamma0, s.effective_area(), &mut truth_rng(29, i));
        let opts = RunOptions { keep_bounds: true, ..Default::default() };
        let r = run_strategy(StrategyKind::Adaptive, &ctx, &p, noise_rng(29, i), opts).unwrap();
        let rows = r.bounds.unwrap();
        let before = rows.iter().rev().find(|(t, _)| *t < r.t1).unwrap().1.width();
        let after = rows.iter().rev().find(|(t, _)| *t <= r.t1 + P3_AFTER_WINDOW_H).unwrap().1.width();
        let red = |w: f64, j: usize| 1.0 - w / prior[j];
        p3_before = p3_before.max(red(before[2], 2));
        p3_after = p3_after.min(red(after[2], 2));
        p12_before = p12_before.min(red(before[0], 0)).min(red(before[1], 1));
        pass &= red(before[2], 2) <= P3_BEFORE_MAX_REDUCTION
            && red(after[2], 2) >= P3_AFTER_MIN_REDUCTION
            && red(before[0], 0) >= P12_BEFORE_MIN_REDUCTION
            && red(before[1], 1) >= P12_BEFORE_MIN_REDUCTION;
    }
    Verdict {
        id: 4,
        pass,
        detail: format!(
            "{IDENT_BATCHES} batches: p3 reduction before switch <= {:.2}%, {P3_AFTER_WINDOW_H} h after >= {:.1}%, p1/p2 before switch >= {:.1}%",
            100.0 * p3_before,
            100.0 * p3_after,
            100.0 * p12_before
        ),
    }
}

fn criterion_5() -> Verdict {
    let s = spec();
    let mut violations = 0usize;
    let mut widest: f64 = 0.0;
    for case in [Case::LimitingFlux, Case::Generalized] {
        let g = gamma0(case);
        let w = project_switch_windows_gamma(&g, &s, DEFAULT_LHS).unwrap();
        let band = g.u_band();
        for i in 0..CONTAINMENT_DRAWS {
            let p = draw_truth(&g, s.effective_area(), &mut truth_rng(41, i));
            let pi = compute_switch_times(&p, &s).unwrap();
            let us = singular_control(&p).unwrap();
            if !(within(w.t1, pi.t1) && within(w.tf, pi.tf) && within(band, us) && within(w.us, us)) {
                violations += 1;
            }
        }
        let wp = project_switch_windows_gamma(&GammaBox::point(case.nominal_gamma()), &s, DEFAULT_LHS).unwrap();
        for iv in [wp.t1, wp.t2, wp.tf] {
            widest = widest.max(iv[1] - iv[0]);
        }
    }
    Verdict {
        id: 5,
        pass: violations == 0 && widest <= 2.0 * s.tol_event + POINT_WIDTH_SLACK_H,
        detail: format!(
            "{} draws, {violations} violations; widest point-box window {widest:.2e} h",
            2 * CONTAINMENT_DRAWS
        ),
    }
}

fn stats_of(rows: &[BatchResult], k: StrategyKind) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().filter(|r| r.strategy == k && r.feasible).map(|r| r.regret).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn criterion_6() -> Verdict {
    use StrategyKind::*;
    let mut pass = true;
    let mut parts = Vec::new();
    let clock = Instant::now();
    for case in [Case::LimitingFlux, Case::Generalized] {
        let cfg = ExperimentConfig { case, n_batches: MC_BATCHES, master_seed: MC_SEED, ..Default::default() };
        let rows = monte_carlo(&cfg).unwrap();
        let failed = rows.iter().filter(|r| !r.feasible).count();
        let sum = summarize(&rows).unwrap();
        let med: Vec<f64> = StrategyKind::ALL.iter().map(|k| sum.get(*k).unwrap().tf.median).collect();
        let spread = med.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - med.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = |k| sum.get(k).unwrap().regret.max;
        let p95 = |k| sum.get(k).unwrap().regret.p95;
        let mut ok = failed == 0 && spread <= MEDIAN_SPREAD_H && p95(Adaptive) < p95(Nominal);
        let mut line = format!(
            "{case}: median spread {spread:.4} h, max regret a/r/n {:.4}/{:.4}/{:.4}, p95 a/n {:.4}/{:.4}",
            max(Adaptive),
            max(Robust),
            max(Nominal),
            p95(Adaptive),
            p95(Nominal)
        );
        if case == Case::LimitingFlux {
            ok &= max(Adaptive) <= max(Robust) && max(Robust) <= max(Nominal);
            let ad: Vec<&BatchResult> = rows.iter().filter(|r| r.strategy == Adaptive).collect();
            let single = ad.iter().filter(|r| r.reopt_count == 1).count() as f64 / ad.len() as f64;
            ok &= single >= SINGLE_REOPT_SHARE;
            line += &format!(", single re-optimization {:.1}%", 100.0 * single);
            // harness-level properties, reported alongside
            let (an, aa) = (stats_of(&rows, Nominal), stats_of(&rows, Adaptive));
            let iqr = |v: &[f64]| {
                diafilt_rto::harness::quantile_sorted(v, 0.75) - diafilt_rto::harness::quantile_sorted(v, 0.25)
            };
            line += &format!(
                " [max n/a ratio {:.1}, IQR a/n {:.5}/{:.5}]",
                an.last().unwrap() / aa.last().unwrap().max(f64::MIN_POSITIVE),
                iqr(&aa),
                iqr(&an)
            );
        }
        if failed > 0 {
            line += &format!(", {failed} failed runs");
        }
        pass &= ok;
        parts.push(line);
    }
    let dt = clock.elapsed().as_secs_f64();
    pass &= dt < MC_RUNTIME_S;
    parts.push(format!("2 x {MC_BATCHES} batches in {dt:.1} s"));
    Verdict { id: 6, pass, detail: parts.join("; ") }
}

fn criterion_7() -> Verdict {
    let dt = spec().dt_hours();
    let c1 = context(Case::LimitingFlux);
    let (r1, n1) = (c1.robust_decision().unwrap(), c1.nominal_decision().unwrap());
    let c2 = context(Case::Generalized);
    let (r2, n2) = (c2.robust_decision().unwrap(), c2.nominal_decision().unwrap());
    let same = (r1.t1_commit - n1.t1_commit).abs() <= dt && (r1.u_s_commit - n1.u_s_commit).abs() <= 1e-4;
    let order = r2.t1_commit < n2.t1_commit;
    Verdict {
        id: 7,
        pass: same && order,
        detail: format!(
            "case 1 robust t1 {:.4} vs nominal {:.4} ({:+.0} s, {}); case 2 robust t1 {:.4} < nominal {:.4}: {order}",
            r1.t1_commit,
            n1.t1_commit,
            (r1.t1_commit - n1.t1_commit) * 3600.0,
            if same { "within one sample" } else { "differs" },
            r2.t1_commit,
            n2.t1_commit
        ),
    }
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_diafilt-rto"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_8() -> Verdict {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut ok = true;
    for d in &runs {
        let d = d.path();
        std::fs::write(d.join("box.json"), r#"{"lo":[0.027,900,0.09],"hi":[0.033,1100,0.11]}"#).unwrap();
        ok &= cli(d, &["simulate", "--case", "2", "--strategy", "adaptive", "--seed", "5", "--out", "traj.csv",
            "--measurements", "meas.csv", "--bounds", "bounds.csv", "--result", "result.json"]);
        ok &= cli(d, &["estimate", "--input", "meas.csv", "--case", "2", "--out", "est.csv"]);
        ok &= cli(d, &["reach", "--input", "box.json", "--gamma", "--out", "windows.json"]);
        ok &= cli(d, &["montecarlo", "--n", "8", "--seed", "5", "--case", "1", "--out", "mc.csv", "--summary", "mc_sum.csv"]);
        ok &= cli(d, &["summarize", "--input", "mc.csv", "--out", "sum.csv"]);
    }
    let files = ["traj.csv", "meas.csv", "bounds.csv", "result.json", "est.csv", "windows.json", "mc.csv", "mc_sum.csv", "sum.csv"];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(runs[0].path().join(f));
        let b = std::fs::read(runs[1].path().join(f));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() => {}
            _ => differing.push(f),
        }
    }
    Verdict {
        id: 8,
        pass: ok && differing.is_empty(),
        detail: format!(
            "5 subcommands run twice, {} output files compared, {}",
            files.len(),
            if differing.is_empty() { "all byte-identical".to_string() } else { format!("differ: {differing:?}") }
        ),
    }
}

fn main() {
    let criteria: [fn() -> Verdict; 8] =
        [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8];
    let mut unexpected = Vec::new();
    for c in criteria {
        let clock = Instant::now();
        let v = c();
        println!(
            "{} criterion {}: {} ({:.1} s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.detail,
            clock.elapsed().as_secs_f64()
        );
        if v.pass == KNOWN_UNMET.contains(&v.id) {
            unexpected.push(v.id);
        }
    }
    if !KNOWN_UNMET.is_empty() {
        println!("known unmet: {KNOWN_UNMET:?}");
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
