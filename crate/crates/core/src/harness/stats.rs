//! Box-plot statistics: linear-interpolation quantiles, Tukey whiskers.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::{BatchResult, StrategyKind};

/// Quantile of sorted data, interpolating linearly between order statistics
/// at position `(n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub p95: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub min: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Err(Error::Config("no finite values to summarize".into()));
        }
        v.sort_by(f64::total_cmp);
        let q25 = quantile_sorted(&v, 0.25);
        let q75 = quantile_sorted(&v, 0.75);
        let iqr = q75 - q25;
        let (fence_lo, fence_hi) = (q25 - 1.5 * iqr, q75 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= fence_lo && *x <= fence_hi).collect();
        Ok(Self {
            n: v.len(),
            median: quantile_sorted(&v, 0.5),
            q25,
            q75,
            p95: quantile_sorted(&v, 0.95),
            whisker_lo: inside.first().copied().unwrap_or(q25),
            whisker_hi: inside.last().copied().unwrap_or(q75),
            min: v[0],
            max: v[v.len() - 1],
            outliers: v.iter().copied().filter(|x| *x < fence_lo || *x > fence_hi).collect(),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy: StrategyKind,
    pub batches: usize,
    pub failed: usize,
    pub tf: BoxStats,
    pub regret: BoxStats,
    /// Batches per re-optimization count.
    pub reopt_hist: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub strategies: Vec<StrategyStats>,
}

impl SummaryStats {
    pub fn get(&self, k: StrategyKind) -> Option<&StrategyStats> {
        self.strategies.iter().find(|s| s.strategy == k)
    }

    /// One row per strategy and metric.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "strategy", "metric", "n", "failed", "median", "q25", "q75", "p95", "whisker_lo", "whisker_hi", "min",
            "max", "n_outliers", "outliers",
        ])?;
        for s in &self.strategies {
            for (name, b) in [("tf", &s.tf), ("regret", &s.regret)] {
                let outl: Vec<String> = b.outliers.iter().map(f64::to_string).collect();
                out.write_record([
                    s.strategy.to_string(),
                    name.to_string(),
                    b.n.to_string(),
                    s.failed.to_string(),
                    b.median.to_string(),
                    b.q25.to_string(),
                    b.q75.to_string(),
                    b.p95.to_string(),
                    b.whisker_lo.to_string(),
                    b.whisker_hi.to_string(),
                    b.min.to_string(),
                    b.max.to_string(),
                    b.outliers.len().to_string(),
                    outl.join(";"),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for SummaryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<9} {:<7} {:>6} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>5}",
            "strategy", "metric", "n", "fail", "median", "q25", "q75", "p95", "max", "outl"
        )?;
        for s in &self.strategies {
            for (name, b) in [("tf", &s.tf), ("regret", &s.regret)] {
                writeln!(
                    f,
                    "{:<9} {:<7} {:>6} {:>5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>5}",
                    s.strategy.as_str(),
                    name,
                    b.n,
                    s.failed,
                    b.median,
                    b.q25,
                    b.q75,
                    b.p95,
                    b.max,
                    b.outliers.len()
                )?;
            }
        }
        Ok(())
    }
}

/// Per-strategy statistics of final time and regret over feasible batches.
pub fn summarize(results: &[BatchResult]) -> Result<SummaryStats> {
    if results.is_empty() {
        return Err(Error::Config("cannot summarize an empty result set".into()));
    }
    let mut kinds: Vec<StrategyKind> = results.iter().map(|r| r.strategy).collect();
    kinds.sort();
    kinds.dedup();
    let mut strategies = Vec::with_capacity(kinds.len());
    for k in kinds {
        let rs: Vec<&BatchResult> = results.iter().filter(|r| r.strategy == k).collect();
        let ok: Vec<&&BatchResult> = rs.iter().filter(|r| r.feasible && r.tf.is_finite()).collect();
        if ok.is_empty() {
            return Err(Error::Config(format!("strategy {k} has no successful batch")));
        }
        let tf: Vec<f64> = ok.iter().map(|r| r.tf).collect();
        let regret: Vec<f64> = ok.iter().map(|r| r.regret).collect();
        let mut reopt_hist = BTreeMap::new();
        for r in &ok {
            *reopt_hist.entry(r.reopt_count).or_insert(0) += 1;
        }
        strategies.push(StrategyStats {
            strategy: k,
            batches: rs.len(),
            failed: rs.len() - ok.len(),
            tf: BoxStats::from_values(&tf)?,
            regret: BoxStats::from_values(&regret)?,
            reopt_hist,
        });
    }
    Ok(SummaryStats { strategies })
}
