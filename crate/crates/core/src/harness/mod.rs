//! Monte Carlo experiments: paired truth and noise draws per batch, one row
//! per batch and strategy, box-plot statistics per strategy.

mod stats;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::ParamBox;
use crate::process::{GammaParams, PlantParams, ProcessSpec};
use crate::reachability::GammaBox;
use crate::strategy::{result_record, run_strategy, BatchResult, Context, RunOptions, StrategyConfig, StrategyKind, RESULT_HEADER};

pub use stats::{quantile_sorted, summarize, BoxStats, StrategyStats, SummaryStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// `gamma3 = 0`: the micro-solute passes freely.
    LimitingFlux,
    /// `gamma3 = 0.1`.
    Generalized,
}

impl Case {
    pub fn nominal_gamma(self) -> GammaParams {
        match self {
            Case::LimitingFlux => GammaParams::new(3e-2, 1000.0, 0.0),
            Case::Generalized => GammaParams::new(3e-2, 1000.0, 0.1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Case::LimitingFlux => "limiting_flux",
            Case::Generalized => "generalized",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "1" | "limiting_flux" => Ok(Case::LimitingFlux),
            "2" | "generalized" => Ok(Case::Generalized),
            other => Err(Error::Config(format!("unknown case `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub case: Case,
    pub n_batches: usize,
    pub master_seed: u64,
    /// Relative half-width of the initial gamma-box.
    pub uncertainty_pct: f64,
    pub strategies: Vec<StrategyKind>,
    pub process: ProcessSpec,
    pub strategy: StrategyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: Case::LimitingFlux,
            n_batches: 1000,
            master_seed: 0,
            uncertainty_pct: 0.10,
            strategies: StrategyKind::ALL.to_vec(),
            process: ProcessSpec::default(),
            strategy: StrategyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if self.n_batches == 0 {
            return Err(Error::Config("n_batches must be positive".into()));
        }
        if !(self.uncertainty_pct >= 0.0 && self.uncertainty_pct < 1.0) {
            return Err(Error::Config(format!("uncertainty_pct = {} outside [0, 1)", self.uncertainty_pct)));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategy selected".into()));
        }
        let mut s = self.strategies.clone();
        s.sort();
        s.dedup();
        if s.len() != self.strategies.len() {
            return Err(Error::Config("duplicate strategy".into()));
        }
        Ok(())
    }

    pub fn gamma_box(&self) -> Result<GammaBox> {
        GammaBox::around(self.case.nominal_gamma(), self.uncertainty_pct)
    }

    pub fn context(&self) -> Result<Context> {
        self.validate()?;
        Context::new(self.process.clone(), self.gamma_box()?, self.strategy)
    }
}

/// Generator for the truth of batch `i`.
pub fn truth_rng(master_seed: u64, batch: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(master_seed);
    r.set_stream(2 * batch);
    r
}

/// Generator for the measurement noise of batch `i`.
pub fn noise_rng(master_seed: u64, batch: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(master_seed);
    r.set_stream(2 * batch + 1);
    r
}

fn uniform(lo: [f64; 3], hi: [f64; 3], rng: &mut impl Rng) -> [f64; 3] {
    std::array::from_fn(|j| {
        let u: f64 = rng.gen();
        if hi[j] > lo[j] { lo[j] + u * (hi[j] - lo[j]) } else { lo[j] }
    })
}

/// Plant parameters drawn uniformly from the gamma-box.
pub fn draw_truth(g: &GammaBox, effective_area: f64, rng: &mut impl Rng) -> PlantParams {
    PlantParams::from_gamma(GammaParams::from_array(uniform(g.lo, g.hi, rng)), effective_area)
}

/// Componentwise uniform draw from a p-box.
pub fn draw_truth_pbox(b: &ParamBox, rng: &mut impl Rng) -> PlantParams {
    PlantParams::from_array(uniform(b.lo, b.hi, rng))
}

/// Run every strategy on batch `batch`. All strategies see the same truth and
/// the same noise sequence. Failures become rows with `feasible = false`.
pub fn run_batch(ctx: &Context, cfg: &ExperimentConfig, batch: u64) -> Vec<BatchResult> {
    let g0 = ctx.gamma0;
    let p = draw_truth(&g0, ctx.spec.effective_area(), &mut truth_rng(cfg.master_seed, batch));
    cfg.strategies
        .iter()
        .map(|&k| {
            match run_strategy(k, ctx, &p, noise_rng(cfg.master_seed, batch), RunOptions::default()) {
                Ok(mut r) => {
                    r.batch_id = batch;
                    r.seed = cfg.master_seed;
                    r
                }
                Err(e) => {
                    log::warn!("batch {batch} {k}: {e}");
                    BatchResult::failed(batch, k, cfg.master_seed, p, &e)
                }
            }
        })
        .collect()
}

/// Run the experiment, handing each row to `sink` in batch order.
pub fn monte_carlo_with(cfg: &ExperimentConfig, mut sink: impl FnMut(&BatchResult) -> Result<()>) -> Result<()> {
    let ctx = cfg.context()?;
    for i in 0..cfg.n_batches as u64 {
        for r in run_batch(&ctx, cfg, i) {
            sink(&r)?;
        }
    }
    Ok(())
}

pub fn monte_carlo(cfg: &ExperimentConfig) -> Result<Vec<BatchResult>> {
    let mut out = Vec::with_capacity(cfg.n_batches * cfg.strategies.len());
    monte_carlo_with(cfg, |r| {
        out.push(r.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Run the experiment, streaming the results CSV to `w`; returns the rows.
pub fn monte_carlo_to_csv<W: Write>(cfg: &ExperimentConfig, w: W) -> Result<Vec<BatchResult>> {
    let mut csv_out = csv::Writer::from_writer(w);
    csv_out.write_record(RESULT_HEADER)?;
    let mut rows = Vec::new();
    monte_carlo_with(cfg, |r| {
        csv_out.write_record(result_record(r))?;
        rows.push(r.clone());
        Ok(())
    })?;
    csv_out.flush()?;
    Ok(rows)
}
