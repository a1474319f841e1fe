use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diafilt_rto::estimation::{estimate_stream, read_measurements, write_bounds, write_measurements, ParamBox};
use diafilt_rto::harness::{draw_truth, monte_carlo_to_csv, noise_rng, summarize, truth_rng, Case, ExperimentConfig};
use diafilt_rto::process::ProcessSpec;
use diafilt_rto::reachability::{project_switch_windows_gamma, project_switch_windows_with, GammaBox, SimulationBackend};
use diafilt_rto::strategy::{
    read_results, run_strategy, RobustObjective, RunOptions, StrategyConfig, StrategyKind,
};
use diafilt_rto::{Error, Result};

#[derive(Parser)]
#[command(name = "diafilt-rto", version, about = "Real-time optimization of a batch diafiltration process")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one batch with one strategy.
    Simulate(SimulateArgs),
    /// Bound the parameters from a measurement CSV.
    Estimate(EstimateArgs),
    /// Project a parameter box onto switching-time windows.
    Reach(ReachArgs),
    /// Run the Monte Carlo comparison.
    Montecarlo(MonteCarloArgs),
    /// Box-plot statistics of a results CSV.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct Common {
    /// limiting_flux (1) or generalized (2).
    #[arg(long, default_value = "limiting_flux")]
    case: String,
    /// Process config JSON; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Relative half-width of the initial uncertainty box.
    #[arg(long, default_value_t = 0.10)]
    pct: f64,
    #[arg(long, value_enum, default_value = "deviation-from-best")]
    objective: Objective,
    /// Adaptive convergence tolerance [h^2].
    #[arg(long)]
    eps: Option<f64>,
    /// Keep the first committed u_s on the singular arc.
    #[arg(long)]
    hold_us: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Objective {
    DeviationFromBest,
    DeviationFromNominal,
}

impl Common {
    fn process(&self) -> Result<ProcessSpec> {
        match &self.config {
            Some(p) => ProcessSpec::from_json(&std::fs::read_to_string(p)?),
            None => Ok(ProcessSpec::default()),
        }
    }

    fn experiment(&self, strategies: Vec<StrategyKind>, n: usize, seed: u64) -> Result<ExperimentConfig> {
        let mut strategy = StrategyConfig {
            robust_objective: match self.objective {
                Objective::DeviationFromBest => RobustObjective::DeviationFromBest,
                Objective::DeviationFromNominal => RobustObjective::DeviationFromNominal,
            },
            hold_us: self.hold_us,
            ..Default::default()
        };
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::Config("eps must be positive".into()));
            }
            strategy.eps = eps;
        }
        let cfg = ExperimentConfig {
            case: self.case.parse::<Case>()?,
            n_batches: n,
            master_seed: seed,
            uncertainty_pct: self.pct,
            strategies,
            process: self.process()?,
            strategy,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "adaptive")]
    strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batch index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    batch: u64,
    /// Use the nominal parameters as the truth instead of a random draw.
    #[arg(long)]
    nominal_truth: bool,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Parameter bounds CSV (adaptive only).
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Batch result JSON.
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Measurement CSV with columns t,q_m,c1,c2.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Prior p-box JSON ({"lo": [..], "hi": [..]}); otherwise the enclosing box of the case's gamma-box.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value = "limiting_flux")]
    case: String,
    #[arg(long, default_value_t = 0.10)]
    pct: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise bound; overrides the config.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct ReachArgs {
    /// Box JSON ({"lo": [..], "hi": [..]}).
    #[arg(long)]
    input: PathBuf,
    /// Read the box in gamma coordinates.
    #[arg(long)]
    gamma: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = diafilt_rto::reachability::DEFAULT_LHS)]
    lhs: usize,
    /// Windows JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated strategy list.
    #[arg(long, value_delimiter = ',', default_value = "optimal,nominal,robust,adaptive")]
    strategies: Vec<String>,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Summary CSV; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let kind: StrategyKind = a.strategy.parse()?;
    let cfg = a.common.experiment(vec![kind], 1, a.seed)?;
    let ctx = cfg.context()?;
    let p = if a.nominal_truth {
        ctx.p_nominal()
    } else {
        draw_truth(&ctx.gamma0, ctx.spec.effective_area(), &mut truth_rng(a.seed, a.batch))
    };
    let opts = RunOptions {
        record_trajectory: true,
        keep_measurements: a.measurements.is_some(),
        keep_bounds: a.bounds.is_some(),
    };
    let mut r = run_strategy(kind, &ctx, &p, noise_rng(a.seed, a.batch), opts)?;
    r.batch_id = a.batch;
    r.seed = a.seed;

    if let Some(tr) = &r.trajectory {
        tr.write_csv(create(&a.out)?, &ctx.spec, &p)?;
    }
    if let (Some(path), Some(ms)) = (&a.measurements, &r.measurements) {
        write_measurements(create(path)?, ms)?;
    }
    if let Some(path) = &a.bounds {
        let rows = r.bounds.as_deref().ok_or_else(|| {
            Error::Config(format!("strategy {kind} does not estimate parameters; drop --bounds"))
        })?;
        write_bounds(create(path)?, rows)?;
    }
    if let Some(path) = &a.result {
        write_json(Some(path), &r)?;
    }
    println!(
        "{kind}: t1 = {:.6} h, t2 = {:.6} h, tf = {:.6} h, regret = {:.6} h, feasible = {}, re-optimizations = {}",
        r.t1, r.t2, r.tf, r.regret, r.feasible, r.reopt_count
    );
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => ProcessSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => ProcessSpec::default(),
    };
    if let Some(s) = a.sigma {
        spec.sigma = s;
    }
    spec.validate()?;
    let prior = match &a.prior {
        Some(p) => {
            let b: ParamBox = read_json(p)?;
            b.validate()?;
            b
        }
        None => GammaBox::around(a.case.parse::<Case>()?.nominal_gamma(), a.pct)?
            .enclosing_pbox(spec.effective_area()),
    };
    let ms = read_measurements(open(&a.input)?)?;
    let rows = estimate_stream(&prior, spec.sigma, &ms)?;
    write_bounds(create(&a.out)?, &rows)?;
    if let Some((t, b)) = rows.last() {
        eprintln!("{} measurements; box at t = {t} h: lo {:?} hi {:?}", ms.len(), b.lo, b.hi);
    }
    Ok(())
}

fn reach(a: ReachArgs) -> Result<()> {
    let spec = match &a.config {
        Some(p) => ProcessSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => ProcessSpec::default(),
    };
    let w = if a.gamma {
        let g: GammaBox = read_json(&a.input)?;
        let g = GammaBox::new(g.lo, g.hi)?;
        project_switch_windows_gamma(&g, &spec, a.lhs)?
    } else {
        let b: ParamBox = read_json(&a.input)?;
        b.validate()?;
        project_switch_windows_with(&b, &spec, a.lhs, &SimulationBackend)?
    };
    write_json(a.out.as_deref(), &w)
}

fn montecarlo(a: MonteCarloArgs) -> Result<()> {
    let kinds = a.strategies.iter().map(|s| s.parse()).collect::<Result<Vec<StrategyKind>>>()?;
    let cfg = a.common.experiment(kinds, a.n, a.seed)?;
    let rows = monte_carlo_to_csv(&cfg, create(&a.out)?)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see the feasible column", rows.len());
    }
    let stats = summarize(&rows)?;
    if let Some(p) = &a.summary {
        stats.write_csv(create(p)?)?;
    }
    print!("{stats}");
    Ok(())
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    let rows = read_results(open(&a.input)?)?;
    let stats = summarize(&rows)?;
    if let Some(p) = &a.out {
        stats.write_csv(create(p)?)?;
    }
    print!("{stats}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Estimate(a) => estimate(a),
        Cmd::Reach(a) => reach(a),
        Cmd::Montecarlo(a) => montecarlo(a),
        Cmd::Summarize(a) => summarize_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
