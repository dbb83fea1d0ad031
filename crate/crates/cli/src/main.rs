//! `ndslb`: simulate load balancing policies, evaluate their diffusion
//! limits, and regenerate figure data as CSV.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ndslb_core::diffusion::{self, LimitPolicy};
use ndslb_core::distributions::ServiceDistribution;
use ndslb_core::experiment::{
    self, parse_config, ExperimentConfig, Figure, Load, ReproduceOptions, RunSettings,
};
use ndslb_core::oracles::{self, BirthDeathChain, ExcursionStats};
use ndslb_core::policies::Policy;
use ndslb_core::sim::Discipline;
use ndslb_core::Error;

#[derive(Parser)]
#[command(
    name = "ndslb",
    version,
    about = "Load balancing in the non-degenerate slowdown regime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a grid of systems and print one CSV row per grid point.
    Simulate(SimulateArgs),
    /// Tables from the limiting diffusions.
    Diffusion(DiffusionArgs),
    /// Exact reference values.
    Oracle(OracleArgs),
    /// Run every section of a config file.
    Experiment {
        config: PathBuf,
        /// Output file for sections without their own `out` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the data behind a figure (fig1 .. fig5d).
    Reproduce {
        figure: String,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 1_000_000)]
    arrivals: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    warmup: f64,
}

impl RunArgs {
    fn settings(&self) -> RunSettings {
        RunSettings {
            replications: self.reps,
            arrivals: self.arrivals,
            seed: self.seed,
            warmup: self.warmup,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    /// Spare servers: lambda = (k - alpha) mu.
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "rho",
        required_unless_present = "rho"
    )]
    alpha: Vec<f64>,
    /// Per-server load: lambda = rho k mu.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "jsq")]
    policy: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "fifo")]
    discipline: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "exp")]
    dist: Vec<String>,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiffusionArgs {
    #[arg(value_enum)]
    table: DiffusionTable,
    /// jsq, i1f, cq or iqf.
    #[arg(long, default_value = "jsq")]
    policy: String,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    alpha: Vec<f64>,
    /// Density grid: n from 1 to `n_max` in steps of `step`.
    #[arg(long, default_value_t = 10.0)]
    n_max: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiffusionTable {
    /// Stationary density over n (first alpha only).
    Density,
    /// Stationary mean for each alpha.
    Mean,
    /// Mean of `policy` over mean of CQ on a log alpha grid; the supremum
    /// goes to stderr.
    Ratio,
}

#[derive(Args)]
struct OracleArgs {
    #[command(subcommand)]
    which: OracleCommand,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// M/M/k stationary law.
    Mmk {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
    },
    /// Probability a birth-death chain started at 1 reaches x before 0.
    Hitting {
        /// Up rates f(0), ..., f(x-1).
        #[arg(long, value_delimiter = ',', required = true)]
        up: Vec<f64>,
        /// Down rates g(1), ..., g(x).
        #[arg(long, value_delimiter = ',', required = true)]
        down: Vec<f64>,
    },
    /// Poisson upper tail and its exponential bound.
    Poisson {
        #[arg(long)]
        mean: f64,
        #[arg(long)]
        x: f64,
    },
    /// M/M/1 cycle tail bounds and area centering constant.
    Excursion {
        #[arg(long)]
        arrival: f64,
        #[arg(long)]
        service: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
        t: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for bad input, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_)
        | Error::Config(_)
        | Error::Capability { .. }
        | Error::EngineMismatch(_)
        | Error::EmptyHorizon => 1,
        _ => 2,
    }
}

fn output(path: Option<&Path>) -> ndslb_core::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_all<T: std::str::FromStr<Err = Error>>(items: &[String]) -> ndslb_core::Result<Vec<T>> {
    items.iter().map(|s| s.parse()).collect()
}

fn run(command: Command) -> ndslb_core::Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Diffusion(a) => diffusion_table(a),
        Command::Oracle(a) => oracle(a),
        Command::Experiment { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let mut shared = Vec::new();
            for cfg in parse_config(&text)? {
                let rows = experiment::run_experiment(&cfg)?;
                match &cfg.out {
                    Some(p) => experiment::write_csv(output(Some(p))?, &rows)?,
                    None => shared.extend(rows),
                }
            }
            if !shared.is_empty() {
                experiment::write_csv(output(out.as_deref())?, &shared)?;
            }
            Ok(())
        }
        Command::Reproduce { figure, run, out } => {
            let figure: Figure = figure.parse()?;
            let r = experiment::reproduce(
                figure,
                &ReproduceOptions {
                    settings: run.settings(),
                },
            )?;
            eprintln!("{}", r.notes);
            experiment::write_csv(output(out.as_deref())?, &r.rows)
        }
    }
}

fn simulate(a: SimulateArgs) -> ndslb_core::Result<()> {
    let mut cfg = ExperimentConfig::new("simulate");
    cfg.ks = a.k;
    cfg.loads = if a.rho.is_empty() {
        a.alpha.into_iter().map(Load::Alpha).collect()
    } else {
        a.rho.into_iter().map(Load::Rho).collect()
    };
    cfg.policies = parse_all::<Policy>(&a.policy)?;
    cfg.disciplines = parse_all::<Discipline>(&a.discipline)?;
    cfg.dists = parse_all::<ServiceDistribution>(&a.dist)?;
    let s = a.run.settings();
    cfg.replications = s.replications;
    cfg.arrivals_per_rep = s.arrivals;
    cfg.seed_base = s.seed;
    cfg.warmup = s.warmup;
    cfg.validate()
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let rows = experiment::run_experiment(&cfg)?;
    experiment::write_csv(output(a.out.as_deref())?, &rows)
}

fn write_table(out: Option<&Path>, rows: &[(f64, f64)]) -> ndslb_core::Result<()> {
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["alpha_or_n", "value"])?;
    for (x, v) in rows {
        w.write_record([x.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn diffusion_table(a: DiffusionArgs) -> ndslb_core::Result<()> {
    let policy = LimitPolicy::from_policy(a.policy.parse()?)?;
    let rows = match a.table {
        DiffusionTable::Density => {
            let alpha = a.alpha[0];
            let density = policy.density(alpha)?;
            if !(a.step > 0.0 && a.n_max > 1.0) {
                return Err(Error::Parameter("need step > 0 and n-max > 1".into()));
            }
            let count = ((a.n_max - 1.0) / a.step).round() as usize;
            (0..=count)
                .map(|i| {
                    let n = 1.0 + i as f64 * a.step;
                    (n, density.pdf(n))
                })
                .collect()
        }
        DiffusionTable::Mean => a
            .alpha
            .iter()
            .map(|&alpha| policy.mean(alpha).map(|m| (alpha, m)))
            .collect::<ndslb_core::Result<Vec<_>>>()?,
        DiffusionTable::Ratio => {
            let sup = diffusion::ratio_sup(policy, LimitPolicy::Cq)?;
            eprintln!(
                "sup of {policy}/cq mean ratio: {} at alpha = {}",
                sup.sup_ratio, sup.alpha_star
            );
            (0..=100)
                .map(|i| {
                    let alpha = 10f64.powf(-3.0 + 5.0 * i as f64 / 100.0);
                    Ok((alpha, policy.mean(alpha)? / diffusion::mean_cq(alpha)?))
                })
                .collect::<ndslb_core::Result<Vec<_>>>()?
        }
    };
    write_table(a.out.as_deref(), &rows)
}

fn oracle(a: OracleArgs) -> ndslb_core::Result<()> {
    let mut rows: Vec<(String, f64)> = Vec::new();
    match a.which {
        OracleCommand::Mmk { k, lambda, mu } => {
            let s =
                oracles::mmk_stationary(lambda, mu, k, oracles::mmk_default_cap(lambda, mu, k))?;
            rows.push(("mean".into(), s.mean));
            rows.extend(
                s.probs
                    .iter()
                    .enumerate()
                    .map(|(n, p)| (format!("p{n}"), *p)),
            );
        }
        OracleCommand::Hitting { up, down } => {
            let chain = BirthDeathChain::new(up, down)?;
            rows.push((
                "hitting_probability".into(),
                oracles::hitting_probability(&chain)?,
            ));
        }
        OracleCommand::Poisson { mean, x } => {
            rows.push(("exact_tail".into(), oracles::poisson_upper_tail(mean, x)?));
            rows.push(("bound".into(), oracles::poisson_tail_bound(mean, x)?));
        }
        OracleCommand::Excursion {
            arrival,
            service,
            t,
        } => {
            let stats = ExcursionStats::new(arrival, service)?;
            rows.push(("theta_star".into(), stats.theta_star()));
            rows.push(("area_center".into(), stats.area_center()));
            for t in t {
                rows.push((format!("tail_bound_t{t}"), stats.tail_bound(t)));
            }
        }
    }
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.write_record(["name", "value"])?;
    for (name, v) in rows {
        w.write_record([name, v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
