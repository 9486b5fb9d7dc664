use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hessfit_bench::curve::write_csv;
use hessfit_bench::method::Method;
use hessfit_bench::verify::CRITERIA;
use hessfit_bench::{registry, run_scenario, BenchError, BenchResult, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "hessfit", about = "Stochastic Hessian fitting benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its convergence curve as CSV.
    Run(RunArgs),
    /// List the registered scenario/method pairs.
    List,
    /// Run the acceptance checks.
    Verify {
        /// Run only these criteria (by number).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    method: String,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Standard deviation of the additive Hessian-vector noise.
    #[arg(long)]
    sigma: Option<f64>,
    /// Dimension, for the custom scenario.
    #[arg(long)]
    n: Option<usize>,
    /// Extra `key=value` settings (hessian, p0, ema_clip, precond_lr).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
    /// Fill the wall_ns column with elapsed time.
    #[arg(long)]
    timing: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> BenchResult<ScenarioConfig> {
        let s = Scenario::parse(&self.scenario).ok_or_else(|| BenchError::UnknownScenario(self.scenario.clone()))?;
        let m = Method::parse(&self.method).ok_or_else(|| BenchError::UnknownMethod(self.method.clone()))?;
        let mut cfg = ScenarioConfig::registered(s, m)?;
        cfg.seed = self.seed;
        cfg.timing = self.timing;
        if let Some(x) = self.iters {
            cfg.iters = x;
        }
        if let Some(x) = self.mu {
            cfg.mu = x;
        }
        if let Some(x) = self.beta {
            cfg.beta = x;
        }
        if let Some(x) = self.sigma {
            cfg.sigma_eps = x;
        }
        if let Some(x) = self.n {
            cfg.n = x;
        }
        for kv in &self.extra {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| BenchError::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
            cfg.extra.insert(k.into(), v.into());
        }
        if self.n.is_none() && cfg.scenario == Scenario::Custom {
            if let Some(d) = cfg.hessian_kind()?.fixed_dim() {
                cfg.n = d;
            }
        }
        Ok(cfg)
    }
}

fn real_main() -> BenchResult<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let result = run_scenario(&cfg)?;
            let mut sink: Box<dyn Write> = match args.out {
                Some(path) => Box::new(BufWriter::new(File::create(path)?)),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            write_csv(&mut sink, cfg.scenario.name(), cfg.method.name(), cfg.seed, &result.points)?;
            sink.flush()?;
            if result.diverged {
                eprintln!("diverged (last iteration {})", result.points.last().map_or(0, |p| p.iter));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::List => {
            println!("scenario\tmethod\tn\titers\tmu\tbeta\tsigma_eps");
            for c in registry() {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    c.scenario.name(),
                    c.method.name(),
                    c.n,
                    c.iters,
                    c.mu,
                    c.beta,
                    c.sigma_eps
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { only } => {
            let mut reports = Vec::new();
            for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
                let r = c.run();
                println!("{r}");
                reports.push(r);
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            println!("{} of {} criteria passed", reports.len() - failed, reports.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
