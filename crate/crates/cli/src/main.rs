use std::path::PathBuf;
use std::process::ExitCode;

use caql::agent::SolverKind;
use caql::env::make_env;
use caql::net::load_checkpoint;
use caql_cli::bench::{bench_maxq, sample_states};
use caql_cli::verify::Suite;
use caql_cli::{evaluate, summarize_returns, train, CliError, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caql", version, about = "Continuous-action Q-learning with exact and approximate max-Q solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command that builds a run configuration.
#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file read over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    action_range: Option<f64>,
    /// Max-Q solver: mip, ga, cem or dual.
    #[arg(long)]
    optimizer: Option<String>,
    /// l2 or hinge.
    #[arg(long)]
    loss: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.env {
            cfg.set("env", v)?;
        }
        if let Some(v) = self.action_range {
            cfg.set("action_range", &v.to_string())?;
        }
        if let Some(v) = &self.optimizer {
            cfg.set("solver", v)?;
        }
        if let Some(v) = &self.loss {
            cfg.set("loss", v)?;
        }
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write metrics, checkpoints and the resolved config.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Seed list, comma separated.
        #[arg(long)]
        seed: Option<String>,
        /// Training steps per seed.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved action function without exploration noise.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the max-Q solvers on states visited by random rollouts.
    BenchMaxq {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Q-network checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Action function used to seed gradient ascent.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_value = "mip,ga,cem")]
        optimizers: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run oracle verification suites.
    Verify {
        #[arg(long, value_parser = parse_suite)]
        suite: Vec<SuiteArg>,
    },
}

#[derive(Clone, Copy)]
enum SuiteArg {
    One(Suite),
    All,
}

fn parse_suite(s: &str) -> Result<SuiteArg, String> {
    if s == "all" {
        return Ok(SuiteArg::All);
    }
    s.parse().map(SuiteArg::One).map_err(|_| {
        let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
        format!("expected one of {}, grad, bounds or all", names.join(", "))
    })
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Train { cfg, seed, steps, out } => {
            let mut cfg = cfg.resolve()?;
            if let Some(s) = seed {
                cfg.set("seeds", &s)?;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            print!("{}", cfg.echo());
            for run in train(&cfg)? {
                println!(
                    "seed {}: final mean return {:.2}, best {:.2}, metrics in {}",
                    run.seed,
                    run.final_return().unwrap_or(f64::NAN),
                    run.best_return().unwrap_or(f64::NAN),
                    run.dir.join("metrics.jsonl").display()
                );
            }
            Ok(true)
        }
        Command::Eval {
            cfg,
            policy,
            episodes,
            seed,
        } => {
            let cfg = cfg.resolve()?;
            let returns = evaluate(&cfg, &policy, episodes, seed)?;
            println!("{}", summarize_returns(&returns));
            Ok(true)
        }
        Command::BenchMaxq {
            cfg,
            checkpoint,
            policy,
            samples,
            optimizers,
            seed,
            json,
        } => {
            let cfg = cfg.resolve()?;
            let solvers = optimizers
                .iter()
                .map(|s| s.parse::<SolverKind>())
                .collect::<caql::Result<Vec<_>>>()?;
            let q = load_checkpoint::<f64>(&checkpoint)?;
            let policy = policy.map(load_checkpoint::<f64>).transpose()?;
            let mut env = make_env(&cfg.env, cfg.action_range)?;
            let domain = env.action_box().clone();
            let states = sample_states(env.as_mut(), samples, cfg.agent.episode_len, seed);
            let report = bench_maxq(&q, policy.as_ref(), &states, &domain, &solvers, &cfg.agent, seed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.table());
            }
            Ok(report.rows.iter().all(|r| r.dominance_violations == 0))
        }
        Command::Verify { suite } => {
            let mut suites: Vec<Suite> = Vec::new();
            for s in &suite {
                match s {
                    SuiteArg::All => suites.extend(Suite::ALL),
                    SuiteArg::One(one) => suites.push(*one),
                }
            }
            if suites.is_empty() {
                suites.extend(Suite::ALL);
            }
            let mut ok = true;
            for s in suites {
                let report = s.run()?;
                println!("{report}");
                ok &= report.passed();
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
