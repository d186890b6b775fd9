//! Library half of the `caql` command-line tool. The binary is a thin clap
//! layer over these functions; the acceptance suite calls them directly.

pub mod bench;
pub mod config;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use caql::agent::{evaluate_policy, mean_std, seed_dir, Agent, EvalRecord};
use caql::bounds::BoxDomain;
use caql::env::make_env;
use caql::net::load_checkpoint;
use caql::CaqlError;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CaqlError),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

/// Outcome of training one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub records: Vec<EvalRecord>,
}

impl SeedRun {
    pub fn final_return(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_return)
    }

    pub fn best_return(&self) -> Option<f64> {
        self.records.iter().map(|r| r.mean_return).reduce(f64::max)
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Io(parent.to_path_buf(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Trains one seed, writing `config.txt`, `metrics.jsonl` and checkpoints
/// under the seed's directory.
pub fn train_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun, CliError> {
    cfg.validate()?;
    let dir = seed_dir(&cfg.out_dir, seed);
    let single = RunConfig {
        seeds: vec![seed],
        ..cfg.clone()
    };
    write(&dir.join("config.txt"), &single.echo())?;
    let mut env = make_env(&cfg.env, cfg.action_range)?;
    let mut eval_env = make_env(&cfg.env, cfg.action_range)?;
    let mut agent = Agent::<f64>::new(cfg.agent.clone(), env.observation_dim(), env.action_box(), seed)?;
    let records = agent.train(env.as_mut(), eval_env.as_mut(), cfg.steps, Some(&dir))?;
    Ok(SeedRun { seed, dir, records })
}

/// Trains every configured seed in order.
pub fn train(cfg: &RunConfig) -> Result<Vec<SeedRun>, CliError> {
    cfg.validate()?;
    write(&cfg.out_dir.join("config.txt"), &cfg.echo())?;
    cfg.seeds.iter().map(|&s| train_seed(cfg, s)).collect()
}

/// Noise-free returns of a saved action function.
pub fn evaluate(cfg: &RunConfig, policy_path: &Path, episodes: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let policy = load_checkpoint::<f64>(policy_path)?;
    let mut env = make_env(&cfg.env, cfg.action_range)?;
    let domain: BoxDomain<f64> = env.action_box().clone();
    Ok(evaluate_policy(
        env.as_mut(),
        &policy,
        &domain,
        cfg.agent.episode_len,
        episodes,
        seed,
    )?)
}

pub fn summarize_returns(returns: &[f64]) -> String {
    let (m, s) = mean_std(returns);
    format!("{} episodes: mean return {m:.2} ± {s:.2}", returns.len())
}
