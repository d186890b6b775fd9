//! Run configuration: every agent setting plus environment, schedule and
//! output options, read from flat `key = value` text.
//!
//! Lines starting with `#` are comments. Later assignments win, so flag
//! overrides are applied by calling [`RunConfig::set`] after the file is read.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use caql::agent::{AgentConfig, ClusterConfig, ClusterRadius, DtolConfig};
use caql::bounds::BoundMethod;
use caql::cluster::Norm;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub agent: AgentConfig,
    pub env: String,
    /// Actions live in `[-action_range, action_range]^d`.
    pub action_range: f64,
    /// Training steps per seed.
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            env: "pendulum".into(),
            action_range: 2.0,
            steps: 50_000,
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, CliError>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>, CliError>
where
    V::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_bound_method(value: &str) -> Result<BoundMethod, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "interval" => Ok(BoundMethod::Interval),
        "dual" | "dual_tightened" => Ok(BoundMethod::DualTightened),
        other => Err(CliError::Config(format!("unknown bound method {other:?}"))),
    }
}

fn bound_method_name(m: BoundMethod) -> &'static str {
    match m {
        BoundMethod::Interval => "interval",
        BoundMethod::DualTightened => "dual_tightened",
    }
}

const DTOL_DEFAULT: DtolConfig = DtolConfig {
    k1: 1.0,
    k2: 0.9995,
    floor: 1e-4,
};

impl RunConfig {
    /// Reads a config file over the defaults.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let a = &mut self.agent;
        match key {
            "env" => self.env = value.to_string(),
            "action_range" => self.action_range = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "seeds" | "seed" => self.seeds = parse_list(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),

            "gamma" => a.gamma = parse(key, value)?,
            "tau_soft" => a.tau_soft = parse(key, value)?,
            "batch_size" => a.batch_size = parse(key, value)?,
            "steps_per_epoch" => a.steps_per_epoch = parse(key, value)?,
            "episode_len" => a.episode_len = parse(key, value)?,
            "buffer_capacity" => a.buffer_capacity = parse(key, value)?,
            "sigma" => a.sigma = parse(key, value)?,
            "sigma_decay" => a.sigma_decay = parse(key, value)?,
            "sigma_min" => a.sigma_min = parse(key, value)?,
            "loss" => a.loss = parse(key, value)?,
            "hinge_lambda" => a.hinge_lambda = parse(key, value)?,
            "solver" | "optimizer" => a.solver = parse(key, value)?,
            "dual_filter" => a.dual_filter = parse_bool(key, value)?,
            "bound_method" => a.bound_method = parse_bound_method(value)?,
            "q_lr" => a.q_lr = parse(key, value)?,
            "action_lr" => a.action_lr = parse(key, value)?,
            "hidden" => a.hidden = parse_list(key, value)?,
            "action_hidden" => a.action_hidden = parse_list(key, value)?,
            "action_fn_label" => a.action_fn_label = parse(key, value)?,
            "eval_interval" => a.eval_interval = parse(key, value)?,
            "eval_episodes" => a.eval_episodes = parse(key, value)?,
            "checkpoint_interval" => {
                a.checkpoint_interval = match parse::<usize>(key, value)? {
                    0 => None,
                    c => Some(c),
                }
            }

            "dtol" => {
                a.dtol = if parse_bool(key, value)? {
                    Some(a.dtol.unwrap_or(DTOL_DEFAULT))
                } else {
                    None
                }
            }
            "dtol_k1" => a.dtol.get_or_insert(DTOL_DEFAULT).k1 = parse(key, value)?,
            "dtol_k2" => a.dtol.get_or_insert(DTOL_DEFAULT).k2 = parse(key, value)?,
            "dtol_floor" => a.dtol.get_or_insert(DTOL_DEFAULT).floor = parse(key, value)?,

            "cluster" => {
                a.cluster = match value {
                    "off" | "false" | "none" => None,
                    "fixed" => Some(ClusterConfig {
                        radius: ClusterRadius::Fixed(0.0),
                        norm: a.cluster.map_or(Norm::L2, |c| c.norm),
                    }),
                    "dynamic" => Some(ClusterConfig {
                        radius: ClusterRadius::Dynamic { k3: 1.0, k4: 0.99 },
                        norm: a.cluster.map_or(Norm::L2, |c| c.norm),
                    }),
                    other => return Err(CliError::Config(format!("cluster: expected off, fixed or dynamic, got {other:?}"))),
                }
            }
            "cluster_radius" | "cluster_k3" | "cluster_k4" | "cluster_norm" => {
                let c = a.cluster.as_mut().ok_or_else(|| {
                    CliError::Config(format!("{key} needs cluster = fixed or cluster = dynamic first"))
                })?;
                match (key, &mut c.radius) {
                    ("cluster_norm", _) => c.norm = parse(key, value)?,
                    ("cluster_radius", ClusterRadius::Fixed(b)) => *b = parse(key, value)?,
                    ("cluster_k3", ClusterRadius::Dynamic { k3, .. }) => *k3 = parse(key, value)?,
                    ("cluster_k4", ClusterRadius::Dynamic { k4, .. }) => *k4 = parse(key, value)?,
                    _ => return Err(CliError::Config(format!("{key} does not apply to this cluster mode"))),
                }
            }

            "mip_gap" => a.mip.gap_tol = parse(key, value)?,
            "mip_time_limit" => a.mip.time_limit = Duration::from_secs_f64(parse(key, value)?),
            "mip_node_limit" => a.mip.node_limit = parse(key, value)?,
            "mip_bounds" => a.mip.bounds = parse_bound_method(value)?,

            "ga_step_size" => a.ga.step_size = parse(key, value)?,
            "ga_tolerance" => a.ga.tolerance = parse(key, value)?,
            "ga_max_iters" => a.ga.max_iters = parse(key, value)?,
            "ga_num_seeds" => a.ga.num_seeds = parse(key, value)?,
            "ga_line_search" => a.ga.line_search = parse_bool(key, value)?,

            "cem_samples" => a.cem.sample_count = parse(key, value)?,
            "cem_elites" => a.cem.elite_count = parse(key, value)?,
            "cem_max_iters" => a.cem.max_iters = parse(key, value)?,
            "cem_tolerance" => a.cem.tolerance = parse(key, value)?,
            "cem_initial_stddev" => a.cem.initial_stddev = parse(key, value)?,

            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.action_range > 0.0) {
            return Err(CliError::Config(format!("action_range must be positive, got {}", self.action_range)));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        self.agent.validate()?;
        Ok(())
    }

    /// The fully resolved configuration as `key = value` lines, readable by
    /// [`RunConfig::apply_text`].
    pub fn echo(&self) -> String {
        let a = &self.agent;
        let mut out = String::from("# resolved configuration\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("env", self.env.clone());
        kv("action_range", self.action_range.to_string());
        kv("steps", self.steps.to_string());
        kv("seeds", join(&self.seeds));
        kv("out_dir", self.out_dir.display().to_string());
        kv("gamma", a.gamma.to_string());
        kv("tau_soft", a.tau_soft.to_string());
        kv("batch_size", a.batch_size.to_string());
        kv("steps_per_epoch", a.steps_per_epoch.to_string());
        kv("episode_len", a.episode_len.to_string());
        kv("buffer_capacity", a.buffer_capacity.to_string());
        kv("sigma", a.sigma.to_string());
        kv("sigma_decay", a.sigma_decay.to_string());
        kv("sigma_min", a.sigma_min.to_string());
        kv("loss", a.loss.as_str().into());
        kv("hinge_lambda", a.hinge_lambda.to_string());
        kv("solver", a.solver.as_str().into());
        kv("dual_filter", a.dual_filter.to_string());
        kv("bound_method", bound_method_name(a.bound_method).into());
        kv("q_lr", a.q_lr.to_string());
        kv("action_lr", a.action_lr.to_string());
        kv("hidden", join(&a.hidden));
        kv("action_hidden", join(&a.action_hidden));
        kv("action_fn_label", a.action_fn_label.as_str().into());
        kv("eval_interval", a.eval_interval.to_string());
        kv("eval_episodes", a.eval_episodes.to_string());
        kv("checkpoint_interval", a.checkpoint_interval.unwrap_or(0).to_string());
        match a.dtol {
            Some(d) => {
                kv("dtol", "on".into());
                kv("dtol_k1", d.k1.to_string());
                kv("dtol_k2", d.k2.to_string());
                kv("dtol_floor", d.floor.to_string());
            }
            None => kv("dtol", "off".into()),
        }
        match a.cluster {
            None => kv("cluster", "off".into()),
            Some(c) => {
                match c.radius {
                    ClusterRadius::Fixed(b) => {
                        kv("cluster", "fixed".into());
                        kv("cluster_radius", b.to_string());
                    }
                    ClusterRadius::Dynamic { k3, k4 } => {
                        kv("cluster", "dynamic".into());
                        kv("cluster_k3", k3.to_string());
                        kv("cluster_k4", k4.to_string());
                    }
                }
                kv("cluster_norm", c.norm.as_str().into());
            }
        }
        kv("mip_gap", a.mip.gap_tol.to_string());
        kv("mip_time_limit", a.mip.time_limit.as_secs_f64().to_string());
        kv("mip_node_limit", a.mip.node_limit.to_string());
        kv("mip_bounds", bound_method_name(a.mip.bounds).into());
        kv("ga_step_size", a.ga.step_size.to_string());
        kv("ga_tolerance", a.ga.tolerance.to_string());
        kv("ga_max_iters", a.ga.max_iters.to_string());
        kv("ga_num_seeds", a.ga.num_seeds.to_string());
        kv("ga_line_search", a.ga.line_search.to_string());
        kv("cem_samples", a.cem.sample_count.to_string());
        kv("cem_elites", a.cem.elite_count.to_string());
        kv("cem_max_iters", a.cem.max_iters.to_string());
        kv("cem_tolerance", a.cem.tolerance.to_string());
        kv("cem_initial_stddev", a.cem.initial_stddev.to_string());
        out
    }
}
