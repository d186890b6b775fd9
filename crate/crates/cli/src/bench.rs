//! Max-Q solver benchmark: wall time and value gap against MIP.

use std::fmt::Write as _;

use caql::agent::{mean_std, AgentConfig, SolverKind};
use caql::approx::{sample_uniform, solve_maxq_cem, solve_maxq_ga};
use caql::bounds::BoxDomain;
use caql::env::Environment;
use caql::mip::solve_maxq_mip;
use caql::net::ReluNet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

/// Absolute slack on `value ≤ mip.value + gap`.
pub const DOMINANCE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverRow {
    pub solver: String,
    pub samples: usize,
    pub median_ms: f64,
    pub sd_ms: f64,
    pub mean_iterations: f64,
    /// Mean of `mip.value - value`.
    pub mean_gap: f64,
    pub max_gap: f64,
    pub min_gap: f64,
    /// Samples where the solver beat MIP by more than its certified gap.
    pub dominance_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<SolverRow>,
}

impl BenchReport {
    pub fn row(&self, solver: SolverKind) -> Option<&SolverRow> {
        self.rows.iter().find(|r| r.solver == solver.as_str())
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<6} {:>7} {:>11} {:>9} {:>8} {:>11} {:>11} {:>6}\n",
            "solver", "samples", "median_ms", "sd_ms", "iters", "mean_gap", "max_gap", "viol"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<6} {:>7} {:>11.4} {:>9.4} {:>8.1} {:>11.3e} {:>11.3e} {:>6}",
                r.solver, r.samples, r.median_ms, r.sd_ms, r.mean_iterations, r.mean_gap, r.max_gap, r.dominance_violations
            );
        }
        out
    }
}

/// Visited states from rollouts with uniformly random actions, every
/// `stride`-th step, until `n` are collected.
pub fn sample_states(env: &mut dyn Environment, n: usize, episode_len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = env.action_box().clone();
    let stride = 7;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut obs = env.reset(&mut rng);
        for t in 0..episode_len.max(1) {
            if t % stride == 0 {
                out.push(obs.clone());
                if out.len() == n {
                    break;
                }
            }
            let a = sample_uniform(&domain, &mut rng);
            obs = env.step(&a, &mut rng).observation;
        }
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Times each solver on every state. MIP is always solved, untimed when it
/// is not in `solvers`, to provide the reference value. GA starts from the
/// action function when one is given and from the box centre otherwise.
pub fn bench_maxq(
    q: &ReluNet<f64>,
    policy: Option<&ReluNet<f64>>,
    states: &[Vec<f64>],
    domain: &BoxDomain<f64>,
    solvers: &[SolverKind],
    cfg: &AgentConfig,
    seed: u64,
) -> Result<BenchReport, CliError> {
    if states.is_empty() {
        return Err(CliError::Config("bench-maxq needs at least one sample".into()));
    }
    if let Some(s) = solvers.iter().find(|s| **s == SolverKind::Dual) {
        return Err(CliError::Config(format!("{} is a bound, not a max-Q solver", s.as_str())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mip = states
        .iter()
        .map(|x| solve_maxq_mip(q, x, domain, &cfg.mip))
        .collect::<caql::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &solver in solvers {
        let mut ms = Vec::with_capacity(states.len());
        let mut gaps = Vec::with_capacity(states.len());
        let mut iters = 0usize;
        let mut violations = 0;
        for (x, reference) in states.iter().zip(&mip) {
            let sol = match solver {
                SolverKind::Mip => reference.clone(),
                SolverKind::Ga => {
                    let start = match policy {
                        Some(p) => domain.clip(&p.act(x)?),
                        None => domain.center(),
                    };
                    solve_maxq_ga(q, x, domain, &cfg.ga, &start, &mut rng)?
                }
                SolverKind::Cem => solve_maxq_cem(q, x, domain, &cfg.cem, &mut rng)?,
                SolverKind::Dual => unreachable!("rejected above"),
            };
            ms.push(sol.elapsed.as_secs_f64() * 1e3);
            iters += sol.iterations;
            let gap = reference.value - sol.value;
            if sol.value > reference.value + reference.gap + DOMINANCE_SLACK {
                violations += 1;
            }
            gaps.push(gap);
        }
        let (_, sd_ms) = mean_std(&ms);
        let (mean_gap, _) = mean_std(&gaps);
        rows.push(SolverRow {
            solver: solver.as_str().to_string(),
            samples: states.len(),
            median_ms: median(&mut ms),
            sd_ms,
            mean_iterations: iters as f64 / states.len() as f64,
            mean_gap,
            max_gap: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
            dominance_violations: violations,
        });
    }
    Ok(BenchReport { rows })
}
