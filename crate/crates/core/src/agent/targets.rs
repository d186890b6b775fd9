use std::hash::{Hash, Hasher};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::approx::{solve_maxq_cem, solve_maxq_ga, CemConfig, GaConfig};
use crate::bounds::BoxDomain;
use crate::cluster::{cover, dynamic_radius, taylor_targets, CentroidSolution};
use crate::dualfilter::{filter_batch, maxq_upper_bound};
use crate::error::{CaqlError, Result};
use crate::mip::{solve_maxq_mip, MipConfig};
use crate::net::ReluNet;
use crate::scalar::Scalar;
use crate::solution::MaxQSolution;

use super::buffer::Transition;
use super::config::{AgentConfig, ClusterRadius, SolverKind};

/// Read-only inputs of a target computation.
pub struct TargetContext<'a, T> {
    pub q: &'a ReluNet<T>,
    pub q_target: &'a ReluNet<T>,
    pub policy: &'a ReluNet<T>,
    pub domain: &'a BoxDomain<T>,
    pub cfg: &'a AgentConfig,
    /// Solver tolerance for this step; the configured one when `None`.
    pub tolerance: Option<T>,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T> {
    /// TD target per sample; `None` drops the hinge penalty term.
    pub targets: Vec<Option<T>>,
    /// Solved `a'` for samples that went through the max-Q solver.
    pub actions: Vec<Option<Vec<T>>>,
    /// Solver-reported `max Q_θ(x', ·)` for the same samples.
    pub solver_values: Vec<Option<T>>,
    /// Dual bound `q̃` under the target network, where computed.
    pub q_tilde: Vec<Option<T>>,
    pub filtered_fraction: f64,
    pub centroid_fraction: f64,
    pub solve_times: Vec<Duration>,
    pub exact_solves: usize,
}

/// Dispatches one max-Q solve to the configured solver.
pub fn solve_maxq<T: Scalar>(
    net: &ReluNet<T>,
    policy: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    cfg: &AgentConfig,
    tolerance: Option<T>,
    rng: &mut ChaCha8Rng,
) -> Result<MaxQSolution<T>> {
    match cfg.solver {
        SolverKind::Mip => {
            let mip = MipConfig {
                gap_tol: tolerance.unwrap_or(T::lit(cfg.mip.gap_tol)),
                time_limit: cfg.mip.time_limit,
                node_limit: cfg.mip.node_limit,
                bounds: cfg.mip.bounds,
            };
            solve_maxq_mip(net, x, domain, &mip)
        }
        SolverKind::Ga => {
            let ga = GaConfig {
                step_size: T::lit(cfg.ga.step_size),
                tolerance: tolerance.unwrap_or(T::lit(cfg.ga.tolerance)),
                max_iters: cfg.ga.max_iters,
                num_seeds: cfg.ga.num_seeds,
                line_search: cfg.ga.line_search,
            };
            let seed = domain.clip(&policy.act(x)?);
            solve_maxq_ga(net, x, domain, &ga, &seed, rng)
        }
        SolverKind::Cem => {
            let cem = CemConfig {
                sample_count: cfg.cem.sample_count,
                elite_count: cfg.cem.elite_count,
                max_iters: cfg.cem.max_iters,
                tolerance: tolerance.unwrap_or(T::lit(cfg.cem.tolerance)),
                initial_stddev: T::lit(cfg.cem.initial_stddev),
            };
            solve_maxq_cem(net, x, domain, &cem, rng)
        }
        SolverKind::Dual => Err(CaqlError::InvalidConfig(
            "the dual solver has no argmax; use the dual bound".into(),
        )),
    }
}

/// Generator for the solve at `state`: a function of the run seed, the step
/// and the state itself, so identical states get identical solves.
fn sample_rng<T: Scalar>(seed: u64, step: u64, state: &[T]) -> ChaCha8Rng {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    seed.hash(&mut h);
    step.hash(&mut h);
    for v in state {
        v.to_f64_lossy().to_bits().hash(&mut h);
    }
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// TD targets for a minibatch: dual filter, clustering, max-Q solve,
/// double-Q evaluation, then Taylor targets for clustered samples.
pub fn compute_targets<T: Scalar>(batch: &[Transition<T>], ctx: &TargetContext<'_, T>) -> Result<Targets<T>> {
    if batch.is_empty() {
        return Err(CaqlError::EmptyBatch("compute_targets"));
    }
    let cfg = ctx.cfg;
    let n = batch.len();
    let gamma = T::lit(cfg.gamma);
    let mut out = Targets {
        targets: vec![None; n],
        actions: vec![None; n],
        solver_values: vec![None; n],
        q_tilde: vec![None; n],
        filtered_fraction: 0.0,
        centroid_fraction: 0.0,
        solve_times: Vec::new(),
        exact_solves: 0,
    };

    if cfg.solver == SolverKind::Dual {
        for (i, t) in batch.iter().enumerate() {
            let q_tilde = maxq_upper_bound(ctx.q_target, &t.next_state, ctx.domain, cfg.bound_method)?;
            out.q_tilde[i] = Some(q_tilde);
            out.targets[i] = Some(t.reward + gamma * q_tilde);
        }
        out.filtered_fraction = 1.0;
        return Ok(out);
    }

    // (1) dual filter
    let mut kept: Vec<usize> = (0..n).collect();
    if cfg.dual_filter {
        let fr = filter_batch(batch, ctx.q, ctx.q_target, ctx.domain, gamma, cfg.loss, cfg.bound_method)?;
        for (i, target) in &fr.resolved {
            out.targets[*i] = *target;
        }
        for (i, q) in fr.q_tilde.iter().enumerate() {
            out.q_tilde[i] = Some(*q);
        }
        out.filtered_fraction = fr.filtered_fraction();
        kept = fr.kept;
    }
    if kept.is_empty() {
        return Ok(out);
    }

    // (2) clustering over B'_df
    let next_states: Vec<Vec<T>> = kept.iter().map(|&i| batch[i].next_state.clone()).collect();
    let clusters = cfg.cluster.map(|c| {
        let b = match c.radius {
            ClusterRadius::Fixed(b) => b,
            ClusterRadius::Dynamic { k3, k4 } => dynamic_radius(k3, k4, ctx.step),
        };
        cover(&next_states, T::lit(b), c.norm)
    });
    let to_solve: Vec<usize> = match &clusters {
        Some(c) => c.centroids.clone(),
        None => (0..kept.len()).collect(),
    };

    // (3) solve at Q_θ and (4) evaluate at Q_target
    let mut centroid_values: Vec<Option<CentroidSolution<T>>> = Vec::with_capacity(to_solve.len());
    for &j in &to_solve {
        let i = kept[j];
        let x_next = &batch[i].next_state;
        let mut rng = sample_rng(ctx.seed, ctx.step, x_next);
        let sol = solve_maxq(ctx.q, ctx.policy, x_next, ctx.domain, cfg, ctx.tolerance, &mut rng)
            .map_err(|e| CaqlError::Solver {
                index: i,
                source: Box::new(e),
            })?;
        out.solve_times.push(sol.elapsed);
        out.exact_solves += 1;
        let q_next = ctx.q_target.q(x_next, &sol.action)?;
        out.targets[i] = Some(batch[i].reward + gamma * q_next);
        out.solver_values[i] = Some(sol.value);
        out.actions[i] = Some(sol.action.clone());
        centroid_values.push(Some(CentroidSolution {
            value: q_next,
            action: sol.action,
        }));
    }

    // (5) Taylor targets for the rest of B'_df
    if let Some(c) = &clusters {
        out.centroid_fraction = c.centroid_fraction();
        let q_hat = taylor_targets(ctx.q_target, &next_states, c, &centroid_values)?;
        for (j, &i) in kept.iter().enumerate() {
            if !c.is_centroid(j) {
                out.targets[i] = Some(batch[i].reward + gamma * q_hat[j]);
            }
        }
    }
    Ok(out)
}
