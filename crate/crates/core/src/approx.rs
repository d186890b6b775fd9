//! Approximate max-Q: projected gradient ascent and the cross-entropy method,
//! plus the dynamic tolerance schedule.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::bounds::BoxDomain;
use crate::error::{check_dim, CaqlError, Result};
use crate::net::ReluNet;
use crate::scalar::Scalar;
use crate::solution::{MaxQSolution, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig<T> {
    pub step_size: T,
    /// Stop when `|Q(a_{t+1}) - Q(a_t)| < tolerance`.
    pub tolerance: T,
    pub max_iters: usize,
    /// Restarts; the first uses the supplied seed, the rest are uniform in the box.
    pub num_seeds: usize,
    /// Halve the step until the objective does not decrease.
    pub line_search: bool,
}

impl<T: Scalar> Default for GaConfig<T> {
    fn default() -> Self {
        Self {
            step_size: T::lit(0.05),
            tolerance: T::lit(1e-6),
            max_iters: 20,
            num_seeds: 1,
            line_search: false,
        }
    }
}

impl<T: Scalar> GaConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero() && self.tolerance > T::zero())
            || self.max_iters == 0
            || self.num_seeds == 0
        {
            return Err(CaqlError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemConfig<T> {
    pub sample_count: usize,
    pub elite_count: usize,
    pub max_iters: usize,
    /// Stop when the elite mean value improves by less than this.
    pub tolerance: T,
    /// Initial standard deviation as a multiple of the box radius.
    pub initial_stddev: T,
}

impl<T: Scalar> Default for CemConfig<T> {
    fn default() -> Self {
        Self {
            sample_count: 64,
            elite_count: 6,
            max_iters: 20,
            tolerance: T::lit(1e-6),
            initial_stddev: T::lit(0.5),
        }
    }
}

impl<T: Scalar> CemConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.elite_count == 0
            || self.elite_count >= self.sample_count
            || self.max_iters == 0
            || !(self.initial_stddev >= T::zero())
        {
            return Err(CaqlError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// One gradient-ascent run: the visited values and the best iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrace<T> {
    pub values: Vec<T>,
    pub best_action: Vec<T>,
    pub best_value: T,
    pub converged: bool,
}

/// Projected gradient ascent from `seed`.
pub fn gradient_ascent<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    cfg: &GaConfig<T>,
    seed: &[T],
) -> Result<AscentTrace<T>> {
    let mut a = seed.to_vec();
    let (mut q, mut g) = net.value_and_action_grad(x, &a)?;
    let mut out = AscentTrace {
        values: vec![q],
        best_action: a.clone(),
        best_value: q,
        converged: false,
    };
    for _ in 0..cfg.max_iters {
        let mut eta = cfg.step_size;
        let mut next;
        let mut q_next;
        let mut halvings = 0;
        loop {
            next = a.iter().zip(&g).map(|(ai, gi)| *ai + eta * *gi).collect::<Vec<_>>();
            domain.clip_in_place(&mut next);
            q_next = net.q(x, &next)?;
            if !cfg.line_search || q_next >= q || halvings >= 30 {
                break;
            }
            eta *= T::lit(0.5);
            halvings += 1;
        }
        out.values.push(q_next);
        if q_next > out.best_value {
            out.best_value = q_next;
            out.best_action.clone_from(&next);
        }
        let done = (q_next - q).abs() < cfg.tolerance;
        a = next;
        if done {
            out.converged = true;
            break;
        }
        let (qv, gv) = net.value_and_action_grad(x, &a)?;
        q = qv;
        g = gv;
    }
    Ok(out)
}

/// Max-Q by projected gradient ascent with `cfg.num_seeds` restarts.
pub fn solve_maxq_ga<T: Scalar, R: Rng + ?Sized>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    cfg: &GaConfig<T>,
    seed_action: &[T],
    rng: &mut R,
) -> Result<MaxQSolution<T>> {
    let start = Instant::now();
    cfg.validate()?;
    check_dim("GA seed action", domain.dim(), seed_action.len())?;
    if !domain.contains(seed_action) {
        return Err(CaqlError::InvalidConfig("GA seed action lies outside the box".into()));
    }
    let mut best: Option<AscentTrace<T>> = None;
    let mut iterations = 0;
    for k in 0..cfg.num_seeds {
        let seed = if k == 0 {
            seed_action.to_vec()
        } else {
            sample_uniform(domain, rng)
        };
        let run = gradient_ascent(net, x, domain, cfg, &seed)?;
        iterations += run.values.len() - 1;
        if best.as_ref().is_none_or(|b| run.best_value > b.best_value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one seed");
    Ok(MaxQSolution {
        value: best.best_value,
        action: best.best_action,
        gap: T::infinity(),
        status: if best.converged {
            SolveStatus::GapLimit
        } else {
            SolveStatus::IterLimit
        },
        iterations,
        elapsed: start.elapsed(),
    })
}

pub fn sample_uniform<T: Scalar, R: Rng + ?Sized>(domain: &BoxDomain<T>, rng: &mut R) -> Vec<T> {
    domain
        .lower()
        .iter()
        .zip(domain.upper())
        .map(|(l, u)| {
            let t = T::lit(rng.random::<f64>());
            *l + (*u - *l) * t
        })
        .collect()
}

/// Max-Q by the cross-entropy method with a diagonal Gaussian.
pub fn solve_maxq_cem<T: Scalar, R: Rng + ?Sized>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    cfg: &CemConfig<T>,
    rng: &mut R,
) -> Result<MaxQSolution<T>> {
    let start = Instant::now();
    cfg.validate()?;
    check_dim("action box", net.action_dim(), domain.dim())?;
    let d = domain.dim();
    let mut mean = domain.center();
    let mut std: Vec<T> = domain.radius().iter().map(|r| *r * cfg.initial_stddev).collect();
    let mut best_action = mean.clone();
    let mut best_value = net.q(x, &mean)?;
    let mut prev_elite_mean: Option<T> = None;
    let mut status = SolveStatus::IterLimit;
    let mut iterations = 0;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut samples: Vec<(T, Vec<T>)> = Vec::with_capacity(cfg.sample_count);
    for _ in 0..cfg.max_iters {
        iterations += 1;
        samples.clear();
        for _ in 0..cfg.sample_count {
            let mut a: Vec<T> = (0..d)
                .map(|i| mean[i] + std[i] * T::lit(normal.sample(rng)))
                .collect();
            domain.clip_in_place(&mut a);
            let q = net.q(x, &a)?;
            samples.push((q, a));
        }
        // Stable sort keeps sampling order among equal values.
        samples.sort_by(|p, q| q.0.partial_cmp(&p.0).unwrap_or(std::cmp::Ordering::Equal));
        if samples[0].0 > best_value {
            best_value = samples[0].0;
            best_action.clone_from(&samples[0].1);
        }
        let elites = &samples[..cfg.elite_count];
        let k = T::lit(cfg.elite_count as f64);
        for i in 0..d {
            let m = elites.iter().map(|e| e.1[i]).sum::<T>() / k;
            let var = elites.iter().map(|e| (e.1[i] - m) * (e.1[i] - m)).sum::<T>() / k;
            mean[i] = m;
            std[i] = var.sqrt();
        }
        let elite_mean = elites.iter().map(|e| e.0).sum::<T>() / k;
        if let Some(prev) = prev_elite_mean {
            if elite_mean - prev < cfg.tolerance {
                status = SolveStatus::GapLimit;
                break;
            }
        }
        prev_elite_mean = Some(elite_mean);
    }
    Ok(MaxQSolution {
        value: best_value,
        action: best_action,
        gap: T::infinity(),
        status,
        iterations,
        elapsed: start.elapsed(),
    })
}

/// `τ_t = mean_i |residual_i| · k1 · k2^t`.
pub fn dynamic_tolerance<T: Scalar>(residuals: &[T], k1: T, k2: T, t: u64) -> Result<T> {
    if residuals.is_empty() {
        return Err(CaqlError::EmptyBatch("dynamic_tolerance"));
    }
    let mean = residuals.iter().map(|r| r.abs()).sum::<T>() / T::lit(residuals.len() as f64);
    Ok(mean * k1 * geometric(k2, t))
}

/// `k^t` with `k^0 = 1` for every `k`.
pub(crate) fn geometric<T: Scalar>(k: T, t: u64) -> T {
    if t == 0 {
        T::one()
    } else if t <= i32::MAX as u64 {
        k.powi(t as i32)
    } else {
        k.powf(T::lit(t as f64))
    }
}
