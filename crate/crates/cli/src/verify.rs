//! Oracle-backed verification suites. Each suite draws its own random
//! instances from a fixed seed and counts violations against an
//! independent reference computation.

use std::fmt;
use std::str::FromStr;

use caql::agent::{compute_targets, AgentConfig, ClusterConfig, ClusterRadius, LossKind, SolverKind, TargetContext, Transition};
use caql::approx::{solve_maxq_ga, GaConfig};
use caql::bounds::{compute_bounds, BoundMethod, BoxDomain};
use caql::cluster::{dynamic_radius, Norm};
use caql::dualfilter::{filter_batch, maxq_upper_bound};
use caql::mip::{solve_maxq_mip, MipConfig};
use caql::net::ReluNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    MipOracle,
    DualSoundness,
    BoundsContainment,
    GradientCheck,
    FilterCertificate,
    ClusterExactness,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::MipOracle,
        Suite::DualSoundness,
        Suite::BoundsContainment,
        Suite::GradientCheck,
        Suite::FilterCertificate,
        Suite::ClusterExactness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::MipOracle => "mip-oracle",
            Suite::DualSoundness => "dual-soundness",
            Suite::BoundsContainment => "bounds-containment",
            Suite::GradientCheck => "gradient-check",
            Suite::FilterCertificate => "filter-certificate",
            Suite::ClusterExactness => "cluster-exactness",
        }
    }

    /// Runs the suite at its full size.
    pub fn run(self) -> Result<SuiteReport, CliError> {
        match self {
            Suite::MipOracle => mip_oracle(100, 1e-4),
            Suite::DualSoundness => dual_soundness(100, 100),
            Suite::BoundsContainment => bounds_containment(50, 10_000),
            Suite::GradientCheck => gradient_check(50),
            Suite::FilterCertificate => filter_certificate(20),
            Suite::ClusterExactness => cluster_exactness(10),
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "grad" => Ok(Suite::GradientCheck),
            "bounds" => Ok(Suite::BoundsContainment),
            "mip" => Ok(Suite::MipOracle),
            "dual" => Ok(Suite::DualSoundness),
            "filter" => Ok(Suite::FilterCertificate),
            "cluster" => Ok(Suite::ClusterExactness),
            other => Suite::ALL
                .into_iter()
                .find(|s| s.name() == other)
                .ok_or_else(|| CliError::Config(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub violations: usize,
    /// Largest observed error, in the suite's own units.
    pub worst: f64,
    pub detail: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases > 0 && self.violations == 0
    }
}

impl SuiteReport {
    /// The report line without its verdict.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {} cases, {} violations, worst {:.3e}",
            self.suite.name(),
            self.cases,
            self.violations,
            self.worst
        );
        if !self.detail.is_empty() {
            s.push_str(&format!(" ({})", self.detail));
        }
        s
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}", self.summary())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random 32×16 Q-network over a 3-D state with `action_dim` actions, and a
/// state in `[-1, 1]^3`.
pub fn instance(seed: u64, action_dim: usize) -> Result<(ReluNet<f64>, Vec<f64>), CliError> {
    let mut r = rng(seed);
    let net = ReluNet::q_network(3, action_dim, &[32, 16], &mut r)?;
    let x = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    Ok((net, x))
}

/// Grid search on a 1-D box followed by a fine projected ascent from the
/// best grid point.
pub fn grid_reference(net: &ReluNet<f64>, x: &[f64], domain: &BoxDomain<f64>, step: f64) -> Result<f64, CliError> {
    let (lo, hi) = (domain.lower()[0], domain.upper()[0]);
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..=n {
        let a = (lo + i as f64 * step).min(hi);
        let v = net.q(x, &[a])?;
        if v > best.0 {
            best = (v, a);
        }
    }
    let polish = GaConfig {
        step_size: step,
        tolerance: 1e-12,
        max_iters: 1000,
        num_seeds: 1,
        line_search: true,
    };
    let ga = solve_maxq_ga(net, x, domain, &polish, &[best.1], &mut rng(0))?;
    Ok(best.0.max(ga.value))
}

/// MIP against a grid search on 1-D actions in `[-2, 2]`.
pub fn mip_oracle(instances: usize, grid_step: f64) -> Result<SuiteReport, CliError> {
    let domain = BoxDomain::symmetric(1, 2.0)?;
    let cfg = MipConfig::default();
    let (mut violations, mut worst, mut nodes) = (0, 0.0f64, 0usize);
    for seed in 0..instances as u64 {
        let (net, x) = instance(seed, 1)?;
        let mip = solve_maxq_mip(&net, &x, &domain, &cfg)?;
        let reference = grid_reference(&net, &x, &domain, grid_step)?;
        let err = (mip.value - reference).abs();
        worst = worst.max(err);
        nodes += mip.iterations;
        if err > 1e-3 {
            violations += 1;
        }
    }
    Ok(SuiteReport {
        suite: Suite::MipOracle,
        cases: instances,
        violations,
        worst,
        detail: format!("tolerance 1e-3, {nodes} nodes"),
    })
}

/// `q̃ ≥ MIP value` for both bound methods on 1-D and 2-D instances.
pub fn dual_soundness(one_d: usize, two_d: usize) -> Result<SuiteReport, CliError> {
    let (mut cases, mut violations, mut worst) = (0, 0, f64::NEG_INFINITY);
    let mut min_slack = f64::INFINITY;
    for (dim, count, salt) in [(1usize, one_d, 0u64), (2, two_d, 10_000)] {
        let domain = BoxDomain::symmetric(dim, 2.0)?;
        for seed in 0..count as u64 {
            let (net, x) = instance(seed + salt, dim)?;
            let mip = solve_maxq_mip(&net, &x, &domain, &MipConfig::default())?;
            for method in [BoundMethod::Interval, BoundMethod::DualTightened] {
                let q_tilde = maxq_upper_bound(&net, &x, &domain, method)?;
                let slack = q_tilde - mip.value;
                min_slack = min_slack.min(slack);
                worst = worst.max(-slack);
                if slack < -1e-9 * (1.0 + mip.value.abs()) {
                    violations += 1;
                }
            }
            cases += 1;
        }
    }
    Ok(SuiteReport {
        suite: Suite::DualSoundness,
        cases,
        violations,
        worst: worst.max(0.0),
        detail: format!("smallest q̃ - mip {min_slack:.3e}"),
    })
}

/// Uniformly sampled actions stay within both kinds of layer bounds.
pub fn bounds_containment(instances: usize, samples: usize) -> Result<SuiteReport, CliError> {
    let mut violations = 0;
    let mut worst = 0.0f64;
    for seed in 0..instances as u64 {
        let dim = 1 + (seed % 2) as usize;
        let (net, x) = instance(seed + 20_000, dim)?;
        let domain = BoxDomain::symmetric(dim, 2.0)?;
        let bounds = [
            compute_bounds(&net, &x, &domain, BoundMethod::Interval)?,
            compute_bounds(&net, &x, &domain, BoundMethod::DualTightened)?,
        ];
        let mut r = rng(seed + 30_000);
        for _ in 0..samples {
            let a: Vec<f64> = (0..dim).map(|_| r.random_range(-2.0..=2.0)).collect();
            let pre = net.pre_activations(&x, &a)?;
            let mut bad = false;
            for b in &bounds {
                for (l, layer) in pre.iter().enumerate() {
                    let iv = b.layer(l);
                    for (s, y) in layer.iter().enumerate() {
                        let excess = (iv.lower[s] - y).max(y - iv.upper[s]);
                        worst = worst.max(excess);
                        bad |= excess > 1e-9;
                    }
                }
            }
            violations += bad as usize;
        }
    }
    Ok(SuiteReport {
        suite: Suite::BoundsContainment,
        cases: instances * samples,
        violations,
        worst,
        detail: String::new(),
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Input and parameter gradients against central differences at points at
/// least `1e-3` away from every ReLU kink.
pub fn gradient_check(nets: usize) -> Result<SuiteReport, CliError> {
    let h = 1e-6;
    let (mut checked, mut violations, mut worst, mut skipped) = (0, 0, 0.0f64, 0);
    let mut seed = 40_000u64;
    while checked < nets {
        seed += 1;
        if seed > 40_000 + 100 * nets as u64 {
            break;
        }
        let mut r = rng(seed);
        let sd = r.random_range(1..5);
        let ad = r.random_range(1..3);
        let hidden: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(2..20)).collect();
        let net = ReluNet::<f64>::q_network(sd, ad, &hidden, &mut r)?;
        let x: Vec<f64> = (0..sd).map(|_| r.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..ad).map(|_| r.random_range(-2.0..2.0)).collect();
        if net.pre_activations(&x, &a)?.iter().flatten().any(|y| y.abs() <= 1e-3) {
            skipped += 1;
            continue;
        }
        let input = net.join_input(&x, &a)?;
        let (gx, ga) = net.grad_input(&x, &a)?;
        let mut bad = false;
        for (k, g) in gx.iter().chain(&ga).enumerate() {
            let (mut p, mut m) = (input.clone(), input.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (net.forward_input(&p)?[0] - net.forward_input(&m)?[0]) / (2.0 * h);
            let e = rel_err(fd, *g);
            worst = worst.max(e);
            bad |= e >= 1e-5;
        }
        let grad = net.grad_params(std::slice::from_ref(&input), &[1.0])?;
        let p0 = net.params();
        let mut probe = net.clone();
        for (k, g) in grad.iter().enumerate() {
            let mut p = p0.clone();
            p[k] += h;
            probe.set_params(&p)?;
            let up = probe.forward_input(&input)?[0];
            p[k] -= 2.0 * h;
            probe.set_params(&p)?;
            let down = probe.forward_input(&input)?[0];
            let e = rel_err((up - down) / (2.0 * h), *g);
            worst = worst.max(e);
            bad |= e >= 1e-5;
        }
        violations += bad as usize;
        checked += 1;
    }
    Ok(SuiteReport {
        suite: Suite::GradientCheck,
        cases: checked,
        violations: violations + nets.saturating_sub(checked),
        worst,
        detail: format!("relative tolerance 1e-5, {skipped} near-kink draws skipped"),
    })
}

/// Every sample the dual filter discards has zero hinge penalty under the
/// exact `q*`, and its ℓ2 dual target is no farther from `Q` than the exact
/// target.
pub fn filter_certificate(nets: usize) -> Result<SuiteReport, CliError> {
    let gamma = 0.9;
    let domain = BoxDomain::symmetric(1, 2.0)?;
    let (mut fired, mut violations, mut worst) = (0, 0, 0.0f64);
    for seed in 0..nets as u64 {
        let (q, _) = instance(seed + 50_000, 1)?;
        let (q_target, _) = instance(seed + 60_000, 1)?;
        let mut r = rng(seed + 70_000);
        let mut batch = Vec::with_capacity(32);
        for _ in 0..32 {
            let state: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let next_state: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let action = vec![r.random_range(-2.0..2.0)];
            // rewards straddle the certificate threshold
            let q_sa = q.q(&state, &action)?;
            let q_tilde = maxq_upper_bound(&q_target, &next_state, &domain, BoundMethod::DualTightened)?;
            let reward = q_sa - gamma * q_tilde + r.random_range(-0.5..0.5);
            batch.push(Transition {
                state,
                action,
                reward,
                next_state,
            });
        }
        let fr = filter_batch(&batch, &q, &q_target, &domain, gamma, LossKind::L2, BoundMethod::DualTightened)?;
        for &(i, target) in &fr.resolved {
            fired += 1;
            let t = &batch[i];
            let q_star = solve_maxq_mip(&q_target, &t.next_state, &domain, &MipConfig::default())?.value;
            let q_sa = fr.q_sa[i];
            let exact = t.reward + gamma * q_star;
            let penalty = exact - q_sa;
            let dual_target = target.ok_or_else(|| CliError::Config("ℓ2 filter returned no target".into()))?;
            let excess = (dual_target - q_sa).powi(2) - (exact - q_sa).powi(2);
            worst = worst.max(penalty.max(0.0)).max(excess.max(0.0));
            if penalty > 1e-9 || excess > 1e-9 {
                violations += 1;
            }
        }
    }
    Ok(SuiteReport {
        suite: Suite::FilterCertificate,
        cases: fired,
        violations,
        worst,
        detail: format!("{fired} discarded samples over {nets} nets"),
    })
}

/// Zero-radius clustering reproduces the unclustered targets bit for bit,
/// and the radius schedule matches `k3 · k4^t`.
pub fn cluster_exactness(nets: usize) -> Result<SuiteReport, CliError> {
    let domain = BoxDomain::symmetric(1, 2.0)?;
    let (mut cases, mut violations, mut worst) = (0, 0, 0.0f64);
    for seed in 0..nets as u64 {
        let (q, _) = instance(seed + 80_000, 1)?;
        let (q_target, _) = instance(seed + 81_000, 1)?;
        let policy = ReluNet::action_network(3, 1, &[8], &mut rng(seed + 82_000))?;
        let mut r = rng(seed + 83_000);
        let mut batch: Vec<Transition<f64>> = Vec::with_capacity(24);
        for i in 0..24 {
            // every third next state repeats its predecessor
            let next_state = if i % 3 == 2 {
                batch[i - 1].next_state.clone()
            } else {
                (0..3).map(|_| r.random_range(-1.0..1.0)).collect()
            };
            batch.push(Transition {
                state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                action: vec![r.random_range(-2.0..2.0)],
                reward: r.random_range(-1.0..0.0),
                next_state,
            });
        }
        for solver in [SolverKind::Ga, SolverKind::Cem, SolverKind::Mip] {
            let plain = AgentConfig {
                solver,
                ..AgentConfig::default()
            };
            let clustered = AgentConfig {
                cluster: Some(ClusterConfig {
                    radius: ClusterRadius::Fixed(0.0),
                    norm: Norm::L2,
                }),
                ..plain.clone()
            };
            let ctx = |cfg| TargetContext {
                q: &q,
                q_target: &q_target,
                policy: &policy,
                domain: &domain,
                cfg,
                tolerance: None,
                step: 0,
                seed,
            };
            let a = compute_targets(&batch, &ctx(&plain))?;
            let c = compute_targets(&batch, &ctx(&clustered))?;
            cases += 1;
            if a.targets != c.targets {
                violations += 1;
            }
        }
    }
    for (k3, k4) in [(1.0f64, 0.99f64), (0.5, 0.9995), (2.0, 0.5)] {
        let mut direct = k3;
        for t in 0..10_000u64 {
            let err = (dynamic_radius(k3, k4, t) - direct).abs();
            worst = worst.max(err);
            cases += 1;
            violations += (err > 1e-12) as usize;
            direct *= k4;
        }
    }
    Ok(SuiteReport {
        suite: Suite::ClusterExactness,
        cases,
        violations,
        worst,
        detail: format!("{} target batches, radius schedule to t = 9999", nets * 3),
    })
}
