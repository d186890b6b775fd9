mod common;

use std::time::Instant;

use caql::approx::{solve_maxq_cem, solve_maxq_ga, CemConfig, GaConfig};
use caql::bounds::{compute_bounds, BoundMethod, BoxDomain};
use caql::mip::{build_mip, lp_solve, solve_maxq_mip, LpOutcome, MipConfig};
use caql::net::ReluNet;
use caql::SolveStatus;
use common::{grid_max_1d, instance, rng, sample_box};
use rand::Rng;

#[test]
fn mip_matches_dense_grid_on_random_nets() {
    let domain = BoxDomain::symmetric(1, 2.0).unwrap();
    let cfg = MipConfig::default();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut nodes = 0;
    for seed in 0..20 {
        let (net, x) = instance(1000 + seed, 1);
        let sol = solve_maxq_mip(&net, &x, &domain, &cfg).unwrap();
        let (grid, _) = grid_max_1d(&net, &x, -2.0, 2.0, 1e-3);
        worst = worst.max((sol.value - grid).abs());
        nodes += sol.iterations;
        assert!((sol.value - grid).abs() < 1e-3, "seed {seed}: mip {} grid {grid}", sol.value);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((net.q(&x, &sol.action).unwrap() - sol.value).abs() < 1e-6);
        assert!(domain.contains(&sol.action));
    }
    eprintln!("20 nets: worst |mip - grid| = {worst:.2e}, {nodes} nodes, {:?}", start.elapsed());
}

#[test]
fn mip_dominates_samples_in_2d() {
    let domain = BoxDomain::new(vec![-1.0, -0.5], vec![1.0, 2.0]).unwrap();
    let cfg = MipConfig::default();
    for seed in 0..10 {
        let (net, x) = instance(2000 + seed, 2);
        let sol = solve_maxq_mip(&net, &x, &domain, &cfg).unwrap();
        let mut r = rng(seed);
        for _ in 0..10_000 {
            let a = sample_box(&domain, &mut r);
            assert!(sol.value + cfg.gap_tol >= net.q(&x, &a).unwrap());
        }
        assert!(sol.gap >= 0.0 && sol.gap <= cfg.gap_tol);
    }
}

#[test]
fn node_relaxations_bound_their_subdomain() {
    let domain = BoxDomain::symmetric(1, 2.0).unwrap();
    let mut r = rng(3);
    for seed in 0..10 {
        let (net, x) = instance(3000 + seed, 1);
        let bounds = compute_bounds(&net, &x, &domain, BoundMethod::DualTightened).unwrap();
        let model = build_mip(&net, &x, &domain, &bounds).unwrap();
        if model.num_binaries() == 0 {
            continue;
        }
        // sampled actions with their activation patterns
        let samples: Vec<(Vec<f64>, f64, Vec<bool>)> = (0..2000)
            .map(|_| {
                let a = sample_box(&domain, &mut r);
                let pre = net.pre_activations(&x, &a).unwrap();
                let pattern = model
                    .neurons
                    .iter()
                    .filter(|n| n.zeta_var.is_some())
                    .map(|n| pre[n.layer][n.unit] > 0.0)
                    .collect();
                (a.clone(), net.q(&x, &a).unwrap(), pattern)
            })
            .collect();
        for _ in 0..20 {
            let k = r.random_range(1..=model.num_binaries().min(4));
            let mut fixings = Vec::new();
            for _ in 0..k {
                let b = r.random_range(0..model.num_binaries());
                if fixings.iter().all(|(j, _)| *j != b) {
                    fixings.push((b, r.random_bool(0.5)));
                }
            }
            let relaxed = lp_solve(&model, &fixings).unwrap();
            for (_, q, pattern) in &samples {
                if fixings.iter().all(|(j, on)| pattern[*j] == *on) {
                    match &relaxed {
                        LpOutcome::Optimal { value, .. } => assert!(*value + 1e-7 >= *q),
                        LpOutcome::Infeasible => panic!("node containing a sample reported infeasible"),
                    }
                }
            }
        }
    }
}

#[test]
fn mip_is_deterministic() {
    let (net, x) = instance(4000, 1);
    let domain = BoxDomain::symmetric(1, 2.0).unwrap();
    let cfg = MipConfig::default();
    let a = solve_maxq_mip(&net, &x, &domain, &cfg).unwrap();
    let b = solve_maxq_mip(&net, &x, &domain, &cfg).unwrap();
    assert_eq!((a.value, a.action, a.gap, a.iterations), (b.value, b.action, b.gap, b.iterations));
}

#[test]
fn linear_net_hits_corner() {
    // all units active on the box: q is affine in a
    let mut r = rng(5);
    let mut net = ReluNet::<f64>::q_network(0, 2, &[4], &mut r).unwrap();
    let mut p = net.params();
    for v in &mut p[8..12] {
        *v = 10.0;
    }
    net.set_params(&p).unwrap();
    let domain = BoxDomain::symmetric(2, 1.0).unwrap();
    let sol = solve_maxq_mip(&net, &[], &domain, &MipConfig::default()).unwrap();
    let corners = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];
    let best = corners.iter().map(|c| net.q(&[], c).unwrap()).fold(f64::NEG_INFINITY, f64::max);
    assert!((sol.value - best).abs() < 1e-9);
    assert_eq!(sol.iterations, 1);
    assert_eq!(sol.gap, 0.0);
}

#[test]
fn approximate_solvers_never_exceed_mip() {
    let domain = BoxDomain::symmetric(1, 2.0).unwrap();
    let mip_cfg = MipConfig::default();
    let ga_cfg = GaConfig {
        step_size: 0.1,
        ..GaConfig::default()
    };
    let mut close = 0;
    let n = 30;
    for seed in 0..n {
        let (net, x) = instance(5000 + seed, 1);
        let mip = solve_maxq_mip(&net, &x, &domain, &mip_cfg).unwrap();
        let mut r = rng(seed);
        let ga = solve_maxq_ga(&net, &x, &domain, &ga_cfg, &[0.0], &mut r).unwrap();
        let cem = solve_maxq_cem(&net, &x, &domain, &CemConfig::default(), &mut r).unwrap();
        assert!(ga.value <= mip.value + mip.gap + 1e-6);
        assert!(cem.value <= mip.value + mip.gap + 1e-6);
        if ga.value >= mip.value - 0.05 {
            close += 1;
        }
    }
    eprintln!("GA within 0.05 of MIP on {close}/{n} instances");
}
