mod common;

use caql::bounds::{compute_bounds, BoundMethod, BoxDomain};
use caql::mip::{solve_maxq_mip, MipConfig};
use caql::net::ReluNet;
use common::{instance, rng, sample_box};
use rand::Rng;

#[test]
fn bounds_contain_sampled_pre_activations() {
    let mut violations = 0;
    for seed in 0..50u64 {
        let action_dim = 1 + (seed % 2) as usize;
        let (net, x) = instance(seed, action_dim);
        let domain = BoxDomain::symmetric(action_dim, 2.0).unwrap();
        let interval = compute_bounds(&net, &x, &domain, BoundMethod::Interval).unwrap();
        let dual = compute_bounds(&net, &x, &domain, BoundMethod::DualTightened).unwrap();
        let mut r = rng(seed + 500);
        for _ in 0..10_000 {
            let a = sample_box(&domain, &mut r);
            let pre = net.pre_activations(&x, &a).unwrap();
            if !interval.contains(&pre, 1e-9) || !dual.contains(&pre, 1e-9) {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn dual_bounds_are_no_looser_than_interval() {
    for seed in 0..50u64 {
        let (net, x) = instance(seed, 2);
        let domain = BoxDomain::symmetric(2, 1.5).unwrap();
        let interval = compute_bounds(&net, &x, &domain, BoundMethod::Interval).unwrap();
        let dual = compute_bounds(&net, &x, &domain, BoundMethod::DualTightened).unwrap();
        for (iv, dv) in interval.layers().iter().zip(dual.layers()) {
            for s in 0..iv.len() {
                assert!(dv.lower[s] >= iv.lower[s] - 1e-12 && dv.upper[s] <= iv.upper[s] + 1e-12);
            }
        }
        assert!(dual.unstable_count() <= interval.unstable_count());
    }
}

#[test]
fn shrinking_the_box_shrinks_the_bounds() {
    for seed in 0..30u64 {
        let (net, x) = instance(seed, 1);
        let outer = BoxDomain::symmetric(1, 2.0).unwrap();
        let inner = BoxDomain::new(vec![-0.5], vec![1.0]).unwrap();
        for method in [BoundMethod::Interval, BoundMethod::DualTightened] {
            let bo = compute_bounds(&net, &x, &outer, method).unwrap();
            let bi = compute_bounds(&net, &x, &inner, method).unwrap();
            for (o, i) in bo.layers().iter().zip(bi.layers()) {
                for s in 0..o.len() {
                    assert!(i.lower[s] >= o.lower[s] - 1e-12 && i.upper[s] <= o.upper[s] + 1e-12);
                }
            }
        }
    }
}

/// For one hidden layer the pre-activation is affine in the action, so both
/// methods give the exact range; the MIP over `±e_s` of that layer confirms it.
#[test]
fn single_layer_bounds_are_exact() {
    let mut r = rng(77);
    for _ in 0..20 {
        let net = ReluNet::<f64>::q_network(2, 2, &[6], &mut r).unwrap();
        let x = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let domain = BoxDomain::new(vec![-1.0, 0.0], vec![2.0, 0.5]).unwrap();
        let b = compute_bounds(&net, &x, &domain, BoundMethod::DualTightened).unwrap();
        let layer = &net.layers()[0];
        for s in 0..layer.outputs() {
            // exact range by corner enumeration
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for mask in 0..4 {
                let a = [
                    if mask & 1 == 1 { 2.0 } else { -1.0 },
                    if mask & 2 == 2 { 0.5 } else { 0.0 },
                ];
                let y = net.pre_activations(&x, &a).unwrap()[0][s];
                lo = lo.min(y);
                hi = hi.max(y);
            }
            assert!((b.layer(0).lower[s] - lo).abs() < 1e-12);
            assert!((b.layer(0).upper[s] - hi).abs() < 1e-12);
        }
    }
}

/// Upper bounds of the second layer cannot be below the true maximum, which
/// the MIP computes exactly when the read-out picks a single unit.
#[test]
fn second_layer_upper_bound_dominates_exact_maximum() {
    for seed in 0..5u64 {
        let (net, x) = instance(seed, 1);
        let domain = BoxDomain::symmetric(1, 2.0).unwrap();
        let b = compute_bounds(&net, &x, &domain, BoundMethod::DualTightened).unwrap();
        let hidden = net.layers();
        for s in 0..hidden[1].outputs() {
            // Q'(x,a) = relu(y_2(s)): its max is relu(max y_2(s)).
            let mut out = vec![vec![0.0; hidden[1].outputs()]];
            out[0][s] = 1.0;
            let probe = ReluNet::new(
                hidden.to_vec(),
                caql::linalg::Matrix::from_rows(&out),
                net.state_dim(),
            )
            .unwrap();
            let exact = solve_maxq_mip(&probe, &x, &domain, &MipConfig::default()).unwrap();
            assert!(b.layer(1).upper[s].max(0.0) + 1e-6 >= exact.value, "unit {s}");
        }
    }
}
