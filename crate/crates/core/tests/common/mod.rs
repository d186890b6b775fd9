#![allow(dead_code)]

use caql::bounds::BoxDomain;
use caql::net::ReluNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random 32×16 Q-network over a 3-D state and `action_dim` actions, plus a
/// random state in `[-1, 1]^3`.
pub fn instance(seed: u64, action_dim: usize) -> (ReluNet<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let net = ReluNet::q_network(3, action_dim, &[32, 16], &mut r).unwrap();
    let x = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    (net, x)
}

/// Dense matrix-chain evaluation written independently of the library.
pub fn oracle_forward(net: &ReluNet<f64>, input: &[f64]) -> Vec<f64> {
    let mut z = input.to_vec();
    for layer in net.layers() {
        let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
        let w = layer.weights.as_slice();
        let mut y = vec![0.0; rows];
        for i in 0..rows {
            let mut acc = layer.bias[i];
            for j in 0..cols {
                acc += w[i * cols + j] * z[j];
            }
            y[i] = if acc > 0.0 { acc } else { 0.0 };
        }
        z = y;
    }
    let out = net.output();
    (0..out.rows())
        .map(|r| (0..out.cols()).map(|c| out[(r, c)] * z[c]).sum())
        .collect()
}

/// Grid search over a 1-D box with the given step, then a short projected
/// ascent from the best grid point.
pub fn grid_max_1d(net: &ReluNet<f64>, x: &[f64], lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..=n {
        let a = (lo + i as f64 * step).min(hi);
        let v = net.q(x, &[a]).unwrap();
        if v > best.0 {
            best = (v, a);
        }
    }
    // polish with small projected-gradient steps
    let (mut v, mut a) = best;
    for _ in 0..200 {
        let (_, g) = net.value_and_action_grad(x, &[a]).unwrap();
        let cand = (a + 1e-4 * g[0].signum()).clamp(lo, hi);
        let vc = net.q(x, &[cand]).unwrap();
        if vc > v {
            v = vc;
            a = cand;
        } else {
            break;
        }
    }
    (v, a)
}

pub fn sample_box(domain: &BoxDomain<f64>, r: &mut ChaCha8Rng) -> Vec<f64> {
    domain
        .lower()
        .iter()
        .zip(domain.upper())
        .map(|(l, u)| if u > l { r.random_range(*l..=*u) } else { *l })
        .collect()
}
