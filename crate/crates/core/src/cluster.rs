//! Next-state clustering: solve max-Q only at centroids and extend the result
//! to nearby states with a first-order Taylor expansion.

use crate::approx::geometric;
use crate::error::{check_dim, CaqlError, Result};
use crate::net::ReluNet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Norm {
    L1,
    #[default]
    L2,
    Inf,
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Inf => "linf",
        }
    }

    pub fn distance<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        let diffs = a.iter().zip(b).map(|(x, y)| (*x - *y).abs());
        match self {
            Norm::L1 => diffs.sum(),
            Norm::L2 => diffs.map(|d| d * d).sum::<T>().sqrt(),
            Norm::Inf => diffs.fold(T::zero(), T::max),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = CaqlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" => Ok(Norm::Inf),
            other => Err(CaqlError::InvalidConfig(format!("unknown norm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverResult<T> {
    /// Indices into the input of the states chosen as centroids.
    pub centroids: Vec<usize>,
    /// For each input state, the position of its centroid in `centroids`.
    pub assignment: Vec<usize>,
    pub radius: T,
    pub norm: Norm,
}

impl<T: Scalar> CoverResult<T> {
    pub fn is_centroid(&self, i: usize) -> bool {
        self.centroids[self.assignment[i]] == i
    }

    pub fn centroid_fraction(&self) -> f64 {
        if self.assignment.is_empty() {
            0.0
        } else {
            self.centroids.len() as f64 / self.assignment.len() as f64
        }
    }
}

/// Greedy online covering in input order.
///
/// A state within `radius` of an existing centroid joins the nearest one
/// (lowest index on ties); otherwise it opens a new centroid.
pub fn cover<T: Scalar>(states: &[Vec<T>], radius: T, norm: Norm) -> CoverResult<T> {
    let mut centroids: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let mut nearest: Option<(usize, T)> = None;
        for (k, &c) in centroids.iter().enumerate() {
            let dist = norm.distance(s, &states[c]);
            if dist <= radius && nearest.is_none_or(|(_, d)| dist < d) {
                nearest = Some((k, dist));
            }
        }
        match nearest {
            Some((k, _)) => assignment.push(k),
            None => {
                assignment.push(centroids.len());
                centroids.push(i);
            }
        }
    }
    CoverResult {
        centroids,
        assignment,
        radius,
        norm,
    }
}

/// Exact max-Q at a centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSolution<T> {
    pub value: T,
    pub action: Vec<T>,
}

/// `q̂(x') = q*(c') + ⟨∇_{x'} Q_target(c', a*(c')), x' - c'⟩` for every state.
///
/// `solutions[k]` belongs to `cover.centroids[k]`; centroids get `q*` itself.
pub fn taylor_targets<T: Scalar>(
    net_target: &ReluNet<T>,
    states: &[Vec<T>],
    cover: &CoverResult<T>,
    solutions: &[Option<CentroidSolution<T>>],
) -> Result<Vec<T>> {
    check_dim("cover assignment", states.len(), cover.assignment.len())?;
    check_dim("centroid solutions", cover.centroids.len(), solutions.len())?;
    let mut grads: Vec<Option<Vec<T>>> = vec![None; cover.centroids.len()];
    let mut out = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let k = cover.assignment[i];
        let sol = solutions[k].as_ref().ok_or_else(|| {
            CaqlError::InvalidConfig(format!("centroid {k} referenced by sample {i} has no solution"))
        })?;
        let c = &states[cover.centroids[k]];
        if cover.centroids[k] == i || s == c {
            out.push(sol.value);
            continue;
        }
        if grads[k].is_none() {
            grads[k] = Some(net_target.grad_input(c, &sol.action)?.0);
        }
        let g = grads[k].as_ref().expect("just computed");
        let mut q = sol.value;
        for ((gi, si), ci) in g.iter().zip(s).zip(c) {
            q += *gi * (*si - *ci);
        }
        out.push(q);
    }
    Ok(out)
}

/// `b_t = k3 · k4^t`.
pub fn dynamic_radius<T: Scalar>(k3: T, k4: T, t: u64) -> T {
    k3 * geometric(k4, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoxDomain;
    use crate::mip::{solve_maxq_mip, MipConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_trace() {
        let states = vec![vec![0.0], vec![0.5], vec![2.0]];
        let c = cover(&states, 1.0, Norm::Inf);
        assert_eq!(c.centroids, vec![0, 2]);
        assert_eq!(c.assignment, vec![0, 0, 1]);
    }

    #[test]
    fn zero_radius_duplicates() {
        let states = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![1.0, 2.0]];
        let c = cover(&states, 0.0, Norm::L2);
        assert_eq!(c.centroids, vec![0, 1]);
        assert_eq!(c.assignment, vec![0, 1, 0]);
    }

    #[test]
    fn identical_states_one_centroid() {
        let states = vec![vec![0.7]; 10];
        assert_eq!(cover(&states, 0.1, Norm::L1).centroids, vec![0]);
    }

    #[test]
    fn nearest_centroid_wins() {
        let states = vec![vec![0.0], vec![1.5], vec![1.0]];
        let c = cover(&states, 1.0, Norm::L2);
        assert_eq!(c.centroids, vec![0, 1]);
        assert_eq!(c.assignment[2], 1);
    }

    #[test]
    fn radius_schedule() {
        assert_eq!(dynamic_radius(1.0, 0.0, 0), 1.0);
        assert_eq!(dynamic_radius(1.0, 0.0, 3), 0.0);
        assert!(f64::abs(dynamic_radius(0.5, 0.9, 2) - 0.405) < 1e-12);
        assert_eq!(dynamic_radius(2.0, 0.3, 0), 2.0);
    }

    #[test]
    fn taylor_centroid_is_exact_and_missing_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ReluNet::<f64>::q_network(2, 1, &[8], &mut rng).unwrap();
        let states = vec![vec![0.1, 0.2], vec![0.15, 0.2]];
        let c = cover(&states, 1.0, Norm::L2);
        let sols = vec![Some(CentroidSolution {
            value: 4.0,
            action: vec![0.5],
        })];
        let q = taylor_targets(&net, &states, &c, &sols).unwrap();
        assert_eq!(q[0], 4.0);
        assert!(taylor_targets(&net, &states, &c, &[None]).is_err());
    }

    #[test]
    fn taylor_exact_for_always_active_net() {
        // Positive weights and large biases keep every unit active on the region.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = ReluNet::<f64>::q_network(2, 1, &[6, 4], &mut rng).unwrap();
        let mut p = net.params();
        let n0 = 6 * 3;
        for v in &mut p[..n0] {
            *v = v.abs();
        }
        for v in &mut p[n0..n0 + 6] {
            *v = 5.0;
        }
        let n1 = n0 + 6;
        for v in &mut p[n1..n1 + 24] {
            *v = v.abs();
        }
        for v in &mut p[n1 + 24..n1 + 28] {
            *v = 5.0;
        }
        net.set_params(&p).unwrap();
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let states = vec![vec![0.0, 0.0], vec![0.05, -0.03]];
        let c = cover(&states, 0.5, Norm::L2);
        assert_eq!(c.centroids.len(), 1);
        let cfg = MipConfig::default();
        let s0 = solve_maxq_mip(&net, &states[0], &domain, &cfg).unwrap();
        let sols = vec![Some(CentroidSolution {
            value: s0.value,
            action: s0.action,
        })];
        let q = taylor_targets(&net, &states, &c, &sols).unwrap();
        let exact = solve_maxq_mip(&net, &states[1], &domain, &cfg).unwrap().value;
        assert!((q[1] - exact).abs() < 1e-9, "{} vs {exact}", q[1]);
    }

    proptest! {
        #[test]
        fn covering_property(seed in any::<u64>(), n in 1usize..60, r in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let states: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            for norm in [Norm::L1, Norm::L2, Norm::Inf] {
                let c = cover(&states, r, norm);
                for (i, s) in states.iter().enumerate() {
                    prop_assert!(norm.distance(s, &states[c.centroids[c.assignment[i]]]) <= r);
                }
                for (k, &ci) in c.centroids.iter().enumerate() {
                    prop_assert_eq!(c.assignment[ci], k);
                }
            }
        }
    }
}
