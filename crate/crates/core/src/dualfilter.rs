//! Dual upper bound on max-Q from the triangle relaxation of every unstable
//! ReLU, and the batch filter built on it.
//!
//! The dual network runs the Q-network backwards:
//!
//! ```text
//! ν̂_H = -c,   ν_l = D_l ν̂_{l+1},   ν̂_l = W_lᵀ ν_l      (l = H-1 .. 0)
//! ```
//!
//! and for a maximisation objective the resulting upper bound is
//!
//! ```text
//! q̃ = -ν̂ₐᵀ ā + Σ_i Δ_i |ν̂ₐ(i)| - ν̂ₓᵀ x - Σ_l Σ_{s∈I_l} l_l(s) [-ν_l(s)]₊ - Σ_l ν_lᵀ b_l
//! ```
//!
//! where `ν̂ₓ`, `ν̂ₐ` are the state and action parts of `ν̂_0`.

use crate::agent::{LossKind, Transition};
use crate::bounds::{build_d, compute_bounds, Activation, BoundMethod, BoxDomain, LayerBounds};
use crate::error::{check_dim, CaqlError, Result};
use crate::net::ReluNet;
use crate::scalar::{dot, Scalar};

/// Dual variables of the relaxed max problem.
///
/// `nu[l]` pairs with the pre-activation of layer `l`; `nu_hat[l]` with the
/// input `z_l` of layer `l`. The last entry of `nu` belongs to the objective
/// layer: the read-out head for a max-Q bound, or a hidden layer when
/// bounding a partial network.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVars<T> {
    pub nu: Vec<Vec<T>>,
    pub nu_hat: Vec<Vec<T>>,
    state_dim: usize,
}

impl<T: Scalar> DualVars<T> {
    /// Index of the objective layer.
    pub fn top(&self) -> usize {
        self.nu.len() - 1
    }

    /// State part of `ν̂_0`.
    pub fn input_state(&self) -> &[T] {
        &self.nu_hat[0][..self.state_dim]
    }

    /// Action part of `ν̂_0`.
    pub fn input_action(&self) -> &[T] {
        &self.nu_hat[0][self.state_dim..]
    }

    /// `ν̂` on the last hidden layer's output; equals `-c` for a max-Q dual.
    pub fn output_dual(&self) -> &[T] {
        &self.nu_hat[self.top()]
    }
}

fn layer_bias<T: Scalar>(net: &ReluNet<T>, l: usize) -> Vec<T> {
    if l == net.num_hidden() {
        vec![T::zero(); net.output_dim()]
    } else {
        net.layers()[l].bias.clone()
    }
}

/// Dual recursion for `max gᵀ y_top`, where `y_top` is the pre-activation of
/// hidden layer `top`, or the network output when `top == num_hidden`.
///
/// `bounds` must cover at least the hidden layers below `top`.
pub fn dual_network_to<T: Scalar>(
    net: &ReluNet<T>,
    bounds: &LayerBounds<T>,
    top: usize,
    objective: &[T],
) -> Result<DualVars<T>> {
    if top > net.num_hidden() {
        return Err(CaqlError::InvalidBounds(format!(
            "objective layer {top} beyond network depth {}",
            net.num_hidden()
        )));
    }
    if bounds.len() < top {
        return Err(CaqlError::InvalidBounds(format!(
            "need bounds for {top} layers, have {}",
            bounds.len()
        )));
    }
    let top_weights = if top == net.num_hidden() {
        net.output()
    } else {
        &net.layers()[top].weights
    };
    check_dim("dual objective", top_weights.rows(), objective.len())?;
    let mut nu = vec![Vec::new(); top + 1];
    let mut nu_hat = vec![Vec::new(); top + 1];
    nu[top] = objective.iter().map(|&g| -g).collect();
    nu_hat[top] = top_weights.tr_mul_vec(&nu[top]);
    for l in (0..top).rev() {
        let iv = bounds.layer(l);
        check_dim("bounds layer width", net.layers()[l].outputs(), iv.len())?;
        let d = build_d(iv);
        nu[l] = d.iter().zip(&nu_hat[l + 1]).map(|(d, v)| *d * *v).collect();
        nu_hat[l] = net.layers()[l].weights.tr_mul_vec(&nu[l]);
    }
    Ok(DualVars {
        nu,
        nu_hat,
        state_dim: net.state_dim(),
    })
}

/// Dual network of the Q-network: `ν̂_H = -c` and the backward recursion.
pub fn dual_network<T: Scalar>(net: &ReluNet<T>, bounds: &LayerBounds<T>) -> Result<DualVars<T>> {
    bounds.check_shape(net)?;
    check_dim("scalar network output", 1, net.output_dim())?;
    dual_network_to(net, bounds, net.num_hidden(), &[T::one()])
}

/// Value of the dual objective for `dual`: an upper bound on the maximum of
/// the objective used to build it.
pub fn dual_objective<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    bounds: &LayerBounds<T>,
    dual: &DualVars<T>,
) -> Result<T> {
    check_dim("state input", net.state_dim(), x.len())?;
    check_dim("action box", net.action_dim(), domain.dim())?;
    let top = dual.top();
    let nu_a = dual.input_action();
    let center = domain.center();
    let radius = domain.radius();
    let mut value = -dot(nu_a, &center);
    for (v, r) in nu_a.iter().zip(&radius) {
        value += *r * v.abs();
    }
    value -= dot(dual.input_state(), x);
    for l in 0..top {
        let iv = bounds.layer(l);
        for s in 0..iv.len() {
            if iv.status(s) == Activation::Unstable {
                value -= iv.lower[s] * (-dual.nu[l][s]).pos_part();
            }
        }
    }
    for l in 0..=top {
        value -= dot(&dual.nu[l], &layer_bias(net, l));
    }
    Ok(value)
}

/// `q̃`: dual upper bound on `max_{a ∈ box} Q(x, a)`.
pub fn dual_maxq_bound<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    bounds: &LayerBounds<T>,
    dual: &DualVars<T>,
) -> Result<T> {
    if dual.top() != net.num_hidden() {
        return Err(CaqlError::InvalidBounds(
            "dual variables do not belong to the read-out objective".into(),
        ));
    }
    dual_objective(net, x, domain, bounds, dual)
}

/// Bounds, dual network and `q̃` in one call.
pub fn maxq_upper_bound<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    method: BoundMethod,
) -> Result<T> {
    let bounds = compute_bounds(net, x, domain, method)?;
    let dual = dual_network(net, &bounds)?;
    dual_maxq_bound(net, x, domain, &bounds, &dual)
}

/// Outcome of dual filtering one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult<T> {
    /// `q̃` at each next state under the target network.
    pub q_tilde: Vec<T>,
    /// `Q_θ(x, a)` for each sample.
    pub q_sa: Vec<T>,
    /// Indices of inconclusive samples (`B'_df`), in batch order.
    pub kept: Vec<usize>,
    /// Resolved samples: `(index, dual target)`. The target is `r + γ q̃` for
    /// the ℓ2 loss and `None` for the hinge loss, whose penalty term is dropped.
    pub resolved: Vec<(usize, Option<T>)>,
}

impl<T: Scalar> FilterResult<T> {
    pub fn filtered_fraction(&self) -> f64 {
        let n = self.kept.len() + self.resolved.len();
        if n == 0 {
            0.0
        } else {
            self.resolved.len() as f64 / n as f64
        }
    }
}

/// Whether the certificate `q̃ <= (Q_θ(x,a) - r) / γ` holds.
pub fn certificate_holds<T: Scalar>(q_tilde: T, q_sa: T, reward: T, gamma: T) -> bool {
    q_tilde <= (q_sa - reward) / gamma
}

/// Splits a batch into samples whose TD term is provably inactive and the
/// inconclusive remainder.
pub fn filter_batch<T: Scalar>(
    batch: &[Transition<T>],
    q_online: &ReluNet<T>,
    q_target: &ReluNet<T>,
    domain: &BoxDomain<T>,
    gamma: T,
    loss: LossKind,
    method: BoundMethod,
) -> Result<FilterResult<T>> {
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(CaqlError::InvalidConfig(format!(
            "discount must lie in (0, 1), got {gamma}"
        )));
    }
    let mut out = FilterResult {
        q_tilde: Vec::with_capacity(batch.len()),
        q_sa: Vec::with_capacity(batch.len()),
        kept: Vec::new(),
        resolved: Vec::new(),
    };
    for (i, t) in batch.iter().enumerate() {
        let q_tilde = maxq_upper_bound(q_target, &t.next_state, domain, method)?;
        let q_sa = q_online.q(&t.state, &t.action)?;
        if certificate_holds(q_tilde, q_sa, t.reward, gamma) {
            let target = match loss {
                LossKind::L2 => Some(t.reward + gamma * q_tilde),
                LossKind::Hinge => None,
            };
            out.resolved.push((i, target));
        } else {
            out.kept.push(i);
        }
        out.q_tilde.push(q_tilde);
        out.q_sa.push(q_sa);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::interval_propagate;
    use crate::linalg::Matrix;
    use crate::net::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_weights_give_zero_duals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = ReluNet::<f64>::q_network(2, 1, &[5, 4], &mut rng).unwrap();
        let mut p = net.params();
        let n = p.len();
        p[n - 4..].iter_mut().for_each(|v| *v = 0.0);
        net.set_params(&p).unwrap();
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let b = interval_propagate(&net, &[0.1, 0.2], &domain).unwrap();
        let d = dual_network(&net, &b).unwrap();
        assert!(d.nu_hat.iter().chain(&d.nu[..2]).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_bound_is_zero() {
        let net = ReluNet::<f64>::zeros(3, 2, &[4, 4], 1).unwrap();
        let domain = BoxDomain::symmetric(1, 2.0).unwrap();
        let q = maxq_upper_bound(&net, &[0.5, 0.5], &domain, BoundMethod::DualTightened).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn all_active_single_layer() {
        // y = W (x, a) + b with large positive bias: every unit in I⁺.
        let w = Matrix::from_rows(&[vec![0.5, 1.0], vec![-0.3, 2.0]]);
        let layer = Layer::new(w.clone(), vec![10.0, 10.0]).unwrap();
        let c = vec![1.5, -0.5];
        let net = ReluNet::new(vec![layer], Matrix::from_rows(&[c.clone()]), 1).unwrap();
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let x = [0.4];
        let b = interval_propagate(&net, &x, &domain).unwrap();
        let d = dual_network(&net, &b).unwrap();
        assert_eq!(d.output_dual(), &[-1.5, 0.5]);
        assert_eq!(d.nu[0], vec![-1.5, 0.5]);
        // linear in a with slope c·W[:,1] = 1.5 - 1.0 = 0.5 > 0: max at a = 1
        let exact = net.q(&x, &[1.0]).unwrap();
        let q = dual_maxq_bound(&net, &x, &domain, &b, &d).unwrap();
        assert!(f64::abs(q - exact) < 1e-12, "{q} vs {exact}");
    }

    #[test]
    fn single_unstable_unit_is_tight() {
        // q = relu(a), a in [-1, 1]: the triangle relaxation attains 1.
        let layer = Layer::new(Matrix::from_row_major(1, 1, vec![1.0]), vec![0.0]).unwrap();
        let net = ReluNet::new(vec![layer], Matrix::from_row_major(1, 1, vec![1.0]), 0).unwrap();
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let q = maxq_upper_bound(&net, &[], &domain, BoundMethod::Interval).unwrap();
        assert!(f64::abs(q - 1.0) < 1e-15);
    }

    #[test]
    fn bound_dominates_sampled_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let net = ReluNet::<f64>::q_network(3, 2, &[16, 8], &mut rng).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let domain = BoxDomain::symmetric(2, 1.5).unwrap();
            for method in [BoundMethod::Interval, BoundMethod::DualTightened] {
                let q = maxq_upper_bound(&net, &x, &domain, method).unwrap();
                for _ in 0..300 {
                    let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..=1.5)).collect();
                    assert!(net.q(&x, &a).unwrap() <= q + 1e-12);
                }
            }
        }
    }

    #[test]
    fn certificate_examples() {
        assert!(certificate_holds(50.0, 100.0, 0.0, 0.99));
        assert!(!certificate_holds(1e6, 0.0, 0.0, 0.99));
    }

    #[test]
    fn filter_rejects_bad_gamma() {
        let net = ReluNet::<f64>::zeros(2, 1, &[2], 1).unwrap();
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let r = filter_batch(&[], &net, &net, &domain, 1.0, LossKind::L2, BoundMethod::Interval);
        assert!(r.is_err());
    }
}
