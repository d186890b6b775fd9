use crate::error::{check_dim, CaqlError, Result};
use crate::net::{AdamState, ReluNet};
use crate::scalar::Scalar;

use super::buffer::Transition;
use super::config::LossKind;

/// `mean_i (target_i - Q_i)²`
pub fn l2_loss<T: Scalar>(q_sa: &[T], targets: &[T]) -> Result<T> {
    check_dim("l2 targets", q_sa.len(), targets.len())?;
    if q_sa.is_empty() {
        return Err(CaqlError::EmptyBatch("l2_loss"));
    }
    let n = T::lit(q_sa.len() as f64);
    Ok(q_sa.iter().zip(targets).map(|(q, t)| (*t - *q) * (*t - *q)).sum::<T>() / n)
}

/// `mean_i [Q_i + λ (target_i - Q_i)₊]`; samples without a target contribute
/// only `Q_i`.
pub fn hinge_loss<T: Scalar>(q_sa: &[T], targets: &[Option<T>], lambda: T) -> Result<T> {
    check_dim("hinge targets", q_sa.len(), targets.len())?;
    if q_sa.is_empty() {
        return Err(CaqlError::EmptyBatch("hinge_loss"));
    }
    let n = T::lit(q_sa.len() as f64);
    let total: T = q_sa
        .iter()
        .zip(targets)
        .map(|(q, t)| *q + t.map_or(T::zero(), |t| lambda * (t - *q).pos_part()))
        .sum();
    Ok(total / n)
}

/// Loss value and per-sample `∂loss_i/∂Q_i` (before averaging).
pub fn loss_and_seeds<T: Scalar>(
    kind: LossKind,
    q_sa: &[T],
    targets: &[Option<T>],
    lambda: T,
) -> Result<(T, Vec<T>)> {
    match kind {
        LossKind::L2 => {
            let t: Vec<T> = targets
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.ok_or_else(|| {
                        CaqlError::InvalidConfig(format!("l2 loss needs a target for sample {i}"))
                    })
                })
                .collect::<Result<_>>()?;
            let loss = l2_loss(q_sa, &t)?;
            let two = T::lit(2.0);
            let seeds = q_sa.iter().zip(&t).map(|(q, t)| two * (*q - *t)).collect();
            Ok((loss, seeds))
        }
        LossKind::Hinge => {
            let loss = hinge_loss(q_sa, targets, lambda)?;
            let seeds = q_sa
                .iter()
                .zip(targets)
                .map(|(q, t)| match t {
                    Some(t) if *t > *q => T::one() - lambda,
                    _ => T::one(),
                })
                .collect();
            Ok((loss, seeds))
        }
    }
}

/// One Adam step of the Q-network on `batch`; returns the loss before the step.
pub fn q_update<T: Scalar>(
    q: &mut ReluNet<T>,
    adam: &mut AdamState<T>,
    batch: &[Transition<T>],
    targets: &[Option<T>],
    kind: LossKind,
    lambda: T,
) -> Result<T> {
    check_dim("batch targets", batch.len(), targets.len())?;
    let inputs: Vec<Vec<T>> = batch
        .iter()
        .map(|t| q.join_input(&t.state, &t.action))
        .collect::<Result<_>>()?;
    let q_sa: Vec<T> = inputs
        .iter()
        .map(|i| Ok(q.forward_input(i)?[0]))
        .collect::<Result<_>>()?;
    let (loss, seeds) = loss_and_seeds(kind, &q_sa, targets, lambda)?;
    let grad = q.grad_params(&inputs, &seeds)?;
    let mut params = q.params();
    adam.step(&mut params, &grad)?;
    q.set_params(&params)?;
    Ok(loss)
}

/// Action-function regression loss
/// `(1/n) Σ_i (label_i - Q(x'_i, π(x'_i)))²` and its gradient in the policy
/// parameters. Samples without a label contribute zero.
pub fn action_fn_loss_and_grad<T: Scalar>(
    q: &ReluNet<T>,
    policy: &ReluNet<T>,
    states: &[Vec<T>],
    labels: &[Option<T>],
) -> Result<(T, Vec<T>)> {
    check_dim("action labels", states.len(), labels.len())?;
    if states.is_empty() {
        return Err(CaqlError::EmptyBatch("action_fn_step"));
    }
    let n = T::lit(states.len() as f64);
    let mut loss = T::zero();
    let mut seeds = Vec::with_capacity(states.len());
    for (x, label) in states.iter().zip(labels) {
        let Some(label) = label else {
            seeds.push(vec![T::zero(); policy.output_dim()]);
            continue;
        };
        let a = policy.act(x)?;
        let (value, ga) = q.value_and_action_grad(x, &a)?;
        let diff = *label - value;
        loss += diff * diff;
        let scale = T::lit(-2.0) * diff;
        seeds.push(ga.iter().map(|g| scale * *g).collect());
    }
    let grad = policy.grad_params_vec(states, &seeds)?;
    Ok((loss / n, grad))
}

/// One Adam step on the action-function loss; the Q-network is frozen.
pub fn action_fn_step<T: Scalar>(
    q: &ReluNet<T>,
    policy: &mut ReluNet<T>,
    adam: &mut AdamState<T>,
    states: &[Vec<T>],
    labels: &[Option<T>],
) -> Result<T> {
    let (loss, grad) = action_fn_loss_and_grad(q, policy, states, labels)?;
    let mut params = policy.params();
    adam.step(&mut params, &grad)?;
    policy.set_params(&params)?;
    Ok(loss)
}

/// `target ← τ online + (1 - τ) target`
pub fn soft_update<T: Scalar>(target: &mut ReluNet<T>, online: &ReluNet<T>, tau: T) -> Result<()> {
    let p = online.params();
    let mut t = target.params();
    check_dim("soft update", p.len(), t.len())?;
    let keep = T::one() - tau;
    for (ti, pi) in t.iter_mut().zip(&p) {
        *ti = tau * *pi + keep * *ti;
    }
    target.set_params(&t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l2_examples() {
        assert_eq!(l2_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2_loss(&[1.0], &[3.0]).unwrap(), 4.0);
        assert!(l2_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(&[1.0, 3.0], &[Some(0.0), Some(2.0)], 10.0).unwrap(), 2.0);
        assert_eq!(hinge_loss(&[1.0, 3.0], &[Some(5.0), Some(9.0)], 0.0).unwrap(), 2.0);
        assert_eq!(hinge_loss(&[1.0], &[Some(2.0)], 1.0).unwrap(), 2.0);
        assert_eq!(hinge_loss(&[1.0], &[None], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn one_unit_l2_hand_arithmetic() {
        // q = 3 relu(2a - 0.5) at a = 0.5 gives 1.5; target 2.5 => loss 1
        let net = ReluNet::new(
            vec![Layer::new(Matrix::from_rows(&[vec![2.0]]), vec![-0.5]).unwrap()],
            Matrix::from_rows(&[vec![3.0]]),
            0,
        )
        .unwrap();
        let q = net.q(&[], &[0.5]).unwrap();
        assert_eq!(l2_loss(&[q], &[2.5]).unwrap(), 1.0);
    }

    #[test]
    fn soft_update_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ReluNet::<f64>::q_network(1, 1, &[3], &mut rng).unwrap();
        let b = ReluNet::<f64>::q_network(1, 1, &[3], &mut rng).unwrap();
        let mut t = b.clone();
        soft_update(&mut t, &a, 0.0).unwrap();
        assert_eq!(t, b);
        soft_update(&mut t, &a, 1.0).unwrap();
        assert_eq!(t, a);
        let mut z = ReluNet::<f64>::zeros(2, 1, &[3], 1).unwrap();
        let mut two = z.clone();
        two.set_params(&vec![2.0; two.num_params()]).unwrap();
        soft_update(&mut z, &two, 0.5).unwrap();
        assert!(z.params().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn action_fn_zero_gradient_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = ReluNet::<f64>::q_network(2, 1, &[6], &mut rng).unwrap();
        let policy = ReluNet::<f64>::action_network(2, 1, &[5], &mut rng).unwrap();
        let states: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random_range(-1.0..1.0), 0.3]).collect();
        // labels equal to Q at π(x') => zero gradient
        let labels: Vec<Option<f64>> = states
            .iter()
            .map(|x| Some(q.q(x, &policy.act(x).unwrap()).unwrap()))
            .collect();
        let (loss, g) = action_fn_loss_and_grad(&q, &policy, &states, &labels).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        // constant Q-network
        let mut c = q.clone();
        let mut p = c.params();
        let nw = 6 * 3;
        for v in &mut p[..nw] {
            *v = 0.0;
        }
        c.set_params(&p).unwrap();
        let labels = vec![Some(5.0); 4];
        let (_, g) = action_fn_loss_and_grad(&c, &policy, &states, &labels).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn q_update_reduces_l2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = ReluNet::<f64>::q_network(1, 1, &[8], &mut rng).unwrap();
        let batch: Vec<Transition<f64>> = (0..16)
            .map(|_| Transition {
                state: vec![rng.random_range(-1.0..1.0)],
                action: vec![rng.random_range(-1.0..1.0)],
                reward: 0.0,
                next_state: vec![0.0],
            })
            .collect();
        let targets = vec![Some(1.0); 16];
        let mut adam = AdamState::new(q.num_params(), 1e-2);
        let first = q_update(&mut q, &mut adam, &batch, &targets, LossKind::L2, 1.0).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = q_update(&mut q, &mut adam, &batch, &targets, LossKind::L2, 1.0).unwrap();
        }
        assert!(last < first * 0.1, "{first} -> {last}");
    }
}
