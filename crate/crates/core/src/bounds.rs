//! Pre-activation bounds over an action box, for a fixed state.
//!
//! Two methods are provided: plain interval arithmetic, and a tightening pass
//! that bounds each hidden unit by running the dual-network recursion of the
//! triangle relaxation with a unit objective on that unit.

use crate::dualfilter::{dual_network_to, dual_objective};
use crate::error::{check_dim, CaqlError, Result};
use crate::net::ReluNet;
use crate::scalar::Scalar;

/// Axis-aligned action box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> BoxDomain<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        check_dim("box upper", lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(CaqlError::InvalidBox(format!("non-finite bound in dim {i}")));
            }
            if l > u {
                return Err(CaqlError::InvalidBox(format!("lower {l} > upper {u} in dim {i}")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `B∞(center, radius)` with per-dimension radii.
    pub fn from_center_radius(center: &[T], radius: &[T]) -> Result<Self> {
        check_dim("box radius", center.len(), radius.len())?;
        if radius.iter().any(|r| *r < T::zero()) {
            return Err(CaqlError::InvalidBox("negative radius".into()));
        }
        Self::new(
            center.iter().zip(radius).map(|(c, r)| *c - *r).collect(),
            center.iter().zip(radius).map(|(c, r)| *c + *r).collect(),
        )
    }

    /// `[-r, r]^dim`
    pub fn symmetric(dim: usize, r: T) -> Result<Self> {
        Self::new(vec![-r; dim], vec![r; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn center(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (*l + *u) * half)
            .collect()
    }

    pub fn radius(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (*u - *l) * half)
            .collect()
    }

    pub fn contains(&self, a: &[T]) -> bool {
        a.len() == self.dim()
            && a
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Component-wise projection onto the box.
    pub fn clip(&self, a: &[T]) -> Vec<T> {
        a.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.max(*l).min(*u))
            .collect()
    }

    pub fn clip_in_place(&self, a: &mut [T]) {
        for (v, (l, u)) in a.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.max(*l).min(*u);
        }
    }
}

/// Activation status of a hidden unit given its pre-activation interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `u <= 0`: always off.
    Inactive,
    /// `l >= 0`: always on.
    Active,
    /// `l < 0 < u`.
    Unstable,
}

impl Activation {
    pub fn classify<T: Scalar>(lower: T, upper: T) -> Self {
        if upper <= T::zero() {
            Activation::Inactive
        } else if lower >= T::zero() {
            Activation::Active
        } else {
            Activation::Unstable
        }
    }
}

/// Pre-activation interval of every unit in one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Interval<T> {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn status(&self, s: usize) -> Activation {
        Activation::classify(self.lower[s], self.upper[s])
    }

    /// Index sets `(I⁻, I⁺, I)`.
    pub fn partition(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut inactive = Vec::new();
        let mut active = Vec::new();
        let mut unstable = Vec::new();
        for s in 0..self.len() {
            match self.status(s) {
                Activation::Inactive => inactive.push(s),
                Activation::Active => active.push(s),
                Activation::Unstable => unstable.push(s),
            }
        }
        (inactive, active, unstable)
    }

    /// Post-ReLU interval `[max(l,0), max(u,0)]`.
    pub fn relu(&self) -> Interval<T> {
        Interval {
            lower: self.lower.iter().map(|v| v.relu()).collect(),
            upper: self.upper.iter().map(|v| v.relu()).collect(),
        }
    }

    pub fn contains(&self, v: &[T], slack: T) -> bool {
        v.len() == self.len()
            && v.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= *l - slack && *x <= *u + slack)
    }
}

/// Per-hidden-layer pre-activation bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds<T> {
    layers: Vec<Interval<T>>,
}

impl<T: Scalar> LayerBounds<T> {
    pub fn new(layers: Vec<Interval<T>>) -> Result<Self> {
        for (j, iv) in layers.iter().enumerate() {
            check_dim("bounds upper", iv.lower.len(), iv.upper.len())?;
            for (s, (l, u)) in iv.lower.iter().zip(&iv.upper).enumerate() {
                if !(l <= u) {
                    return Err(CaqlError::InvalidBounds(format!(
                        "layer {j} unit {s}: lower {l} > upper {u}"
                    )));
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Interval<T>] {
        &self.layers
    }

    pub fn layer(&self, j: usize) -> &Interval<T> {
        &self.layers[j]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Checks that these bounds are shaped for `net`.
    pub fn check_shape(&self, net: &ReluNet<T>) -> Result<()> {
        check_dim("bounds layer count", net.num_hidden(), self.layers.len())?;
        for (iv, layer) in self.layers.iter().zip(net.layers()) {
            check_dim("bounds layer width", layer.outputs(), iv.len())?;
        }
        Ok(())
    }

    /// Whether every pre-activation in `pre` lies within the bounds (with
    /// absolute slack `slack`).
    pub fn contains(&self, pre: &[Vec<T>], slack: T) -> bool {
        pre.len() == self.layers.len()
            && pre
                .iter()
                .zip(&self.layers)
                .all(|(p, iv)| iv.contains(p, slack))
    }

    pub fn unstable_count(&self) -> usize {
        self.layers.iter().map(|iv| iv.partition().2.len()).sum()
    }
}

/// Which propagation scheme to use for pre-activation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundMethod {
    Interval,
    #[default]
    DualTightened,
}

pub fn compute_bounds<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    method: BoundMethod,
) -> Result<LayerBounds<T>> {
    compute_bounds_with(net, x, domain, method, &mut |_, _| {})
}

/// Bounds with a hook that may shrink each layer's interval before the next
/// layer is bounded. The hook must only remove values the caller knows are
/// unreachable.
pub(crate) fn compute_bounds_with<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    method: BoundMethod,
    hook: &mut dyn FnMut(usize, &mut Interval<T>),
) -> Result<LayerBounds<T>> {
    match method {
        BoundMethod::Interval => interval_propagate_with(net, x, domain, hook),
        BoundMethod::DualTightened => dual_tighten_with(net, x, domain, hook),
    }
}

fn input_interval<T: Scalar>(net: &ReluNet<T>, x: &[T], domain: &BoxDomain<T>) -> Result<Interval<T>> {
    check_dim("state input", net.state_dim(), x.len())?;
    check_dim("action box", net.action_dim(), domain.dim())?;
    let mut lower = x.to_vec();
    lower.extend_from_slice(domain.lower());
    let mut upper = x.to_vec();
    upper.extend_from_slice(domain.upper());
    Ok(Interval { lower, upper })
}

/// Interval image of `W z + b` for `z` in `input`.
fn affine_interval<T: Scalar>(layer: &crate::net::Layer<T>, input: &Interval<T>) -> Interval<T> {
    let n = layer.outputs();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for i in 0..n {
        let (m_minus, m_plus) =
            crate::mip::big_m(layer.weights.row(i), layer.bias[i], &input.lower, &input.upper);
        lower.push(m_minus);
        upper.push(m_plus);
    }
    Interval { lower, upper }
}

/// Interval-arithmetic bounds: `l' = W⁺l + W⁻u + b`, `u' = W⁺u + W⁻l + b`,
/// pushed through the ReLU between layers.
pub fn interval_propagate<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
) -> Result<LayerBounds<T>> {
    interval_propagate_with(net, x, domain, &mut |_, _| {})
}

fn interval_propagate_with<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    hook: &mut dyn FnMut(usize, &mut Interval<T>),
) -> Result<LayerBounds<T>> {
    let mut current = input_interval(net, x, domain)?;
    let mut layers = Vec::with_capacity(net.num_hidden());
    for (j, layer) in net.layers().iter().enumerate() {
        let mut pre = affine_interval(layer, &current);
        hook(j, &mut pre);
        current = pre.relu();
        layers.push(pre);
    }
    LayerBounds::new(layers)
}

/// Bounds tightened layer by layer with the dual recursion.
///
/// The first hidden layer is affine in the action, so its interval bounds are
/// already exact. For each later layer `k` and unit `s`, the upper bound is
/// the dual bound on `max e_sᵀ y_k` over the relaxed `k`-partial network, and
/// the lower bound is minus the dual bound on `max -e_sᵀ y_k`. The result is
/// intersected with the interval image of the previous (tightened) layer.
pub fn dual_tighten<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
) -> Result<LayerBounds<T>> {
    dual_tighten_with(net, x, domain, &mut |_, _| {})
}

fn dual_tighten_with<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    hook: &mut dyn FnMut(usize, &mut Interval<T>),
) -> Result<LayerBounds<T>> {
    let input = input_interval(net, x, domain)?;
    let mut first = affine_interval(&net.layers()[0], &input);
    hook(0, &mut first);
    let mut partial = LayerBounds::new(vec![first])?;
    for k in 1..net.num_hidden() {
        let layer = &net.layers()[k];
        let interval = affine_interval(layer, &partial.layers[k - 1].relu());
        let n = layer.outputs();
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let mut objective = vec![T::zero(); n];
        for s in 0..n {
            objective[s] = T::one();
            let dual = dual_network_to(net, &partial, k, &objective)?;
            let up = dual_objective(net, x, domain, &partial, &dual)?;
            objective[s] = -T::one();
            let dual = dual_network_to(net, &partial, k, &objective)?;
            let lo = -dual_objective(net, x, domain, &partial, &dual)?;
            objective[s] = T::zero();
            lower.push(lo.max(interval.lower[s]));
            upper.push(up.min(interval.upper[s]));
        }
        // Guard against round-off crossing on degenerate units.
        for s in 0..n {
            if lower[s] > upper[s] {
                let mid = (lower[s] + upper[s]) * T::lit(0.5);
                lower[s] = mid;
                upper[s] = mid;
            }
        }
        let mut iv = Interval { lower, upper };
        hook(k, &mut iv);
        partial.layers.push(iv);
    }
    Ok(partial)
}

/// Diagonal of `D_j`: 0 on `I⁻`, 1 on `I⁺`, `u / (u - l)` on `I`.
pub fn build_d<T: Scalar>(bounds: &Interval<T>) -> Vec<T> {
    (0..bounds.len())
        .map(|s| {
            let (l, u) = (bounds.lower[s], bounds.upper[s]);
            match bounds.status(s) {
                Activation::Inactive => T::zero(),
                Activation::Active => T::one(),
                Activation::Unstable => {
                    let width = u - l;
                    if width > T::zero() {
                        u / width
                    } else if l >= T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
            }
        })
        .collect()
}
