//! Exact max-Q by mixed-integer programming.
//!
//! Every hidden unit `z = max(0, wᵀz_prev + b)` with pre-activation range
//! `[M⁻, M⁺]` is encoded with an indicator `ζ`:
//!
//! ```text
//! z >= wᵀz_prev + b,   z >= 0,   z <= wᵀz_prev + b - M⁻(1 - ζ),   z <= M⁺ ζ
//! ```
//!
//! Units that are provably off (`M⁺ <= 0`) are fixed to zero and units that
//! are provably on (`M⁻ >= 0`) get `z = wᵀz_prev + b`; neither needs a binary.
//! With `ζ ∈ [0, 1]` the four rows describe the triangle relaxation of the
//! ReLU, which is the node relaxation of the branch and bound in
//! [`solve_maxq_mip`].

pub mod lp;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::bounds::{compute_bounds, compute_bounds_with, Activation, BoundMethod, BoxDomain, Interval, LayerBounds};
use crate::error::{check_dim, CaqlError, Result};
use crate::net::ReluNet;
use crate::scalar::Scalar;
use crate::solution::{MaxQSolution, SolveStatus};

pub use lp::{LinearProgram, LpOutcome, Row, Sense};

/// Exact range `(min, max)` of `wᵀv + b` over `lower <= v <= upper`.
pub fn big_m<T: Scalar>(w: &[T], b: T, lower: &[T], upper: &[T]) -> (T, T) {
    debug_assert_eq!(w.len(), lower.len());
    debug_assert_eq!(w.len(), upper.len());
    let mut lo = b;
    let mut hi = b;
    for ((&wi, &l), &u) in w.iter().zip(lower).zip(upper) {
        let (p, q) = (wi * l, wi * u);
        lo += p.min(q);
        hi += p.max(q);
    }
    (lo, hi)
}

/// Encoding of one hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronEncoding<T> {
    pub layer: usize,
    pub unit: usize,
    pub m_minus: T,
    pub m_plus: T,
    pub status: Activation,
    /// Post-activation variable.
    pub z_var: usize,
    pub zeta_var: Option<usize>,
    /// Pre-activation as `Σ coef · var + bias` over model variables.
    pub pre_terms: Vec<(usize, T)>,
    pub pre_bias: T,
    /// Rows of the model that encode this unit.
    pub rows: std::ops::Range<usize>,
}

impl<T: Scalar> NeuronEncoding<T> {
    /// Pre-activation at a point of the model.
    pub fn pre_value(&self, x: &[T]) -> T {
        self.pre_terms.iter().fold(self.pre_bias, |acc, &(v, w)| acc + w * x[v])
    }

    /// Distance of the indicator from `{0, 1}` at `x`, with the phase it is
    /// closer to. Without an explicit `ζ` the most integral value consistent
    /// with the triangle is used: any `ζ` in `[z/M⁺, 1 - (z - pre)/(-M⁻)]`.
    pub fn fractionality(&self, x: &[T]) -> (T, bool) {
        if let Some(v) = self.zeta_var {
            let z = x[v];
            return (z.min(T::one() - z).max(T::zero()), z >= T::lit(0.5));
        }
        if self.status != Activation::Unstable {
            return (T::zero(), self.status == Activation::Active);
        }
        let z = x[self.z_var];
        let to_off = (z / self.m_plus).max(T::zero());
        let to_on = ((z - self.pre_value(x)) / -self.m_minus).max(T::zero());
        (to_off.min(to_on), to_on < to_off)
    }
}

/// The max-Q MIP with `ζ` relaxed to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MipModel<T> {
    pub lp: LinearProgram<T>,
    pub names: Vec<String>,
    pub action_vars: std::ops::Range<usize>,
    pub neurons: Vec<NeuronEncoding<T>>,
    /// Variable index of every `ζ`, in neuron order.
    pub binaries: Vec<usize>,
}

impl<T: Scalar> MipModel<T> {
    pub fn num_binaries(&self) -> usize {
        self.binaries.len()
    }

    pub fn num_vars(&self) -> usize {
        self.lp.num_vars()
    }

    /// The relaxation with some indicators fixed: `(binary index, value)`.
    pub fn with_fixings(&self, fixings: &[(usize, bool)]) -> LinearProgram<T> {
        let mut lp = self.lp.clone();
        for &(k, on) in fixings {
            let v = self.binaries[k];
            let val = if on { T::one() } else { T::zero() };
            lp.lower[v] = val;
            lp.upper[v] = val;
        }
        lp
    }

    /// LP-format text of the model.
    ///
    /// ```text
    /// \ caql max-Q model
    /// Maximize
    ///  obj: <terms>
    /// Subject To
    ///  r<k>: <terms> <= | >= | = <rhs>
    /// Bounds
    ///  <lo> <= <name> <= <hi>
    /// Binaries
    ///  <names>
    /// End
    /// ```
    ///
    /// Names are `a_<i>` for actions, `z_<layer>_<unit>` and
    /// `zeta_<layer>_<unit>` with 1-based hidden layer numbers.
    pub fn to_lp_format(&self) -> String {
        let fmt_terms = |terms: &[(usize, T)]| {
            if terms.is_empty() {
                return "0".to_string();
            }
            let mut s = String::new();
            for (k, &(j, c)) in terms.iter().enumerate() {
                let sign = match (k == 0, c < T::zero()) {
                    (true, true) => "-",
                    (true, false) => "",
                    (false, true) => " - ",
                    (false, false) => " + ",
                };
                let _ = write!(s, "{sign}{} {}", c.abs().to_f64_lossy(), self.names[j]);
            }
            s
        };
        let mut out = String::from("\\ caql max-Q model\nMaximize\n");
        let obj: Vec<(usize, T)> = self
            .lp
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != T::zero())
            .map(|(j, c)| (j, *c))
            .collect();
        let _ = writeln!(out, " obj: {}", fmt_terms(&obj));
        out.push_str("Subject To\n");
        for (k, row) in self.lp.rows.iter().enumerate() {
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(
                out,
                " r{k}: {} {op} {}",
                fmt_terms(&row.terms),
                row.rhs.to_f64_lossy()
            );
        }
        out.push_str("Bounds\n");
        for (j, name) in self.names.iter().enumerate() {
            let _ = writeln!(
                out,
                " {} <= {name} <= {}",
                self.lp.lower[j].to_f64_lossy(),
                self.lp.upper[j].to_f64_lossy()
            );
        }
        if !self.binaries.is_empty() {
            out.push_str("Binaries\n");
            for &v in &self.binaries {
                let _ = writeln!(out, " {}", self.names[v]);
            }
        }
        out.push_str("End\n");
        out
    }
}

/// Builds the max-Q MIP at state `x` using `bounds` for the big-M constants.
pub fn build_mip<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    bounds: &LayerBounds<T>,
) -> Result<MipModel<T>> {
    encode(net, x, domain, bounds, None, false)
}

/// `pins[l][s]` fixes the phase of a unit: an on unit becomes `z = pre` with
/// `z >= 0`, an off unit becomes `z = 0` with the row `pre <= 0`.
///
/// With `project`, undecided units get the triangle `z >= pre`,
/// `z <= M⁺ (pre - M⁻) / (M⁺ - M⁻)` and no `ζ` column: the projection of the
/// relaxed four rows onto `(z, pre)`.
fn encode<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    bounds: &LayerBounds<T>,
    pins: Option<&[Vec<Option<bool>>]>,
    project: bool,
) -> Result<MipModel<T>> {
    check_dim("state input", net.state_dim(), x.len())?;
    check_dim("action box", net.action_dim(), domain.dim())?;
    check_dim("scalar network output", 1, net.output_dim())?;
    bounds.check_shape(net)?;

    let mut names = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut rows: Vec<Row<T>> = Vec::new();
    let mut neurons = Vec::new();
    let mut binaries = Vec::new();

    let d = domain.dim();
    for i in 0..d {
        names.push(format!("a_{i}"));
        lower.push(domain.lower()[i]);
        upper.push(domain.upper()[i]);
    }
    // Previous layer as affine expressions: constant inputs fold into the bias.
    let mut prev_vars: Vec<usize> = (0..d).collect();
    let mut prev_const: Option<&[T]> = Some(x);

    for (l, layer) in net.layers().iter().enumerate() {
        let iv = bounds.layer(l);
        let mut this_vars = Vec::with_capacity(layer.outputs());
        for s in 0..layer.outputs() {
            let (m_minus, m_plus) = (iv.lower[s], iv.upper[s]);
            if m_minus > m_plus || !m_minus.is_finite() || !m_plus.is_finite() {
                return Err(CaqlError::InvalidBounds(format!(
                    "unit {s} of layer {l} has range [{m_minus}, {m_plus}]"
                )));
            }
            let row_w = layer.weights.row(s);
            let mut bias = layer.bias[s];
            let (const_part, var_part) = match prev_const {
                Some(xc) => row_w.split_at(xc.len()),
                None => row_w.split_at(0),
            };
            if let Some(xc) = prev_const {
                for (w, xv) in const_part.iter().zip(xc) {
                    bias += *w * *xv;
                }
            }
            // wᵀz_prev as (var, coef) terms
            let pre_terms: Vec<(usize, T)> = var_part
                .iter()
                .zip(&prev_vars)
                .filter(|(w, _)| **w != T::zero())
                .map(|(w, v)| (*v, *w))
                .collect();
            let neg = |terms: &[(usize, T)]| terms.iter().map(|&(v, w)| (v, -w)).collect::<Vec<_>>();

            let pin = pins.and_then(|p| p[l][s]);
            let status = match pin {
                Some(true) => Activation::Active,
                Some(false) => Activation::Inactive,
                None => Activation::classify(m_minus, m_plus),
            };
            let (m_minus, m_plus) = match pin {
                Some(true) => (m_minus.max(T::zero()), m_plus.max(T::zero())),
                Some(false) => (m_minus.min(T::zero()), m_plus.min(T::zero())),
                None => (m_minus, m_plus),
            };
            let z = names.len();
            names.push(format!("z_{}_{}", l + 1, s));
            let row_start = rows.len();
            let mut zeta_var = None;
            match status {
                Activation::Inactive => {
                    lower.push(T::zero());
                    upper.push(T::zero());
                    if pin == Some(false) {
                        // wᵀz_prev <= -b
                        rows.push(Row {
                            terms: pre_terms.clone(),
                            sense: Sense::Le,
                            rhs: -bias,
                        });
                    }
                }
                Activation::Active => {
                    lower.push(m_minus);
                    upper.push(m_plus);
                    // z - wᵀz_prev = b
                    let mut terms = vec![(z, T::one())];
                    terms.extend(neg(&pre_terms));
                    rows.push(Row {
                        terms,
                        sense: Sense::Eq,
                        rhs: bias,
                    });
                }
                Activation::Unstable if project => {
                    lower.push(T::zero());
                    upper.push(m_plus);
                    let mut terms = vec![(z, T::one())];
                    terms.extend(neg(&pre_terms));
                    // z >= wᵀz_prev + b
                    rows.push(Row {
                        terms,
                        sense: Sense::Ge,
                        rhs: bias,
                    });
                    // z - s wᵀz_prev <= s (b - M⁻),  s = M⁺ / (M⁺ - M⁻)
                    let slope = m_plus / (m_plus - m_minus);
                    let mut terms = vec![(z, T::one())];
                    terms.extend(pre_terms.iter().map(|&(v, w)| (v, -slope * w)));
                    rows.push(Row {
                        terms,
                        sense: Sense::Le,
                        rhs: slope * (bias - m_minus),
                    });
                }
                Activation::Unstable => {
                    lower.push(T::zero());
                    upper.push(m_plus);
                    let zeta = names.len();
                    names.push(format!("zeta_{}_{}", l + 1, s));
                    lower.push(T::zero());
                    upper.push(T::one());
                    zeta_var = Some(zeta);
                    binaries.push(zeta);
                    // z >= wᵀz_prev + b
                    let mut terms = vec![(z, T::one())];
                    terms.extend(neg(&pre_terms));
                    rows.push(Row {
                        terms: terms.clone(),
                        sense: Sense::Ge,
                        rhs: bias,
                    });
                    // z >= 0
                    rows.push(Row {
                        terms: vec![(z, T::one())],
                        sense: Sense::Ge,
                        rhs: T::zero(),
                    });
                    // z <= wᵀz_prev + b - M⁻(1 - ζ)
                    terms.push((zeta, -m_minus));
                    rows.push(Row {
                        terms,
                        sense: Sense::Le,
                        rhs: bias - m_minus,
                    });
                    // z <= M⁺ ζ
                    rows.push(Row {
                        terms: vec![(z, T::one()), (zeta, -m_plus)],
                        sense: Sense::Le,
                        rhs: T::zero(),
                    });
                }
            }
            neurons.push(NeuronEncoding {
                layer: l,
                unit: s,
                m_minus,
                m_plus,
                status,
                z_var: z,
                zeta_var,
                pre_terms,
                pre_bias: bias,
                rows: row_start..rows.len(),
            });
            this_vars.push(z);
        }
        prev_vars = this_vars;
        prev_const = None;
    }

    let mut objective = vec![T::zero(); names.len()];
    for (v, c) in prev_vars.iter().zip(net.output_weights()) {
        objective[*v] += *c;
    }
    Ok(MipModel {
        lp: LinearProgram {
            objective,
            lower,
            upper,
            rows,
        },
        names,
        action_vars: 0..d,
        neurons,
        binaries,
    })
}

/// Solves the relaxation of `model` with the given indicator fixings.
pub fn lp_solve<T: Scalar>(model: &MipModel<T>, fixings: &[(usize, bool)]) -> Result<LpOutcome<T>> {
    lp::solve(&model.with_fixings(fixings))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipConfig<T> {
    /// Absolute optimality gap at which the search stops.
    pub gap_tol: T,
    pub time_limit: Duration,
    pub node_limit: usize,
    pub bounds: BoundMethod,
}

impl<T: Scalar> Default for MipConfig<T> {
    fn default() -> Self {
        Self {
            gap_tol: T::lit(1e-4),
            time_limit: Duration::from_secs(60),
            node_limit: 1_000_000,
            bounds: BoundMethod::DualTightened,
        }
    }
}

impl<T: Scalar> MipConfig<T> {
    pub fn with_gap(mut self, gap_tol: T) -> Self {
        self.gap_tol = gap_tol;
        self
    }
}

struct Node {
    id: usize,
    bound: f64,
    /// `(layer, unit, on)` branching decisions.
    fixings: Vec<(usize, usize, bool)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: highest bound first, then the oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

const INTEGRALITY_TOL: f64 = 1e-6;

/// Most fractional indicator, lowest unit index on ties.
fn branching_candidate<T: Scalar>(model: &MipModel<T>, x: &[T]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, n) in model.neurons.iter().enumerate() {
        let frac = n.fractionality(x).0.to_f64_lossy();
        if frac > INTEGRALITY_TOL && best.is_none_or(|(_, f)| frac > f) {
            best = Some((k, frac));
        }
    }
    best.map(|(k, _)| k)
}

struct Incumbent<T> {
    value: T,
    action: Vec<T>,
}

impl<T: Scalar> Incumbent<T> {
    fn offer(&mut self, net: &ReluNet<T>, x: &[T], domain: &BoxDomain<T>, lp_x: &[T], vars: &std::ops::Range<usize>) -> Result<()> {
        let a = domain.clip(&lp_x[vars.clone()]);
        let v = net.q(x, &a)?;
        if v > self.value {
            self.value = v;
            self.action = a;
        }
        Ok(())
    }
}

/// Data shared by every node of one search.
struct Root<'a, T> {
    net: &'a ReluNet<T>,
    x: &'a [T],
    domain: &'a BoxDomain<T>,
    method: BoundMethod,
    bounds: LayerBounds<T>,
}

impl<'a, T: Scalar> Root<'a, T> {
    fn new(net: &'a ReluNet<T>, x: &'a [T], domain: &'a BoxDomain<T>, method: BoundMethod) -> Result<Self> {
        let bounds = compute_bounds(net, x, domain, method)?;
        Ok(Self {
            net,
            x,
            domain,
            method,
            bounds,
        })
    }

    /// Action box narrowed by the sign constraints of fixed first-layer units.
    /// `None` when the constraints leave nothing.
    fn narrow_box(&self, fixed: &[Vec<Option<bool>>]) -> Result<Option<BoxDomain<T>>> {
        let layer = &self.net.layers()[0];
        let sd = self.x.len();
        let mut lo = self.domain.lower().to_vec();
        let mut hi = self.domain.upper().to_vec();
        let cuts: Vec<(usize, bool)> = fixed[0]
            .iter()
            .enumerate()
            .filter_map(|(s, f)| f.map(|on| (s, on)))
            .collect();
        for _ in 0..2 {
            for &(s, on) in &cuts {
                let row = layer.weights.row(s);
                let (wx, wa) = row.split_at(sd);
                let mut b = layer.bias[s];
                for (w, v) in wx.iter().zip(self.x) {
                    b += *w * *v;
                }
                // on: wᵀa + b >= 0, off: -wᵀa - b >= 0
                let sign = if on { T::one() } else { -T::one() };
                let (b, w): (T, Vec<T>) = (sign * b, wa.iter().map(|w| sign * *w).collect());
                let terms_max: Vec<T> = w
                    .iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(w, (l, u))| (*w * *l).max(*w * *u))
                    .collect();
                let total: T = terms_max.iter().copied().sum();
                for i in 0..w.len() {
                    if w[i] == T::zero() {
                        continue;
                    }
                    // w_i a_i >= -b - (sum of the other maxima)
                    let need = -b - (total - terms_max[i]);
                    let v = need / w[i];
                    if w[i] > T::zero() {
                        lo[i] = lo[i].max(v);
                    } else {
                        hi[i] = hi[i].min(v);
                    }
                }
            }
        }
        for i in 0..lo.len() {
            if lo[i] > hi[i] {
                let scale = T::one() + lo[i].abs().max(hi[i].abs());
                if lo[i] - hi[i] > T::lit(1e-9) * scale {
                    return Ok(None);
                }
                let mid = (lo[i] + hi[i]) * T::lit(0.5);
                lo[i] = mid;
                hi[i] = mid;
            }
        }
        BoxDomain::new(lo, hi).map(Some)
    }

    /// Relaxation at a node, where `fixed[l][s]` is the phase chosen for a
    /// unit by branching. Bounds are recomputed on the narrowed action box,
    /// intersected with the root bounds and clamped by the fixings; units the
    /// result decides are encoded without an indicator. `None` for an empty
    /// node.
    fn node(&self, fixed: &[Vec<Option<bool>>]) -> Result<Option<NodeModel<T>>> {
        let Some(node_box) = self.narrow_box(fixed)? else {
            return Ok(None);
        };
        let mut empty = false;
        let root = &self.bounds;
        let mut hook = |j: usize, iv: &mut Interval<T>| {
            let r = root.layer(j);
            for s in 0..iv.len() {
                let mut l = iv.lower[s].max(r.lower[s]);
                let mut u = iv.upper[s].min(r.upper[s]);
                match fixed[j][s] {
                    Some(true) => l = l.max(T::zero()),
                    Some(false) => u = u.min(T::zero()),
                    None => {}
                }
                if l > u {
                    let scale = T::one() + l.abs().max(u.abs());
                    if l - u > T::lit(1e-9) * scale {
                        empty = true;
                    }
                    let mid = (l + u) * T::lit(0.5);
                    l = mid;
                    u = mid;
                }
                iv.lower[s] = l;
                iv.upper[s] = u;
            }
        };
        let bounds = compute_bounds_with(self.net, self.x, &node_box, self.method, &mut hook)?;
        if empty {
            return Ok(None);
        }
        let model = encode(self.net, self.x, &node_box, &bounds, Some(fixed), true)?;
        Ok(Some(NodeModel {
            model,
            bounds,
            node_box,
        }))
    }

    /// The node with every unit pinned to the phase its relaxation is
    /// closest to.
    fn rounded(&self, node: &NodeModel<T>, fixed: &[Vec<Option<bool>>], lp_x: &[T]) -> Result<MipModel<T>> {
        let mut pins = fixed.to_vec();
        for n in &node.model.neurons {
            if pins[n.layer][n.unit].is_none() && n.status == Activation::Unstable {
                pins[n.layer][n.unit] = Some(n.fractionality(lp_x).1);
            }
        }
        encode(self.net, self.x, &node.node_box, &node.bounds, Some(&pins), true)
    }
}

struct NodeModel<T> {
    model: MipModel<T>,
    bounds: LayerBounds<T>,
    node_box: BoxDomain<T>,
}

/// Global maximum of `Q(x, ·)` over `domain` by best-bound branch and bound.
///
/// Each node fixes the phase of some units. Before its relaxation is solved,
/// the fixings of first-layer units narrow the action box, bounds are
/// recomputed on the narrowed box, and every unit those bounds decide loses
/// its indicator.
pub fn solve_maxq_mip<T: Scalar>(
    net: &ReluNet<T>,
    x: &[T],
    domain: &BoxDomain<T>,
    cfg: &MipConfig<T>,
) -> Result<MaxQSolution<T>> {
    if !(cfg.gap_tol > T::zero()) {
        return Err(CaqlError::InvalidConfig(format!(
            "gap tolerance must be positive, got {}",
            cfg.gap_tol
        )));
    }
    let start = Instant::now();
    let root = Root::new(net, x, domain, cfg.bounds)?;
    let center = domain.center();
    let mut inc = Incumbent {
        value: net.q(x, &center)?,
        action: center,
    };
    let gap_tol = cfg.gap_tol.to_f64_lossy();
    // Largest bound among nodes discarded without being fully resolved.
    let mut pruned_upper = f64::NEG_INFINITY;
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut nodes = 0usize;
    let mut status = SolveStatus::Optimal;

    // Root with an infinite bound; its LP is solved when popped.
    heap.push(Node {
        id: next_id,
        bound: f64::INFINITY,
        fixings: Vec::new(),
    });
    next_id += 1;

    while let Some(node) = heap.pop() {
        let inc_f = inc.value.to_f64_lossy();
        if node.bound <= inc_f + gap_tol {
            pruned_upper = pruned_upper.max(node.bound);
            // Every remaining node has a bound no larger than this one.
            while let Some(rest) = heap.pop() {
                pruned_upper = pruned_upper.max(rest.bound);
            }
            break;
        }
        if nodes >= cfg.node_limit || start.elapsed() >= cfg.time_limit {
            status = if nodes >= cfg.node_limit {
                SolveStatus::IterLimit
            } else {
                SolveStatus::TimeLimit
            };
            pruned_upper = pruned_upper.max(node.bound);
            while let Some(rest) = heap.pop() {
                pruned_upper = pruned_upper.max(rest.bound);
            }
            break;
        }
        nodes += 1;
        let mut fixed: Vec<Vec<Option<bool>>> = net.layers().iter().map(|l| vec![None; l.outputs()]).collect();
        for &(l, s, on) in &node.fixings {
            fixed[l][s] = Some(on);
        }
        let Some(node_model) = root.node(&fixed)? else {
            continue;
        };
        let model = &node_model.model;
        let relaxed = lp_solve(model, &[])?;
        let (value, lp_x) = match relaxed {
            LpOutcome::Infeasible => continue,
            LpOutcome::Optimal { value, x: lp_x, .. } => (value.to_f64_lossy().min(node.bound), lp_x),
        };
        inc.offer(net, x, domain, &lp_x, &model.action_vars)?;
        let Some(k) = branching_candidate(model, &lp_x) else {
            // Integral relaxation: its action realises the bound.
            pruned_upper = pruned_upper.max(value);
            continue;
        };
        // Rounding heuristic: pin every unit to its nearer phase.
        let rounded = root.rounded(&node_model, &fixed, &lp_x)?;
        if let LpOutcome::Optimal { x: rx, .. } = lp_solve(&rounded, &[])? {
            inc.offer(net, x, domain, &rx, &rounded.action_vars)?;
        }
        if value <= inc.value.to_f64_lossy() + gap_tol {
            pruned_upper = pruned_upper.max(value);
            continue;
        }
        let unit = &model.neurons[k];
        for on in [false, true] {
            let mut child = node.fixings.clone();
            child.push((unit.layer, unit.unit, on));
            heap.push(Node {
                id: next_id,
                bound: value,
                fixings: child,
            });
            next_id += 1;
        }
    }

    let inc_f = inc.value.to_f64_lossy();
    let gap = (pruned_upper - inc_f).max(0.0);
    let gap = if gap.is_finite() { T::lit(gap) } else { T::infinity() };
    if status == SolveStatus::Optimal && gap > cfg.gap_tol {
        // Numerically possible only through LP tolerance; report honestly.
        status = SolveStatus::GapLimit;
    }
    Ok(MaxQSolution {
        value: inc.value,
        action: inc.action,
        gap,
        status,
        iterations: nodes,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_unit(w: f64, b: f64, c: f64) -> ReluNet<f64> {
        ReluNet::new(
            vec![Layer::new(Matrix::from_rows(&[vec![w]]), vec![b]).unwrap()],
            Matrix::from_rows(&[vec![c]]),
            0,
        )
        .unwrap()
    }

    #[test]
    fn big_m_examples() {
        assert_eq!(big_m(&[1.0, -1.0], 0.0, &[-1.0, -1.0], &[1.0, 1.0]), (-2.0, 2.0));
        assert_eq!(big_m(&[0.0, 0.0], 3.0, &[-1.0, -1.0], &[1.0, 1.0]), (3.0, 3.0));
    }

    #[test]
    fn big_m_matches_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let d = rng.random_range(1..=8);
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
            let b = rng.random_range(-1.0..1.0);
            let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for mask in 0..(1u32 << d) {
                let v: f64 = (0..d)
                    .map(|i| w[i] * if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
                    .sum::<f64>()
                    + b;
                cmin = cmin.min(v);
                cmax = cmax.max(v);
            }
            let (m0, m1) = big_m(&w, b, &lo, &hi);
            assert!((m0 - cmin).abs() < 1e-12 && (m1 - cmax).abs() < 1e-12);
        }
    }

    #[test]
    fn single_unstable_unit_counts() {
        let net = one_unit(1.0, 0.0, 1.0);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let bounds = compute_bounds(&net, &[], &domain, BoundMethod::Interval).unwrap();
        let model = build_mip(&net, &[], &domain, &bounds).unwrap();
        assert_eq!(model.num_binaries(), 1);
        assert_eq!(model.neurons[0].rows.len(), 4);
    }

    #[test]
    fn always_active_is_pure_lp() {
        let net = one_unit(1.0, 5.0, 2.0);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let sol = solve_maxq_mip(&net, &[], &domain, &MipConfig::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.gap, 0.0);
        assert!((sol.value - 12.0).abs() < 1e-9);
        assert_eq!(sol.status, SolveStatus::Optimal);
    }

    #[test]
    fn negative_relu_maximum_is_zero() {
        let net = one_unit(1.0, 0.0, -1.0);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let sol = solve_maxq_mip(&net, &[], &domain, &MipConfig::default()).unwrap();
        assert!(sol.value.abs() < 1e-9);
        assert!(sol.action[0] <= 1e-9);
    }

    #[test]
    fn relu_maximum_at_corner() {
        let net = one_unit(-2.0, 0.5, 1.0);
        let domain = BoxDomain::symmetric(1, 1.5).unwrap();
        let sol = solve_maxq_mip(&net, &[], &domain, &MipConfig::default()).unwrap();
        assert!((sol.value - 3.5).abs() < 1e-9, "{sol:?}");
        assert!((sol.action[0] + 1.5).abs() < 1e-9);
    }

    #[test]
    fn matches_grid_on_small_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let net = ReluNet::<f64>::q_network(2, 1, &[8, 6], &mut rng).unwrap();
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let domain = BoxDomain::symmetric(1, 2.0).unwrap();
            let sol = solve_maxq_mip(&net, &x, &domain, &MipConfig::default()).unwrap();
            let grid = (0..=4000)
                .map(|i| net.q(&x, &[-2.0 + i as f64 * 1e-3]).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(sol.value + 1e-4 >= grid - 1e-6, "{} vs {grid}", sol.value);
            assert!(sol.value <= grid + 1e-2);
            assert!((net.q(&x, &sol.action).unwrap() - sol.value).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_dump_names() {
        let net = one_unit(1.0, 0.0, 1.0);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let bounds = compute_bounds(&net, &[], &domain, BoundMethod::Interval).unwrap();
        let text = build_mip(&net, &[], &domain, &bounds).unwrap().to_lp_format();
        assert!(text.contains("zeta_1_0"));
        assert!(text.contains(" obj: 1 z_1_0"));
        assert!(text.contains("Binaries"));
        assert!(text.ends_with("End\n"));
    }

    #[test]
    fn rejects_nonpositive_gap() {
        let net = one_unit(1.0, 0.0, 1.0);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        assert!(solve_maxq_mip(&net, &[], &domain, &MipConfig::default().with_gap(0.0)).is_err());
    }
}
