//! Dense bounded-variable dual simplex.
//!
//! Solves `max cᵀx  s.t.  A x {<=,>=,=} b,  l <= x <= u` with every structural
//! variable boxed. Because all structurals are boxed, the slack basis is
//! dual feasible once each structural sits at the bound favoured by its cost,
//! so no phase 1 is needed: the dual simplex runs until primal feasibility,
//! and dual unboundedness certifies infeasibility.
//!
//! The full tableau `B⁻¹[A | I]` is kept; basic values and reduced costs are
//! periodically recomputed from the original data to limit drift.

use crate::error::{CaqlError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// A sparse row `Σ coef·x_var  sense  rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row<T> {
    pub terms: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<T> {
    /// Maximised objective coefficients.
    pub objective: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub rows: Vec<Row<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome<T> {
    Optimal {
        value: T,
        x: Vec<T>,
        iterations: usize,
    },
    Infeasible,
}

impl<T: Scalar> LpOutcome<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            LpOutcome::Infeasible => None,
        }
    }
}

impl<T: Scalar> LinearProgram<T> {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective_value(&self, x: &[T]) -> T {
        crate::scalar::dot(&self.objective, x)
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let lhs: T = row.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau<T> {
    m: usize,
    n: usize,
    /// m × (n + m), row-major.
    t: Vec<T>,
    /// Original constraint matrix, m × n.
    a: Vec<T>,
    rhs: Vec<T>,
    cost: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    x: Vec<T>,
    d: Vec<T>,
    state: Vec<VarState>,
    basis: Vec<usize>,
}

impl<T: Scalar> Tableau<T> {
    #[inline]
    fn width(&self) -> usize {
        self.n + self.m
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.t[i * self.width() + j]
    }

    fn can_increase(&self, j: usize) -> bool {
        self.state[j] == VarState::AtLower && self.upper[j] > self.lower[j]
    }

    fn can_decrease(&self, j: usize) -> bool {
        self.state[j] == VarState::AtUpper && self.upper[j] > self.lower[j]
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width();
        let piv = self.t[r * w + q];
        let inv = T::one() / piv;
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v *= inv;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let nz: Vec<(usize, T)> = prow
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != T::zero())
            .map(|(j, p)| (j, *p))
            .collect();
        let sparse = nz.len() * 4 < w;
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[q];
            if f != T::zero() {
                if sparse {
                    for &(j, p) in &nz {
                        row[j] -= f * p;
                    }
                } else {
                    for (v, p) in row.iter_mut().zip(prow.iter()) {
                        *v -= f * *p;
                    }
                }
                row[q] = T::zero();
            }
        }
        self.t[r * w + q] = T::one();
    }

    /// Recomputes basic values and reduced costs from the original data and
    /// the current `B⁻¹` (the slack block of the tableau). Nonbasic variables
    /// whose reduced cost drifted to the wrong sign are moved to the other
    /// bound when it is finite.
    fn refresh(&mut self, tol: T) {
        let (m, n) = (self.m, self.n);
        let mut resid = self.rhs.clone();
        for j in 0..n {
            if self.state[j] != VarState::Basic {
                let xj = self.x[j];
                if xj != T::zero() {
                    for (i, r) in resid.iter_mut().enumerate() {
                        *r -= self.a[i * n + j] * xj;
                    }
                }
            }
        }
        for i in 0..m {
            if self.state[n + i] != VarState::Basic {
                resid[i] -= self.x[n + i];
            }
        }
        for i in 0..m {
            let mut v = T::zero();
            for (k, r) in resid.iter().enumerate() {
                v += self.at(i, n + k) * *r;
            }
            self.x[self.basis[i]] = v;
        }
        // y = c_Bᵀ B⁻¹, d_j = c_j - yᵀ a_j
        let mut y = vec![T::zero(); m];
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != T::zero() {
                for (k, yk) in y.iter_mut().enumerate() {
                    *yk += cb * self.at(i, n + k);
                }
            }
        }
        let mut flipped = false;
        for j in 0..n + m {
            if self.state[j] == VarState::Basic {
                self.d[j] = T::zero();
                continue;
            }
            let col_dot = if j < n {
                (0..m).map(|i| y[i] * self.a[i * n + j]).sum::<T>()
            } else {
                y[j - n]
            };
            let dj = self.cost[j] - col_dot;
            self.d[j] = dj;
            match self.state[j] {
                VarState::AtLower if dj < -tol && self.upper[j].is_finite() => {
                    self.state[j] = VarState::AtUpper;
                    self.x[j] = self.upper[j];
                    flipped = true;
                }
                VarState::AtUpper if dj > tol && self.lower[j].is_finite() => {
                    self.state[j] = VarState::AtLower;
                    self.x[j] = self.lower[j];
                    flipped = true;
                }
                _ => {}
            }
        }
        if flipped {
            // Basic values depend on the moved nonbasics.
            self.refresh(T::infinity());
        }
    }
}

/// Solves `lp` to optimality or proves it infeasible.
///
/// Singleton rows are folded into variable bounds and fixed columns are
/// substituted out before the simplex starts.
/// Every structural variable must have finite bounds.
pub fn solve<T: Scalar>(lp: &LinearProgram<T>) -> Result<LpOutcome<T>> {
    let n = lp.num_vars();
    if lp.lower.len() != n || lp.upper.len() != n {
        return Err(CaqlError::Numerical("bound vectors do not match objective".into()));
    }
    let tol = T::lit(T::LP_TOL);
    let feas_tol = tol * T::lit(10.0);
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
        return Err(CaqlError::Numerical("structural variables must be boxed".into()));
    }

    // Fold empty and singleton rows into bounds and substitute fixed
    // columns until nothing changes.
    let mut rows: Vec<Row<T>> = lp
        .rows
        .iter()
        .map(|r| Row {
            terms: r.terms.iter().copied().filter(|(_, a)| *a != T::zero()).collect(),
            sense: r.sense,
            rhs: r.rhs,
        })
        .collect();
    if let Some((j, _)) = rows.iter().flat_map(|r| r.terms.iter()).find(|(j, _)| *j >= n) {
        return Err(CaqlError::Numerical(format!("row references variable {j} >= {n}")));
    }
    loop {
        let mut changed = false;
        for row in &mut rows {
            row.terms.retain(|&(j, a)| {
                if lower[j] == upper[j] {
                    row.rhs -= a * lower[j];
                    false
                } else {
                    true
                }
            });
        }
        let mut kept = Vec::with_capacity(rows.len());
        for row in rows {
            match row.terms.len() {
                0 => {
                    let ok = match row.sense {
                        Sense::Le => T::zero() <= row.rhs + feas_tol,
                        Sense::Ge => T::zero() >= row.rhs - feas_tol,
                        Sense::Eq => row.rhs.abs() <= feas_tol,
                    };
                    if !ok {
                        return Ok(LpOutcome::Infeasible);
                    }
                }
                1 => {
                    let (j, a) = row.terms[0];
                    let v = row.rhs / a;
                    let (is_upper, is_lower) = match (row.sense, a > T::zero()) {
                        (Sense::Eq, _) => (true, true),
                        (Sense::Le, true) | (Sense::Ge, false) => (true, false),
                        (Sense::Le, false) | (Sense::Ge, true) => (false, true),
                    };
                    if is_upper {
                        upper[j] = upper[j].min(v);
                    }
                    if is_lower {
                        lower[j] = lower[j].max(v);
                    }
                    if lower[j] > upper[j] {
                        if lower[j] - upper[j] <= feas_tol {
                            let mid = (lower[j] + upper[j]) * T::lit(0.5);
                            lower[j] = mid;
                            upper[j] = mid;
                        } else {
                            return Ok(LpOutcome::Infeasible);
                        }
                    }
                    changed = true;
                }
                _ => kept.push(row),
            }
        }
        rows = kept;
        if !changed {
            break;
        }
    }
    for j in 0..n {
        if lower[j] > upper[j] {
            if lower[j] - upper[j] <= feas_tol {
                let mid = (lower[j] + upper[j]) * T::lit(0.5);
                lower[j] = mid;
                upper[j] = mid;
            } else {
                return Ok(LpOutcome::Infeasible);
            }
        }
    }

    // Compact the remaining free columns.
    let free: Vec<usize> = (0..n).filter(|&j| lower[j] < upper[j]).collect();
    let mut col = vec![usize::MAX; n];
    for (k, &j) in free.iter().enumerate() {
        col[j] = k;
    }
    let full_lower = lower;
    let full_upper = upper;
    let objective: Vec<T> = free.iter().map(|&j| lp.objective[j]).collect();
    let lower: Vec<T> = free.iter().map(|&j| full_lower[j]).collect();
    let upper: Vec<T> = free.iter().map(|&j| full_upper[j]).collect();
    for row in &mut rows {
        for t in &mut row.terms {
            t.0 = col[t.0];
        }
    }
    let expand = |xs: &[T]| -> Vec<T> {
        let mut out = full_lower.clone();
        for (k, &j) in free.iter().enumerate() {
            out[j] = xs[k];
        }
        out
    };
    let n = free.len();
    let m = rows.len();
    let w = n + m;
    let mut a = vec![T::zero(); m * n];
    let mut t = vec![T::zero(); m * w];
    let mut rhs = Vec::with_capacity(m);
    let mut all_lower = lower.clone();
    let mut all_upper = upper.clone();
    for (i, row) in rows.iter().enumerate() {
        for &(j, coef) in &row.terms {
            a[i * n + j] += coef;
            t[i * w + j] += coef;
        }
        t[i * w + n + i] = T::one();
        rhs.push(row.rhs);
        let (lo, hi) = match row.sense {
            Sense::Le => (T::zero(), T::infinity()),
            Sense::Ge => (T::neg_infinity(), T::zero()),
            Sense::Eq => (T::zero(), T::zero()),
        };
        all_lower.push(lo);
        all_upper.push(hi);
    }
    let mut cost: Vec<T> = objective.iter().map(|&c| -c).collect();
    cost.extend(std::iter::repeat_n(T::zero(), m));

    let mut state = vec![VarState::Basic; w];
    let mut x = vec![T::zero(); w];
    for j in 0..n {
        if cost[j] < T::zero() {
            state[j] = VarState::AtUpper;
            x[j] = upper[j];
        } else {
            state[j] = VarState::AtLower;
            x[j] = lower[j];
        }
    }
    let mut tab = Tableau {
        m,
        n,
        t,
        a,
        rhs,
        d: cost.clone(),
        cost,
        lower: all_lower,
        upper: all_upper,
        x,
        state,
        basis: (n..w).collect(),
    };
    tab.refresh(tol);

    let max_iters = 50 * (m + n) + 1000;
    let bland_after = 3 * (m + n) + 100;
    let refresh_every = 40;
    let mut iterations = 0;
    loop {
        // Leaving row: largest primal infeasibility, or the lowest basic
        // index once the run is long enough to suspect cycling.
        let bland = iterations > bland_after;
        let mut leave = None;
        let mut worst = feas_tol;
        for i in 0..m {
            let b = tab.basis[i];
            let v = tab.x[b];
            let infeas = (tab.lower[b] - v).max(v - tab.upper[b]);
            if bland {
                if infeas > feas_tol && leave.is_none_or(|r: usize| b < tab.basis[r]) {
                    leave = Some(i);
                }
            } else if infeas > worst {
                worst = infeas;
                leave = Some(i);
            }
        }
        let Some(r) = leave else {
            // Confirm against fresh values before declaring optimality.
            if iterations % refresh_every != 0 || iterations == 0 {
                tab.refresh(tol);
                let still_feasible = (0..m).all(|i| {
                    let b = tab.basis[i];
                    let v = tab.x[b];
                    v >= tab.lower[b] - feas_tol && v <= tab.upper[b] + feas_tol
                });
                if !still_feasible {
                    iterations += 1;
                    continue;
                }
            }
            let xs: Vec<T> = (0..n)
                .map(|j| tab.x[j].max(lower[j]).min(upper[j]))
                .collect();
            let xs = expand(&xs);
            return Ok(LpOutcome::Optimal {
                value: lp.objective_value(&xs),
                x: xs,
                iterations,
            });
        };
        iterations += 1;
        if iterations > max_iters {
            return Err(CaqlError::Numerical(format!(
                "dual simplex did not converge in {max_iters} iterations"
            )));
        }
        let leaving = tab.basis[r];
        let below = tab.x[leaving] < tab.lower[leaving];
        let target = if below { tab.lower[leaving] } else { tab.upper[leaving] };

        // dual ratio test
        let mut enter: Option<(usize, T, T)> = None;
        for j in 0..w {
            if tab.state[j] == VarState::Basic {
                continue;
            }
            let alpha = tab.at(r, j);
            if alpha.abs() <= tol {
                continue;
            }
            // x_r moves by -alpha * dx_j
            let eligible = if below {
                (alpha < T::zero() && tab.can_increase(j)) || (alpha > T::zero() && tab.can_decrease(j))
            } else {
                (alpha > T::zero() && tab.can_increase(j)) || (alpha < T::zero() && tab.can_decrease(j))
            };
            if !eligible {
                continue;
            }
            let ratio = tab.d[j].abs() / alpha.abs();
            let better = match enter {
                None => true,
                Some((_, best_ratio, best_alpha)) => {
                    ratio < best_ratio - tol
                        || (!bland && ratio <= best_ratio + tol && alpha.abs() > best_alpha.abs())
                }
            };
            if better {
                enter = Some((j, ratio, alpha));
            }
        }
        let Some((q, _, alpha_rq)) = enter else {
            // A drifted tableau can fake dual unboundedness; confirm once on
            // fresh values before reporting infeasibility.
            let before = tab.x[leaving];
            tab.refresh(tol);
            if (tab.x[leaving] - before).abs() > feas_tol {
                continue;
            }
            return Ok(LpOutcome::Infeasible);
        };

        let dx = (tab.x[leaving] - target) / alpha_rq;
        for i in 0..m {
            let coef = tab.at(i, q);
            if coef != T::zero() {
                let b = tab.basis[i];
                tab.x[b] -= coef * dx;
            }
        }
        tab.x[q] += dx;
        tab.x[leaving] = target;

        let theta = tab.d[q] / alpha_rq;
        if theta != T::zero() {
            for j in 0..w {
                if tab.state[j] != VarState::Basic {
                    let alpha = tab.at(r, j);
                    tab.d[j] -= theta * alpha;
                }
            }
        }
        tab.d[q] = T::zero();
        tab.d[leaving] = -theta;

        tab.state[leaving] = if below { VarState::AtLower } else { VarState::AtUpper };
        tab.state[q] = VarState::Basic;
        tab.basis[r] = q;
        tab.pivot(r, q);

        if iterations % refresh_every == 0 {
            tab.refresh(tol);
        }
    }
}
