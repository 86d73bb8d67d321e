//! Convex subproblem of one SCA step and its interior-point solver.
//!
//! Variables are the `R x K` amplitude matrix (row-major) followed by the
//! epigraph scalar `t`. Every constraint `f(u, t) <= 0` is convex:
//!
//! - phase caps `sum_{i in S} u_i^2 <= (1 - eps) * (sqrt(1 - t/s^2) + 1) / 2`,
//!   one pair of complementary sets `S` per phase-carrying symbol and per PSK
//!   level, with `s = sin(π / 2^l)`;
//! - pair separation `u_a·u_b <= (1 - eps) * sqrt(1 - t)`, with the bilinear
//!   form written as `|u_a + u_b|^2/4 - |u_a - u_b|^2/4` and the concave part
//!   replaced by its tangent at the linearization point;
//! - norm shell `|u|^2 <= 1` and the tangent of `|u|^2 >= 1 - eps`;
//! - `u >= 0`.
//!
//! The `(1 - eps)` factor makes every constraint hold for the renormalized
//! rows, so the subproblem value never overstates the true squared MCD.

use nalgebra::{DMatrix, DVector};

use crate::constellation::{AmplitudeSet, BitAllocation};
use crate::error::{invalid, Error, Result};

use super::DesignConfig;

/// `(sqrt(1 - t/sin2) + 1) / 2`: the cap that keeps `4x(1-x) sin2 >= t`.
pub fn cap_rhs(t: f64, sin2: f64) -> f64 {
    ((1.0 - t / sin2).max(0.0).sqrt() + 1.0) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapConstraint {
    pub row: usize,
    pub members: Vec<usize>,
    pub sin2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConstraint {
    pub a: usize,
    pub b: usize,
    /// `ū_a - ū_b` at the linearization point.
    pub anchor_diff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSubproblem {
    rows: usize,
    k: usize,
    epsilon_v: f64,
    anchors: Vec<Vec<f64>>,
    caps: Vec<CapConstraint>,
    pairs: Vec<PairConstraint>,
    t_domain: f64,
}

/// Raw subproblem optimum. Rows satisfy `1 - eps <= |u| <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub rows: Vec<Vec<f64>>,
    pub t: f64,
    pub newton_steps: usize,
}

impl SubproblemSolution {
    pub fn amplitude_set(&self, epsilon_v: f64) -> Result<AmplitudeSet> {
        AmplitudeSet::new(self.rows.clone(), epsilon_v)
    }
}

fn sin2_step(bits: u32) -> f64 {
    let s = (std::f64::consts::PI / (1u64 << bits) as f64).sin();
    s * s
}

/// Assembles the convexified problem around `linearization`.
pub fn build_subproblem(
    linearization: &[Vec<f64>],
    alloc: &BitAllocation,
    cfg: &DesignConfig,
) -> Result<ConvexSubproblem> {
    let k = alloc.k();
    let rows = linearization.len();
    if rows != alloc.num_amplitudes() {
        return invalid(format!("expected {} linearization rows, got {rows}", alloc.num_amplitudes()));
    }
    let eps = cfg.epsilon_v;
    for (r, row) in linearization.iter().enumerate() {
        if row.len() != k {
            return invalid(format!("linearization row {r} has length {}", row.len()));
        }
        let n2: f64 = row.iter().map(|x| x * x).sum();
        if n2.sqrt() < 1.0 - eps - 1e-12 || n2 > 1.0 + 1e-9 {
            return invalid(format!("linearization row {r} has norm {} outside the shell", n2.sqrt()));
        }
    }

    let l_phi = alloc.l_phi();
    let mut row_caps: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut push_cap = |members: Vec<usize>, sin2: f64| {
        if !members.is_empty() && !row_caps.iter().any(|(m, s)| *m == members && *s == sin2) {
            row_caps.push((members, sin2));
        }
    };
    for sym in alloc.phase_symbols() {
        let sin2 = sin2_step(l_phi[sym]);
        push_cap(vec![sym], sin2);
        push_cap((0..k).filter(|&i| i != sym).collect(), sin2);
    }
    for level in alloc.levels() {
        let sin2 = sin2_step(level);
        push_cap((0..k).filter(|&i| l_phi[i] < level).collect(), sin2);
        push_cap((0..k).filter(|&i| l_phi[i] >= level).collect(), sin2);
    }

    let caps: Vec<CapConstraint> = (0..rows)
        .flat_map(|row| row_caps.iter().map(move |(m, s)| CapConstraint { row, members: m.clone(), sin2: *s }))
        .collect();
    let mut pairs = Vec::with_capacity(rows * rows.saturating_sub(1) / 2);
    for a in 0..rows {
        for b in a + 1..rows {
            let anchor_diff = linearization[a].iter().zip(&linearization[b]).map(|(x, y)| x - y).collect();
            pairs.push(PairConstraint { a, b, anchor_diff });
        }
    }
    let mut t_domain = f64::INFINITY;
    for (_, s) in &row_caps {
        t_domain = t_domain.min(*s);
    }
    if !pairs.is_empty() {
        t_domain = t_domain.min(1.0);
    }
    if !t_domain.is_finite() {
        return invalid("subproblem has no constraint involving t");
    }
    Ok(ConvexSubproblem { rows, k, epsilon_v: eps, anchors: linearization.to_vec(), caps, pairs, t_domain })
}

/// Working storage for one Newton step.
struct Workspace {
    grad: Vec<f64>,
    hess: Vec<f64>,
    n: usize,
}

impl Workspace {
    fn add_outer(&mut self, idx: &[usize], vals: &[f64], w: f64) {
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate() {
                self.hess[i * self.n + j] += w * vals[p] * vals[q];
            }
        }
    }
}

impl ConvexSubproblem {
    pub fn caps(&self) -> &[CapConstraint] {
        &self.caps
    }

    pub fn pairs(&self) -> &[PairConstraint] {
        &self.pairs
    }

    pub fn num_vars(&self) -> usize {
        self.rows * self.k + 1
    }

    /// Strict upper limit on `t` imposed by the square roots.
    pub fn t_domain(&self) -> f64 {
        self.t_domain
    }

    /// Right-hand side of a cap as used in the constraint (shrunk by `1 - eps`).
    pub fn cap_bound(&self, t: f64, sin2: f64) -> f64 {
        (1.0 - self.epsilon_v) * cap_rhs(t, sin2)
    }

    fn idx(&self, row: usize, i: usize) -> usize {
        row * self.k + i
    }

    fn pair_lhs(&self, x: &[f64], p: &PairConstraint) -> f64 {
        let mut sum_sq = 0.0;
        let mut lin = 0.0;
        let mut dbar_sq = 0.0;
        for i in 0..self.k {
            let ua = x[self.idx(p.a, i)];
            let ub = x[self.idx(p.b, i)];
            sum_sq += (ua + ub) * (ua + ub);
            lin += p.anchor_diff[i] * (ua - ub);
            dbar_sq += p.anchor_diff[i] * p.anchor_diff[i];
        }
        0.25 * sum_sq - 0.5 * lin + 0.25 * dbar_sq
    }

    fn row_norm_sq(&self, x: &[f64], row: usize) -> f64 {
        (0..self.k).map(|i| x[self.idx(row, i)].powi(2)).sum()
    }

    fn norm_lower(&self, x: &[f64], row: usize) -> f64 {
        let anchor = &self.anchors[row];
        let a2: f64 = anchor.iter().map(|a| a * a).sum();
        let dot: f64 = (0..self.k).map(|i| anchor[i] * x[self.idx(row, i)]).sum();
        (1.0 - self.epsilon_v) + a2 - 2.0 * dot
    }

    /// Values of every `f <= 0` constraint, excluding `u >= 0`.
    pub fn constraint_values(&self, rows: &[Vec<f64>], t: f64) -> Vec<f64> {
        let x = self.pack(rows, t);
        self.values(&x)
    }

    fn values(&self, x: &[f64]) -> Vec<f64> {
        let t = x[self.rows * self.k];
        let eps = self.epsilon_v;
        let mut out = Vec::with_capacity(self.caps.len() + self.pairs.len() + 2 * self.rows);
        for c in &self.caps {
            let g: f64 = c.members.iter().map(|&i| x[self.idx(c.row, i)].powi(2)).sum();
            let r = 1.0 - t / c.sin2;
            out.push(if r < 0.0 { f64::INFINITY } else { g - (1.0 - eps) * (r.sqrt() + 1.0) / 2.0 });
        }
        for p in &self.pairs {
            let r = 1.0 - t;
            out.push(if r < 0.0 { f64::INFINITY } else { self.pair_lhs(x, p) - (1.0 - eps) * r.sqrt() });
        }
        for row in 0..self.rows {
            out.push(self.row_norm_sq(x, row) - 1.0);
            out.push(self.norm_lower(x, row));
        }
        out
    }

    /// Largest constraint violation of `(rows, t)`, including negativity.
    pub fn max_violation(&self, rows: &[Vec<f64>], t: f64) -> f64 {
        let neg = rows.iter().flatten().map(|&u| -u).fold(0.0f64, f64::max);
        self.constraint_values(rows, t).into_iter().fold(neg, f64::max).max(0.0)
    }

    /// Supremum of `t` for which `rows` satisfy every `t`-dependent constraint.
    pub fn max_feasible_t(&self, rows: &[Vec<f64>]) -> f64 {
        let x = self.pack(rows, 0.0);
        let eps = self.epsilon_v;
        let mut sup = self.t_domain;
        for c in &self.caps {
            let g: f64 = c.members.iter().map(|&i| x[self.idx(c.row, i)].powi(2)).sum();
            let q = 2.0 * g / (1.0 - eps) - 1.0;
            if q > 0.0 {
                sup = sup.min(c.sin2 * (1.0 - q * q));
            }
        }
        for p in &self.pairs {
            let h = self.pair_lhs(&x, p) / (1.0 - eps);
            if h > 0.0 {
                sup = sup.min(1.0 - h * h);
            }
        }
        sup
    }

    fn pack(&self, rows: &[Vec<f64>], t: f64) -> Vec<f64> {
        let mut x: Vec<f64> = rows.iter().flatten().copied().collect();
        x.push(t);
        x
    }

    fn unpack(&self, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let rows = x[..self.rows * self.k].chunks(self.k).map(|c| c.to_vec()).collect();
        (rows, x[self.rows * self.k])
    }

    fn num_barrier_terms(&self) -> usize {
        self.caps.len() + self.pairs.len() + 2 * self.rows + self.rows * self.k
    }

    /// Barrier value `-τ t - Σ log(-f) - Σ log u`, or `None` outside the domain.
    fn barrier(&self, x: &[f64], tau: f64) -> Option<f64> {
        let t = x[self.rows * self.k];
        if t >= self.t_domain {
            return None;
        }
        let mut acc = -tau * t;
        for &u in &x[..self.rows * self.k] {
            if u <= 0.0 {
                return None;
            }
            acc -= u.ln();
        }
        for f in self.values(x) {
            if !(f < 0.0) {
                return None;
            }
            acc -= (-f).ln();
        }
        Some(acc)
    }

    fn assemble(&self, x: &[f64], tau: f64, ws: &mut Workspace) {
        let n = ws.n;
        let k = self.k;
        let ti = self.rows * k;
        let t = x[ti];
        let eps = self.epsilon_v;
        ws.grad.iter_mut().for_each(|g| *g = 0.0);
        ws.hess.iter_mut().for_each(|h| *h = 0.0);
        ws.grad[ti] = -tau;

        for i in 0..ti {
            ws.grad[i] -= 1.0 / x[i];
            ws.hess[i * n + i] += 1.0 / (x[i] * x[i]);
        }

        let mut idx: Vec<usize> = Vec::with_capacity(2 * k + 1);
        let mut vals: Vec<f64> = Vec::with_capacity(2 * k + 1);

        for c in &self.caps {
            let r = (1.0 - t / c.sin2).sqrt();
            let g: f64 = c.members.iter().map(|&i| x[self.idx(c.row, i)].powi(2)).sum();
            let f = g - (1.0 - eps) * (r + 1.0) / 2.0;
            let s = -f;
            idx.clear();
            vals.clear();
            for &i in &c.members {
                idx.push(self.idx(c.row, i));
                vals.push(2.0 * x[self.idx(c.row, i)]);
            }
            idx.push(ti);
            vals.push((1.0 - eps) / (4.0 * c.sin2 * r));
            for (&i, &v) in idx.iter().zip(&vals) {
                ws.grad[i] += v / s;
            }
            ws.add_outer(&idx, &vals, 1.0 / (s * s));
            for &i in &c.members {
                let j = self.idx(c.row, i);
                ws.hess[j * n + j] += 2.0 / s;
            }
            ws.hess[ti * n + ti] += (1.0 - eps) / (8.0 * c.sin2 * c.sin2 * r * r * r) / s;
        }

        for p in &self.pairs {
            let r = (1.0 - t).sqrt();
            let f = self.pair_lhs(x, p) - (1.0 - eps) * r;
            let s = -f;
            idx.clear();
            vals.clear();
            for i in 0..k {
                let (ja, jb) = (self.idx(p.a, i), self.idx(p.b, i));
                let half_sum = 0.5 * (x[ja] + x[jb]);
                idx.push(ja);
                vals.push(half_sum - 0.5 * p.anchor_diff[i]);
                idx.push(jb);
                vals.push(half_sum + 0.5 * p.anchor_diff[i]);
            }
            idx.push(ti);
            vals.push((1.0 - eps) / (2.0 * r));
            for (&i, &v) in idx.iter().zip(&vals) {
                ws.grad[i] += v / s;
            }
            ws.add_outer(&idx, &vals, 1.0 / (s * s));
            for i in 0..k {
                let (ja, jb) = (self.idx(p.a, i), self.idx(p.b, i));
                let w = 0.5 / s;
                ws.hess[ja * n + ja] += w;
                ws.hess[jb * n + jb] += w;
                ws.hess[ja * n + jb] += w;
                ws.hess[jb * n + ja] += w;
            }
            ws.hess[ti * n + ti] += (1.0 - eps) / (4.0 * r * r * r) / s;
        }

        for row in 0..self.rows {
            // |u|^2 <= 1
            let s = 1.0 - self.row_norm_sq(x, row);
            idx.clear();
            vals.clear();
            for i in 0..k {
                idx.push(self.idx(row, i));
                vals.push(2.0 * x[self.idx(row, i)]);
            }
            for (&i, &v) in idx.iter().zip(&vals) {
                ws.grad[i] += v / s;
            }
            ws.add_outer(&idx, &vals, 1.0 / (s * s));
            for &i in &idx {
                ws.hess[i * n + i] += 2.0 / s;
            }
            // tangent of |u|^2 >= 1 - eps
            let s = -self.norm_lower(x, row);
            vals.clear();
            vals.extend(self.anchors[row].iter().map(|a| -2.0 * a));
            for (&i, &v) in idx.iter().zip(&vals) {
                ws.grad[i] += v / s;
            }
            ws.add_outer(&idx, &vals, 1.0 / (s * s));
        }
    }

    /// Strictly feasible start derived from the linearization point.
    fn initial_point(&self) -> Vec<f64> {
        let target = 1.0 - self.epsilon_v / 2.0;
        let lift = 1e-9;
        let rows: Vec<Vec<f64>> = self
            .anchors
            .iter()
            .map(|a| {
                let lifted: Vec<f64> = a.iter().map(|&v| v.max(lift)).collect();
                let n2: f64 = lifted.iter().map(|v| v * v).sum();
                let scale = (target / n2).sqrt();
                lifted.iter().map(|v| v * scale).collect()
            })
            .collect();
        let sup = self.max_feasible_t(&rows);
        let t0 = sup - (1e-3 * sup.abs()).max(1e-4);
        self.pack(&rows, t0)
    }

    /// Maximizes `t` with a log-barrier Newton method.
    pub fn solve(&self, cfg: &DesignConfig) -> Result<SubproblemSolution> {
        let n = self.num_vars();
        let mut x = self.initial_point();
        if self.barrier(&x, 1.0).is_none() {
            return Err(Error::SolverFailure {
                reason: "linearization point admits no strictly feasible start".into(),
                iterations: 0,
                best_feasible: None,
            });
        }
        let m = self.num_barrier_terms() as f64;
        let mut ws = Workspace { grad: vec![0.0; n], hess: vec![0.0; n * n], n };
        let mut tau = 1.0;
        let mu = 20.0;
        let mut steps = 0usize;
        let fail = |reason: &str, steps: usize, x: &[f64]| Error::SolverFailure {
            reason: reason.to_string(),
            iterations: steps,
            best_feasible: Some(x.to_vec()),
        };
        loop {
            for _ in 0..MAX_NEWTON_PER_STAGE {
                self.assemble(&x, tau, &mut ws);
                let h = DMatrix::from_row_slice(n, n, &ws.hess);
                let Some(chol) = h.cholesky() else {
                    return Err(fail("barrier Hessian is not positive definite", steps, &x));
                };
                let g = DVector::from_column_slice(&ws.grad);
                let dx = chol.solve(&(-&g));
                let decrement = -g.dot(&dx);
                steps += 1;
                if decrement / 2.0 <= NEWTON_TOL {
                    break;
                }
                let f0 = self.barrier(&x, tau).expect("iterate stays feasible");
                let mut step = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
                    if let Some(f1) = self.barrier(&trial, tau) {
                        if f1 <= f0 - 0.25 * step * decrement {
                            x = trial;
                            accepted = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !accepted {
                    // no progress possible at working precision
                    break;
                }
            }
            if m / tau <= cfg.subproblem_gap_tol {
                break;
            }
            tau *= mu;
            if tau > 1e16 {
                return Err(fail("barrier parameter overflow", steps, &x));
            }
        }
        let (rows, t) = self.unpack(&x);
        let violation = self.max_violation(&rows, t);
        if violation > cfg.subproblem_violation_tol {
            return Err(fail("constraint violation above tolerance", steps, &x));
        }
        Ok(SubproblemSolution { rows, t, newton_steps: steps })
    }
}

const MAX_NEWTON_PER_STAGE: usize = 100;
const NEWTON_TOL: f64 = 1e-10;

/// Builds and solves in one call.
pub fn solve_subproblem(sp: &ConvexSubproblem, cfg: &DesignConfig) -> Result<SubproblemSolution> {
    sp.solve(cfg)
}
