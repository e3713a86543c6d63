//! Offline comparators: the per-round constrained optimum (dynamic) and the
//! best fixed point feasible for every round (static).
//!
//! Each solve minimizes an averaged loss over the feasible set subject to a
//! stack of constraints with an augmented Lagrangian. Inner problems with a
//! quadratic loss, affine rows and a box use projected semismooth Newton;
//! everything else falls back to accelerated projected gradient with
//! backtracking and adaptive restart. Affine constraints enter a working set as cutting planes, so a
//! static solve over thousands of rounds only carries the rows that matter.
//! A final bisection toward a feasible anchor enforces the feasibility
//! tolerance when the multiplier iteration stops short of it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{norm, FeasibleSet, Vector};
use crate::problem::{constraint_jacobian, loss_gradient, LocalOracle, Matrix, QuadraticForm, RoundProblem};

const NEWTON_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparatorKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorSequence {
    pub kind: ComparatorKind,
    /// `y_1, …, y_T`
    pub points: Vec<Vector>,
    /// `f_t(y_t)` with `f_t` the agent-averaged loss
    pub round_losses: Vec<f64>,
    /// largest `g_{t,k}(y_t)` over every round and constraint, floored at 0
    pub max_violation: f64,
    /// solves that missed the feasibility tolerance or the iteration budget
    pub unconverged: usize,
}

impl ComparatorSequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cumulative_loss(&self, horizon: usize) -> f64 {
        self.round_losses[..horizon].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// componentwise tolerance on `g(y) ≤ 0`
    pub eps_feas: f64,
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    /// stop once the gradient-mapping norm falls below this times
    /// `1 + ‖∇F(x₀)‖`
    pub inner_tol: f64,
    /// relative gradient-mapping norm still accepted as converged when the
    /// inner loop runs out of iterations
    pub accept_tol: f64,
    pub max_inner: usize,
    /// affine rows added to the working set per cutting-plane pass
    pub cut_batch: usize,
    pub max_cut_passes: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            eps_feas: 1e-6,
            rho_init: 10.0,
            rho_growth: 10.0,
            rho_max: 1e4,
            max_outer: 200,
            inner_tol: 1e-9,
            accept_tol: 1e-6,
            max_inner: 20_000,
            cut_batch: 32,
            max_cut_passes: 2_000,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_feas", self.eps_feas),
            ("rho_init", self.rho_init),
            ("rho_max", self.rho_max),
            ("inner_tol", self.inner_tol),
            ("accept_tol", self.accept_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("solver {name} must be positive, got {v}")));
            }
        }
        if self.rho_growth.is_nan() || self.rho_growth <= 1.0 {
            return Err(Error::Parameter(format!(
                "solver rho_growth must exceed 1, got {}",
                self.rho_growth
            )));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.cut_batch == 0 || self.max_cut_passes == 0 {
            return Err(Error::Parameter("solver iteration budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub point: Vector,
    pub objective: f64,
    /// largest constraint value at `point`, floored at 0
    pub max_violation: f64,
    pub converged: bool,
    /// the point was pulled toward the anchor to meet the tolerance
    pub restored: bool,
}

enum Objective {
    Quadratic(QuadraticForm),
    Oracles { weight: f64, oracles: Vec<Arc<dyn LocalOracle>> },
}

impl Objective {
    fn build(oracles: Vec<Arc<dyn LocalOracle>>, p: usize) -> Self {
        let weight = 1.0 / oracles.len().max(1) as f64;
        let forms: Option<Vec<QuadraticForm>> = oracles.iter().map(|o| o.quadratic_form()).collect();
        match forms {
            Some(forms) => {
                let mut q = QuadraticForm::zeros(p);
                for f in &forms {
                    q.add_scaled(weight, f);
                }
                Objective::Quadratic(q)
            }
            None => Objective::Oracles { weight, oracles },
        }
    }

    fn value(&self, x: &Vector) -> f64 {
        match self {
            Objective::Quadratic(q) => q.value(x),
            Objective::Oracles { weight, oracles } => weight * oracles.iter().map(|o| o.loss(x)).sum::<f64>(),
        }
    }

    fn grad(&self, x: &Vector) -> Vector {
        match self {
            Objective::Quadratic(q) => q.grad(x),
            Objective::Oracles { weight, oracles } => {
                let mut g = Vector::zeros(x.len());
                for o in oracles {
                    g += &loss_gradient(o.as_ref(), x);
                }
                g * *weight
            }
        }
    }
}

/// Affine rows `B x ≤ b` plus oracles whose constraints are not affine.
struct Constraints {
    rows: Matrix,
    offsets: Vector,
    general: Vec<Arc<dyn LocalOracle>>,
}

impl Constraints {
    fn build(oracles: &[Arc<dyn LocalOracle>], p: usize) -> Result<Self> {
        let mut rows: Vec<f64> = Vec::new();
        let mut offsets = Vec::new();
        let mut general = Vec::new();
        for o in oracles {
            if o.num_constraints() == 0 {
                continue;
            }
            match o.affine_constraints() {
                Some((b_mat, b)) => {
                    check_dim("affine constraint columns", p, b_mat.ncols())?;
                    rows.extend(b_mat.iter());
                    offsets.extend(b.iter());
                }
                None => general.push(o.clone()),
            }
        }
        let r = offsets.len();
        Ok(Constraints {
            rows: Matrix::from_shape_vec((r, p), rows).expect("row-major affine block"),
            offsets: Vector::from(offsets),
            general,
        })
    }

    fn affine_values(&self, x: &Vector) -> Vector {
        self.rows.dot(x) - &self.offsets
    }

    fn max_violation(&self, x: &Vector) -> f64 {
        let affine = self.affine_values(x).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        self.general
            .iter()
            .flat_map(|o| o.constraints(x).to_vec())
            .fold(affine, f64::max)
    }
}

/// Augmented Lagrangian over the working set of affine rows and all general
/// constraints:
/// `F(x) + (1/2ρ) Σ_k ([λ_k + ρ g_k(x)]_+² − λ_k²)`.
struct Lagrangian<'a> {
    objective: &'a Objective,
    constraints: &'a Constraints,
    working_rows: Matrix,
    working_offsets: Vector,
    lambda_rows: &'a Vector,
    lambda_general: &'a [Vector],
    rho: f64,
}

impl Lagrangian<'_> {
    fn shifted(&self, x: &Vector) -> (Vector, Vec<Vector>) {
        let rows = (self.working_rows.dot(x) - &self.working_offsets) * self.rho + self.lambda_rows;
        let general = self
            .constraints
            .general
            .iter()
            .zip(self.lambda_general)
            .map(|(o, l)| (o.constraints(x) * self.rho + l).mapv(|s| s.max(0.0)))
            .collect();
        (rows.mapv(|v| v.max(0.0)), general)
    }

    fn value(&self, x: &Vector) -> f64 {
        let (rows, general) = self.shifted(x);
        let mut penalty = rows.dot(&rows) - self.lambda_rows.dot(self.lambda_rows);
        for (s, l) in general.iter().zip(self.lambda_general) {
            penalty += s.dot(s) - l.dot(l);
        }
        self.objective.value(x) + penalty / (2.0 * self.rho)
    }

    fn value_and_grad(&self, x: &Vector) -> (f64, Vector) {
        let (rows, general) = self.shifted(x);
        let mut penalty = rows.dot(&rows) - self.lambda_rows.dot(self.lambda_rows);
        let mut grad = self.objective.grad(x) + self.working_rows.t().dot(&rows);
        for ((s, l), o) in general.iter().zip(self.lambda_general).zip(&self.constraints.general) {
            penalty += s.dot(s) - l.dot(l);
            if s.iter().any(|&v| v > 0.0) {
                grad += &constraint_jacobian(o.as_ref(), x).t().dot(s);
            }
        }
        (self.objective.value(x) + penalty / (2.0 * self.rho), grad)
    }

    /// Multiplier update `λ ← [λ + ρ g(x)]_+`.
    fn updated_multipliers(&self, x: &Vector) -> (Vector, Vec<Vector>) {
        self.shifted(x)
    }
}

/// Projected semismooth Newton for a quadratic objective with affine rows on
/// the box `[-r, r]^p`. Returns `None` when the line search stalls.
fn newton_box(lag: &Lagrangian<'_>, q: &QuadraticForm, r: f64, start: &Vector, params: &SolverParams) -> Option<(Vector, f64)> {
    let clamp = |v: &Vector| v.mapv(|c| c.clamp(-r, r));
    let mut x = clamp(start);
    let scale = 1.0 + norm(&q.grad(&x));
    let tol = params.inner_tol * scale;
    for _ in 0..NEWTON_MAX_ITER {
        let (f, g) = lag.value_and_grad(&x);
        let mapping = norm(&(&x - &clamp(&(&x - &g))));
        if mapping <= tol {
            return Some((x, mapping / scale));
        }
        let eps = mapping.min(1e-3 * r);
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| !((x[i] <= -r + eps && g[i] > 0.0) || (x[i] >= r - eps && g[i] < 0.0)))
            .collect();
        let mut dir = -&g;
        if !free.is_empty() {
            let (shifted, _) = lag.shifted(&x);
            let mut hess = q.h.clone();
            for (row, s) in lag.working_rows.outer_iter().zip(shifted.iter()) {
                if *s > 0.0 {
                    for &a in &free {
                        for &b in &free {
                            hess[[a, b]] += lag.rho * row[a] * row[b];
                        }
                    }
                }
            }
            let reduced = DMatrix::from_fn(free.len(), free.len(), |a, b| hess[[free[a], free[b]]]);
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
            let step = reduced.cholesky()?.solve(&rhs);
            for (k, &i) in free.iter().enumerate() {
                dir[i] = step[k];
            }
        }
        let mut alpha = 1.0;
        loop {
            let cand = clamp(&(&x + &(&dir * alpha)));
            let decrease = g.dot(&(&cand - &x));
            if lag.value(&cand) <= f + 1e-4 * decrease {
                x = cand;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// Accelerated projected gradient with backtracking and gradient restart.
/// Returns the last iterate and its gradient-mapping norm relative to
/// `1 + ‖∇F(x₀)‖`.
fn minimize(lag: &Lagrangian<'_>, set: &FeasibleSet, start: &Vector, params: &SolverParams) -> Result<(Vector, f64)> {
    if let (Objective::Quadratic(q), true, FeasibleSet::Box { half_width, .. }) =
        (lag.objective, lag.constraints.general.is_empty(), set)
    {
        if let Some(found) = newton_box(lag, q, *half_width, start, params) {
            return Ok(found);
        }
    }
    let mut x = set.project(1.0, start)?;
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut lip = 1.0f64;
    let scale = 1.0 + norm(&lag.objective.grad(&x));
    let tol = params.inner_tol * scale;
    let mut mapping = f64::INFINITY;
    for _ in 0..params.max_inner {
        let (fy, gy) = lag.value_and_grad(&y);
        let (x_next, step) = loop {
            let cand = set.project(1.0, &(&y - &(&gy / lip)))?;
            let d = &cand - &y;
            let model = fy + gy.dot(&d) + 0.5 * lip * d.dot(&d);
            if lag.value(&cand) <= model + 1e-12 * fy.abs().max(1.0) || lip > 1e300 {
                break (cand, d);
            }
            lip *= 2.0;
        };
        mapping = lip * norm(&step);
        let moved = &x_next - &x;
        if step.dot(&moved) < 0.0 {
            // restart: the last step went uphill relative to the momentum
            momentum = 1.0;
            y = x_next.clone();
        } else {
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            y = &x_next + &(&moved * ((momentum - 1.0) / next_momentum));
            momentum = next_momentum;
        }
        x = x_next;
        if mapping <= tol {
            break;
        }
        lip *= 0.9;
    }
    Ok((x, mapping / scale))
}

/// Largest `s ∈ [0, 1]` found by bisection with `anchor + s (x − anchor)`
/// meeting `target`, assuming the anchor does.
fn pull_toward_anchor(cons: &Constraints, anchor: &Vector, x: &Vector, target: f64) -> Vector {
    let dir = x - anchor;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cons.max_violation(&(anchor + &(&dir * mid))) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    anchor + &(&dir * lo)
}

fn solve(
    objective: &Objective,
    cons: &Constraints,
    set: &FeasibleSet,
    params: &SolverParams,
) -> Result<SolveReport> {
    let p = set.dim();
    let mut x = Vector::zeros(p);
    let mut working: Vec<usize> = Vec::new();
    let mut in_working = vec![false; cons.offsets.len()];
    let mut lambda_rows = Vector::zeros(0);
    let mut lambda_general: Vec<Vector> = cons.general.iter().map(|o| Vector::zeros(o.num_constraints())).collect();
    let mut rho = params.rho_init;
    let mut converged = false;
    let cut_tol = 0.1 * params.eps_feas;

    for _ in 0..params.max_cut_passes {
        let working_rows = cons.rows.select(ndarray::Axis(0), &working);
        let working_offsets = cons.offsets.select(ndarray::Axis(0), &working);
        let mut prev_violation = f64::INFINITY;
        let mut inner_ok = false;
        let mut outer_ok = false;
        for _ in 0..params.max_outer {
            let lag = Lagrangian {
                objective,
                constraints: cons,
                working_rows: working_rows.clone(),
                working_offsets: working_offsets.clone(),
                lambda_rows: &lambda_rows,
                lambda_general: &lambda_general,
                rho,
            };
            let (next, stationarity) = minimize(&lag, set, &x, params)?;
            inner_ok = stationarity <= params.accept_tol;
            let (new_rows, new_general) = lag.updated_multipliers(&next);
            let step = norm(&(&new_rows - &lambda_rows))
                + new_general
                    .iter()
                    .zip(&lambda_general)
                    .map(|(a, b)| norm(&(a - b)))
                    .sum::<f64>();
            let violation = working_rows
                .dot(&next)
                .iter()
                .zip(working_offsets.iter())
                .map(|(v, b)| v - b)
                .chain(cons.general.iter().flat_map(|o| o.constraints(&next).to_vec()))
                .fold(0.0f64, f64::max);
            x = next;
            lambda_rows = new_rows;
            lambda_general = new_general;
            if violation <= params.eps_feas && step <= params.eps_feas * rho.max(1.0) {
                outer_ok = true;
                break;
            }
            if violation > cut_tol && violation > 0.25 * prev_violation {
                rho = (rho * params.rho_growth).min(params.rho_max);
            }
            prev_violation = violation;
        }
        debug_assert_eq!(lambda_rows.len(), working.len());

        let values = cons.affine_values(&x);
        let mut cuts: Vec<(usize, f64)> = values
            .iter()
            .enumerate()
            .filter(|&(k, &v)| !in_working[k] && v > cut_tol)
            .map(|(k, &v)| (k, v))
            .collect();
        if cuts.is_empty() {
            converged = inner_ok && outer_ok;
            break;
        }
        cuts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cuts.truncate(params.cut_batch);
        let mut lam = lambda_rows.to_vec();
        for (k, _) in cuts {
            in_working[k] = true;
            working.push(k);
            lam.push(0.0);
        }
        lambda_rows = Vector::from(lam);
    }

    let mut max_violation = cons.max_violation(&x);
    let mut restored = false;
    if max_violation > params.eps_feas {
        let anchor = set.project(1.0, &Vector::zeros(p))?;
        if cons.max_violation(&anchor) <= 0.5 * params.eps_feas {
            x = pull_toward_anchor(cons, &anchor, &x, 0.5 * params.eps_feas);
            max_violation = cons.max_violation(&x);
            restored = true;
        } else {
            converged = false;
        }
    }
    let max_violation = max_violation.max(0.0);
    Ok(SolveReport {
        objective: objective.value(&x),
        point: x,
        max_violation,
        converged: converged && max_violation <= params.eps_feas,
        restored,
    })
}

fn check_rounds(problems: &[RoundProblem], set: &FeasibleSet) -> Result<()> {
    if problems.is_empty() {
        return Err(Error::Parameter("comparator needs at least one round".into()));
    }
    for pr in problems {
        if pr.agents.is_empty() {
            return Err(Error::Parameter(format!("round {} has no agents", pr.t)));
        }
        for o in &pr.agents {
            check_dim("oracle dimension", set.dim(), o.dim())?;
        }
    }
    Ok(())
}

/// Minimizes the agent-averaged loss of one round over `X ∩ {g ≤ 0}`.
pub fn solve_round(problem: &RoundProblem, set: &FeasibleSet, params: &SolverParams) -> Result<SolveReport> {
    let p = set.dim();
    let objective = Objective::build(problem.agents.clone(), p);
    let cons = Constraints::build(&problem.agents, p)?;
    solve(&objective, &cons, set, params)
}

/// Per-round constrained optima, solved in parallel over rounds.
pub fn solve_dynamic_comparator(
    problems: &[RoundProblem],
    set: &FeasibleSet,
    params: &SolverParams,
) -> Result<ComparatorSequence> {
    params.validate()?;
    check_rounds(problems, set)?;
    let reports: Vec<SolveReport> = problems
        .par_iter()
        .map(|pr| solve_round(pr, set, params))
        .collect::<Result<_>>()?;
    let round_losses = problems
        .iter()
        .zip(&reports)
        .map(|(pr, r)| pr.global_loss(&r.point))
        .collect();
    Ok(ComparatorSequence {
        kind: ComparatorKind::Dynamic,
        max_violation: reports.iter().map(|r| r.max_violation).fold(0.0, f64::max),
        unconverged: reports.iter().filter(|r| !r.converged).count(),
        points: reports.into_iter().map(|r| r.point).collect(),
        round_losses,
    })
}

/// One point minimizing `Σ_t f_t` subject to every round's constraints,
/// replicated over the horizon.
pub fn solve_static_comparator(
    problems: &[RoundProblem],
    set: &FeasibleSet,
    params: &SolverParams,
) -> Result<ComparatorSequence> {
    params.validate()?;
    check_rounds(problems, set)?;
    let p = set.dim();
    let oracles: Vec<Arc<dyn LocalOracle>> = problems.iter().flat_map(|pr| pr.agents.iter().cloned()).collect();
    let objective = Objective::build(oracles.clone(), p);
    let cons = Constraints::build(&oracles, p)?;
    let report = solve(&objective, &cons, set, params)?;
    let round_losses = problems.iter().map(|pr| pr.global_loss(&report.point)).collect();
    Ok(ComparatorSequence {
        kind: ComparatorKind::Static,
        points: vec![report.point; problems.len()],
        round_losses,
        max_violation: report.max_violation,
        unconverged: usize::from(!report.converged),
    })
}
