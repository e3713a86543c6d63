//! Per-round loss and constraint oracles.
//!
//! A [`ProblemFamily`] hands out one [`RoundProblem`] per round; each round
//! holds one [`LocalOracle`] per agent. The online linear regression
//! benchmark is [`RegressionFamily`]; arbitrary oracles can be plugged in
//! through [`CustomFamily`] and [`FnOracle`].

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{norm, FeasibleSet, Vector};
use crate::rng::{stream, Concern};

pub type Matrix = Array2<f64>;

/// Loss `f_{i,t}` and constraint `g_{i,t}` of one agent in one round.
pub trait LocalOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn loss(&self, x: &Vector) -> f64;
    fn constraints(&self, x: &Vector) -> Vector;

    /// Analytic (sub)gradient of the loss, if known.
    fn loss_grad(&self, _x: &Vector) -> Option<Vector> {
        None
    }

    /// Analytic constraint Jacobian (`m × p`, one row per constraint), if known.
    fn constraint_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }

    /// The loss as `½ xᵀ H x + cᵀ x + k`, when it is quadratic.
    fn quadratic_form(&self) -> Option<QuadraticForm> {
        None
    }

    /// The constraints as `B x − b`, when they are affine.
    fn affine_constraints(&self) -> Option<(Matrix, Vector)> {
        None
    }
}

/// `f(x) = ½ xᵀ H x + cᵀ x + k`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub h: Matrix,
    pub c: Vector,
    pub k: f64,
}

impl QuadraticForm {
    pub fn zeros(p: usize) -> Self {
        QuadraticForm {
            h: Matrix::zeros((p, p)),
            c: Vector::zeros(p),
            k: 0.0,
        }
    }

    /// `self += weight · other`
    pub fn add_scaled(&mut self, weight: f64, other: &QuadraticForm) {
        self.h.scaled_add(weight, &other.h);
        self.c.scaled_add(weight, &other.c);
        self.k += weight * other.k;
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&self.h.dot(x)) + self.c.dot(x) + self.k
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        self.h.dot(x) + &self.c
    }
}

/// All agents' oracles for one round.
#[derive(Clone)]
pub struct RoundProblem {
    pub t: usize,
    pub agents: Vec<Arc<dyn LocalOracle>>,
}

impl fmt::Debug for RoundProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoundProblem")
            .field("t", &self.t)
            .field("agents", &self.agents.len())
            .finish()
    }
}

impl RoundProblem {
    pub fn new(t: usize, agents: Vec<Arc<dyn LocalOracle>>) -> Self {
        RoundProblem { t, agents }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// Total constraint count `m = Σ m_i`.
    pub fn total_constraints(&self) -> usize {
        self.agents.iter().map(|a| a.num_constraints()).sum()
    }

    fn oracle(&self, i: usize, x: &Vector) -> Result<&dyn LocalOracle> {
        let o = self.agents.get(i).ok_or(Error::Dimension {
            what: "agent index",
            expected: self.agents.len(),
            found: i,
        })?;
        check_dim("oracle input", o.dim(), x.len())?;
        Ok(o.as_ref())
    }

    pub fn eval_loss(&self, i: usize, x: &Vector) -> Result<f64> {
        Ok(self.oracle(i, x)?.loss(x))
    }

    pub fn eval_constraint(&self, i: usize, x: &Vector) -> Result<Vector> {
        Ok(self.oracle(i, x)?.constraints(x))
    }

    /// Analytic loss subgradient; only the full-information baseline uses it.
    pub fn loss_subgrad(&self, i: usize, x: &Vector) -> Result<Vector> {
        self.oracle(i, x)?
            .loss_grad(x)
            .ok_or(Error::MissingSubgradient("a loss gradient"))
    }

    /// Subgradient of `[g_{i,t}]_+` as a `p × m_i` matrix: column `k` is
    /// `∇g_k(x)` when `g_k(x) > 0` and zero otherwise (including `g_k = 0`).
    pub fn constraint_plus_subgrad(&self, i: usize, x: &Vector) -> Result<Matrix> {
        let o = self.oracle(i, x)?;
        let g = o.constraints(x);
        let jac = o
            .constraint_jacobian(x)
            .ok_or(Error::MissingSubgradient("a constraint Jacobian"))?;
        Ok(clipped_jacobian_columns(&g, &jac))
    }

    /// Global loss `f_t(x) = (1/n) Σ_j f_{j,t}(x)`.
    pub fn global_loss(&self, x: &Vector) -> f64 {
        self.agents.iter().map(|a| a.loss(x)).sum::<f64>() / self.agents.len() as f64
    }

    /// `‖[g_t(x)]_+‖` with `g_t` the stack of every agent's constraints.
    pub fn global_violation(&self, x: &Vector) -> f64 {
        self.agents
            .iter()
            .flat_map(|a| a.constraints(x).to_vec())
            .map(|v| v.max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest stacked constraint value `max_k g_{t,k}(x)` (`-∞` if none).
    pub fn max_constraint(&self, x: &Vector) -> f64 {
        self.agents
            .iter()
            .flat_map(|a| a.constraints(x).to_vec())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `p × m` matrix whose column `k` is row `k` of `jac` if `g[k] > 0`.
pub(crate) fn clipped_jacobian_columns(g: &Vector, jac: &Matrix) -> Matrix {
    let (m, p) = jac.dim();
    let mut out = Matrix::zeros((p, m));
    for k in 0..m {
        if g[k] > 0.0 {
            out.column_mut(k).assign(&jac.row(k));
        }
    }
    out
}

/// Source of per-round problems. Implementations must be deterministic in `t`.
pub trait ProblemFamily: Send + Sync {
    fn num_agents(&self) -> usize;
    fn dim(&self) -> usize;
    fn round(&self, t: usize) -> RoundProblem;
}

/// Linear least-squares loss with linear inequality constraints:
/// `f(x) = ½‖A x − ϑ‖²`, `g(x) = B x − b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRound {
    pub a: Matrix,
    pub target: Vector,
    pub b_mat: Matrix,
    pub b: Vector,
}

impl RegressionRound {
    pub fn new(a: Matrix, target: Vector, b_mat: Matrix, b: Vector) -> Result<Self> {
        check_dim("regression target", a.nrows(), target.len())?;
        check_dim("constraint matrix columns", a.ncols(), b_mat.ncols())?;
        check_dim("constraint offset", b_mat.nrows(), b.len())?;
        Ok(RegressionRound {
            a,
            target,
            b_mat,
            b,
        })
    }

    fn residual(&self, x: &Vector) -> Vector {
        self.a.dot(x) - &self.target
    }
}

impl LocalOracle for RegressionRound {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn num_constraints(&self) -> usize {
        self.b.len()
    }

    fn loss(&self, x: &Vector) -> f64 {
        let r = self.residual(x);
        0.5 * r.dot(&r)
    }

    fn constraints(&self, x: &Vector) -> Vector {
        self.b_mat.dot(x) - &self.b
    }

    fn loss_grad(&self, x: &Vector) -> Option<Vector> {
        Some(self.a.t().dot(&self.residual(x)))
    }

    fn constraint_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        Some(self.b_mat.clone())
    }

    fn quadratic_form(&self) -> Option<QuadraticForm> {
        Some(QuadraticForm {
            h: self.a.t().dot(&self.a),
            c: -self.a.t().dot(&self.target),
            k: 0.5 * self.target.dot(&self.target),
        })
    }

    fn affine_constraints(&self) -> Option<(Matrix, Vector)> {
        Some((self.b_mat.clone(), self.b.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionDims {
    pub n: usize,
    pub p: usize,
    /// rows of `A_{i,t}`
    pub q: usize,
    /// rows of `B_{i,t}`
    pub m: usize,
}

/// Draws one agent's round: `A ~ U[-1,1]`, `ϑ = A·1 + ζ` with `ζ ~ N(0, I)`,
/// `B ~ U[0,2]`, `b ~ U[0,1]`, all entrywise.
pub fn gen_regression_round<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize, m: usize) -> RegressionRound {
    let a = Matrix::from_shape_fn((q, p), |_| rng.random_range(-1.0..=1.0));
    let noise = Array1::from_shape_fn(q, |_| rng.sample::<f64, _>(StandardNormal));
    let target = a.sum_axis(ndarray::Axis(1)) + noise;
    let b_mat = Matrix::from_shape_fn((m, p), |_| rng.random_range(0.0..=2.0));
    let b = Array1::from_shape_fn(m, |_| rng.random_range(0.0..=1.0));
    RegressionRound {
        a,
        target,
        b_mat,
        b,
    }
}

/// The distributed online linear regression benchmark. Round `t` of agent
/// `i` is drawn from its own counter-keyed stream, so rounds can be
/// regenerated in any order without storing them.
#[derive(Debug, Clone, Copy)]
pub struct RegressionFamily {
    pub dims: RegressionDims,
    pub seed: u64,
}

impl RegressionFamily {
    pub fn new(dims: RegressionDims, seed: u64) -> Result<Self> {
        if dims.n == 0 || dims.p == 0 || dims.q == 0 {
            return Err(Error::Parameter(format!(
                "regression dims must be positive, got {dims:?}"
            )));
        }
        Ok(RegressionFamily { dims, seed })
    }

    pub fn agent_round(&self, t: usize, i: usize) -> RegressionRound {
        let mut rng = stream(self.seed, i, Concern::Problem, t);
        gen_regression_round(&mut rng, self.dims.p, self.dims.q, self.dims.m)
    }
}

impl ProblemFamily for RegressionFamily {
    fn num_agents(&self) -> usize {
        self.dims.n
    }

    fn dim(&self) -> usize {
        self.dims.p
    }

    fn round(&self, t: usize) -> RoundProblem {
        let agents = (0..self.dims.n)
            .map(|i| Arc::new(self.agent_round(t, i)) as Arc<dyn LocalOracle>)
            .collect();
        RoundProblem::new(t, agents)
    }
}

type ScalarFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type MatrixFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// Oracle assembled from closures.
#[derive(Clone)]
pub struct FnOracle {
    dim: usize,
    num_constraints: usize,
    loss: Arc<ScalarFn>,
    constraints: Arc<VectorFn>,
    loss_grad: Option<Arc<VectorFn>>,
    jacobian: Option<Arc<MatrixFn>>,
}

impl FnOracle {
    pub fn new(
        dim: usize,
        num_constraints: usize,
        loss: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        constraints: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        FnOracle {
            dim,
            num_constraints,
            loss: Arc::new(loss),
            constraints: Arc::new(constraints),
            loss_grad: None,
            jacobian: None,
        }
    }

    /// Zero loss and no constraints.
    pub fn zero(dim: usize) -> Self {
        FnOracle::new(dim, 0, |_| 0.0, |_| Vector::zeros(0))
            .with_loss_grad(move |_| Vector::zeros(dim))
            .with_jacobian(move |_| Matrix::zeros((0, dim)))
    }

    pub fn with_loss_grad(mut self, g: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.loss_grad = Some(Arc::new(g));
        self
    }

    pub fn with_jacobian(mut self, j: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(j));
        self
    }
}

impl LocalOracle for FnOracle {
    fn dim(&self) -> usize {
        self.dim
    }
    fn num_constraints(&self) -> usize {
        self.num_constraints
    }
    fn loss(&self, x: &Vector) -> f64 {
        (self.loss)(x)
    }
    fn constraints(&self, x: &Vector) -> Vector {
        (self.constraints)(x)
    }
    fn loss_grad(&self, x: &Vector) -> Option<Vector> {
        self.loss_grad.as_ref().map(|g| g(x))
    }
    fn constraint_jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.jacobian.as_ref().map(|j| j(x))
    }
}

type RoundBuilder = dyn Fn(usize) -> Vec<Arc<dyn LocalOracle>> + Send + Sync;

/// User-registered oracles: `builder(t)` returns the agents' oracles for round `t`.
#[derive(Clone)]
pub struct CustomFamily {
    n: usize,
    dim: usize,
    builder: Arc<RoundBuilder>,
}

impl CustomFamily {
    pub fn new(
        n: usize,
        dim: usize,
        builder: impl Fn(usize) -> Vec<Arc<dyn LocalOracle>> + Send + Sync + 'static,
    ) -> Self {
        CustomFamily {
            n,
            dim,
            builder: Arc::new(builder),
        }
    }

    /// Every agent has zero loss and no constraints in every round.
    pub fn zero(n: usize, dim: usize) -> Self {
        let oracle: Arc<dyn LocalOracle> = Arc::new(FnOracle::zero(dim));
        CustomFamily::new(n, dim, move |_| vec![oracle.clone(); n])
    }
}

impl ProblemFamily for CustomFamily {
    fn num_agents(&self) -> usize {
        self.n
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn round(&self, t: usize) -> RoundProblem {
        RoundProblem::new(t, (self.builder)(t))
    }
}

/// Central-difference gradient.
pub fn numeric_grad(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    let mut xp = x.clone();
    Vector::from_shape_fn(x.len(), |k| {
        let orig = xp[k];
        xp[k] = orig + h;
        let up = f(&xp);
        xp[k] = orig - h;
        let down = f(&xp);
        xp[k] = orig;
        (up - down) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector map, `m × p`.
pub fn numeric_jacobian(g: impl Fn(&Vector) -> Vector, x: &Vector, m: usize, h: f64) -> Matrix {
    let p = x.len();
    let mut jac = Matrix::zeros((m, p));
    let mut xp = x.clone();
    for k in 0..p {
        let orig = xp[k];
        xp[k] = orig + h;
        let up = g(&xp);
        xp[k] = orig - h;
        let down = g(&xp);
        xp[k] = orig;
        jac.column_mut(k).assign(&((up - down) / (2.0 * h)));
    }
    jac
}

/// Gradient of the oracle's loss: analytic when available, else central differences.
pub fn loss_gradient(o: &dyn LocalOracle, x: &Vector) -> Vector {
    o.loss_grad(x).unwrap_or_else(|| numeric_grad(|y| o.loss(y), x, 1e-6))
}

/// Constraint Jacobian: analytic when available, else central differences.
pub fn constraint_jacobian(o: &dyn LocalOracle, x: &Vector) -> Matrix {
    o.constraint_jacobian(x)
        .unwrap_or_else(|| numeric_jacobian(|y| o.constraints(y), x, o.num_constraints(), 1e-6))
}

/// Boundedness and Lipschitz constants of a problem family over a set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemBounds {
    /// bound on `|f(x) − f(y)|` and `‖g(x)‖`
    pub f1: f64,
    /// bound on subgradient norms of `f` and `g`
    pub f2: f64,
    /// `F₁ + 2 p F₂ R(X)`, the bound on `‖β_t q_{i,t}‖`
    pub dual_bound: f64,
}

impl ProblemBounds {
    pub fn new(f1: f64, f2: f64, set: &FeasibleSet) -> Self {
        let dual_bound = f1 + 2.0 * set.dim() as f64 * f2 * set.outer_radius();
        ProblemBounds { f1, f2, dual_bound }
    }
}

pub const MIN_BOUND_SAMPLES: usize = 10_000;
const BOUND_INFLATION: f64 = 1.1;

/// Empirical `F₁`, `F₂` over `samples` points per oracle (half uniform in the
/// set, half at its extreme points), for every agent of every round listed,
/// each inflated by 10%.
pub fn estimate_bounds(
    family: &dyn ProblemFamily,
    set: &FeasibleSet,
    rounds: &[usize],
    samples: usize,
    seed: u64,
) -> Result<ProblemBounds> {
    if samples < MIN_BOUND_SAMPLES {
        return Err(Error::Parameter(format!(
            "bound estimation needs at least {MIN_BOUND_SAMPLES} samples, got {samples}"
        )));
    }
    check_dim("problem dimension", set.dim(), family.dim())?;
    let mut f1 = 0.0f64;
    let mut f2 = 0.0f64;
    for &t in rounds {
        let round = family.round(t);
        let mut rng = stream(seed, 0, Concern::Bounds, t);
        let points: Vec<Vector> = (0..samples)
            .map(|s| {
                if s % 2 == 0 {
                    set.sample_uniform(&mut rng, 1.0)
                } else {
                    set.sample_extreme(&mut rng)
                }
            })
            .collect();
        for oracle in &round.agents {
            let o = oracle.as_ref();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for x in &points {
                let v = o.loss(x);
                lo = lo.min(v);
                hi = hi.max(v);
                f1 = f1.max(norm(&o.constraints(x)));
                f2 = f2.max(norm(&loss_gradient(o, x)));
                let jac = constraint_jacobian(o, x);
                f2 = f2.max(jac.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            f1 = f1.max(hi - lo);
        }
    }
    // keep both constants strictly positive
    let f1 = (f1 * BOUND_INFLATION).max(1e-12);
    let f2 = (f2 * BOUND_INFLATION).max(1e-12);
    Ok(ProblemBounds::new(f1, f2, set))
}
