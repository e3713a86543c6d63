//! Distributed event-triggered online primal–dual updates with two-point
//! bandit feedback, and the horizon loop that drives them.
//!
//! Round `t` of the simulator, for every agent `i` (agents are independent
//! within a round and may run in parallel):
//!
//! 1. draw a direction `u_{i,t}` on the unit sphere and observe `f`, `[g]_+`
//!    at `x_{i,t}` and at `x_{i,t} + δ_t u_{i,t}`;
//! 2. mix the stored broadcasts: `z_{i,t+1} = Σ_j [W_t]_{ij} x̂_{j,t}`;
//! 3. primal–dual step with the round-`t+1` parameters;
//! 4. broadcast `x_{i,t+1}` iff `‖x_{i,t+1} − x̂_{i,t}‖ ≥ τ_{t+1}`.
//!
//! The full-information baseline replaces step 1's estimators with analytic
//! subgradients.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimator::{est_constraint_plus_subgrad, est_loss_subgrad, within_norm_bound, BanditSample};
use crate::geometry::{norm, sample_unit_sphere, FeasibleSet, Vector};
use crate::metrics::MetricsLog;
use crate::network::{check_b_connectivity, GraphSpec, MixingMatrix, RoundGraph};
use crate::problem::{Matrix, ProblemBounds, ProblemFamily, RoundProblem};
use crate::rng::{stream, Concern};
use crate::schedules::{ParamsAt, Schedule, ScheduleCursor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Bandit,
    FullInfo,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Bandit => "bandit",
            Mode::FullInfo => "full-info",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitRule {
    /// every agent starts at the origin
    Zero,
    /// uniform in `(1 − ξ_1) X`, one stream per agent
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vector,
    pub x_hat: Vector,
    pub z: Vector,
    pub q: Vector,
}

/// Initial states; the round-1 broadcast of `x̂_{i,1} = x_{i,1}` is implied.
pub fn init_agents(
    set: &FeasibleSet,
    first: &ParamsAt,
    init: InitRule,
    constraint_dims: &[usize],
    seed: u64,
) -> Vec<AgentState> {
    constraint_dims
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let x = match init {
                InitRule::Zero => Vector::zeros(set.dim()),
                InitRule::Uniform => {
                    let mut rng = stream(seed, i, Concern::Init, 0);
                    set.sample_uniform(&mut rng, 1.0 - first.xi)
                }
            };
            AgentState {
                x_hat: x.clone(),
                z: x.clone(),
                x,
                q: Vector::zeros(m),
            }
        })
        .collect()
}

/// `Σ_j W_ij x̂_j`, over stored broadcasts only.
pub fn consensus_step(broadcasts: &[&Vector], w: &MixingMatrix, i: usize) -> Vector {
    let mut z = Vector::zeros(broadcasts[i].len());
    for (j, xj) in broadcasts.iter().enumerate() {
        let wij = w.get(i, j);
        if wij != 0.0 {
            z.scaled_add(wij, xj);
        }
    }
    z
}

/// Subgradient information for one agent's primal–dual step.
#[derive(Debug, Clone)]
pub struct Direction {
    /// estimate (or exact subgradient) of `∂f_{i,t}(x_{i,t})`
    pub loss: Vector,
    /// `p × m_i` estimate of `∂[g_{i,t}(x_{i,t})]_+`
    pub constraint: Matrix,
    /// `[g_{i,t}(x_{i,t})]_+`
    pub gplus_at_x: Vector,
}

/// Primal–dual update; `next` holds the round-`t+1` parameters.
///
/// ```text
/// ω   = ∂f + ∂[g]_+ q
/// x⁺  = P_{(1−ξ_{t+1})X}(z⁺ − α_{t+1} ω)
/// b̂   = [g(x)]_+ + (∂[g]_+)ᵀ (x⁺ − x)
/// q⁺  = [(1 − β_{t+1} γ_{t+1}) q + γ_{t+1} b̂]_+
/// ```
pub fn primal_dual_step(
    x: &Vector,
    z_next: &Vector,
    q: &Vector,
    dir: &Direction,
    next: &ParamsAt,
    set: &FeasibleSet,
) -> Result<(Vector, Vector)> {
    let p = x.len();
    let m = q.len();
    check_dim("consensus estimate", p, z_next.len())?;
    check_dim("loss subgradient", p, dir.loss.len())?;
    check_dim("constraint subgradient rows", p, dir.constraint.nrows())?;
    check_dim("constraint subgradient columns", m, dir.constraint.ncols())?;
    check_dim("clipped constraint values", m, dir.gplus_at_x.len())?;

    let omega = &dir.loss + &dir.constraint.dot(q);
    let x_next = set.project(1.0 - next.xi, &(z_next - &(omega * next.alpha)))?;
    let b_hat = &dir.gplus_at_x + &dir.constraint.t().dot(&(&x_next - x));
    let decay = 1.0 - next.beta * next.gamma;
    let q_next = (q * decay + b_hat * next.gamma).mapv(|v| v.max(0.0));
    Ok((x_next, q_next))
}

/// Returns the new stored broadcast and whether the agent broadcast.
/// The threshold test is inclusive: `‖x_new − x̂‖ ≥ τ` triggers.
pub fn event_trigger(x_hat: &Vector, x_new: &Vector, tau_next: f64) -> (Vector, bool) {
    if norm(&(x_new - x_hat)) >= tau_next {
        (x_new.clone(), true)
    } else {
        (x_hat.clone(), false)
    }
}

/// What one agent produced in round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentUpdate {
    pub state: AgentState,
    pub broadcast: bool,
    /// `u_{i,t}` (bandit mode only)
    pub direction: Option<Vector>,
    /// local loss `f_{i,t}(x_{i,t})`
    pub f_at_x: f64,
    pub gplus_at_x: Vector,
    /// `x_{i,t} + δ_t u_{i,t}` stayed inside `X`
    pub probe_inside: bool,
    /// `‖∂̂f‖ ≤ p F₂`; `None` when no bound was supplied
    pub estimate_within_bound: Option<bool>,
}

/// Read-only inputs shared by every agent in one round.
pub struct RoundContext<'a> {
    pub t: usize,
    pub states: &'a [AgentState],
    pub problem: &'a RoundProblem,
    pub mixing: &'a MixingMatrix,
    pub current: ParamsAt,
    pub next: ParamsAt,
    pub set: &'a FeasibleSet,
    pub mode: Mode,
    pub seed: u64,
    pub bounds: Option<&'a ProblemBounds>,
}

impl RoundContext<'_> {
    /// Agent `i`'s round; a pure function of the context.
    pub fn agent_update(&self, i: usize) -> Result<AgentUpdate> {
        let st = &self.states[i];
        let oracle = self
            .problem
            .agents
            .get(i)
            .ok_or(Error::Dimension {
                what: "agents in round problem",
                expected: self.states.len(),
                found: self.problem.agents.len(),
            })?
            .as_ref();
        check_dim("oracle dimension", st.x.len(), oracle.dim())?;
        check_dim("oracle constraint count", st.q.len(), oracle.num_constraints())?;

        let (dir, direction, f_at_x, probe_inside, within) = match self.mode {
            Mode::Bandit => {
                let mut rng = stream(self.seed, i, Concern::Direction, self.t);
                let u = sample_unit_sphere(&mut rng, st.x.len());
                let delta = self.current.delta;
                let probe = &st.x + &(&u * delta);
                let probe_inside = self.set.contains(1.0, &probe, 1e-12 * self.set.inner_radius());
                let sample = BanditSample::observe(oracle, &st.x, u.clone(), delta);
                let loss = est_loss_subgrad(&sample)?;
                let within = self.bounds.map(|b| within_norm_bound(&loss, b.f2));
                let dir = Direction {
                    constraint: est_constraint_plus_subgrad(&sample)?,
                    gplus_at_x: sample.gplus_at_x.clone(),
                    loss,
                };
                (dir, Some(u), sample.f_at_x, probe_inside, within)
            }
            Mode::FullInfo => {
                let dir = Direction {
                    loss: self.problem.loss_subgrad(i, &st.x)?,
                    constraint: self.problem.constraint_plus_subgrad(i, &st.x)?,
                    gplus_at_x: oracle.constraints(&st.x).mapv(|v| v.max(0.0)),
                };
                (dir, None, oracle.loss(&st.x), true, None)
            }
        };

        let broadcasts: Vec<&Vector> = self.states.iter().map(|s| &s.x_hat).collect();
        let z = consensus_step(&broadcasts, self.mixing, i);
        let (x_next, q_next) = primal_dual_step(&st.x, &z, &st.q, &dir, &self.next, self.set)?;
        let (x_hat, broadcast) = event_trigger(&st.x_hat, &x_next, self.next.tau);
        Ok(AgentUpdate {
            state: AgentState {
                x: x_next,
                x_hat,
                z,
                q: q_next,
            },
            broadcast,
            direction,
            f_at_x,
            gplus_at_x: dir.gplus_at_x,
            probe_inside,
            estimate_within_bound: within,
        })
    }
}

/// Per-round result of [`Simulation::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub t: usize,
    pub updates: Vec<AgentUpdate>,
}

impl RoundOutput {
    pub fn triggers(&self) -> usize {
        self.updates.iter().filter(|u| u.broadcast).count()
    }
}

/// Violation counters for the runtime invariant checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub rounds_checked: usize,
    /// `‖x̂_{i,t} − x_{i,t}‖ > τ_t`
    pub trigger_distance: usize,
    /// some `q_{i,t}` component below zero
    pub dual_negative: usize,
    /// `‖β_t q_{i,t}‖ > ϖ̂₁`
    pub dual_bound: usize,
    /// `x_{i,t} ∉ (1 − ξ_t) X`
    pub decision_membership: usize,
    /// `x_{i,t} + δ_t u_{i,t} ∉ X`
    pub probe_membership: usize,
    /// `‖∂̂f‖ > p F₂` with the sampled `F₂`; informational, since sampled
    /// constants can be exceeded by unseen rounds
    pub estimator_norm: usize,
    /// `max(0, ‖x̂ − x‖ − τ)` over all checks
    pub max_trigger_excess: f64,
    pub max_scaled_dual: f64,
}

impl InvariantReport {
    /// Violations of the algorithm invariants (excludes `estimator_norm`).
    pub fn violations(&self) -> usize {
        self.trigger_distance + self.dual_negative + self.dual_bound + self.decision_membership + self.probe_membership
    }

    fn check_states(&mut self, states: &[AgentState], params: &ParamsAt, set: &FeasibleSet, bounds: Option<&ProblemBounds>) {
        self.rounds_checked += 1;
        for s in states {
            let gap = norm(&(&s.x_hat - &s.x));
            let excess = gap - params.tau;
            self.max_trigger_excess = self.max_trigger_excess.max(excess);
            if excess > 1e-12 {
                self.trigger_distance += 1;
            }
            if s.q.iter().any(|v| *v < 0.0) {
                self.dual_negative += 1;
            }
            let scaled = params.beta * norm(&s.q);
            self.max_scaled_dual = self.max_scaled_dual.max(scaled);
            if let Some(b) = bounds {
                if scaled > b.dual_bound {
                    self.dual_bound += 1;
                }
            }
            if !set.contains(1.0 - params.xi, &s.x, 1e-12 * set.inner_radius()) {
                self.decision_membership += 1;
            }
        }
    }

    fn check_round(&mut self, out: &RoundOutput) {
        for u in &out.updates {
            if !u.probe_inside {
                self.probe_membership += 1;
            }
            if u.estimate_within_bound == Some(false) {
                self.estimator_norm += 1;
            }
        }
    }
}

/// Everything the horizon loop needs besides the problem family.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub set: FeasibleSet,
    pub schedule: Schedule,
    pub graph: GraphSpec,
    pub mode: Mode,
    pub init: InitRule,
    pub seed: u64,
    pub check_invariants: bool,
    /// needed for the dual-bound and estimator-norm checks
    pub bounds: Option<ProblemBounds>,
}

/// Agent states plus the per-run bookkeeping around them.
pub struct Simulation {
    spec: SimulationSpec,
    states: Vec<AgentState>,
    t: usize,
    params: Vec<ParamsAt>,
    cursor: ScheduleCursor,
    window: VecDeque<RoundGraph>,
    report: InvariantReport,
    pending_triggers: usize,
}

impl Simulation {
    /// Initializes round 1. Every agent's initial broadcast counts as a trigger.
    pub fn new(family: &dyn ProblemFamily, spec: SimulationSpec) -> Result<Self> {
        spec.schedule.validate()?;
        spec.graph.validate()?;
        check_dim("problem dimension", spec.set.dim(), family.dim())?;
        if (spec.schedule.inner_radius - spec.set.inner_radius()).abs() > 1e-12 * spec.set.inner_radius() {
            return Err(Error::Parameter(format!(
                "schedule inner radius {} differs from the set's {}",
                spec.schedule.inner_radius,
                spec.set.inner_radius()
            )));
        }
        let n = family.num_agents();
        if n == 0 {
            return Err(Error::Parameter("need at least one agent".into()));
        }
        let first_round = family.round(1);
        check_dim("agents in round problem", n, first_round.num_agents())?;
        let dims: Vec<usize> = first_round.agents.iter().map(|a| a.num_constraints()).collect();
        let mut cursor = spec.schedule.cursor();
        let (_, first) = cursor.next().expect("schedule cursor is infinite");
        let states = init_agents(&spec.set, &first, spec.init, &dims, spec.seed);
        Ok(Simulation {
            states,
            t: 1,
            params: vec![first],
            cursor,
            window: VecDeque::new(),
            report: InvariantReport::default(),
            pending_triggers: n,
            spec,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn spec(&self) -> &SimulationSpec {
        &self.spec
    }

    pub fn report(&self) -> &InvariantReport {
        &self.report
    }

    /// Broadcasts that produced the current `x̂_{·,t}` (all `n` at `t = 1`).
    pub fn triggers_this_round(&self) -> usize {
        self.pending_triggers
    }

    pub fn params(&mut self, t: usize) -> ParamsAt {
        while self.params.len() < t {
            let (_, p) = self.cursor.next().expect("schedule cursor is infinite");
            self.params.push(p);
        }
        self.params[t - 1]
    }

    /// Largest distance of any decision from the agents' average decision.
    pub fn disagreement(&self) -> f64 {
        let n = self.states.len() as f64;
        let mut mean = Vector::zeros(self.spec.set.dim());
        for s in &self.states {
            mean += &s.x;
        }
        mean /= n;
        self.states.iter().map(|s| norm(&(&s.x - &mean))).fold(0.0, f64::max)
    }

    /// Runs the invariant checks on the current round's states.
    pub fn check_current(&mut self) {
        let p = self.params(self.t);
        let Simulation {
            report, states, spec, ..
        } = self;
        report.check_states(states, &p, &spec.set, spec.bounds.as_ref());
    }

    /// Draws `G_t`, validates the trailing connectivity window, and builds `W_t`.
    fn mixing_for_round(&mut self) -> Result<MixingMatrix> {
        let n = self.states.len();
        let graph = self.spec.graph.round_graph(self.spec.seed, self.t, n);
        let b = self.spec.graph.b_window;
        self.window.push_back(graph);
        if self.window.len() > b {
            self.window.pop_front();
        }
        if self.window.len() == b && n > 1 {
            let graphs: Vec<RoundGraph> = self.window.iter().cloned().collect();
            if !check_b_connectivity(&graphs) {
                return Err(Error::Connectivity {
                    first: self.t + 1 - b,
                    last: self.t,
                    window: b,
                });
            }
        }
        MixingMatrix::from_graph(self.window.back().expect("window was just pushed"))
    }

    /// Advances from round `t` to `t + 1` using `problem` (round `t`).
    pub fn step(&mut self, problem: &RoundProblem) -> Result<RoundOutput> {
        let mixing = self.mixing_for_round()?;
        self.step_with(problem, &mixing, None)
    }

    /// Like [`Simulation::step`], evaluating agents sequentially in `order`.
    pub fn step_in_order(&mut self, problem: &RoundProblem, order: &[usize]) -> Result<RoundOutput> {
        let mixing = self.mixing_for_round()?;
        self.step_with(problem, &mixing, Some(order))
    }

    /// Advances one round with a caller-supplied mixing matrix.
    pub fn step_with_mixing(&mut self, problem: &RoundProblem, mixing: &MixingMatrix) -> Result<RoundOutput> {
        self.step_with(problem, mixing, None)
    }

    fn step_with(&mut self, problem: &RoundProblem, mixing: &MixingMatrix, order: Option<&[usize]>) -> Result<RoundOutput> {
        let n = self.states.len();
        check_dim("mixing matrix size", n, mixing.n())?;
        check_dim("agents in round problem", n, problem.num_agents())?;
        let t = self.t;
        let current = self.params(t);
        let next = self.params(t + 1);
        let ctx = RoundContext {
            t,
            states: &self.states,
            problem,
            mixing,
            current,
            next,
            set: &self.spec.set,
            mode: self.spec.mode,
            seed: self.spec.seed,
            bounds: self.spec.bounds.as_ref(),
        };
        let updates: Vec<AgentUpdate> = match order {
            None => (0..n)
                .into_par_iter()
                .map(|i| ctx.agent_update(i))
                .collect::<Result<_>>()?,
            Some(order) => {
                let mut slots: Vec<Option<AgentUpdate>> = vec![None; n];
                for &i in order {
                    slots[i] = Some(ctx.agent_update(i)?);
                }
                slots
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| s.ok_or_else(|| Error::Parameter(format!("agent {i} missing from order"))))
                    .collect::<Result<_>>()?
            }
        };
        let out = RoundOutput { t, updates };
        if self.spec.check_invariants {
            self.report.check_round(&out);
        }
        self.states = out.updates.iter().map(|u| u.state.clone()).collect();
        self.pending_triggers = out.triggers();
        self.t += 1;
        Ok(out)
    }
}

/// Runs rounds `1..=horizon` and records the metrics of every round's
/// decisions. The update after the last round is not performed.
pub fn run_horizon(family: &dyn ProblemFamily, spec: SimulationSpec, horizon: usize) -> Result<(MetricsLog, InvariantReport)> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    let mut sim = Simulation::new(family, spec)?;
    let mut log = MetricsLog::new(family.num_agents());
    for t in 1..=horizon {
        let problem = family.round(t);
        if sim.spec.check_invariants {
            sim.check_current();
        }
        log.record(&problem, sim.states(), sim.triggers_this_round())?;
        if t < horizon {
            sim.step(&problem)?;
        }
    }
    Ok((log, sim.report.clone()))
}
