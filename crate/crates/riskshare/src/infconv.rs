//! Weighted infimal convolution (the value function of the risk-sharing
//! problem) over a finite agent population, with dual lower bounds,
//! improperness probes, grouped convolutions, and partition-restricted
//! solves.
//!
//! The optimization is `min Σ w_i rho_i(X_i)` subject to `Σ w_i X_i = X`
//! (WEIGHTED mode) or `Σ X_i = X` with unit weights (UNWEIGHTED mode).
//! Feasibility is kept exact by construction: the last agent absorbs the
//! residual `X − Σ w_i X_i` of the free agents, so no constrained search is
//! needed. Allocation grids are centered at the feasible proportional split
//! `X_i = X / Σw` and the radius doubles while the incumbent keeps
//! improving. All randomized restarts log their seed; identical inputs give
//! identical outputs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::ConjugateTable;
use crate::probspace::{cond_expectation, FiniteProbSpace, PartitionAlgebra, ProbMeasure, Rv};
use crate::riskmeasures::RiskMeasure;
use crate::{Error, Result, Value};

/// One agent: a strictly positive weight and a risk measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub weight: f64,
    #[serde(rename = "spec")]
    pub measure: RiskMeasure,
}

impl Agent {
    pub fn new(weight: f64, measure: RiskMeasure) -> Self {
        Self { weight, measure }
    }
}

/// Population mode. UNWEIGHTED is the plain `Σ X_i = X` convolution with
/// unit weights; WEIGHTED uses `Σ w_i X_i = X` with objective
/// `Σ w_i rho_i(X_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Weighted,
    Unweighted,
}

/// Weighted sequence of agents standing in for the agent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPopulation")]
pub struct AgentPopulation {
    agents: Vec<Agent>,
    mode: Mode,
}

#[derive(Deserialize)]
struct RawPopulation {
    agents: Vec<Agent>,
    mode: Mode,
}

impl TryFrom<RawPopulation> for AgentPopulation {
    type Error = Error;
    fn try_from(raw: RawPopulation) -> Result<Self> {
        AgentPopulation::new(raw.agents, raw.mode)
    }
}

impl AgentPopulation {
    pub fn new(agents: Vec<Agent>, mode: Mode) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidParameter(
                "population needs at least one agent".into(),
            ));
        }
        for (i, agent) in agents.iter().enumerate() {
            if !(agent.weight > 0.0 && agent.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "agent {i} has non-positive weight {}",
                    agent.weight
                )));
            }
            if mode == Mode::Unweighted && agent.weight != 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "UNWEIGHTED mode requires unit weights, agent {i} has {}",
                    agent.weight
                )));
            }
        }
        Ok(Self { agents, mode })
    }

    /// `n` identical copies with weight `1/n` in WEIGHTED mode: the
    /// replicated agent space.
    pub fn replicated(measure: RiskMeasure, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("replication needs n >= 1".into()));
        }
        let w = 1.0 / n as f64;
        Self::new(vec![Agent::new(w, measure); n], Mode::Weighted)
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.agents.iter().map(|a| a.weight).sum()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.agents
            .windows(2)
            .all(|w| w[0].weight == w[1].weight && w[0].measure == w[1].measure)
    }

    pub fn validate(&self, space: &FiniteProbSpace) -> Result<()> {
        for agent in &self.agents {
            agent.measure.validate(space)?;
        }
        Ok(())
    }
}

/// Solver configuration. Defaults suit the desk-scale fixtures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Lattice points per axis in grid scans (odd).
    pub points_per_axis: usize,
    /// Initial grid radius as a multiple of `1 + ||X||_inf`.
    pub initial_radius: f64,
    /// Cap on radius doublings.
    pub max_escalations: u32,
    /// Incumbent improvements below this do not count as progress.
    pub improvement_tol: f64,
    /// Objectives below the negation of this classify the value as −∞.
    pub divergence_threshold: f64,
    /// Seeded random restarts for the heuristic solver.
    pub restarts: u32,
    pub seed: u64,
    /// Block-coordinate-descent sweeps per start.
    pub bcd_sweeps: u32,
    pub polish_sweeps: u32,
    pub polish_rounds: u32,
    pub polish_points: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            points_per_axis: 5,
            initial_radius: 1.0,
            max_escalations: 40,
            improvement_tol: 1e-9,
            divergence_threshold: 1e6,
            restarts: 8,
            seed: 0,
            bcd_sweeps: 24,
            polish_sweeps: 3,
            polish_rounds: 36,
            polish_points: 7,
        }
    }
}

/// Exact-solver budget guard.
pub const EXACT_MAX_AGENTS: usize = 3;
pub const EXACT_MAX_ATOMS: usize = 4;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverMeta {
    pub iterations: u64,
    pub restarts: u32,
    pub seed: u64,
}

/// Result of a value-function solve.
#[derive(Debug, Clone, Serialize)]
pub struct AllocationResult {
    pub value: Value,
    pub allocation: Vec<Rv>,
    pub dual_bound: Option<Value>,
    pub gap: Option<f64>,
    pub meta: SolverMeta,
}

impl AllocationResult {
    /// Attach a dual bound; the gap is `value − bound` when both are finite.
    pub fn with_dual_bound(mut self, bound: Value) -> Self {
        self.gap = match (self.value, bound) {
            (Value::Finite(v), Value::Finite(b)) => Some(v - b),
            _ => None,
        };
        self.dual_bound = Some(bound);
        self
    }
}

type CostRef<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);
type BoxedCost<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// Shared state for one constrained minimization.
struct Engine<'a> {
    weights: &'a [f64],
    costs: &'a [CostRef<'a>],
    target: &'a [f64],
    d: usize,
    params: &'a SolverParams,
    iterations: u64,
}

/// Free allocations for agents `0..n−1`; the last agent holds the residual.
type FreeAlloc = Vec<Vec<f64>>;

impl<'a> Engine<'a> {
    fn n(&self) -> usize {
        self.weights.len()
    }

    fn residual(&self, free: &FreeAlloc) -> Vec<f64> {
        let n = self.n();
        let w_last = self.weights[n - 1];
        let mut out = self.target.to_vec();
        for (i, x) in free.iter().enumerate() {
            let w = self.weights[i];
            for (o, v) in out.iter_mut().zip(x) {
                *o -= w * v;
            }
        }
        for o in &mut out {
            *o /= w_last;
        }
        out
    }

    fn objective(&mut self, free: &FreeAlloc) -> f64 {
        self.iterations += 1;
        let n = self.n();
        let mut total = 0.0;
        for (i, x) in free.iter().enumerate() {
            total += self.weights[i] * (self.costs[i])(x);
        }
        let resid = self.residual(free);
        total += self.weights[n - 1] * (self.costs[n - 1])(&resid);
        total
    }

    fn full_allocation(&self, free: &FreeAlloc) -> Vec<Vec<f64>> {
        let mut all = free.clone();
        all.push(self.residual(free));
        all
    }

    fn diverged(&self, value: f64) -> bool {
        value < -self.params.divergence_threshold
    }

    /// Structured starting points: proportional split, each agent taking
    /// everything, and (for homogeneous populations) k agents sharing
    /// everything equally.
    fn structured_starts(&self, homogeneous: bool) -> Vec<FreeAlloc> {
        let n = self.n();
        let d = self.d;
        let total_w: f64 = self.weights.iter().sum();
        let proportional: Vec<f64> = self.target.iter().map(|v| v / total_w).collect();
        let mut starts = vec![vec![proportional; n - 1]];
        for j in 0..n {
            let mut free = vec![vec![0.0; d]; n - 1];
            if j < n - 1 {
                free[j] = self.target.iter().map(|v| v / self.weights[j]).collect();
            }
            starts.push(free);
        }
        if homogeneous && n >= 2 {
            let w = self.weights[0];
            for k in 1..n {
                let share: Vec<f64> = self.target.iter().map(|v| v / (k as f64 * w)).collect();
                let mut free = vec![vec![0.0; d]; n - 1];
                for item in free.iter_mut().take(k) {
                    *item = share.clone();
                }
                starts.push(free);
            }
        }
        starts
    }

    /// Exhaustive lattice scan over the free agents around `center` at the
    /// given radius. Returns the best point and whether it sits on the
    /// lattice boundary.
    fn grid_scan(
        &mut self,
        center: &FreeAlloc,
        radius: f64,
        incumbent: (FreeAlloc, f64),
    ) -> (FreeAlloc, f64, bool) {
        let points = self.params.points_per_axis.max(2);
        let dims = center.len() * self.d;
        let mut idx = vec![0usize; dims];
        let mut cand = center.clone();
        let (mut best, mut best_val) = incumbent;
        let mut boundary = false;
        loop {
            for (flat, &i) in idx.iter().enumerate() {
                let offset = -radius + 2.0 * radius * i as f64 / (points - 1) as f64;
                cand[flat / self.d][flat % self.d] = center[flat / self.d][flat % self.d] + offset;
            }
            let v = self.objective(&cand);
            if v < best_val {
                best_val = v;
                best = cand.clone();
                boundary = idx.iter().any(|&i| i == 0 || i == points - 1);
                if self.diverged(best_val) {
                    return (best, best_val, boundary);
                }
            }
            let mut k = 0;
            loop {
                if k == dims {
                    return (best, best_val, boundary);
                }
                idx[k] += 1;
                if idx[k] < points {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Coordinate descent with shrinking radius over all free coordinates.
    fn polish(&mut self, start: FreeAlloc, start_val: f64, initial_radius: f64) -> (FreeAlloc, f64) {
        let p = self.params.polish_points.max(2);
        let mut cur = start;
        let mut cur_val = start_val;
        let mut seed_radius = initial_radius;
        for _ in 0..self.params.polish_sweeps {
            let mut radius = seed_radius;
            for _ in 0..self.params.polish_rounds {
                for agent in 0..cur.len() {
                    for k in 0..self.d {
                        let center = cur[agent][k];
                        for j in 0..p {
                            let t = center - radius + 2.0 * radius * j as f64 / (p - 1) as f64;
                            if t == center {
                                continue;
                            }
                            let old = cur[agent][k];
                            cur[agent][k] = t;
                            let v = self.objective(&cur);
                            if v < cur_val {
                                cur_val = v;
                                if self.diverged(cur_val) {
                                    return (cur, cur_val);
                                }
                            } else {
                                cur[agent][k] = old;
                            }
                        }
                    }
                }
                radius *= 0.5;
            }
            seed_radius *= 0.25;
        }
        (cur, cur_val)
    }

    /// Exhaustive search with radius escalation, then polish.
    fn solve_exact(&mut self, homogeneous: bool, extra_starts: &[FreeAlloc]) -> (FreeAlloc, f64) {
        let starts = self.structured_starts(homogeneous);
        let total_w: f64 = self.weights.iter().sum();
        let anchor: Vec<f64> = self.target.iter().map(|v| v / total_w).collect();
        let center = vec![anchor; self.n() - 1];

        let mut best = center.clone();
        let mut best_val = self.objective(&center);
        for start in starts.iter().chain(extra_starts) {
            let v = self.objective(start);
            if v < best_val {
                best_val = v;
                best = start.clone();
            }
        }
        if self.diverged(best_val) {
            return (best, best_val);
        }

        let scale = 1.0 + self.target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut radius = self.params.initial_radius * scale;
        let mut last_landmark = best_val;
        for _ in 0..self.params.max_escalations {
            let (b, v, _) = self.grid_scan(&center, radius, (best.clone(), best_val));
            best = b;
            best_val = v;
            if self.diverged(best_val) {
                return (best, best_val);
            }
            if last_landmark - best_val <= self.params.improvement_tol {
                break;
            }
            last_landmark = best_val;
            radius *= 2.0;
        }
        let step = radius / (self.params.points_per_axis.max(2) - 1) as f64;
        self.polish(best, best_val, step)
    }

    /// One block-coordinate-descent pass from a given start: each step
    /// re-optimizes a single agent on a local lattice, the residual agent
    /// absorbing the move.
    fn bcd_from(&mut self, start: FreeAlloc, radius0: f64) -> (FreeAlloc, f64) {
        let points = self.params.points_per_axis.max(2);
        let mut cur = start;
        let mut cur_val = self.objective(&cur);
        if self.diverged(cur_val) {
            return (cur, cur_val);
        }
        let mut radius = radius0;
        let floor = radius0 * 1e-6;
        for _ in 0..self.params.bcd_sweeps {
            let mut improved = false;
            let mut boundary_hit = false;
            for agent in 0..cur.len() {
                // local lattice over this agent's payoff only
                let mut idx = vec![0usize; self.d];
                let center = cur[agent].clone();
                let mut best_local = cur[agent].clone();
                let mut best_val_local = cur_val;
                let mut local_boundary = false;
                loop {
                    for (k, &i) in idx.iter().enumerate() {
                        cur[agent][k] =
                            center[k] - radius + 2.0 * radius * i as f64 / (points - 1) as f64;
                    }
                    let v = self.objective(&cur);
                    if v < best_val_local {
                        best_val_local = v;
                        best_local = cur[agent].clone();
                        local_boundary = idx.iter().any(|&i| i == 0 || i == points - 1);
                    }
                    let mut k = 0;
                    loop {
                        if k == self.d {
                            break;
                        }
                        idx[k] += 1;
                        if idx[k] < points {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                    }
                    if k == self.d {
                        break;
                    }
                }
                if best_val_local < cur_val - self.params.improvement_tol {
                    improved = true;
                    boundary_hit |= local_boundary;
                    cur_val = best_val_local;
                }
                cur[agent] = best_local;
                if self.diverged(cur_val) {
                    return (cur, cur_val);
                }
            }
            if improved && boundary_hit {
                radius *= 2.0;
            } else if !improved {
                radius *= 0.5;
                if radius < floor {
                    break;
                }
            }
        }
        (cur, cur_val)
    }

    /// Multi-start block coordinate descent, then polish of the incumbent.
    fn solve_heuristic(
        &mut self,
        homogeneous: bool,
        extra_starts: &[FreeAlloc],
    ) -> (FreeAlloc, f64, u32) {
        let scale = 1.0 + self.target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let radius0 = self.params.initial_radius * scale;
        let mut starts = self.structured_starts(homogeneous);
        starts.extend_from_slice(extra_starts);
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        let n_structured = starts.len();
        for _ in 0..self.params.restarts {
            let free: FreeAlloc = (0..self.n() - 1)
                .map(|_| {
                    (0..self.d)
                        .map(|k| {
                            self.target[k] / self.weights.iter().sum::<f64>()
                                + rng.gen_range(-2.0 * scale..2.0 * scale)
                        })
                        .collect()
                })
                .collect();
            starts.push(free);
        }
        let mut best: Option<(FreeAlloc, f64)> = None;
        for start in &starts {
            let (alloc, val) = self.bcd_from(start.clone(), radius0);
            if best.as_ref().is_none_or(|(_, b)| val < *b) {
                best = Some((alloc, val));
            }
            if self.diverged(best.as_ref().unwrap().1) {
                let (a, v) = best.unwrap();
                return (a, v, starts.len() as u32 - n_structured as u32);
            }
        }
        let (alloc, val) = best.unwrap();
        let step = radius0 / (self.params.points_per_axis.max(2) - 1) as f64;
        let (alloc, val) = self.polish(alloc, val, step);
        (alloc, val, self.params.restarts)
    }
}

fn finish(
    engine: Engine<'_>,
    free: FreeAlloc,
    value: f64,
    restarts: u32,
    params: &SolverParams,
) -> AllocationResult {
    let allocation: Vec<Rv> = engine
        .full_allocation(&free)
        .into_iter()
        .map(|v| Rv::new(v).expect("allocations are finite"))
        .collect();
    let value = if value < -params.divergence_threshold {
        Value::MinusInf
    } else {
        Value::Finite(value)
    };
    AllocationResult {
        value,
        allocation,
        dual_bound: None,
        gap: None,
        meta: SolverMeta {
            iterations: engine.iterations,
            restarts,
            seed: params.seed,
        },
    }
}

fn measure_costs<'a>(
    pop: &'a AgentPopulation,
    space: &'a FiniteProbSpace,
) -> Vec<BoxedCost<'a>> {
    pop.agents()
        .iter()
        .map(|agent| {
            let m = &agent.measure;
            Box::new(move |v: &[f64]| m.eval_values(space, v))
                as BoxedCost<'a>
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn solve_with_costs(
    weights: &[f64],
    costs: &[CostRef<'_>],
    space_dim: usize,
    x: &Rv,
    params: &SolverParams,
    exact: bool,
    homogeneous: bool,
    extra_starts: &[FreeAlloc],
) -> AllocationResult {
    let mut engine = Engine {
        weights,
        costs,
        target: x.values(),
        d: space_dim,
        params,
        iterations: 0,
    };
    if weights.len() == 1 {
        let free: FreeAlloc = Vec::new();
        let value = engine.objective(&free);
        return finish(engine, free, value, 0, params);
    }
    if exact {
        let (free, value) = engine.solve_exact(homogeneous, extra_starts);
        finish(engine, free, value, 0, params)
    } else {
        let (free, value, restarts) = engine.solve_heuristic(homogeneous, extra_starts);
        finish(engine, free, value, restarts, params)
    }
}

fn check_inputs(pop: &AgentPopulation, space: &FiniteProbSpace, x: &Rv) -> Result<()> {
    pop.validate(space)?;
    space.check_dim(x.len())?;
    Ok(())
}

/// Exhaustive grid solve. Guarded to `n <= 3` agents and `d <= 4` atoms;
/// the residual construction makes every grid point feasible.
pub fn solve_exact(
    pop: &AgentPopulation,
    space: &FiniteProbSpace,
    x: &Rv,
    params: &SolverParams,
) -> Result<AllocationResult> {
    check_inputs(pop, space, x)?;
    if pop.len() > EXACT_MAX_AGENTS || space.dim() > EXACT_MAX_ATOMS {
        return Err(Error::BudgetExceeded(format!(
            "exact solve is limited to n <= {EXACT_MAX_AGENTS}, d <= {EXACT_MAX_ATOMS}; got n = {}, d = {}",
            pop.len(),
            space.dim()
        )));
    }
    let costs = measure_costs(pop, space);
    let cost_refs: Vec<CostRef<'_>> = costs.iter().map(|c| c.as_ref() as CostRef<'_>).collect();
    let weights: Vec<f64> = pop.agents().iter().map(|a| a.weight).collect();
    Ok(solve_with_costs(
        &weights,
        &cost_refs,
        space.dim(),
        x,
        params,
        true,
        pop.is_homogeneous(),
        &[],
    ))
}

/// Multi-start block coordinate descent. Scales past the exact budget; the
/// returned value is an upper bound on the true infimum.
pub fn solve_heuristic(
    pop: &AgentPopulation,
    space: &FiniteProbSpace,
    x: &Rv,
    params: &SolverParams,
) -> Result<AllocationResult> {
    check_inputs(pop, space, x)?;
    let costs = measure_costs(pop, space);
    let cost_refs: Vec<CostRef<'_>> = costs.iter().map(|c| c.as_ref() as CostRef<'_>).collect();
    let weights: Vec<f64> = pop.agents().iter().map(|a| a.weight).collect();
    Ok(solve_with_costs(
        &weights,
        &cost_refs,
        space.dim(),
        x,
        params,
        false,
        pop.is_homogeneous(),
        &[],
    ))
}

/// Exact when within the budget guard, heuristic otherwise.
pub fn solve(
    pop: &AgentPopulation,
    space: &FiniteProbSpace,
    x: &Rv,
    params: &SolverParams,
) -> Result<AllocationResult> {
    if pop.len() <= EXACT_MAX_AGENTS && space.dim() <= EXACT_MAX_ATOMS {
        solve_exact(pop, space, x, params)
    } else {
        solve_heuristic(pop, space, x, params)
    }
}

/// `max_Q ( E^Q(X) − Σ w_i rho_i*(Q) )` over the shared dual grid, skipping
/// points where any agent's conjugate diverged. Returns `−∞` when no grid
/// point survives.
pub fn dual_lower_bound(
    pop: &AgentPopulation,
    space: &FiniteProbSpace,
    x: &Rv,
    tables: &[ConjugateTable],
) -> Result<Value> {
    space.check_dim(x.len())?;
    if tables.len() != pop.len() {
        return Err(Error::InvalidParameter(format!(
            "expected {} conjugate tables, got {}",
            pop.len(),
            tables.len()
        )));
    }
    for pair in tables.windows(2) {
        if !pair[0].grids_match(&pair[1]) {
            return Err(Error::GridMismatch);
        }
    }
    let grid = tables[0].grid();
    let mut best: Option<f64> = None;
    'grid: for (idx, q) in grid.iter().enumerate() {
        let mut total = q.expectation(x)?;
        for (agent, table) in pop.agents().iter().zip(tables) {
            match &table.values()[idx] {
                crate::conjugate::ConjValue::Finite(c) => total -= agent.weight * c,
                crate::conjugate::ConjValue::Diverged { .. } => continue 'grid,
            }
        }
        if best.is_none_or(|b| total > b) {
            best = Some(total);
        }
    }
    Ok(best.map_or(Value::MinusInf, Value::Finite))
}

/// Verdict of the improperness probe. `FiniteSoFar` is not a proof of
/// finiteness — only that no probed transfer direction escaped.
#[derive(Debug, Clone, Serialize)]
pub enum ProbeVerdict {
    FiniteSoFar {
        worst_objective: f64,
    },
    MinusInf {
        /// Agents carrying the opposing transfers.
        pair: (usize, usize),
        /// Base zero-sum direction (difference of atom indicators).
        direction: Rv,
        /// `(K, objective)` trace along the scaling schedule.
        objectives: Vec<(f64, f64)>,
        /// Allocation at the final scaling.
        witness: Vec<Rv>,
    },
}

/// Probe zero-sum transfer directions for improperness at `X = 0`. The
/// direction dictionary is the set of atom-indicator differences; each
/// direction is scaled through `K ∈ {1, 10, 10², …}` and MINUS_INF is
/// declared when the objective drops below −1e6 while decreasing at every
/// scaling.
pub fn improperness_probe(
    pop: &AgentPopulation,
    space: &FiniteProbSpace,
    steps: usize,
) -> Result<ProbeVerdict> {
    pop.validate(space)?;
    if pop.len() < 2 {
        return Err(Error::InvalidParameter(
            "improperness probe needs at least two agents".into(),
        ));
    }
    if steps < 2 {
        return Err(Error::InvalidParameter(
            "scaling schedule needs at least two steps".into(),
        ));
    }
    let d = space.dim();
    let n = pop.len();
    let rest_cost: f64 = pop
        .agents()
        .iter()
        .map(|a| a.weight * a.measure.eval_values(space, &vec![0.0; d]))
        .sum();
    let mut worst = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            for a in 0..d {
                for b in (a + 1)..d {
                    for sign in [1.0, -1.0] {
                        let mut dir = vec![0.0; d];
                        dir[a] = sign;
                        dir[b] = -sign;
                        let agent_i = &pop.agents()[i];
                        let agent_j = &pop.agents()[j];
                        let mut objectives = Vec::with_capacity(steps);
                        let mut decreasing = true;
                        let mut prev = f64::INFINITY;
                        for m in 0..steps {
                            let k = 10f64.powi(m as i32);
                            let xi: Vec<f64> =
                                dir.iter().map(|v| k * v / agent_i.weight).collect();
                            let xj: Vec<f64> =
                                dir.iter().map(|v| -k * v / agent_j.weight).collect();
                            let obj = rest_cost
                                - agent_i.weight
                                    * agent_i.measure.eval_values(space, &vec![0.0; d])
                                - agent_j.weight
                                    * agent_j.measure.eval_values(space, &vec![0.0; d])
                                + agent_i.weight * agent_i.measure.eval_values(space, &xi)
                                + agent_j.weight * agent_j.measure.eval_values(space, &xj);
                            if obj >= prev {
                                decreasing = false;
                            }
                            prev = obj;
                            worst = worst.min(obj);
                            objectives.push((k, obj));
                        }
                        let final_obj = objectives.last().unwrap().1;
                        if decreasing && final_obj < -1e6 {
                            let k = objectives.last().unwrap().0;
                            let mut witness = vec![Rv::zero(d); n];
                            witness[i] = Rv::new(
                                dir.iter().map(|v| k * v / agent_i.weight).collect(),
                            )?;
                            witness[j] = Rv::new(
                                dir.iter().map(|v| -k * v / agent_j.weight).collect(),
                            )?;
                            return Ok(ProbeVerdict::MinusInf {
                                pair: (i, j),
                                direction: Rv::new(dir)?,
                                objectives,
                                witness,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(ProbeVerdict::FiniteSoFar {
        worst_objective: worst,
    })
}

/// Convolve group value functions: each group of agents collapses to the
/// value function of its own sub-problem, and the groups are convolved.
/// Agrees with the direct solve up to combined solver tolerance.
pub fn group_convolve(
    pop: &AgentPopulation,
    groups: &[Vec<usize>],
    space: &FiniteProbSpace,
    x: &Rv,
    params: &SolverParams,
) -> Result<AllocationResult> {
    check_inputs(pop, space, x)?;
    let n = pop.len();
    let mut seen = vec![false; n];
    for group in groups {
        if group.is_empty() {
            return Err(Error::EmptyGroup);
        }
        for &i in group {
            if i >= n || seen[i] {
                return Err(Error::InvalidParameter(
                    "groups must disjointly cover the agent indices".into(),
                ));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidParameter(
            "groups must cover every agent".into(),
        ));
    }

    let sub_pops: Vec<AgentPopulation> = groups
        .iter()
        .map(|group| {
            AgentPopulation::new(
                group.iter().map(|&i| pop.agents()[i].clone()).collect(),
                // Sub-problems run in weighted mode so parent weights carry over.
                Mode::Weighted,
            )
        })
        .collect::<Result<_>>()?;

    let group_costs: Vec<BoxedCost<'_>> = sub_pops
        .iter()
        .map(|sub| {
            let params = params.clone();
            Box::new(move |y: &[f64]| {
                let target = Rv::new(y.to_vec()).expect("grid payoffs are finite");
                let out = solve(sub, space, &target, &params).expect("validated sub-problem");
                match out.value {
                    Value::Finite(v) => v,
                    // Keep arithmetic NaN-free; the outer guard re-flags it.
                    Value::MinusInf => -10.0 * params.divergence_threshold,
                    Value::PlusInf => 10.0 * params.divergence_threshold,
                }
            }) as BoxedCost<'_>
        })
        .collect();
    let cost_refs: Vec<CostRef<'_>> = group_costs
        .iter()
        .map(|c| c.as_ref() as CostRef<'_>)
        .collect();
    let outer_weights = vec![1.0; groups.len()];
    let exact = groups.len() <= EXACT_MAX_AGENTS && space.dim() <= EXACT_MAX_ATOMS;
    let outer = solve_with_costs(
        &outer_weights,
        &cost_refs,
        space.dim(),
        x,
        params,
        exact,
        false,
        &[],
    );

    // Recover a per-agent allocation by re-solving each group at its share.
    let mut allocation = vec![Rv::zero(space.dim()); n];
    let mut iterations = outer.meta.iterations;
    for (group, (sub, share)) in groups
        .iter()
        .zip(sub_pops.iter().zip(&outer.allocation))
    {
        let inner = solve(sub, space, share, params)?;
        iterations += inner.meta.iterations;
        for (&agent_idx, rv) in group.iter().zip(&inner.allocation) {
            allocation[agent_idx] = rv.clone();
        }
    }
    Ok(AllocationResult {
        value: outer.value,
        allocation,
        dual_bound: None,
        gap: None,
        meta: SolverMeta {
            iterations,
            restarts: outer.meta.restarts,
            seed: params.seed,
        },
    })
}

/// Values of the unrestricted and block-constant solves for a
/// partition-measurable payoff.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalReduction {
    pub value_all: Value,
    pub value_g: Value,
    pub allocation_all: Vec<Rv>,
    pub allocation_g: Vec<Rv>,
}

/// Compare the value over all allocations with the value over
/// block-constant allocations for a `G`-measurable payoff. The
/// block-constant solve runs on the quotient space; its expanded optimum
/// seeds the unrestricted solve, so `value_all <= value_g` always holds in
/// the output. The `Q`-conditioned image of the unrestricted optimum is fed
/// back as a block-constant candidate; for `Q`-dilatation-monotone agents
/// the two values agree.
pub fn conditional_reduction(
    pop: &AgentPopulation,
    space: &FiniteProbSpace,
    g: &PartitionAlgebra,
    q: &ProbMeasure,
    x: &Rv,
    params: &SolverParams,
) -> Result<ConditionalReduction> {
    check_inputs(pop, space, x)?;
    space.check_dim(g.dim())?;
    space.check_dim(q.len())?;
    if !g.is_measurable(x, 1e-9) {
        return Err(Error::NotBlockConstant);
    }
    let n = pop.len();
    let db = g.num_blocks();
    let block_probs: Vec<f64> = g
        .blocks()
        .iter()
        .map(|block| block.iter().map(|&a| space.probs()[a]).sum())
        .collect();
    let quotient = FiniteProbSpace::new(block_probs)?;
    let expand = |compact: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; space.dim()];
        for (value, block) in compact.iter().zip(g.blocks()) {
            for &a in block {
                full[a] = *value;
            }
        }
        full
    };
    let x_compact = Rv::new(g.blocks().iter().map(|b| x.values()[b[0]]).collect())?;

    // Block-constant solve on the quotient: agent costs evaluate the
    // expanded payoff on the original space.
    let compact_costs: Vec<BoxedCost<'_>> = pop
        .agents()
        .iter()
        .map(|agent| {
            let m = &agent.measure;
            Box::new(move |y: &[f64]| m.eval_values(space, &expand(y)))
                as BoxedCost<'_>
        })
        .collect();
    let cost_refs: Vec<CostRef<'_>> = compact_costs
        .iter()
        .map(|c| c.as_ref() as CostRef<'_>)
        .collect();
    let weights: Vec<f64> = pop.agents().iter().map(|a| a.weight).collect();
    let exact_g = n <= EXACT_MAX_AGENTS && db <= EXACT_MAX_ATOMS;
    let g_result = solve_with_costs(
        &weights,
        &cost_refs,
        db,
        &x_compact,
        params,
        exact_g,
        pop.is_homogeneous(),
        &[],
    );
    let _ = quotient;

    // Unrestricted solve seeded with the expanded block-constant optimum.
    let expanded_start: FreeAlloc = g_result.allocation[..n - 1]
        .iter()
        .map(|rv| expand(rv.values()))
        .collect();
    let costs = measure_costs(pop, space);
    let full_cost_refs: Vec<CostRef<'_>> =
        costs.iter().map(|c| c.as_ref() as CostRef<'_>).collect();
    let exact_all = n <= EXACT_MAX_AGENTS && space.dim() <= EXACT_MAX_ATOMS;
    let all_result = solve_with_costs(
        &weights,
        &full_cost_refs,
        space.dim(),
        x,
        params,
        exact_all,
        pop.is_homogeneous(),
        &[expanded_start],
    );

    // Feed the conditioned image of the unrestricted optimum back into the
    // block-constant side.
    let mut value_g = g_result.value;
    let mut allocation_g: Vec<Rv> = g_result
        .allocation
        .iter()
        .map(|rv| Rv::new(expand(rv.values())).expect("expanded payoffs are finite"))
        .collect();
    if let Value::Finite(g_val) = value_g {
        let conditioned: Vec<Rv> = all_result
            .allocation
            .iter()
            .map(|rv| cond_expectation(space, q, rv, g).map(|c| c.values))
            .collect::<Result<_>>()?;
        let cond_obj: f64 = pop
            .agents()
            .iter()
            .zip(&conditioned)
            .map(|(a, rv)| a.weight * a.measure.eval_values(space, rv.values()))
            .sum();
        if cond_obj < g_val {
            value_g = Value::Finite(cond_obj);
            allocation_g = conditioned;
        }
    }

    Ok(ConditionalReduction {
        value_all: all_result.value,
        value_g,
        allocation_all: all_result.allocation,
        allocation_g,
    })
}
