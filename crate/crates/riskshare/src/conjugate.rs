//! Fenchel conjugates and biconjugates over the probability simplex,
//! divergence classification, conjugate-degeneracy detection, and affine
//! finiteness certificates.
//!
//! The conjugate `rho*(Q) = sup_X ( E^Q(X) − rho(X) )` is evaluated as a
//! boxed supremum. Cash additivity makes the objective invariant under
//! constant shifts of `X` whenever `Q` is a probability measure, so the
//! search is restricted to payoffs with minimum coordinate zero inside
//! `[0, M]^d`. The box bound `M` escalates through a schedule; a point is
//! classified `Diverged` when the supremum exceeds the divergence threshold
//! or keeps at least doubling from level to level (conjugates of
//! cash-additive measures are either finite or `+∞` along rays, so doubling
//! detects the ray). `−∞` and divergence are explicit markers, never
//! sentinel floats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::infconv::AgentPopulation;
use crate::probspace::{FiniteProbSpace, ProbMeasure, Rv};
use crate::riskmeasures::RiskMeasure;
use crate::{Error, Result, Value};

/// Slack allowed when a numerically verified conjugate is compared to a
/// certificate bound.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Outcome of a conjugate evaluation at one dual point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ConjValue {
    Finite(f64),
    /// The supremum escaped the escalation schedule; `witness` is the payoff
    /// reaching the largest objective seen.
    Diverged { witness: Rv },
}

impl ConjValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            ConjValue::Finite(v) => Some(*v),
            ConjValue::Diverged { .. } => None,
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, ConjValue::Diverged { .. })
    }
}

/// Parameters for conjugate evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjParams {
    /// Escalating box bounds for the payoff search.
    pub levels: Vec<f64>,
    /// Grid points per axis; `None` picks a default based on the dimension.
    pub points_per_axis: Option<usize>,
    /// Suprema above this value classify as diverged outright.
    pub divergence_threshold: f64,
    /// Minimal level-to-level increase for growth to count as divergence.
    pub growth_margin: f64,
    /// Simplex lattice resolution `G` (grid step `1/G`); `None` picks a
    /// default based on the dimension.
    pub simplex_resolution: Option<usize>,
    pub polish_sweeps: u32,
    pub polish_rounds: u32,
    pub polish_points: usize,
}

impl Default for ConjParams {
    fn default() -> Self {
        Self {
            levels: vec![10.0, 100.0, 1000.0],
            points_per_axis: None,
            divergence_threshold: 1e6,
            growth_margin: 0.25,
            simplex_resolution: None,
            polish_sweeps: 6,
            polish_rounds: 30,
            polish_points: 9,
        }
    }
}

impl ConjParams {
    pub fn points_for(&self, d: usize) -> usize {
        self.points_per_axis.unwrap_or(match d {
            0..=2 => 41,
            3 => 21,
            _ => 11,
        })
    }

    pub fn resolution_for(&self, d: usize) -> usize {
        self.simplex_resolution.unwrap_or(match d {
            0..=3 => 20,
            4 => 10,
            _ => 8,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|&m| m <= 0.0) {
            return Err(Error::InvalidParameter(
                "escalation levels must be positive and nonempty".into(),
            ));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "escalation levels must be increasing".into(),
            ));
        }
        if self.divergence_threshold <= 0.0 {
            return Err(Error::InvalidParameter(
                "divergence threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SupPoint {
    value: f64,
    arg: Vec<f64>,
}

/// Max of `gain` over the lattice of `[0, bound]^d` restricted to points
/// with some coordinate equal to zero, plus any seed candidates. Ties keep
/// the first point in scan order. Bails out early past `bail_above`.
fn shell_max<F: Fn(&[f64]) -> f64>(
    gain: &F,
    d: usize,
    bound: f64,
    points: usize,
    seeds: &[Vec<f64>],
    bail_above: f64,
) -> SupPoint {
    let step = bound / (points - 1) as f64;
    let mut best = SupPoint {
        value: f64::NEG_INFINITY,
        arg: vec![0.0; d],
    };
    fn consider(best: &mut SupPoint, arg: &[f64], value: f64) {
        if value > best.value {
            *best = SupPoint {
                value,
                arg: arg.to_vec(),
            };
        }
    }
    for seed in seeds {
        // Clamp into the box and re-anchor the minimum coordinate at zero.
        let mut x: Vec<f64> = seed.iter().map(|v| v.clamp(0.0, bound)).collect();
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        for v in &mut x {
            *v -= lo;
        }
        let value = gain(&x);
        consider(&mut best, &x, value);
    }
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    loop {
        if idx.contains(&0) {
            for (k, &i) in idx.iter().enumerate() {
                x[k] = i as f64 * step;
            }
            let value = gain(&x);
            consider(&mut best, &x, value);
            if best.value > bail_above {
                return best;
            }
        }
        // odometer
        let mut k = 0;
        loop {
            if k == d {
                return best;
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

/// Coordinate-wise shrinking line search from `start`, confined to
/// `[0, bound]^d`. Deterministic scan order; robust to non-smooth
/// objectives, accurate on smooth ones.
fn polish<F: Fn(&[f64]) -> f64>(
    gain: &F,
    bound: f64,
    start: SupPoint,
    initial_radius: f64,
    sweeps: u32,
    rounds: u32,
    points: usize,
) -> SupPoint {
    if points < 2 || rounds == 0 || sweeps == 0 {
        return start;
    }
    let d = start.arg.len();
    let mut cur = start;
    let mut seed_radius = initial_radius;
    for _ in 0..sweeps {
        let mut radius = seed_radius;
        for _ in 0..rounds {
            for k in 0..d {
                let center = cur.arg[k];
                for j in 0..points {
                    let t = center - radius + 2.0 * radius * j as f64 / (points - 1) as f64;
                    let t = t.clamp(0.0, bound);
                    if t == center {
                        continue;
                    }
                    let old = cur.arg[k];
                    cur.arg[k] = t;
                    let v = gain(&cur.arg);
                    if v > cur.value {
                        cur.value = v;
                    } else {
                        cur.arg[k] = old;
                    }
                }
            }
            radius *= 0.5;
        }
        seed_radius *= 0.25;
    }
    cur
}

fn grows(prev: f64, next: f64, margin: f64) -> bool {
    next - prev >= margin && (prev <= 0.0 || next >= 2.0 * prev)
}

/// Escalate the boxed supremum of `gain` through the level schedule and
/// classify the result.
fn conjugate_of<F: Fn(&[f64]) -> f64>(gain: &F, d: usize, params: &ConjParams) -> ConjValue {
    let points = params.points_for(d);
    let mut sups: Vec<SupPoint> = Vec::with_capacity(params.levels.len());
    for &bound in &params.levels {
        let seeds: Vec<Vec<f64>> = sups.last().map(|s| vec![s.arg.clone()]).unwrap_or_default();
        let coarse = shell_max(gain, d, bound, points, &seeds, params.divergence_threshold);
        if coarse.value > params.divergence_threshold {
            return ConjValue::Diverged {
                witness: Rv::new(coarse.arg).expect("grid payoffs are finite"),
            };
        }
        let step = bound / (points - 1) as f64;
        let refined = polish(
            gain,
            bound,
            coarse,
            step,
            params.polish_sweeps,
            params.polish_rounds,
            params.polish_points,
        );
        if refined.value > params.divergence_threshold {
            return ConjValue::Diverged {
                witness: Rv::new(refined.arg).expect("polished payoffs are finite"),
            };
        }
        sups.push(refined);
    }
    let doubling = sups.len() >= 2
        && sups
            .windows(2)
            .all(|w| grows(w[0].value, w[1].value, params.growth_margin));
    let last = sups.pop().expect("at least one escalation level");
    if doubling {
        ConjValue::Diverged {
            witness: Rv::new(last.arg).expect("payoffs are finite"),
        }
    } else {
        ConjValue::Finite(last.value)
    }
}

/// `rho*(Q)` for a catalog measure.
pub fn conj(
    measure: &RiskMeasure,
    space: &FiniteProbSpace,
    q: &ProbMeasure,
    params: &ConjParams,
) -> Result<ConjValue> {
    measure.validate(space)?;
    space.check_dim(q.len())?;
    params.validate()?;
    let gain = |x: &[f64]| {
        let ex: f64 = q.weights().iter().zip(x).map(|(w, v)| w * v).sum();
        ex - measure.eval_values(space, x)
    };
    Ok(conjugate_of(&gain, space.dim(), params))
}

/// The simplex lattice with step `1/resolution`, preceded by the reference
/// measure (deduplicated). Vertices belong to the lattice. Lexicographic
/// composition order makes the grid deterministic.
pub fn simplex_grid(space: &FiniteProbSpace, resolution: usize) -> Vec<ProbMeasure> {
    let d = space.dim();
    let mut grid = vec![space.reference_measure()];
    let mut counts = vec![0usize; d];
    fn fill(
        grid: &mut Vec<ProbMeasure>,
        counts: &mut Vec<usize>,
        axis: usize,
        remaining: usize,
        resolution: usize,
        reference: &ProbMeasure,
    ) {
        let d = counts.len();
        if axis == d - 1 {
            counts[axis] = remaining;
            let q = ProbMeasure::new(
                counts
                    .iter()
                    .map(|&c| c as f64 / resolution as f64)
                    .collect(),
            )
            .expect("lattice points are probability measures");
            if !q.approx_eq(reference, 1e-12) {
                grid.push(q);
            }
            return;
        }
        for c in (0..=remaining).rev() {
            counts[axis] = c;
            fill(grid, counts, axis + 1, remaining - c, resolution, reference);
        }
    }
    let reference = space.reference_measure();
    fill(&mut grid, &mut counts, 0, resolution, resolution, &reference);
    grid
}

/// Sampled conjugate values over a simplex grid.
#[derive(Debug, Clone)]
pub struct ConjugateTable {
    grid: Vec<ProbMeasure>,
    values: Vec<ConjValue>,
    box_bound: f64,
    grid_step: f64,
}

impl ConjugateTable {
    pub fn grid(&self) -> &[ProbMeasure] {
        &self.grid
    }

    pub fn values(&self) -> &[ConjValue] {
        &self.values
    }

    pub fn box_bound(&self) -> f64 {
        self.box_bound
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grids_match(&self, other: &ConjugateTable) -> bool {
        self.grid.len() == other.grid.len()
            && self
                .grid
                .iter()
                .zip(&other.grid)
                .all(|(a, b)| a.approx_eq(b, 1e-12))
    }

    /// Look up the entry at a dual point, if it is on the grid.
    pub fn value_at(&self, q: &ProbMeasure) -> Option<&ConjValue> {
        self.grid
            .iter()
            .position(|g| g.approx_eq(q, 1e-12))
            .map(|i| &self.values[i])
    }

    /// `rho**(X)` restricted to the table: `sup_Q ( E^Q(X) − rho*(Q) )` over
    /// finite entries. Diverged entries contribute `−∞`; if every entry
    /// diverged the biconjugate is identically `−∞`.
    pub fn biconjugate(&self, x: &Rv) -> Result<Value> {
        let mut best: Option<f64> = None;
        for (q, v) in self.grid.iter().zip(&self.values) {
            if let ConjValue::Finite(c) = v {
                let candidate = q.expectation(x)? - c;
                if best.is_none_or(|b| candidate > b) {
                    best = Some(candidate);
                }
            }
        }
        Ok(best.map_or(Value::MinusInf, Value::Finite))
    }
}

/// Tabulate `rho*` over the simplex grid. Dual points evaluate in parallel;
/// the table is assembled by grid index, so the result is deterministic.
pub fn conj_table(
    measure: &RiskMeasure,
    space: &FiniteProbSpace,
    params: &ConjParams,
) -> Result<ConjugateTable> {
    measure.validate(space)?;
    params.validate()?;
    let resolution = params.resolution_for(space.dim());
    let grid = simplex_grid(space, resolution);
    let values: Vec<ConjValue> = grid
        .par_iter()
        .map(|q| {
            let gain = |x: &[f64]| {
                let ex: f64 = q.weights().iter().zip(x).map(|(w, v)| w * v).sum();
                ex - measure.eval_values(space, x)
            };
            conjugate_of(&gain, space.dim(), params)
        })
        .collect();
    Ok(ConjugateTable {
        grid,
        values,
        box_bound: *params.levels.last().unwrap(),
        grid_step: 1.0 / resolution as f64,
    })
}

/// Tabulate the conjugate of an arbitrary cash-additive cost function
/// (typically a solver-computed value function, which is expensive to
/// evaluate). The cost is tabulated once per escalation level on the
/// min-coordinate-zero shell and shared across every dual point; no
/// per-point polish is applied, so accuracy is governed by the shell
/// resolution.
pub fn conj_table_of_cost<F>(
    cost: F,
    space: &FiniteProbSpace,
    params: &ConjParams,
    shell_points: &[usize],
) -> Result<ConjugateTable>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    params.validate()?;
    if shell_points.len() != params.levels.len() {
        return Err(Error::InvalidParameter(
            "one shell resolution per escalation level is required".into(),
        ));
    }
    let d = space.dim();
    let resolution = params.resolution_for(d);
    let grid = simplex_grid(space, resolution);

    // Tabulate the cost on each level's shell once.
    let mut shells: Vec<Vec<(Vec<f64>, f64)>> = Vec::with_capacity(params.levels.len());
    for (&bound, &points) in params.levels.iter().zip(shell_points) {
        let step = bound / (points - 1) as f64;
        let mut args = Vec::new();
        let mut idx = vec![0usize; d];
        'outer: loop {
            if idx.contains(&0) {
                args.push(idx.iter().map(|&i| i as f64 * step).collect::<Vec<f64>>());
            }
            let mut k = 0;
            loop {
                if k == d {
                    break 'outer;
                }
                idx[k] += 1;
                if idx[k] < points {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
        let evaluated: Vec<(Vec<f64>, f64)> = args
            .into_par_iter()
            .map(|x| {
                let c = cost(&x);
                (x, c)
            })
            .collect();
        shells.push(evaluated);
    }

    let values: Vec<ConjValue> = grid
        .par_iter()
        .map(|q| {
            let mut sups: Vec<SupPoint> = Vec::with_capacity(shells.len());
            for shell in &shells {
                let mut best = SupPoint {
                    value: f64::NEG_INFINITY,
                    arg: vec![0.0; d],
                };
                // Seed with the previous level's argmax (its cost is known).
                if let Some(prev) = sups.last() {
                    best = prev.clone();
                }
                for (x, c) in shell {
                    let ex: f64 = q.weights().iter().zip(x).map(|(w, v)| w * v).sum();
                    let value = ex - c;
                    if value > best.value {
                        best = SupPoint {
                            value,
                            arg: x.clone(),
                        };
                    }
                }
                sups.push(best);
            }
            let last = sups.last().unwrap().clone();
            if last.value > params.divergence_threshold
                || (sups.len() >= 2
                    && sups
                        .windows(2)
                        .all(|w| grows(w[0].value, w[1].value, params.growth_margin)))
            {
                ConjValue::Diverged {
                    witness: Rv::new(last.arg).expect("shell payoffs are finite"),
                }
            } else {
                ConjValue::Finite(last.value)
            }
        })
        .collect();

    Ok(ConjugateTable {
        grid,
        values,
        box_bound: *params.levels.last().unwrap(),
        grid_step: 1.0 / resolution as f64,
    })
}

/// A finite-conjugate dual point.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteConjugateWitness {
    pub q: ProbMeasure,
    pub value: f64,
}

/// Verdict of the conjugate-degeneracy scan. Exactly one of `witness` /
/// `escape_direction` is populated.
#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyVerdict {
    pub degenerate: bool,
    pub witness: Option<FiniteConjugateWitness>,
    pub escape_direction: Option<Rv>,
}

/// Scan the simplex grid for a finite conjugate value. Degenerate means
/// every dual point diverged at every escalation level. The reference
/// measure is scanned first, so non-degenerate verdicts witness at the
/// reference whenever its conjugate is finite. `budget` caps the number of
/// objective evaluations; exhausting it before classification is an error,
/// never a silent verdict.
pub fn detect_degeneracy(
    measure: &RiskMeasure,
    space: &FiniteProbSpace,
    params: &ConjParams,
    budget: Option<u64>,
) -> Result<DegeneracyVerdict> {
    measure.validate(space)?;
    params.validate()?;
    let resolution = params.resolution_for(space.dim());
    let grid = simplex_grid(space, resolution);
    let spent = std::cell::Cell::new(0u64);
    let mut first_escape: Option<Rv> = None;
    for q in &grid {
        if let Some(limit) = budget {
            if spent.get() >= limit {
                return Err(Error::Inconclusive(format!(
                    "evaluation budget {limit} exhausted before the grid scan finished"
                )));
            }
        }
        let gain = |x: &[f64]| {
            spent.set(spent.get() + 1);
            let ex: f64 = q.weights().iter().zip(x).map(|(w, v)| w * v).sum();
            ex - measure.eval_values(space, x)
        };
        match conjugate_of(&gain, space.dim(), params) {
            ConjValue::Finite(value) => {
                return Ok(DegeneracyVerdict {
                    degenerate: false,
                    witness: Some(FiniteConjugateWitness {
                        q: q.clone(),
                        value,
                    }),
                    escape_direction: None,
                });
            }
            ConjValue::Diverged { witness } => {
                if first_escape.is_none() {
                    first_escape = Some(witness);
                }
            }
        }
    }
    Ok(DegeneracyVerdict {
        degenerate: true,
        witness: None,
        escape_direction: first_escape,
    })
}

/// The affine minorant `X ↦ E^Q(X) − offset` certified by per-agent
/// conjugate bounds.
#[derive(Debug, Clone, Serialize)]
pub struct AffineMinorant {
    pub q: ProbMeasure,
    pub offset: f64,
}

impl AffineMinorant {
    pub fn lower_bound(&self, x: &Rv) -> Result<f64> {
        Ok(self.q.expectation(x)? - self.offset)
    }
}

/// Verify `rho_i*(Q) <= xi_i` numerically for each agent and return the
/// certified minorant `E^Q(·) − Σ w_i xi_i` for the population value
/// function. Fails with `CertificateInvalid` when some conjugate diverges
/// or exceeds its bound.
pub fn finiteness_certificate(
    pop: &AgentPopulation,
    space: &FiniteProbSpace,
    q: &ProbMeasure,
    xi: &[f64],
    params: &ConjParams,
) -> Result<AffineMinorant> {
    if xi.len() != pop.agents().len() {
        return Err(Error::InvalidParameter(format!(
            "expected {} conjugate bounds, got {}",
            pop.agents().len(),
            xi.len()
        )));
    }
    for (i, agent) in pop.agents().iter().enumerate() {
        match conj(&agent.measure, space, q, params)? {
            ConjValue::Diverged { .. } => {
                return Err(Error::CertificateInvalid(format!(
                    "agent {i}: conjugate diverges at the proposed dual point"
                )));
            }
            ConjValue::Finite(v) => {
                if v > xi[i] + CERTIFICATE_TOL {
                    return Err(Error::CertificateInvalid(format!(
                        "agent {i}: conjugate value {v} exceeds the bound {}",
                        xi[i]
                    )));
                }
            }
        }
    }
    let offset = pop
        .agents()
        .iter()
        .zip(xi)
        .map(|(a, &b)| a.weight * b)
        .sum();
    Ok(AffineMinorant {
        q: q.clone(),
        offset,
    })
}
