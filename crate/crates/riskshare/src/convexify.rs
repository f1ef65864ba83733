//! Replication experiments: how fast does the value function convexify as
//! one agent is replicated into `n` weighted copies?
//!
//! Reported quantities per `n`: the convexity violation of the replicated
//! value function along a payoff segment, and the duality gap against the
//! biconjugate floor computed by the conjugate module. The companion
//! geometric diagnostic is the nonconvexity of `n`-fold Minkowski averages
//! of a sampled acceptance set. Only raw decay and a fitted log-log slope
//! are reported, never a rate constant.

use serde::Serialize;

use crate::conjugate::{conj_table, ConjParams, ConjugateTable};
use crate::infconv::{solve, AgentPopulation, SolverParams};
use crate::probspace::{FiniteProbSpace, Rv};
use crate::riskmeasures::RiskMeasure;
use crate::{Error, Result, Value};

/// A replication experiment: base measure, replication counts, payoff
/// segment, and the interpolation grid.
#[derive(Debug, Clone)]
pub struct ReplicationExperiment {
    pub base: RiskMeasure,
    pub n_list: Vec<usize>,
    pub segment: (Rv, Rv),
    pub lambda_grid: Vec<f64>,
}

impl ReplicationExperiment {
    /// Default segment: indicator payoffs scaled to `[0, 2]` and their
    /// reversal, with the mandatory `{0, 0.5, 1}` included in the grid.
    pub fn with_default_segment(base: RiskMeasure, n_list: Vec<usize>, d: usize) -> Self {
        let up: Vec<f64> = (0..d).map(|k| 2.0 * k as f64 / (d - 1).max(1) as f64).collect();
        let down: Vec<f64> = up.iter().rev().copied().collect();
        Self {
            base,
            n_list,
            segment: (Rv::new(up).unwrap(), Rv::new(down).unwrap()),
            lambda_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }

    pub fn validate(&self, space: &FiniteProbSpace) -> Result<()> {
        self.base.validate(space)?;
        space.check_dim(self.segment.0.len())?;
        space.check_dim(self.segment.1.len())?;
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "replication counts must be strictly increasing".into(),
            ));
        }
        if self.n_list[0] == 0 {
            return Err(Error::InvalidParameter("replication needs n >= 1".into()));
        }
        for required in [0.0, 0.5, 1.0] {
            if !self
                .lambda_grid
                .iter()
                .any(|&l| (l - required).abs() <= 1e-12)
            {
                return Err(Error::InvalidParameter(format!(
                    "lambda grid must include {required}"
                )));
            }
        }
        Ok(())
    }

    pub fn point(&self, lambda: f64) -> Rv {
        self.segment
            .0
            .scale(lambda)
            .add(&self.segment.1.scale(1.0 - lambda))
    }
}

/// Value of the `n`-fold replication (weights `1/n`, WEIGHTED mode) at `X`.
/// `n = 1` is the plain evaluation.
pub fn replicated_value(
    base: &RiskMeasure,
    space: &FiniteProbSpace,
    n: usize,
    x: &Rv,
    params: &SolverParams,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("replication needs n >= 1".into()));
    }
    if n == 1 {
        return base.evaluate(space, x);
    }
    let pop = AgentPopulation::replicated(base.clone(), n)?;
    let out = solve(&pop, space, x, params)?;
    out.value.finite().ok_or_else(|| {
        Error::NonFinite(format!(
            "replicated value at n = {n} is not finite ({})",
            out.value
        ))
    })
}

/// `max_λ v(λX + (1−λ)Y) − [λ v(X) + (1−λ) v(Y)]`, floored at zero.
/// `values[i]` is the value at `lambdas[i]`; the grid must contain both
/// endpoints. Any non-finite input is an error — the convexification
/// statements presuppose a globally finite value function.
pub fn convexity_violation(values: &[Value], lambdas: &[f64]) -> Result<f64> {
    if values.len() != lambdas.len() {
        return Err(Error::InvalidParameter(
            "one value per lambda is required".into(),
        ));
    }
    let finite: Vec<f64> = values
        .iter()
        .map(|v| {
            v.finite().ok_or_else(|| {
                Error::NonFinite("convexity violation needs finite segment values".into())
            })
        })
        .collect::<Result<_>>()?;
    let at = |target: f64| -> Result<f64> {
        lambdas
            .iter()
            .position(|&l| (l - target).abs() <= 1e-12)
            .map(|i| finite[i])
            .ok_or_else(|| {
                Error::InvalidParameter(format!("lambda grid must include {target}"))
            })
    };
    let v1 = at(1.0)?;
    let v0 = at(0.0)?;
    let mut worst = 0.0f64;
    for (&l, &v) in lambdas.iter().zip(&finite) {
        worst = worst.max(v - (l * v1 + (1.0 - l) * v0));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayRow {
    pub n: usize,
    pub convexity_violation: f64,
    pub duality_gap: f64,
}

/// Fitted log-log slope of the violation decay, or `Saturated` when the
/// violations are all below tolerance (the convex case).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SlopeFit {
    Fitted(f64),
    Saturated,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub per_n: Vec<DecayRow>,
    pub fitted_slope: SlopeFit,
}

/// Least-squares slope of `log(violation)` against `log(n)` over the rows
/// whose violation exceeds `floor`.
pub fn decay_fit(rows: Vec<DecayRow>, floor: f64) -> Result<DecayReport> {
    if rows.len() < 3 {
        return Err(Error::InvalidParameter(
            "decay fit needs at least three replication counts".into(),
        ));
    }
    if rows.iter().any(|r| r.convexity_violation < 0.0) {
        return Err(Error::InvalidParameter(
            "violations must be nonnegative".into(),
        ));
    }
    let live: Vec<&DecayRow> = rows
        .iter()
        .filter(|r| r.convexity_violation > floor)
        .collect();
    if live.len() < 2 {
        return Ok(DecayReport {
            per_n: rows,
            fitted_slope: SlopeFit::Saturated,
        });
    }
    let xs: Vec<f64> = live.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = live.iter().map(|r| r.convexity_violation.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit(
            "replication counts do not vary".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    Ok(DecayReport {
        per_n: rows,
        fitted_slope: SlopeFit::Fitted(sxy / sxx),
    })
}

/// Violation floor below which the decay is considered saturated.
pub const SATURATION_FLOOR: f64 = 1e-7;

/// Everything a replication run produces: per-`n` segment values, the
/// biconjugate floor along the segment, and the decay report.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationOutcome {
    pub report: DecayReport,
    /// `values[i][j]` = replicated value at `n_list[i]`, `lambda_grid[j]`.
    pub values: Vec<Vec<f64>>,
    /// Biconjugate floor at each lambda grid point.
    pub floor: Vec<f64>,
}

/// Run a replication experiment end to end. The convexification floor is
/// the biconjugate from the conjugate module, so the base measure must not
/// be conjugately degenerate.
pub fn run_replication(
    experiment: &ReplicationExperiment,
    space: &FiniteProbSpace,
    solver: &SolverParams,
    conj: &ConjParams,
) -> Result<ReplicationOutcome> {
    experiment.validate(space)?;
    let table: ConjugateTable = conj_table(&experiment.base, space, conj)?;
    let mut floor = Vec::with_capacity(experiment.lambda_grid.len());
    for &lambda in &experiment.lambda_grid {
        let z = experiment.point(lambda);
        match table.biconjugate(&z)? {
            Value::Finite(b) => floor.push(b),
            other => {
                return Err(Error::NonFinite(format!(
                    "biconjugate floor is {other}; the base measure is conjugately degenerate"
                )))
            }
        }
    }
    let mut values = Vec::with_capacity(experiment.n_list.len());
    let mut rows = Vec::with_capacity(experiment.n_list.len());
    for &n in &experiment.n_list {
        let mut row_values = Vec::with_capacity(experiment.lambda_grid.len());
        for &lambda in &experiment.lambda_grid {
            let z = experiment.point(lambda);
            row_values.push(replicated_value(&experiment.base, space, n, &z, solver)?);
        }
        let violation = convexity_violation(
            &row_values.iter().map(|&v| Value::Finite(v)).collect::<Vec<_>>(),
            &experiment.lambda_grid,
        )?;
        let gap = row_values
            .iter()
            .zip(&floor)
            .map(|(v, f)| v - f)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(DecayRow {
            n,
            convexity_violation: violation,
            duality_gap: gap,
        });
        values.push(row_values);
    }
    let report = decay_fit(rows, SATURATION_FLOOR)?;
    Ok(ReplicationOutcome {
        report,
        values,
        floor,
    })
}

/// `n`-fold Minkowski average of a point cloud via pairwise-sum recursion.
/// `prune_cell > 0` keeps one representative per grid cell of that size
/// (the recursion is exponential without pruning); `0` disables pruning.
pub fn minkowski_average(
    cloud: &[Vec<f64>],
    n: usize,
    prune_cell: f64,
) -> Result<Vec<Vec<f64>>> {
    if cloud.is_empty() {
        return Err(Error::InvalidParameter("point cloud is empty".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("average needs n >= 1".into()));
    }
    let dim = cloud[0].len();
    if cloud.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: cloud.iter().find(|p| p.len() != dim).unwrap().len(),
        });
    }
    let prune = |mut points: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        points.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        points.dedup();
        if prune_cell > 0.0 {
            let mut seen = std::collections::BTreeSet::new();
            points.retain(|p| {
                let key: Vec<i64> = p.iter().map(|v| (v / prune_cell).round() as i64).collect();
                seen.insert(key)
            });
        }
        points
    };
    let combine = |a: &(Vec<Vec<f64>>, usize), b: &(Vec<Vec<f64>>, usize)| {
        let (pa, ma) = a;
        let (pb, mb) = b;
        let total = (ma + mb) as f64;
        let mut out = Vec::with_capacity(pa.len() * pb.len());
        for p in pa {
            for q in pb {
                out.push(
                    p.iter()
                        .zip(q)
                        .map(|(x, y)| (*ma as f64 * x + *mb as f64 * y) / total)
                        .collect(),
                );
            }
        }
        (prune(out), ma + mb)
    };
    let mut result: Option<(Vec<Vec<f64>>, usize)> = None;
    let mut base = (prune(cloud.to_vec()), 1usize);
    let mut k = n;
    loop {
        if k & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => combine(&r, &base),
            });
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        base = combine(&base, &base);
    }
    Ok(result.unwrap().0)
}

/// Sup-norm distance from `target` to the nearest cloud point, answered
/// through a cell hash with expanding Chebyshev rings.
struct NearestIndex<'a> {
    points: &'a [Vec<f64>],
    cell: f64,
    buckets: std::collections::HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> NearestIndex<'a> {
    fn new(points: &'a [Vec<f64>], cell: f64) -> Self {
        let mut buckets: std::collections::HashMap<Vec<i64>, Vec<usize>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key: Vec<i64> = p.iter().map(|v| (v / cell).round() as i64).collect();
            buckets.entry(key).or_default().push(i);
        }
        Self {
            points,
            cell,
            buckets,
        }
    }

    fn distance(&self, target: &[f64]) -> f64 {
        let d = target.len();
        let center: Vec<i64> = target.iter().map(|v| (v / self.cell).round() as i64).collect();
        let mut best = f64::INFINITY;
        let mut ring = 0i64;
        loop {
            // Any point in a farther ring is at least this far away.
            if best.is_finite() && (ring - 1).max(0) as f64 * self.cell > best {
                return best;
            }
            let mut offsets = vec![-ring; d];
            'ring: loop {
                if offsets.iter().any(|&o| o.abs() == ring) {
                    let key: Vec<i64> = center.iter().zip(&offsets).map(|(c, o)| c + o).collect();
                    if let Some(bucket) = self.buckets.get(&key) {
                        for &i in bucket {
                            let dist = self.points[i]
                                .iter()
                                .zip(target)
                                .map(|(a, b)| (a - b).abs())
                                .fold(0.0f64, f64::max);
                            best = best.min(dist);
                        }
                    }
                }
                let mut k = 0;
                loop {
                    if k == d {
                        break 'ring;
                    }
                    offsets[k] += 1;
                    if offsets[k] <= ring {
                        break;
                    }
                    offsets[k] = -ring;
                    k += 1;
                }
            }
            ring += 1;
        }
    }
}

/// Max over midpoints of two cloud points of the sup-norm distance from the
/// midpoint back to the cloud: zero exactly when the sampled set is
/// midpoint-convex at the sampling resolution.
pub fn minkowski_nonconvexity(cloud: &[Vec<f64>], n: usize, prune_cell: f64) -> Result<f64> {
    let averaged = minkowski_average(cloud, n, prune_cell)?;
    let spread = averaged
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let cell = if prune_cell > 0.0 {
        prune_cell
    } else {
        (spread / 8.0).max(1e-9)
    };
    let index = NearestIndex::new(&averaged, cell);
    let mut worst = 0.0f64;
    let mut mid = vec![0.0; averaged[0].len()];
    for i in 0..averaged.len() {
        for j in i..averaged.len() {
            for (m, (a, b)) in mid.iter_mut().zip(averaged[i].iter().zip(&averaged[j])) {
                *m = 0.5 * (a + b);
            }
            worst = worst.max(index.distance(&mid));
        }
    }
    Ok(worst)
}
