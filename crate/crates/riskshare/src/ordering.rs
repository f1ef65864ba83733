//! Increasing-convex stochastic dominance, consistency, and dilatation
//! monotonicity checks on finite spaces.
//!
//! The increasing-convex order between finitely supported laws is certified
//! by stop-loss transforms evaluated at the data points themselves (plus a
//! below-minimum sentinel reducing to a mean comparison); for
//! piecewise-linear test functions this finite family is sufficient.
//! Dilatation monotonicity and consistency are each checked as a one-sided
//! property — their equivalence presumes a non-atomic reference, which a
//! finite space cannot satisfy, so the full equivalence is never asserted.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::probspace::{
    cond_expectation, enumerate_partitions, FiniteProbSpace, PartitionAlgebra, ProbMeasure, Rv,
};
use crate::riskmeasures::RiskMeasure;
use crate::{Error, Result};

/// Slack for stop-loss comparisons.
pub const ICX_TOL: f64 = 1e-12;
/// Slack for risk-measure comparisons in the dilatation/consistency checks.
pub const ORDER_TOL: f64 = 1e-9;

/// Verdict of an increasing-convex dominance check. A failing threshold is
/// recorded exactly when dominance fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceVerdict {
    pub dominated: bool,
    pub failing_threshold: Option<f64>,
}

/// `E^Q(X − t)^+` at a fixed threshold.
fn stop_loss(q: &ProbMeasure, x: &Rv, t: f64) -> f64 {
    q.weights()
        .iter()
        .zip(x.values())
        .map(|(w, v)| w * (v - t).max(0.0))
        .sum()
}

/// True iff `X` is dominated by `Y` in the increasing-convex order under
/// `Q`: every stop-loss transform of `X` lies below that of `Y`. Thresholds
/// run over the merged value set plus a below-minimum sentinel.
pub fn icx_dominates(q: &ProbMeasure, x: &Rv, y: &Rv) -> Result<DominanceVerdict> {
    if x.len() != y.len() || q.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            got: if x.len() != q.len() { x.len() } else { y.len() },
        });
    }
    let mut thresholds: Vec<f64> = x
        .values()
        .iter()
        .chain(y.values())
        .copied()
        .collect();
    let sentinel = thresholds.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    thresholds.push(sentinel);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    for &t in &thresholds {
        if stop_loss(q, x, t) > stop_loss(q, y, t) + ICX_TOL {
            return Ok(DominanceVerdict {
                dominated: false,
                failing_threshold: Some(t),
            });
        }
    }
    Ok(DominanceVerdict {
        dominated: true,
        failing_threshold: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DilatationCounterexample {
    pub x: Rv,
    pub partition: PartitionAlgebra,
    pub conditioned_risk: f64,
    pub direct_risk: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DilatationReport {
    pub pass: bool,
    pub payoffs_checked: usize,
    pub partitions_checked: usize,
    pub counterexample: Option<DilatationCounterexample>,
}

/// The deterministic payoff probed before any random sampling: the whole
/// loss concentrated on the last atom, scaled to keep the mean at one.
fn canonical_probe(d: usize) -> Rv {
    let mut v = vec![0.0; d];
    v[d - 1] = d as f64;
    Rv::new(v).unwrap()
}

/// Check `rho(E^Q(X | G)) <= rho(X)` for every partition of the space on a
/// canonical probe plus seeded random payoffs. Exhaustive over partitions,
/// so the space is capped at six atoms.
pub fn dilatation_monotone_check(
    measure: &RiskMeasure,
    space: &FiniteProbSpace,
    q: &ProbMeasure,
    samples: usize,
    seed: u64,
) -> Result<DilatationReport> {
    measure.validate(space)?;
    space.check_dim(q.len())?;
    let d = space.dim();
    if d > 6 {
        return Err(Error::BudgetExceeded(format!(
            "partition enumeration is limited to d <= 6, got {d}"
        )));
    }
    let partitions = enumerate_partitions(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut payoffs = vec![canonical_probe(d)];
    for _ in 0..samples {
        payoffs.push(Rv::new((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect())?);
    }
    for x in &payoffs {
        let direct = measure.eval_values(space, x.values());
        for g in &partitions {
            let conditioned = cond_expectation(space, q, x, g)?.values;
            let contracted = measure.eval_values(space, conditioned.values());
            if contracted > direct + ORDER_TOL {
                return Ok(DilatationReport {
                    pass: false,
                    payoffs_checked: payoffs.len(),
                    partitions_checked: partitions.len(),
                    counterexample: Some(DilatationCounterexample {
                        x: x.clone(),
                        partition: g.clone(),
                        conditioned_risk: contracted,
                        direct_risk: direct,
                    }),
                });
            }
        }
    }
    Ok(DilatationReport {
        pass: true,
        payoffs_checked: payoffs.len(),
        partitions_checked: partitions.len(),
        counterexample: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyCounterexample {
    pub x: Rv,
    pub y: Rv,
    pub rho_x: f64,
    pub rho_y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub pass: bool,
    pub pairs_checked: usize,
    pub counterexample: Option<ConsistencyCounterexample>,
}

/// Spot-check preservation of the increasing-convex order: dominated pairs
/// are generated by conditional-expectation contractions and downward mean
/// shifts, and the measure must rank them accordingly.
pub fn consistency_spot_check(
    measure: &RiskMeasure,
    space: &FiniteProbSpace,
    q: &ProbMeasure,
    pairs: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    measure.validate(space)?;
    space.check_dim(q.len())?;
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generated: Vec<(Rv, Rv)> = Vec::with_capacity(pairs + 1);
    // Canonical contraction first: the full-mean flattening of the probe.
    let probe = canonical_probe(d);
    let flattened = cond_expectation(space, q, &probe, &PartitionAlgebra::trivial(d))?.values;
    generated.push((flattened, probe));
    for _ in 0..pairs {
        let y = Rv::new((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect())?;
        // random partition via a restricted growth string
        let mut rgs = vec![0usize; d];
        let mut max_block = 0usize;
        for slot in rgs.iter_mut().skip(1) {
            *slot = rng.gen_range(0..=max_block + 1);
            max_block = max_block.max(*slot);
        }
        let mut blocks = vec![Vec::new(); max_block + 1];
        for (atom, &b) in rgs.iter().enumerate() {
            blocks[b].push(atom);
        }
        let g = PartitionAlgebra::new(d, blocks)?;
        let mut x = cond_expectation(space, q, &y, &g)?.values;
        if rng.gen_bool(0.5) {
            x = x.add_scalar(-rng.gen_range(0.0..1.0));
        }
        generated.push((x, y));
    }
    for (x, y) in &generated {
        debug_assert!(icx_dominates(q, x, y)?.dominated);
        let rho_x = measure.eval_values(space, x.values());
        let rho_y = measure.eval_values(space, y.values());
        if rho_x > rho_y + ORDER_TOL {
            return Ok(ConsistencyReport {
                pass: false,
                pairs_checked: generated.len(),
                counterexample: Some(ConsistencyCounterexample {
                    x: x.clone(),
                    y: y.clone(),
                    rho_x,
                    rho_y,
                }),
            });
        }
    }
    Ok(ConsistencyReport {
        pass: true,
        pairs_checked: generated.len(),
        counterexample: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform4() -> (FiniteProbSpace, ProbMeasure) {
        let s = FiniteProbSpace::uniform(4);
        let q = s.reference_measure();
        (s, q)
    }

    #[test]
    fn conditional_expectations_are_dominated() {
        let (s, q) = uniform4();
        let y = Rv::new(vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        for g in enumerate_partitions(4) {
            let x = cond_expectation(&s, &q, &y, &g).unwrap().values;
            let verdict = icx_dominates(&q, &x, &y).unwrap();
            assert!(verdict.dominated, "contraction failed on {g:?}");
        }
    }

    #[test]
    fn stop_loss_spec_example() {
        let (_, q) = uniform4();
        let x = Rv::constant(4, 1.0);
        let y = Rv::new(vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        // E(X − 0.5)+ = 0.5 <= E(Y − 0.5)+ = 0.875
        assert!(stop_loss(&q, &x, 0.5) <= stop_loss(&q, &y, 0.5));
        assert!(icx_dominates(&q, &x, &y).unwrap().dominated);
    }

    #[test]
    fn mean_increase_breaks_dominance_below_the_minimum() {
        let (_, q) = uniform4();
        let y = Rv::new(vec![1.0, 2.0, 0.0, -1.0]).unwrap();
        let x = y.add_scalar(1.0);
        let verdict = icx_dominates(&q, &x, &y).unwrap();
        assert!(!verdict.dominated);
        let t = verdict.failing_threshold.unwrap();
        assert!(t < y.min(), "failing threshold {t} not below the minimum");
    }

    #[test]
    fn dominance_is_reflexive_and_transitive_on_fixtures() {
        let (s, q) = uniform4();
        let y = Rv::new(vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        assert!(icx_dominates(&q, &y, &y).unwrap().dominated);
        let g1 = PartitionAlgebra::new(4, vec![vec![0, 1], vec![2], vec![3]]).unwrap();
        let mid = cond_expectation(&s, &q, &y, &g1).unwrap().values;
        let bottom = cond_expectation(&s, &q, &mid, &PartitionAlgebra::trivial(4))
            .unwrap()
            .values;
        assert!(icx_dominates(&q, &mid, &y).unwrap().dominated);
        assert!(icx_dominates(&q, &bottom, &mid).unwrap().dominated);
        assert!(icx_dominates(&q, &bottom, &y).unwrap().dominated);
    }

    #[test]
    fn constant_shifts_preserve_the_verdict() {
        let (_, q) = uniform4();
        let x = Rv::new(vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let y = Rv::new(vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        for c in [-3.0, 0.0, 2.5] {
            let v = icx_dominates(&q, &x.add_scalar(c), &y.add_scalar(c)).unwrap();
            assert!(v.dominated);
            let w = icx_dominates(&q, &y.add_scalar(c + 1.0), &y.add_scalar(c)).unwrap();
            assert!(!w.dominated);
        }
    }

    #[test]
    fn es_is_dilatation_monotone_under_the_reference() {
        let (s, q) = uniform4();
        let report =
            dilatation_monotone_check(&RiskMeasure::es(0.5), &s, &q, 1000, 42).unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.partitions_checked, 15);
    }

    #[test]
    fn var_fails_dilatation_with_the_flattened_spike() {
        let (s, q) = uniform4();
        let report =
            dilatation_monotone_check(&RiskMeasure::var(0.25), &s, &q, 1000, 42).unwrap();
        assert!(!report.pass);
        let ce = report.counterexample.unwrap();
        assert_eq!(ce.x.values(), &[0.0, 0.0, 0.0, 4.0]);
        assert_eq!(ce.partition, PartitionAlgebra::trivial(4));
        assert_eq!(ce.direct_risk, 0.0);
        assert_eq!(ce.conditioned_risk, 1.0);
    }

    #[test]
    fn matched_expectation_is_dilatation_flat() {
        let s = FiniteProbSpace::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let q = ProbMeasure::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let spec = RiskMeasure::expectation(q.clone());
        let report = dilatation_monotone_check(&spec, &s, &q, 200, 7).unwrap();
        assert!(report.pass);
        // and the tower property makes it an equality on every partition
        let x = Rv::new(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        for g in enumerate_partitions(4) {
            let conditioned = cond_expectation(&s, &q, &x, &g).unwrap().values;
            let lhs = spec.evaluate(&s, &conditioned).unwrap();
            let rhs = spec.evaluate(&s, &x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn consistency_spot_checks() {
        let (s, q) = uniform4();
        let es = consistency_spot_check(&RiskMeasure::es(0.5), &s, &q, 500, 42).unwrap();
        assert!(es.pass, "{es:?}");

        let esssup = consistency_spot_check(&RiskMeasure::EssSup, &s, &q, 500, 42).unwrap();
        assert!(esssup.pass, "{esssup:?}");

        let var = consistency_spot_check(&RiskMeasure::var(0.25), &s, &q, 500, 42).unwrap();
        assert!(!var.pass);
        let ce = var.counterexample.unwrap();
        assert_eq!(ce.y.values(), &[0.0, 0.0, 0.0, 4.0]);
        assert_eq!(ce.x.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn exhaustive_dilatation_pass_implies_consistency_on_contraction_pairs() {
        // finite shadow of the equivalence, one direction only
        let (s, q) = uniform4();
        let candidates = [
            RiskMeasure::es(0.25),
            RiskMeasure::entropic(1.0),
            RiskMeasure::EssSup,
        ];
        for spec in candidates {
            let dil = dilatation_monotone_check(&spec, &s, &q, 300, 9).unwrap();
            assert!(dil.pass);
            let cons = consistency_spot_check(&spec, &s, &q, 300, 9).unwrap();
            assert!(cons.pass, "dilatation passed but consistency failed for {spec:?}");
        }
    }

    #[test]
    fn dimension_guard() {
        let s = FiniteProbSpace::uniform(7);
        let q = s.reference_measure();
        assert!(matches!(
            dilatation_monotone_check(&RiskMeasure::EssSup, &s, &q, 10, 0),
            Err(Error::BudgetExceeded(_))
        ));
    }
}
