//! Catalog of monetary risk measures — convex and non-convex — with axiom
//! checkers and acceptance-set membership.
//!
//! Conventions (losses are positive):
//!
//! - `Var(beta)` is the left-continuous quantile `inf { x : P(X <= x) >= 1 - beta }`,
//!   evaluated by exact enumeration over sorted atoms, no interpolation.
//! - `Es(beta)` is the loss-tail average `(1/beta) ∫_0^beta Var_u(X) du`,
//!   evaluated exactly by sorting atoms and splitting the boundary atom
//!   fractionally. `Es(1)` is the plain expectation.
//! - `Entropic(theta)` is `(1/theta) · ln E[exp(theta X)]`.
//! - `Choquet(h)` integrates against the set function `ν(A) = h(P(A))` using
//!   the two-sided layer-cake extension, the unique cash-additive extension
//!   of the nonnegative-payoff definition when `h(1) = 1`.
//! - `Min` (pointwise minimum of two risk measures) is the canonical
//!   constructible non-convex risk measure with a non-degenerate conjugate.
//! - `Scaled(gamma, rho)` is `gamma · rho(X / gamma)`.
//! - `Shifted(c, rho)` is `rho(X) + c`.
//!
//! Continuity-in-probability properties (Fatou/Lebesgue) are automatic on
//! finite spaces and are documented rather than tested.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::probspace::{FiniteProbSpace, ProbMeasure, Rv};
use crate::{Error, Result};

/// Maximum nesting depth for `Min` combinations.
pub const MAX_MIN_DEPTH: usize = 16;

/// Float-dust guard when comparing cumulative probabilities to quantile
/// levels; does not change semantics on exactly representable masses.
const QUANTILE_TOL: f64 = 1e-12;

type Pairs = SmallVec<[(f64, f64); 8]>;

/// A piecewise-linear distortion function `h` on `[0, 1]` with `h(0) = 0`,
/// `h` nondecreasing and `h(1) <= 1`. The induced set function is
/// `ν(A) = h(P(A))`; the Choquet integral against it is cash-additive
/// exactly when `h(1) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct Distortion {
    breakpoints: Vec<(f64, f64)>,
}

impl Distortion {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidParameter(
                "distortion needs at least the breakpoints at t=0 and t=1".into(),
            ));
        }
        let first = breakpoints[0];
        let last = *breakpoints.last().unwrap();
        if first != (0.0, 0.0) {
            return Err(Error::InvalidParameter(
                "distortion must start at (0, 0)".into(),
            ));
        }
        if last.0 != 1.0 {
            return Err(Error::InvalidParameter(
                "distortion must end at t = 1".into(),
            ));
        }
        if last.1 > 1.0 + QUANTILE_TOL {
            return Err(Error::InvalidParameter("distortion must have h(1) <= 1".into()));
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(
                    "distortion breakpoints must have strictly increasing t".into(),
                ));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidParameter(
                    "distortion must be nondecreasing".into(),
                ));
            }
        }
        Ok(Self { breakpoints })
    }

    /// The distortion `h(x) = 2(x - 1/2)^+` from the degenerate Choquet
    /// example.
    pub fn two_sided_half() -> Self {
        Self::new(vec![(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)]).unwrap()
    }

    /// The identity distortion, recovering plain expectation.
    pub fn identity() -> Self {
        Self::new(vec![(0.0, 0.0), (1.0, 1.0)]).unwrap()
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Evaluate `h(t)` by linear interpolation, clamping `t` into `[0, 1]`.
    pub fn at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let pts = &self.breakpoints;
        let idx = pts.partition_point(|&(u, _)| u <= t);
        if idx == 0 {
            return pts[0].1;
        }
        if idx == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (t0, h0) = pts[idx - 1];
        let (t1, h1) = pts[idx];
        h0 + (h1 - h0) * (t - t0) / (t1 - t0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for Distortion {
    type Error = Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Distortion> for Vec<(f64, f64)> {
    fn from(d: Distortion) -> Self {
        d.breakpoints
    }
}

/// A monetary risk measure from the catalog. Specs are immutable and
/// evaluation is pure, so sweeps can run in parallel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RiskMeasure {
    /// Value at risk at level `beta ∈ [0, 1)`.
    Var { beta: f64 },
    /// Expected shortfall (average of the worst `beta`-tail), `beta ∈ (0, 1]`.
    Es { beta: f64 },
    /// Entropic risk with parameter `theta > 0`.
    Entropic { theta: f64 },
    /// Choquet integral against `ν = h ∘ P`.
    Choquet { distortion: Distortion },
    /// Essential supremum (worst case over atoms of positive mass).
    EssSup,
    /// Expectation under a fixed absolutely continuous measure.
    Expectation { q: ProbMeasure },
    /// Pointwise minimum of two risk measures; monotone and cash-additive
    /// but generally non-convex.
    Min {
        left: Box<RiskMeasure>,
        right: Box<RiskMeasure>,
    },
    /// `gamma · rho(X / gamma)` for `gamma > 0`.
    Scaled {
        gamma: f64,
        inner: Box<RiskMeasure>,
    },
    /// `rho(X) + offset`.
    Shifted {
        offset: f64,
        inner: Box<RiskMeasure>,
    },
}

impl RiskMeasure {
    pub fn var(beta: f64) -> Self {
        RiskMeasure::Var { beta }
    }

    pub fn es(beta: f64) -> Self {
        RiskMeasure::Es { beta }
    }

    pub fn entropic(theta: f64) -> Self {
        RiskMeasure::Entropic { theta }
    }

    pub fn choquet(distortion: Distortion) -> Self {
        RiskMeasure::Choquet { distortion }
    }

    pub fn expectation(q: ProbMeasure) -> Self {
        RiskMeasure::Expectation { q }
    }

    pub fn min_of(left: RiskMeasure, right: RiskMeasure) -> Self {
        RiskMeasure::Min {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn scaled(gamma: f64, inner: RiskMeasure) -> Self {
        RiskMeasure::Scaled {
            gamma,
            inner: Box::new(inner),
        }
    }

    pub fn shifted(offset: f64, inner: RiskMeasure) -> Self {
        RiskMeasure::Shifted {
            offset,
            inner: Box::new(inner),
        }
    }

    fn min_depth(&self) -> usize {
        match self {
            RiskMeasure::Min { left, right } => 1 + left.min_depth().max(right.min_depth()),
            RiskMeasure::Scaled { inner, .. } | RiskMeasure::Shifted { inner, .. } => {
                inner.min_depth()
            }
            _ => 0,
        }
    }

    /// Check parameter ranges and dimensional compatibility with `space`.
    pub fn validate(&self, space: &FiniteProbSpace) -> Result<()> {
        if self.min_depth() > MAX_MIN_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "min-combination nesting exceeds the depth limit {MAX_MIN_DEPTH}"
            )));
        }
        self.validate_inner(space)
    }

    fn validate_inner(&self, space: &FiniteProbSpace) -> Result<()> {
        match self {
            RiskMeasure::Var { beta } => {
                if !(0.0..1.0).contains(beta) {
                    return Err(Error::InvalidParameter(format!(
                        "value-at-risk level {beta} outside [0, 1)"
                    )));
                }
            }
            RiskMeasure::Es { beta } => {
                if !(*beta > 0.0 && *beta <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "expected-shortfall level {beta} outside (0, 1]"
                    )));
                }
            }
            RiskMeasure::Entropic { theta } => {
                if !(*theta > 0.0 && theta.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "entropic parameter {theta} must be positive"
                    )));
                }
            }
            RiskMeasure::Choquet { .. } | RiskMeasure::EssSup => {}
            RiskMeasure::Expectation { q } => {
                space.check_dim(q.len())?;
            }
            RiskMeasure::Min { left, right } => {
                left.validate_inner(space)?;
                right.validate_inner(space)?;
            }
            RiskMeasure::Scaled { gamma, inner } => {
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "scale factor {gamma} must be positive"
                    )));
                }
                inner.validate_inner(space)?;
            }
            RiskMeasure::Shifted { offset, inner } => {
                if !offset.is_finite() {
                    return Err(Error::InvalidParameter("shift offset must be finite".into()));
                }
                inner.validate_inner(space)?;
            }
        }
        Ok(())
    }

    /// Evaluate the capital requirement `rho(X)`.
    pub fn evaluate(&self, space: &FiniteProbSpace, x: &Rv) -> Result<f64> {
        self.validate(space)?;
        space.check_dim(x.len())?;
        Ok(self.eval_values(space, x.values()))
    }

    /// Evaluation fast path for solver loops. The measure must have been
    /// validated against `space` and `values.len()` must equal `space.dim()`.
    pub fn eval_values(&self, space: &FiniteProbSpace, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), space.dim());
        match self {
            RiskMeasure::Var { beta } => var_at(space, values, *beta),
            RiskMeasure::Es { beta } => es_at(space, values, *beta),
            RiskMeasure::Entropic { theta } => entropic_at(space, values, *theta),
            RiskMeasure::Choquet { distortion } => choquet_at(space, values, distortion),
            RiskMeasure::EssSup => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            RiskMeasure::Expectation { q } => q
                .weights()
                .iter()
                .zip(values)
                .map(|(w, v)| w * v)
                .sum(),
            RiskMeasure::Min { left, right } => left
                .eval_values(space, values)
                .min(right.eval_values(space, values)),
            RiskMeasure::Scaled { gamma, inner } => {
                let scaled: SmallVec<[f64; 8]> = values.iter().map(|v| v / gamma).collect();
                gamma * inner.eval_values(space, &scaled)
            }
            RiskMeasure::Shifted { offset, inner } => offset + inner.eval_values(space, values),
        }
    }
}

fn sorted_pairs(space: &FiniteProbSpace, values: &[f64]) -> Pairs {
    let mut pairs: Pairs = values
        .iter()
        .copied()
        .zip(space.probs().iter().copied())
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// `inf { x : P(X <= x) >= 1 - beta }` by enumeration over sorted atoms.
fn var_at(space: &FiniteProbSpace, values: &[f64], beta: f64) -> f64 {
    let pairs = sorted_pairs(space, values);
    let need = 1.0 - beta;
    let mut cum = 0.0;
    for &(v, p) in &pairs {
        cum += p;
        if cum >= need - QUANTILE_TOL {
            return v;
        }
    }
    pairs.last().unwrap().0
}

/// `(1/beta) ∫_0^beta Var_u(X) du`: average of the worst `beta`-tail, with
/// the boundary atom split fractionally.
fn es_at(space: &FiniteProbSpace, values: &[f64], beta: f64) -> f64 {
    let mut pairs = sorted_pairs(space, values);
    pairs.reverse();
    let mut remaining = beta;
    let mut acc = 0.0;
    for &(v, p) in &pairs {
        let take = p.min(remaining);
        acc += take * v;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    acc / beta
}

fn entropic_at(space: &FiniteProbSpace, values: &[f64], theta: f64) -> f64 {
    // log-sum-exp with a shift so large losses do not overflow.
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = space
        .probs()
        .iter()
        .zip(values)
        .map(|(p, v)| p * ((v - m) * theta).exp())
        .sum();
    m + sum.ln() / theta
}

/// Two-sided layer cake in closed form over the finitely many layers:
/// `C(X) = h(1)·v_(0) + Σ_j (v_(j) − v_(j−1)) · h(P(X >= v_(j)))`.
fn choquet_at(space: &FiniteProbSpace, values: &[f64], h: &Distortion) -> f64 {
    let pairs = sorted_pairs(space, values);
    let n = pairs.len();
    // suffix[i] = P(X >= v_(i)) when i is the first index of its layer.
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + pairs[i].1;
    }
    let mut c = h.at(1.0) * pairs[0].0;
    for i in 1..n {
        let gap = pairs[i].0 - pairs[i - 1].0;
        if gap > 0.0 {
            c += gap * h.at(suffix[i]);
        }
    }
    c
}

/// True iff `rho(X) <= tol`, i.e. `X` belongs to the acceptance set up to
/// the stated slack.
pub fn acceptance_membership(
    measure: &RiskMeasure,
    space: &FiniteProbSpace,
    x: &Rv,
    tol: f64,
) -> Result<bool> {
    Ok(measure.evaluate(space, x)? <= tol)
}

/// Outcome of a randomized axiom check. Failures carry witnesses.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub samples: usize,
    pub monotonicity_ok: bool,
    pub monotonicity_witness: Option<MonotonicityWitness>,
    pub cash_additivity_ok: bool,
    pub cash_witness: Option<CashWitness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityWitness {
    pub x: Rv,
    pub y: Rv,
    pub rho_x: f64,
    pub rho_y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CashWitness {
    pub x: Rv,
    pub shift: f64,
    pub rho_x: f64,
    pub rho_shifted: f64,
}

impl AxiomReport {
    pub fn is_pass(&self) -> bool {
        self.monotonicity_ok && self.cash_additivity_ok
    }
}

/// Tolerances used by [`check_axioms`].
pub const MONOTONICITY_TOL: f64 = 1e-12;
pub const CASH_ADDITIVITY_TOL: f64 = 1e-9;

/// Property-check monotonicity and cash additivity on seeded random pairs.
pub fn check_axioms(
    measure: &RiskMeasure,
    space: &FiniteProbSpace,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    measure.validate(space)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    Ok(check_axioms_fn(
        space,
        |v| measure.eval_values(space, v),
        samples,
        seed,
    ))
}

/// Closure-driven core of [`check_axioms`], so deliberately broken
/// functionals can be exercised in tests without entering the catalog.
fn check_axioms_fn<F: Fn(&[f64]) -> f64>(
    space: &FiniteProbSpace,
    rho: F,
    samples: usize,
    seed: u64,
) -> AxiomReport {
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AxiomReport {
        samples,
        monotonicity_ok: true,
        monotonicity_witness: None,
        cash_additivity_ok: true,
        cash_witness: None,
    };
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let bump: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..5.0)).collect();
        let y: Vec<f64> = x.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let rho_x = rho(&x);
        if report.monotonicity_ok {
            let rho_y = rho(&y);
            if rho_x > rho_y + MONOTONICITY_TOL {
                report.monotonicity_ok = false;
                report.monotonicity_witness = Some(MonotonicityWitness {
                    x: Rv::new(x.clone()).unwrap(),
                    y: Rv::new(y).unwrap(),
                    rho_x,
                    rho_y,
                });
            }
        }
        if report.cash_additivity_ok {
            let c = rng.gen_range(-10.0..10.0);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let rho_shifted = rho(&shifted);
            if (rho_shifted - rho_x - c).abs() > CASH_ADDITIVITY_TOL {
                report.cash_additivity_ok = false;
                report.cash_witness = Some(CashWitness {
                    x: Rv::new(x).unwrap(),
                    shift: c,
                    rho_x,
                    rho_shifted,
                });
            }
        }
        if !report.monotonicity_ok && !report.cash_additivity_ok {
            break;
        }
    }
    report
}
