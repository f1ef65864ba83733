//! Numerical laboratory for optimal risk sharing on finite probability spaces.
//!
//! The crate provides:
//!
//! - [`probspace`]: finite probability spaces, payoff vectors, absolutely
//!   continuous measures, partition-generated sub-σ-algebras, and conditional
//!   expectation.
//! - [`riskmeasures`]: a catalog of monetary risk measures (value at risk,
//!   expected shortfall, entropic, Choquet/distortion, essential supremum,
//!   expectation, pointwise minima, scalings, constant shifts) with axiom
//!   checkers and acceptance-set membership.
//! - [`conjugate`]: numerical Fenchel conjugates and biconjugates over the
//!   probability simplex, divergence classification, conjugate-degeneracy
//!   detection, and affine finiteness certificates.
//! - [`infconv`]: weighted infimal convolutions (value functions) over finite
//!   agent populations — exact at small scale, heuristic beyond — with dual
//!   lower bounds, improperness probes, grouped convolutions, and
//!   partition-restricted solves.
//! - [`convexify`]: replication experiments measuring how the value function
//!   convexifies as the population grows, plus Minkowski-average
//!   nonconvexity of point clouds.
//! - [`ordering`]: increasing-convex stochastic dominance and
//!   dilatation-monotonicity / consistency checks.
//!
//! Sign convention: payoffs are losses, so `x >= 0` is a loss of magnitude
//! `x` and risk measures report capital requirements.

pub mod conjugate;
pub mod convexify;
mod error;
pub mod infconv;
pub mod ordering;
pub mod probspace;
pub mod riskmeasures;

pub use error::{Error, Result};
pub use probspace::{cond_expectation, FiniteProbSpace, PartitionAlgebra, ProbMeasure, Rv};
pub use riskmeasures::{Distortion, RiskMeasure};

/// An extended-real value. Improper value functions force a choice between
/// −∞/+∞/finite, so infinities are explicit variants rather than sentinel
/// floats.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Value {
    MinusInf,
    Finite(f64),
    PlusInf,
}

impl Value {
    pub fn finite(self) -> Option<f64> {
        match self {
            Value::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Value::Finite(_))
    }

    /// Total order: −∞ < finite < +∞, finite values by magnitude.
    pub fn total_cmp(self, other: Value) -> std::cmp::Ordering {
        use std::cmp::Ordering::*;
        use Value::*;
        match (self, other) {
            (MinusInf, MinusInf) | (PlusInf, PlusInf) => Equal,
            (MinusInf, _) | (_, PlusInf) => Less,
            (_, MinusInf) | (PlusInf, _) => Greater,
            (Finite(a), Finite(b)) => a.total_cmp(&b),
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::MinusInf => write!(f, "-inf"),
            Value::Finite(v) => write!(f, "{v}"),
            Value::PlusInf => write!(f, "+inf"),
        }
    }
}
