//! Finite probability spaces, payoff vectors, absolutely continuous
//! measures, partition-generated sub-σ-algebras, and conditional expectation.
//!
//! The atom probabilities of a [`FiniteProbSpace`] are required to be
//! strictly positive, so every [`ProbMeasure`] on the same atoms is
//! automatically absolutely continuous and no null-set bookkeeping is needed.
//! All values are immutable after construction and every operation is pure.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used when checking that probabilities sum to one.
pub const MASS_TOL: f64 = 1e-12;

/// A finite probability space: `d` atoms with strictly positive probabilities
/// summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FiniteProbSpace {
    probs: Vec<f64>,
}

impl FiniteProbSpace {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter(
                "a probability space needs at least one atom".into(),
            ));
        }
        if probs.iter().any(|&p| !p.is_finite() || p <= 0.0) {
            return Err(Error::InvalidParameter(
                "atom probabilities must be finite and strictly positive".into(),
            ));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "atom probabilities sum to {mass}, expected 1 within {MASS_TOL:e}"
            )));
        }
        Ok(Self { probs })
    }

    /// Uniform space on `d` atoms.
    pub fn uniform(d: usize) -> Self {
        Self::new(vec![1.0 / d as f64; d]).expect("uniform probabilities are valid")
    }

    /// Number of atoms.
    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The reference measure ℙ viewed as a [`ProbMeasure`].
    pub fn reference_measure(&self) -> ProbMeasure {
        ProbMeasure::new(self.probs.clone()).expect("reference probabilities are valid")
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            })
        }
    }
}

impl TryFrom<Vec<f64>> for FiniteProbSpace {
    type Error = Error;
    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<FiniteProbSpace> for Vec<f64> {
    fn from(s: FiniteProbSpace) -> Self {
        s.probs
    }
}

/// A bounded payoff: one loss value per atom. Positive values are losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Rv {
    values: Vec<f64>,
}

impl Rv {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("payoff entries must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self {
            values: vec![c; d],
        }
    }

    pub fn zero(d: usize) -> Self {
        Self::constant(d, 0.0)
    }

    /// Indicator of a single atom.
    pub fn indicator(d: usize, atom: usize) -> Self {
        let mut values = vec![0.0; d];
        values[atom] = 1.0;
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add(&self, other: &Rv) -> Rv {
        Rv {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Rv) -> Rv {
        Rv {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Rv {
        Rv {
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_scalar(&self, c: f64) -> Rv {
        Rv {
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &Rv) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| a <= b)
    }
}

impl TryFrom<Vec<f64>> for Rv {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Rv> for Vec<f64> {
    fn from(x: Rv) -> Self {
        x.values
    }
}

/// A probability measure on the atoms of a [`FiniteProbSpace`]. Entries may
/// be zero; since the reference atoms carry positive mass, every such measure
/// is absolutely continuous with respect to the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbMeasure {
    weights: Vec<f64>,
}

impl ProbMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter(
                "a probability measure needs at least one atom".into(),
            ));
        }
        if weights.iter().any(|&q| !q.is_finite() || q < 0.0) {
            return Err(Error::InvalidParameter(
                "measure weights must be finite and nonnegative".into(),
            ));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "measure weights sum to {mass}, expected 1 within {MASS_TOL:e}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            weights: vec![1.0 / d as f64; d],
        }
    }

    pub fn point_mass(d: usize, atom: usize) -> Self {
        let mut weights = vec![0.0; d];
        weights[atom] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E^Q(X) = Σ_k q_k x_k`.
    pub fn expectation(&self, x: &Rv) -> Result<f64> {
        if self.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(x.values())
            .map(|(q, v)| q * v)
            .sum())
    }

    /// Radon–Nikodým density dQ/dP per atom.
    pub fn density_wrt(&self, space: &FiniteProbSpace) -> Result<Vec<f64>> {
        space.check_dim(self.len())?;
        Ok(self
            .weights
            .iter()
            .zip(space.probs())
            .map(|(q, p)| q / p)
            .collect())
    }

    pub fn approx_eq(&self, other: &ProbMeasure, tol: f64) -> bool {
        self.len() == other.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl TryFrom<Vec<f64>> for ProbMeasure {
    type Error = Error;
    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<ProbMeasure> for Vec<f64> {
    fn from(q: ProbMeasure) -> Self {
        q.weights
    }
}

/// A finite sub-σ-algebra represented by its generating partition of the
/// atoms: disjoint nonempty blocks covering `{0, …, d−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionAlgebra {
    d: usize,
    blocks: Vec<Vec<usize>>,
}

impl PartitionAlgebra {
    pub fn new(d: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; d];
        let mut count = 0usize;
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::InvalidParameter("partition block is empty".into()));
            }
            for &atom in block {
                if atom >= d {
                    return Err(Error::InvalidParameter(format!(
                        "atom index {atom} out of range for d={d}"
                    )));
                }
                if seen[atom] {
                    return Err(Error::InvalidParameter(format!(
                        "atom {atom} appears in two blocks"
                    )));
                }
                seen[atom] = true;
                count += 1;
            }
        }
        if count != d {
            return Err(Error::InvalidParameter(
                "partition blocks do not cover all atoms".into(),
            ));
        }
        let mut blocks = blocks;
        for block in &mut blocks {
            block.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        Ok(Self { d, blocks })
    }

    /// The discrete σ-algebra: every atom is its own block.
    pub fn singletons(d: usize) -> Self {
        Self {
            d,
            blocks: (0..d).map(|k| vec![k]).collect(),
        }
    }

    /// The trivial σ-algebra: one block containing every atom.
    pub fn trivial(d: usize) -> Self {
        Self {
            d,
            blocks: vec![(0..d).collect()],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// True iff every block of `self` is contained in a block of `coarser`.
    pub fn refines(&self, coarser: &PartitionAlgebra) -> Result<bool> {
        if self.d != coarser.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: coarser.d,
            });
        }
        // Map each atom to its block index in the coarser partition.
        let mut block_of = vec![0usize; self.d];
        for (i, block) in coarser.blocks.iter().enumerate() {
            for &atom in block {
                block_of[atom] = i;
            }
        }
        Ok(self
            .blocks
            .iter()
            .all(|block| block.iter().all(|&a| block_of[a] == block_of[block[0]])))
    }

    /// True iff `x` is constant on every block up to `tol`.
    pub fn is_measurable(&self, x: &Rv, tol: f64) -> bool {
        x.len() == self.d
            && self.blocks.iter().all(|block| {
                let v0 = x.values()[block[0]];
                block.iter().all(|&a| (x.values()[a] - v0).abs() <= tol)
            })
    }
}

/// Conditional expectation of a payoff given a partition, with metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CondExpectation {
    /// The conditioned payoff, constant on each block.
    pub values: Rv,
    /// Indices of blocks with zero Q-mass where the block value fell back to
    /// the reference-conditional average.
    pub p_fallback_blocks: Vec<usize>,
}

/// `E^Q(X | G)`: constant on each block of `g`, equal to the Q-weighted
/// average of `x` over the block. Blocks with zero Q-mass fall back to the
/// reference-conditional average so that the operation stays total; the
/// affected blocks are flagged in the result.
pub fn cond_expectation(
    space: &FiniteProbSpace,
    q: &ProbMeasure,
    x: &Rv,
    g: &PartitionAlgebra,
) -> Result<CondExpectation> {
    space.check_dim(q.len())?;
    space.check_dim(x.len())?;
    space.check_dim(g.dim())?;
    let mut out = vec![0.0; space.dim()];
    let mut fallback = Vec::new();
    for (i, block) in g.blocks().iter().enumerate() {
        let q_mass: f64 = block.iter().map(|&a| q.weights()[a]).sum();
        if q_mass <= 0.0 {
            fallback.push(i);
        }
        let first = x.values()[block[0]];
        let avg = if block.iter().all(|&a| x.values()[a] == first) {
            // Constant blocks average to themselves exactly, which makes
            // conditioning idempotent bitwise.
            first
        } else if q_mass > 0.0 {
            block
                .iter()
                .map(|&a| q.weights()[a] * x.values()[a])
                .sum::<f64>()
                / q_mass
        } else {
            let p_mass: f64 = block.iter().map(|&a| space.probs()[a]).sum();
            block
                .iter()
                .map(|&a| space.probs()[a] * x.values()[a])
                .sum::<f64>()
                / p_mass
        };
        for &a in block {
            out[a] = avg;
        }
    }
    Ok(CondExpectation {
        values: Rv::new(out)?,
        p_fallback_blocks: fallback,
    })
}

/// Enumerate every partition of `{0, …, d−1}` via restricted growth strings,
/// starting from the trivial partition (all atoms in one block).
pub fn enumerate_partitions(d: usize) -> Vec<PartitionAlgebra> {
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    // Restricted growth string: rgs[0] = 0, rgs[i] <= max(rgs[..i]) + 1.
    let mut rgs = vec![0usize; d];
    loop {
        let num_blocks = rgs.iter().copied().max().unwrap() + 1;
        let mut blocks = vec![Vec::new(); num_blocks];
        for (atom, &b) in rgs.iter().enumerate() {
            blocks[b].push(atom);
        }
        out.push(PartitionAlgebra::new(d, blocks).expect("RGS yields a valid partition"));
        // Advance to the next restricted growth string.
        let mut i = d;
        loop {
            if i == 1 {
                return out;
            }
            i -= 1;
            let max_prefix = rgs[..i].iter().copied().max().unwrap();
            if rgs[i] <= max_prefix {
                rgs[i] += 1;
                for v in rgs.iter_mut().skip(i + 1) {
                    *v = 0;
                }
                break;
            }
        }
    }
}
