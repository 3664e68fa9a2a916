//! Probability vectors on the unit simplex and the η-restricted simplex.
//!
//! A [`SimplexVector`] is a certified point of Δ_m: finite, non-negative
//! entries summing to one. A [`RestrictedSimplexVector`] additionally carries
//! a floor `eta` with every entry at least `eta`, which is the input domain
//! the Dirichlet mechanism is priced on.
//!
//! Validation never renormalizes: the entries handed in are the entries you
//! get back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|Σ x_i − 1|`.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Tolerance on the floor test `x_i ≥ η`.
pub const FLOOR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("probability vector needs at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("entries sum to {sum}, expected 1 within {SUM_TOLERANCE:e}")]
    SumMismatch { sum: f64 },
    #[error("entry {index} = {value} is below the floor {eta}")]
    FloorViolation { index: usize, value: f64, eta: f64 },
    #[error("floor {eta} is infeasible for dimension {m} (need 0 <= eta and m*eta <= 1)")]
    BadEta { eta: f64, m: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// A point of the unit simplex Δ_m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector {
    entries: Vec<f64>,
}

impl SimplexVector {
    /// Certifies `entries` as a point of Δ_m.
    pub fn new(entries: Vec<f64>) -> Result<Self, SimplexError> {
        check_entries(&entries, 0.0)?;
        Ok(SimplexVector { entries })
    }

    /// The barycenter `(1/m, …, 1/m)`.
    pub fn uniform(m: usize) -> Result<Self, SimplexError> {
        if m < 2 {
            return Err(SimplexError::TooShort(m));
        }
        Ok(SimplexVector {
            entries: vec![1.0 / m as f64; m],
        })
    }

    /// Builds a vector without checks. Callers must uphold the invariants;
    /// used on hot paths whose construction already guarantees them.
    pub(crate) fn from_trusted(entries: Vec<f64>) -> Self {
        debug_assert!(check_entries(&entries, 0.0).is_ok(), "{entries:?}");
        SimplexVector { entries }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    /// Number of actions `m`.
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Certifies this vector against a floor `eta`.
    pub fn restrict(self, eta: f64) -> Result<RestrictedSimplexVector, SimplexError> {
        check_eta(eta, self.dim())?;
        check_floor(&self.entries, eta)?;
        Ok(RestrictedSimplexVector { inner: self, eta })
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = SimplexError;

    fn try_from(entries: Vec<f64>) -> Result<Self, Self::Error> {
        SimplexVector::new(entries)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.entries
    }
}

impl AsRef<[f64]> for SimplexVector {
    fn as_ref(&self) -> &[f64] {
        &self.entries
    }
}

/// A point of Δ_{m,η}: a simplex vector certified to have every entry ≥ η.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedSimplexVector {
    inner: SimplexVector,
    eta: f64,
}

impl RestrictedSimplexVector {
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn entries(&self) -> &[f64] {
        self.inner.entries()
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn as_simplex(&self) -> &SimplexVector {
        &self.inner
    }

    pub fn into_simplex(self) -> SimplexVector {
        self.inner
    }
}

impl AsRef<[f64]> for RestrictedSimplexVector {
    fn as_ref(&self) -> &[f64] {
        self.inner.entries()
    }
}

/// Certifies a raw vector as a member of Δ_{m,η}.
///
/// The floor is checked before the sum so that an entry below `eta` is
/// reported as such even when the total is also off.
pub fn validate(v: &[f64], eta: f64) -> Result<RestrictedSimplexVector, SimplexError> {
    check_eta(eta, v.len())?;
    check_entries(v, eta)?;
    Ok(RestrictedSimplexVector {
        inner: SimplexVector {
            entries: v.to_vec(),
        },
        eta,
    })
}

/// The `m` vertices of Δ_{m,η}: every coordinate permutation of
/// `(1 − (m−1)η, η, …, η)`. At `η = 1/m` the polytope is a single point and
/// one vertex is returned.
pub fn vertices(m: usize, eta: f64) -> Result<Vec<RestrictedSimplexVector>, SimplexError> {
    if m < 2 {
        return Err(SimplexError::TooShort(m));
    }
    check_eta(eta, m)?;
    let top = 1.0 - (m - 1) as f64 * eta;
    let mut out: Vec<RestrictedSimplexVector> = Vec::with_capacity(m);
    for i in 0..m {
        let mut entries = vec![eta; m];
        entries[i] = top;
        if out.iter().any(|v| v.entries() == entries.as_slice()) {
            continue;
        }
        out.push(RestrictedSimplexVector {
            inner: SimplexVector { entries },
            eta,
        });
    }
    Ok(out)
}

/// Euclidean distance between two probability vectors.
pub fn l2_distance(a: &SimplexVector, b: &SimplexVector) -> Result<f64, SimplexError> {
    l2_distance_slices(a.entries(), b.entries())
}

pub(crate) fn l2_distance_slices(a: &[f64], b: &[f64]) -> Result<f64, SimplexError> {
    if a.len() != b.len() {
        return Err(SimplexError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

fn check_eta(eta: f64, m: usize) -> Result<(), SimplexError> {
    // a small slack so that eta = 1/m computed in floating point is accepted
    if !eta.is_finite() || eta < 0.0 || eta * m as f64 > 1.0 + FLOOR_TOLERANCE {
        return Err(SimplexError::BadEta { eta, m });
    }
    Ok(())
}

fn check_floor(v: &[f64], eta: f64) -> Result<(), SimplexError> {
    for (index, &value) in v.iter().enumerate() {
        if value < eta - FLOOR_TOLERANCE {
            return Err(SimplexError::FloorViolation { index, value, eta });
        }
    }
    Ok(())
}

fn check_entries(v: &[f64], eta: f64) -> Result<(), SimplexError> {
    if v.len() < 2 {
        return Err(SimplexError::TooShort(v.len()));
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(SimplexError::NonFinite { index });
    }
    check_floor(v, eta)?;
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(SimplexError::SumMismatch { sum });
    }
    Ok(())
}
