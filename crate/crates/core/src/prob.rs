//! Divergences and similarities between discrete probability distributions.
//!
//! Everything downstream (uncertainty scores, diversity, facility-location
//! representativeness) reduces to these four quantities:
//!
//! | Function | Definition |
//! |----------|------------|
//! | [`kl_divergence`] | KL(p‖q) = Σ p_k ln(p_k / q_k) |
//! | [`entropy`] | H(p) = −Σ p_k ln p_k |
//! | [`bhattacharyya`] | BC(p,q) = Σ √(p_k q_k) |
//! | [`similarity`] | −ln(1 − BC(p,q)), clamped below BC = 1 |

use crate::error::{Error, Result};

/// Tolerance for the "entries sum to one" invariant of [`ProbDist`].
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Floor applied to the second argument of the KL divergence so that
/// underflowing softmax outputs keep the divergence finite.
pub const KL_FLOOR: f64 = 1e-12;

/// The Bhattacharyya coefficient is clamped to `1 - SIMILARITY_CLAMP` before
/// `-ln(1 - bc)`, keeping the similarity of identical distributions finite
/// (`-ln(1e-6) ≈ 13.8155`) while preserving the ordering.
pub const SIMILARITY_CLAMP: f64 = 1e-6;

/// A normalized probability vector over `K ≥ 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Validates non-negativity, a sum within [`PROB_SUM_TOL`] of one and
    /// `K ≥ 2`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        let mut sum = 0.0;
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "probability entry {k} is {v}, expected a non-negative finite value"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        Ok(ProbDist(values))
    }

    /// Accepts a vector whose sum is within `tol` of one and renormalizes it
    /// unless it already satisfies the strict [`PROB_SUM_TOL`] invariant.
    /// Used when ingesting externally produced score files.
    pub fn renormalized(values: Vec<f64>, tol: f64) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "probability entries must be non-negative finite values".into(),
            ));
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within {tol:e}"
            )));
        }
        if (sum - 1.0).abs() <= PROB_SUM_TOL {
            Self::new(values)
        } else {
            Self::new(values.iter().map(|v| v / sum).collect())
        }
    }

    pub fn uniform(k: usize) -> Self {
        ProbDist(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        ProbDist(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, ties broken by the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = k;
            }
        }
        best
    }
}

fn check_same_len(p: &ProbDist, q: &ProbDist, context: &'static str) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            context,
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(())
}

/// KL(p‖q) on raw slices, `0·ln(0/·) = 0`, q floored at [`KL_FLOOR`].
/// Assumes equal lengths; negative rounding residue is clamped to zero.
pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            total += pk * (pk.ln() - qk.max(KL_FLOOR).ln());
        }
    }
    if total <= 0.0 {
        0.0
    } else {
        total
    }
}

/// Kullback–Leibler divergence KL(p‖q) ≥ 0.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    check_same_len(p, q, "kl_divergence")?;
    Ok(kl_raw(p.values(), q.values()))
}

pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    let mut total = 0.0;
    for &pk in p {
        if pk > 0.0 {
            total -= pk * pk.ln();
        }
    }
    if total <= 0.0 {
        0.0
    } else {
        total
    }
}

/// Shannon entropy in nats; `0 ≤ H(p) ≤ ln K`.
pub fn entropy(p: &ProbDist) -> f64 {
    entropy_raw(p.values())
}

pub(crate) fn bhattacharyya_raw(p: &[f64], q: &[f64]) -> f64 {
    let sum: f64 = p.iter().zip(q).map(|(&a, &b)| (a * b).sqrt()).sum();
    sum.min(1.0)
}

/// Bhattacharyya coefficient Σ √(p_k q_k) in [0, 1]; 1 iff p = q.
pub fn bhattacharyya(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    check_same_len(p, q, "bhattacharyya")?;
    Ok(bhattacharyya_raw(p.values(), q.values()))
}

pub(crate) fn similarity_raw(p: &[f64], q: &[f64]) -> f64 {
    let bc = bhattacharyya_raw(p, q).min(1.0 - SIMILARITY_CLAMP);
    let v = -(1.0 - bc).ln();
    if v <= 0.0 {
        0.0
    } else {
        v
    }
}

/// Overlap similarity `-ln(1 - BC(p,q))`, finite for all inputs and monotone
/// increasing in the Bhattacharyya coefficient.
pub fn similarity(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    check_same_len(p, q, "similarity")?;
    Ok(similarity_raw(p.values(), q.values()))
}
