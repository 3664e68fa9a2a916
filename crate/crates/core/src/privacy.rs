//! Pricing the composed mechanism `Dir_k ∘ f` in (ε, δ).
//!
//! For an `L`-Lipschitz map `f` into `Δ_{m,η}`, `b`-adjacent observations and
//! an interior margin `τ`:
//!
//! ```text
//! ε = √m·L·b·k·log(1/τ)
//!     + (m−1)·log Γ(kη) + log Γ(k(1−(m−1)η)) − m·log Γ(k/m)
//! δ = 1 − P(Dir_k(v) ∈ Δ_{m,τ}),   v = (η, …, η, 1−(m−1)η)
//! ```
//!
//! ε is evaluated in closed form. δ is estimated by Monte Carlo with a
//! Chebyshev half-width, except for `m = 2` where it is a pair of incomplete
//! beta functions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::{sample_dirichlet, MechanismError};
use crate::nn::Mlp;
use crate::rng::RngState;
use crate::special::{log_gamma_positive, regularized_incomplete_beta, SpecialError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("invalid mechanism config: {0}")]
    InvalidConfig(String),
    #[error("degenerate config: k(1 − (m−1)η) = {0} is not positive")]
    DegenerateConfig(f64),
    #[error("tau must be finite and non-negative, got {0}")]
    BadTau(f64),
    #[error("accuracy must be positive and confidence in (0, 1) (t = {t}, confidence = {confidence})")]
    BadAccuracy { t: f64, confidence: f64 },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

/// Everything needed to price one use of the mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub k: f64,
    pub eta: f64,
    pub tau: f64,
    /// adjacency radius in observation units
    pub b: f64,
    /// Lipschitz constant of the teacher map
    pub lipschitz: f64,
    pub m: usize,
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        let inv_m = 1.0 / self.m as f64;
        let bad = |what: &str| Err(PrivacyError::InvalidConfig(what.to_string()));
        if self.m < 2 {
            return bad("m must be at least 2");
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return bad("k must be positive");
        }
        if !(self.eta > 0.0) || self.eta > inv_m * (1.0 + 1e-12) {
            return bad("eta must lie in (0, 1/m]");
        }
        if !(self.tau > 0.0) || self.tau > inv_m * (1.0 + 1e-12) {
            return bad("tau must lie in (0, 1/m]");
        }
        // b = 0 and L = 0 are accepted as the degenerate zero-sensitivity case
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return bad("b must be non-negative");
        }
        if !(self.lipschitz >= 0.0) || !self.lipschitz.is_finite() {
            return bad("L must be non-negative");
        }
        Ok(())
    }
}

/// An (ε, δ) certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// half-width `t` of the δ estimate (0 when δ is computed exactly)
    pub delta_half_width: f64,
    /// Monte Carlo draws behind δ (0 when δ is computed exactly)
    pub n_samples: u64,
}

/// The two parts of ε before flooring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonTerms {
    /// `√m·L·b·k·log(1/τ)`
    pub sensitivity: f64,
    /// `(m−1)·log Γ(kη) + log Γ(k(1−(m−1)η)) − m·log Γ(k/m)`
    pub gamma: f64,
}

impl EpsilonTerms {
    pub fn total(&self) -> f64 {
        (self.sensitivity + self.gamma).max(0.0)
    }
}

/// Natural log of Γ, rejecting non-positive arguments.
pub fn log_gamma(x: f64) -> Result<f64, PrivacyError> {
    Ok(crate::special::log_gamma(x)?)
}

pub fn epsilon_terms(cfg: &MechanismConfig) -> Result<EpsilonTerms, PrivacyError> {
    cfg.validate()?;
    let m = cfg.m as f64;
    let top = cfg.k * (1.0 - (m - 1.0) * cfg.eta);
    if !(top > 0.0) {
        return Err(PrivacyError::DegenerateConfig(top));
    }
    let sensitivity = m.sqrt() * cfg.lipschitz * cfg.b * cfg.k * (1.0 / cfg.tau).ln();
    let gamma = (m - 1.0) * log_gamma_positive(cfg.k * cfg.eta) + log_gamma_positive(top)
        - m * log_gamma_positive(cfg.k / m);
    Ok(EpsilonTerms { sensitivity, gamma })
}

/// Closed-form ε, floored at zero.
pub fn epsilon_exact(cfg: &MechanismConfig) -> Result<f64, PrivacyError> {
    Ok(epsilon_terms(cfg)?.total())
}

/// Smallest `N` with `1/(4·N·t²) ≤ 1 − confidence`.
pub fn required_samples(t: f64, confidence: f64) -> Result<u64, PrivacyError> {
    if !(t > 0.0) || !t.is_finite() || !(confidence > 0.0 && confidence < 1.0) {
        return Err(PrivacyError::BadAccuracy { t, confidence });
    }
    let exact = 1.0 / (4.0 * t * t * (1.0 - confidence));
    // absorb representation error so that e.g. 1000.0000000000001 gives 1000
    let n = (exact * (1.0 - 1e-12)).ceil().max(1.0);
    Ok(n as u64)
}

/// Chebyshev half-width achieved by `n` Bernoulli draws at `confidence`.
pub fn chebyshev_half_width(n: u64, confidence: f64) -> f64 {
    (1.0 / (4.0 * n as f64 * (1.0 - confidence))).sqrt()
}

/// A Monte Carlo estimate of δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    pub delta: f64,
    pub half_width: f64,
    pub n_samples: u64,
}

fn vertex_shapes(k: f64, eta: f64, m: usize) -> Vec<f64> {
    let mut shapes = vec![k * eta; m];
    shapes[m - 1] = k * (1.0 - (m - 1) as f64 * eta);
    shapes
}

fn check_delta_args(k: f64, eta: f64, tau: f64, m: usize) -> Result<(), PrivacyError> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(PrivacyError::BadTau(tau));
    }
    let probe = MechanismConfig {
        k,
        eta,
        tau: 1.0 / m as f64,
        b: 0.0,
        lipschitz: 0.0,
        m,
    };
    probe.validate()
}

/// Counts vertex-input draws that land outside `Δ_{m,τ}`.
fn count_outside(shapes: &[f64], tau: f64, n: u64, rng: &mut RngState) -> Result<u64, PrivacyError> {
    let mut outside = 0;
    for _ in 0..n {
        let x = sample_dirichlet(shapes, rng)?;
        if x.entries().iter().any(|&v| v < tau) {
            outside += 1;
        }
    }
    Ok(outside)
}

/// Monte Carlo estimate of δ from a single stream.
///
/// `τ = 0` gives δ = 0 and `m·τ > 1` gives δ = 1, both without sampling.
pub fn delta_mc(
    k: f64,
    eta: f64,
    tau: f64,
    m: usize,
    n_samples: u64,
    confidence: f64,
    rng: &mut RngState,
) -> Result<DeltaEstimate, PrivacyError> {
    check_delta_args(k, eta, tau, m)?;
    if let Some(exact) = trivial_delta(tau, m) {
        return Ok(exact);
    }
    if n_samples == 0 {
        return Err(PrivacyError::BadAccuracy { t: 0.0, confidence });
    }
    let shapes = vertex_shapes(k, eta, m);
    let outside = count_outside(&shapes, tau, n_samples, rng)?;
    Ok(DeltaEstimate {
        delta: outside as f64 / n_samples as f64,
        half_width: chebyshev_half_width(n_samples, confidence),
        n_samples,
    })
}

/// [`delta_mc`] with the draw budget split across `workers` threads.
///
/// Worker `w` draws from [`RngState::worker`]`(master_seed, w)`; the first
/// `n % workers` workers take one extra draw. The result depends only on
/// `(master_seed, workers)`.
pub fn delta_mc_parallel(
    k: f64,
    eta: f64,
    tau: f64,
    m: usize,
    n_samples: u64,
    confidence: f64,
    master_seed: u64,
    workers: usize,
) -> Result<DeltaEstimate, PrivacyError> {
    check_delta_args(k, eta, tau, m)?;
    if let Some(exact) = trivial_delta(tau, m) {
        return Ok(exact);
    }
    if n_samples == 0 {
        return Err(PrivacyError::BadAccuracy { t: 0.0, confidence });
    }
    let workers = workers.max(1) as u64;
    let shapes = vertex_shapes(k, eta, m);
    let counts: Vec<Result<u64, PrivacyError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let share = n_samples / workers + u64::from(w < n_samples % workers);
                let shapes = &shapes;
                scope.spawn(move || {
                    let mut rng = RngState::worker(master_seed, w);
                    count_outside(shapes, tau, share, &mut rng)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut outside = 0;
    for c in counts {
        outside += c?;
    }
    Ok(DeltaEstimate {
        delta: outside as f64 / n_samples as f64,
        half_width: chebyshev_half_width(n_samples, confidence),
        n_samples,
    })
}

fn trivial_delta(tau: f64, m: usize) -> Option<DeltaEstimate> {
    if tau == 0.0 {
        return Some(DeltaEstimate {
            delta: 0.0,
            half_width: 0.0,
            n_samples: 0,
        });
    }
    if tau * m as f64 > 1.0 {
        return Some(DeltaEstimate {
            delta: 1.0,
            half_width: 0.0,
            n_samples: 0,
        });
    }
    None
}

/// Exact δ for two actions: the vertex draw's first coordinate is
/// `Beta(kη, k(1−η))`, and it leaves `Δ_{2,τ}` through either tail.
pub fn delta_two_actions(k: f64, eta: f64, tau: f64) -> Result<f64, PrivacyError> {
    check_delta_args(k, eta, tau, 2)?;
    if let Some(exact) = trivial_delta(tau, 2) {
        return Ok(exact.delta);
    }
    let a = k * eta;
    let b = k * (1.0 - eta);
    let lower = regularized_incomplete_beta(a, b, tau)?;
    let upper = regularized_incomplete_beta(b, a, tau)?;
    Ok((lower + upper).min(1.0))
}

/// The output head of a network, for Lipschitz bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Identity,
    /// `(1 − mη)·softmax + η`; softmax is taken as 1-Lipschitz.
    FlooredSoftmax { eta: f64 },
}

/// `Π_l ‖W_l‖₂` times the head's contraction factor.
pub fn lipschitz_upper_bound(net: &Mlp, head: Head) -> f64 {
    let product: f64 = (0..net.num_layers())
        .map(|l| net.weight(l).spectral_norm())
        .product();
    let factor = match head {
        Head::Identity => 1.0,
        Head::FlooredSoftmax { eta } => 1.0 - net.output_dim() as f64 * eta,
    };
    product * factor
}

/// ε from the closed form and δ at accuracy `delta_accuracy` with the given
/// confidence. Two-action configs take the exact incomplete-beta route.
pub fn price(
    cfg: &MechanismConfig,
    delta_accuracy: f64,
    confidence: f64,
    rng: &mut RngState,
) -> Result<PrivacyParams, PrivacyError> {
    let epsilon = epsilon_exact(cfg)?;
    if cfg.m == 2 {
        let delta = delta_two_actions(cfg.k, cfg.eta, cfg.tau)?;
        return Ok(PrivacyParams {
            epsilon,
            delta,
            delta_half_width: 0.0,
            n_samples: 0,
        });
    }
    let n = required_samples(delta_accuracy, confidence)?;
    let est = delta_mc(cfg.k, cfg.eta, cfg.tau, cfg.m, n, confidence, rng)?;
    Ok(PrivacyParams {
        epsilon,
        delta: est.delta,
        delta_half_width: est.half_width,
        n_samples: est.n_samples,
    })
}
