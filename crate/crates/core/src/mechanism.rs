//! The Dirichlet privacy mechanism.
//!
//! `Dir_k(π)` answers a query `π ∈ Δ_{m,η}` with a draw from the Dirichlet
//! distribution with shape vector `k·π`. Its mean is `π` for every `k`, and
//! `k` controls how tightly draws concentrate around it.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};
use thiserror::Error;

use crate::rng::RngState;
use crate::simplex::{RestrictedSimplexVector, SimplexError, SimplexVector, FLOOR_TOLERANCE};
use crate::special::log_gamma_positive;

/// Floor applied to normalized draws so every emitted coordinate is strictly
/// positive.
pub const MIN_COORDINATE: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechanismError {
    #[error("concentration must be positive and finite, got {0}")]
    BadConcentration(f64),
    #[error("beta must lie in (0, 1), got {0}")]
    BadBeta(f64),
    #[error("shape {0:e} underflows the gamma sampler")]
    ShapeUnderflow(f64),
    #[error("point is on the simplex boundary (coordinate {index} is zero)")]
    BoundaryPoint { index: usize },
    #[error("input floor {got} is below the mechanism floor {want}")]
    FloorTooLow { got: f64, want: f64 },
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

/// `Dir_k` over `m` actions, accepting inputs from `Δ_{m,η}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletMechanism {
    k: f64,
    eta: f64,
    m: usize,
}

impl DirichletMechanism {
    pub fn new(k: f64, eta: f64, m: usize) -> Result<Self, MechanismError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(MechanismError::BadConcentration(k));
        }
        if m < 2 {
            return Err(SimplexError::TooShort(m).into());
        }
        if !(eta > 0.0) || eta * m as f64 > 1.0 + FLOOR_TOLERANCE {
            return Err(SimplexError::BadEta { eta, m }.into());
        }
        Ok(DirichletMechanism { k, eta, m })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn check_input(&self, pi: &RestrictedSimplexVector) -> Result<(), MechanismError> {
        if pi.dim() != self.m {
            return Err(SimplexError::DimensionMismatch {
                left: pi.dim(),
                right: self.m,
            }
            .into());
        }
        if pi.eta() < self.eta - FLOOR_TOLERANCE {
            return Err(MechanismError::FloorTooLow {
                got: pi.eta(),
                want: self.eta,
            });
        }
        Ok(())
    }

    /// One draw of `Dir(k·π)`.
    pub fn sample(
        &self,
        pi: &RestrictedSimplexVector,
        rng: &mut RngState,
    ) -> Result<SimplexVector, MechanismError> {
        self.check_input(pi)?;
        let shapes: Vec<f64> = pi.entries().iter().map(|p| self.k * p).collect();
        sample_dirichlet(&shapes, rng)
    }

    /// `log Γ(k) + Σ_i [(kπ_i − 1) log z_i − log Γ(kπ_i)]` for interior `z`.
    pub fn log_density(
        &self,
        pi: &RestrictedSimplexVector,
        z: &SimplexVector,
    ) -> Result<f64, MechanismError> {
        self.check_input(pi)?;
        if z.dim() != self.m {
            return Err(SimplexError::DimensionMismatch {
                left: z.dim(),
                right: self.m,
            }
            .into());
        }
        if let Some(index) = z.entries().iter().position(|&x| x <= 0.0) {
            return Err(MechanismError::BoundaryPoint { index });
        }
        let mut acc = log_gamma_positive(self.k);
        for (&p, &x) in pi.entries().iter().zip(z.entries()) {
            let shape = self.k * p;
            acc += (shape - 1.0) * x.ln() - log_gamma_positive(shape);
        }
        Ok(acc)
    }
}

/// Draws from a Dirichlet distribution with arbitrary positive shapes.
///
/// Each coordinate is an independent unit-scale gamma variate kept in log
/// space. Shapes below one use `G(a) = G(a + 1) · U^{1/a}`, so that
/// `log G(a) = log G(a + 1) + log(U) / a` stays finite when `a` is tiny.
pub fn sample_dirichlet(
    shapes: &[f64],
    rng: &mut RngState,
) -> Result<SimplexVector, MechanismError> {
    if shapes.len() < 2 {
        return Err(SimplexError::TooShort(shapes.len()).into());
    }
    let mut logs = Vec::with_capacity(shapes.len());
    for &a in shapes {
        logs.push(log_gamma_variate(a, rng)?);
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logs
        .iter()
        .map(|l| (l - max).exp().max(MIN_COORDINATE))
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w = (*w / sum).max(MIN_COORDINATE);
    }
    Ok(SimplexVector::from_trusted(weights))
}

/// Draws from the flat Dirichlet (uniform distribution on Δ_m).
pub fn sample_flat(m: usize, rng: &mut RngState) -> Result<SimplexVector, MechanismError> {
    sample_dirichlet(&vec![1.0; m], rng)
}

fn log_gamma_variate(shape: f64, rng: &mut RngState) -> Result<f64, MechanismError> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(MechanismError::ShapeUnderflow(shape));
    }
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0)
            .map_err(|_| MechanismError::ShapeUnderflow(shape))?
            .sample(rng);
        return Ok(g.ln());
    }
    let boosted: f64 = Gamma::new(shape + 1.0, 1.0)
        .map_err(|_| MechanismError::ShapeUnderflow(shape))?
        .sample(rng);
    let u: f64 = rng.sample(Open01);
    let out = boosted.ln() + u.ln() / shape;
    if !out.is_finite() {
        return Err(MechanismError::ShapeUnderflow(shape));
    }
    Ok(out)
}

/// Radius `r` with `P(‖Dir_k(π) − π‖₂ ≥ r) ≤ β`: `√(log(1/β) / (2(k+1)))`.
///
/// `k = 0` is accepted and gives the largest radius; the gate in the student
/// objective evaluates it for an expired teacher.
pub fn concentration_radius(k: f64, beta: f64) -> Result<f64, MechanismError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(MechanismError::BadBeta(beta));
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(MechanismError::BadConcentration(k));
    }
    Ok(((1.0 / beta).ln() / (2.0 * (k + 1.0))).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::validate;

    fn pi(v: &[f64], eta: f64) -> RestrictedSimplexVector {
        validate(v, eta).unwrap()
    }

    #[test]
    fn constructor_checks() {
        assert!(DirichletMechanism::new(5.0, 0.1, 2).is_ok());
        assert!(matches!(
            DirichletMechanism::new(0.0, 0.1, 2),
            Err(MechanismError::BadConcentration(_))
        ));
        assert!(DirichletMechanism::new(5.0, 0.0, 2).is_err());
        assert!(DirichletMechanism::new(5.0, 0.6, 2).is_err());
        assert!(DirichletMechanism::new(5.0, 0.1, 1).is_err());
    }

    #[test]
    fn draws_are_valid_and_deterministic() {
        let mech = DirichletMechanism::new(5.0, 0.1, 3).unwrap();
        let p = pi(&[0.2, 0.3, 0.5], 0.1);
        let mut a = RngState::from_seed(9);
        let mut b = RngState::from_seed(9);
        for _ in 0..1000 {
            let x = mech.sample(&p, &mut a).unwrap();
            let y = mech.sample(&p, &mut b).unwrap();
            assert_eq!(x, y);
            assert!(validate(x.entries(), 0.0).is_ok());
            assert!(x.entries().iter().all(|&v| v > 0.0));
            assert!(mech.log_density(&p, &x).unwrap().is_finite());
        }
    }

    #[test]
    fn tiny_shapes_stay_positive() {
        // shapes down to 1e-9: the plain product of gamma variates underflows here
        let mech = DirichletMechanism::new(1e-6, 1e-3, 5).unwrap();
        let p = pi(&[0.996, 0.001, 0.001, 0.001, 0.001], 1e-3);
        let mut rng = RngState::from_seed(1);
        for _ in 0..1000 {
            let x = mech.sample(&p, &mut rng).unwrap();
            assert!(x.entries().iter().all(|&v| v > 0.0));
            assert!((x.entries().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(mech.log_density(&p, &x).unwrap().is_finite());
        }
    }

    #[test]
    fn shape_underflow_is_reported() {
        let mut rng = RngState::from_seed(1);
        assert!(matches!(
            sample_dirichlet(&[0.0, 1.0], &mut rng),
            Err(MechanismError::ShapeUnderflow(_))
        ));
        assert!(matches!(
            sample_dirichlet(&[5e-324, 1.0], &mut rng),
            Err(MechanismError::ShapeUnderflow(_))
        ));
    }

    #[test]
    fn input_checks() {
        let mech = DirichletMechanism::new(2.0, 0.1, 2).unwrap();
        let mut rng = RngState::from_seed(0);
        let low = pi(&[0.5, 0.5], 0.01);
        assert!(matches!(
            mech.sample(&low, &mut rng),
            Err(MechanismError::FloorTooLow { .. })
        ));
        let wrong_m = pi(&[0.2, 0.4, 0.4], 0.1);
        assert!(mech.sample(&wrong_m, &mut rng).is_err());
    }

    #[test]
    fn log_density_examples() {
        let mech = DirichletMechanism::new(2.0, 0.5, 2).unwrap();
        let p = pi(&[0.5, 0.5], 0.5);
        let z = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(mech.log_density(&p, &z).unwrap(), 0.0);

        let edge = SimplexVector::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            mech.log_density(&p, &edge),
            Err(MechanismError::BoundaryPoint { index: 0 })
        ));
    }

    #[test]
    fn log_density_increases_toward_the_mode() {
        // all k·π_i > 1, so the density is unimodal with mode (kπ − 1)/(k − m)
        let k = 20.0;
        let p = pi(&[0.2, 0.3, 0.5], 0.1);
        let mech = DirichletMechanism::new(k, 0.1, 3).unwrap();
        let mode: Vec<f64> = p.entries().iter().map(|x| (k * x - 1.0) / (k - 3.0)).collect();
        let start = [0.96, 0.02, 0.02];
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            let z: Vec<f64> = start
                .iter()
                .zip(&mode)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect();
            let z = SimplexVector::new(z).unwrap();
            let ld = mech.log_density(&p, &z).unwrap();
            assert!(ld.is_finite());
            assert!(ld > prev, "step {i}: {ld} <= {prev}");
            prev = ld;
        }
    }

    #[test]
    fn radius_examples() {
        let e1 = (-1.0f64).exp();
        assert!((concentration_radius(1.0, e1).unwrap() - 0.5).abs() < 1e-15);
        assert!((concentration_radius(7.0, e1).unwrap() - 0.25).abs() < 1e-15);
        assert!(concentration_radius(1.0, 1.0 - 1e-15).unwrap() < 1e-7);
        assert!(matches!(
            concentration_radius(1.0, 1.0),
            Err(MechanismError::BadBeta(_))
        ));
        assert!(concentration_radius(1.0, 0.0).is_err());
        assert!(concentration_radius(-2.0, 0.5).is_err());
    }
}
