//! Privacy budget accounting for a teacher that answers queries rollout by
//! rollout.
//!
//! At the start of rollout `j` the teacher's concentration is `k_j = k0·c^j`.
//! Each rollout is priced with the closed-form ε and a δ estimate, and the
//! ledger composes rollouts by simple summation. Once the summed cost crosses
//! the budget, or the schedule drops below `k_min`, the teacher is expended:
//! from then on it answers with flat-Dirichlet draws that never look at its
//! own policy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::{sample_flat, DirichletMechanism, MechanismError};
use crate::nn::{NetError, PolicyNet};
use crate::privacy::{price, MechanismConfig, PrivacyError, PrivacyParams};
use crate::rng::RngState;
use crate::simplex::{RestrictedSimplexVector, SimplexVector};

#[derive(Debug, Error)]
pub enum BudgetError {
    #[error("ledger expended at rollout {expended_at}; cannot record k = {k} at rollout {j}")]
    AlreadyExpended { j: usize, k: f64, expended_at: usize },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Vanishing-k schedule `k_j = k0·c^j`, cut to 0 below `k_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSchedule {
    pub k0: f64,
    pub c: f64,
    pub k_min: f64,
}

impl KSchedule {
    pub fn new(k0: f64, c: f64, k_min: f64) -> Result<Self, BudgetError> {
        if !(k0 > 0.0) || !k0.is_finite() {
            return Err(BudgetError::BadSchedule(format!("k0 = {k0} must be positive")));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(BudgetError::BadSchedule(format!("c = {c} must lie in (0, 1)")));
        }
        if !(k_min >= 0.0) {
            return Err(BudgetError::BadSchedule(format!("k_min = {k_min} must be >= 0")));
        }
        Ok(KSchedule { k0, c, k_min })
    }

    /// `k0·c^j`, or 0 once that falls below `k_min`.
    pub fn step(&self, j: usize) -> f64 {
        let k = self.k0 * self.c.powf(j as f64);
        if k >= self.k_min {
            k
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub eps_max: f64,
    pub delta_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub j: usize,
    pub k: f64,
    pub eps: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub eps: f64,
    pub delta: f64,
}

/// Per-rollout privacy costs and their running totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    entries: Vec<LedgerEntry>,
    totals: Totals,
    budget: Budget,
    expended_at: Option<usize>,
}

impl PrivacyLedger {
    pub fn new(budget: Budget) -> Self {
        PrivacyLedger {
            entries: Vec::new(),
            totals: Totals { eps: 0.0, delta: 0.0 },
            budget,
            expended_at: None,
        }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn epsilon_total(&self) -> f64 {
        self.totals.eps
    }

    pub fn delta_total(&self) -> f64 {
        self.totals.delta
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    /// Whether the budget has been crossed (possibly by the latest entry).
    pub fn is_expended(&self) -> bool {
        self.expended_at.is_some()
    }

    /// Whether rollout `j` is answered in expended mode.
    pub fn is_expended_at(&self, j: usize) -> bool {
        self.expended_at.is_some_and(|at| at <= j)
    }

    /// First rollout answered in expended mode.
    pub fn expended_at(&self) -> Option<usize> {
        self.expended_at
    }

    /// Logs rollout `j` at concentration `k`.
    ///
    /// `k = 0` marks expiry from rollout `j` on and logs nothing. Otherwise the
    /// entry is appended and, if it pushes a total past the budget, the
    /// ledger expires from rollout `j + 1`: the crossing entry is still an
    /// honest, logged answer.
    pub fn record(
        &mut self,
        j: usize,
        k: f64,
        pricing: &PrivacyParams,
    ) -> Result<(), BudgetError> {
        if let Some(expended_at) = self.expended_at {
            if k == 0.0 {
                return Ok(());
            }
            return Err(BudgetError::AlreadyExpended { j, k, expended_at });
        }
        if k == 0.0 {
            self.expended_at = Some(j);
            return Ok(());
        }
        self.entries.push(LedgerEntry {
            j,
            k,
            eps: pricing.epsilon,
            delta: pricing.delta,
        });
        self.totals.eps += pricing.epsilon;
        self.totals.delta += pricing.delta;
        if self.totals.eps > self.budget.eps_max || self.totals.delta > self.budget.delta_max {
            self.expended_at = Some(j + 1);
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// The teacher's answer to one query during rollout `j`.
///
/// While the ledger is live this is a draw of `mech` at `pi_true`. Once
/// expended it is a flat-Dirichlet draw and `pi_true` is never evaluated.
pub fn teacher_policy<F>(
    ledger: &PrivacyLedger,
    j: usize,
    mech: Option<&DirichletMechanism>,
    m: usize,
    pi_true: F,
    rng: &mut RngState,
) -> Result<SimplexVector, BudgetError>
where
    F: FnOnce() -> Result<RestrictedSimplexVector, BudgetError>,
{
    match mech {
        Some(mech) if !ledger.is_expended_at(j) => Ok(mech.sample(&pi_true()?, rng)?),
        _ => Ok(sample_flat(m, rng)?),
    }
}

/// Pricing parameters shared by every rollout of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingConfig {
    /// `k` is overwritten per rollout.
    pub template: MechanismConfig,
    pub delta_accuracy: f64,
    pub confidence: f64,
}

/// A trained teacher behind the Dirichlet mechanism and a privacy ledger.
#[derive(Debug, Clone)]
pub struct PrivateTeacher {
    net: PolicyNet,
    schedule: KSchedule,
    pricing: PricingConfig,
    ledger: PrivacyLedger,
    cache: HashMap<u64, PrivacyParams>,
    pricing_rng: RngState,
    mech: Option<DirichletMechanism>,
    k_current: f64,
    rollout: usize,
}

impl PrivateTeacher {
    pub fn new(
        net: PolicyNet,
        schedule: KSchedule,
        budget: Budget,
        pricing: PricingConfig,
        pricing_rng: RngState,
    ) -> Self {
        PrivateTeacher {
            net,
            schedule,
            pricing,
            ledger: PrivacyLedger::new(budget),
            cache: HashMap::new(),
            pricing_rng,
            mech: None,
            k_current: 0.0,
            rollout: 0,
        }
    }

    pub fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    /// Concentration in force for the current rollout (0 once expended).
    pub fn k_current(&self) -> f64 {
        self.k_current
    }

    pub fn m(&self) -> usize {
        self.net.m()
    }

    /// Steps the schedule, prices the rollout and records it. Returns `k_j`.
    pub fn begin_rollout(&mut self, j: usize) -> Result<f64, BudgetError> {
        self.rollout = j;
        let mut k = if self.ledger.is_expended() {
            0.0
        } else {
            self.schedule.step(j)
        };
        if k > 0.0 {
            let pricing = match self.cache.get(&k.to_bits()) {
                Some(p) => *p,
                None => {
                    let cfg = MechanismConfig {
                        k,
                        ..self.pricing.template
                    };
                    let p = price(
                        &cfg,
                        self.pricing.delta_accuracy,
                        self.pricing.confidence,
                        &mut self.pricing_rng,
                    )?;
                    self.cache.insert(k.to_bits(), p);
                    p
                }
            };
            self.ledger.record(j, k, &pricing)?;
        } else {
            self.ledger.record(j, 0.0, &PrivacyParams {
                epsilon: 0.0,
                delta: 0.0,
                delta_half_width: 0.0,
                n_samples: 0,
            })?;
        }
        if self.ledger.expended_at().is_some_and(|at| at <= j) {
            k = 0.0;
        }
        self.k_current = k;
        self.mech = if k > 0.0 {
            Some(DirichletMechanism::new(k, self.net.eta, self.net.m())?)
        } else {
            None
        };
        Ok(k)
    }

    /// Answers a query at `observation` for the current rollout.
    pub fn query(&self, observation: &[f64], rng: &mut RngState) -> Result<SimplexVector, BudgetError> {
        teacher_policy(
            &self.ledger,
            self.rollout,
            self.mech.as_ref(),
            self.net.m(),
            || Ok(self.net.forward(observation)?.pi),
            rng,
        )
    }
}
