//! The privacy-aware student.
//!
//! The student maximizes its own clipped surrogate minus a gated distance to
//! the teacher's privatized answers:
//!
//! ```text
//! J̃(θ) = J(θ) − balance · E_s[ φ_λ(s) ]
//! φ_λ(s) = ‖π_θ(s) − πᵗ(s)‖₂ · 1{‖π_θ(s) − πᵗ(s)‖₂ > α_λ}
//! α_λ   = λ · √(log(1/β) / (2(k+1)))
//! ```
//!
//! `α_λ` is a scaled concentration radius of the teacher's mechanism: inside
//! that ball a discrepancy is attributed to privacy noise and ignored. The
//! gate is held constant when differentiating, and the norm is smoothed as
//! `√(d² + ε_s) − √ε_s` so the gradient exists at `d = 0`.

use serde::{Deserialize, Serialize};

use crate::budget::{Budget, KSchedule, PricingConfig, PrivacyLedger, PrivateTeacher};
use crate::env::{FeatureGrid, Layout};
use crate::mechanism::concentration_radius;
use crate::nn::PolicyNet;
use crate::ppo::{
    collect_rollout, gae_advantages, normalize, policy_loss_grad, ppo_update, Agent, AuxiliaryLoss,
    PolicyLossParts, PpoConfig, PpoError, Rollout, Step, TeacherQuery, TeacherSource,
};
use crate::rng::RngState;
use crate::simplex::{l2_distance_slices, SimplexError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KickstartConfig {
    /// shrinks the concentration ball; 0 gives ungated distillation
    pub lambda: f64,
    /// confidence level of the concentration radius
    pub beta: f64,
    /// weight of the penalty against the surrogate
    pub balance: f64,
    /// norm smoothing ε_s
    pub smoothing: f64,
}

impl Default for KickstartConfig {
    fn default() -> Self {
        KickstartConfig {
            lambda: 0.5,
            beta: 0.1,
            balance: 1.0,
            smoothing: 1e-8,
        }
    }
}

impl KickstartConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |s: &str| Err(PpoError::InvalidConfig(s.into()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.balance >= 0.0 && self.balance.is_finite()) || !(self.smoothing > 0.0) {
            return bad("balance must be non-negative and smoothing positive");
        }
        Ok(())
    }
}

/// `λ · √(log(1/β) / (2(k+1)))`; an expired teacher (`k = 0`) gets the
/// largest radius.
pub fn alpha_lambda(cfg: &KickstartConfig, k_current: f64) -> f64 {
    let radius = concentration_radius(k_current.max(0.0), cfg.beta)
        .expect("beta is checked by KickstartConfig::validate");
    cfg.lambda * radius
}

/// `φ_λ` at one state: the 2-norm distance when it exceeds `α_λ`, else 0.
pub fn penalty(
    cfg: &KickstartConfig,
    pi_student: &[f64],
    pi_teacher: &[f64],
    k_current: f64,
) -> Result<(f64, bool), SimplexError> {
    let d = l2_distance_slices(pi_student, pi_teacher)?;
    let gate = d > alpha_lambda(cfg, k_current);
    Ok((if gate { d } else { 0.0 }, gate))
}

/// The gated, smoothed penalty as an [`AuxiliaryLoss`].
#[derive(Debug, Clone)]
pub struct KickstartPenalty {
    pub cfg: KickstartConfig,
    pub alpha: f64,
    /// when set, gate `t` is `frozen[t]` instead of being recomputed
    pub frozen: Option<Vec<bool>>,
}

impl KickstartPenalty {
    pub fn new(cfg: KickstartConfig, k_current: f64) -> Self {
        KickstartPenalty {
            cfg,
            alpha: alpha_lambda(&cfg, k_current),
            frozen: None,
        }
    }

    /// Penalty against a noiseless teacher: the gate radius is 0.
    pub fn exact(cfg: KickstartConfig) -> Self {
        KickstartPenalty {
            cfg,
            alpha: 0.0,
            frozen: None,
        }
    }

    /// Gates of `policy` on every step of `rollout`, for holding them fixed.
    pub fn gates_at(&self, policy: &PolicyNet, rollout: &Rollout) -> Result<Vec<bool>, PpoError> {
        rollout
            .steps
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let teacher = s.teacher.as_ref().ok_or(PpoError::MissingTeacherData(t))?;
                let pi = policy.forward(&s.observation)?.pi;
                Ok(self.gate(pi.entries(), teacher))
            })
            .collect()
    }
}

impl AuxiliaryLoss for KickstartPenalty {
    fn apply(&self, t: usize, step: &Step, pi: &[f64], grad_pi: &mut [f64]) -> Result<(f64, bool), PpoError> {
        let teacher = step.teacher.as_ref().ok_or(PpoError::MissingTeacherData(t))?;
        let gate = match &self.frozen {
            Some(g) => g[t],
            None => self.gate(pi, teacher),
        };
        if !gate {
            return Ok((0.0, false));
        }
        let d2: f64 = pi.iter().zip(teacher).map(|(a, b)| (a - b) * (a - b)).sum();
        let root = (d2 + self.cfg.smoothing).sqrt();
        let value = self.cfg.balance * (root - self.cfg.smoothing.sqrt());
        for ((g, a), b) in grad_pi.iter_mut().zip(pi).zip(teacher) {
            *g += self.cfg.balance * (a - b) / root;
        }
        Ok((value, true))
    }

    fn gate(&self, pi: &[f64], teacher: &[f64]) -> bool {
        let d: f64 = pi
            .iter()
            .zip(teacher)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        d > self.alpha
    }
}

/// The student's loss on a whole rollout: surrogate and penalty, with the
/// gradient with respect to the policy parameters.
pub fn student_loss(
    policy: &PolicyNet,
    rollout: &Rollout,
    ppo: &PpoConfig,
    ks: &KickstartConfig,
    k_current: f64,
) -> Result<(PolicyLossParts, Vec<f64>), PpoError> {
    if let Some(t) = rollout.steps.iter().position(|s| s.teacher.is_none()) {
        return Err(PpoError::MissingTeacherData(t));
    }
    let (mut adv, _) = gae_advantages(rollout, ppo.gamma, ppo.gae_lambda);
    normalize(&mut adv);
    let idx: Vec<usize> = (0..rollout.len()).collect();
    let mut grads = vec![0.0; policy.mlp.params().len()];
    let aux = KickstartPenalty::new(*ks, k_current);
    let parts = policy_loss_grad(
        policy,
        rollout,
        &adv,
        &idx,
        ppo.clip,
        ppo.entropy_coef,
        Some(&aux),
        &mut grads,
    )?;
    Ok((parts, grads))
}

/// One row of the per-epoch learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub env_steps: usize,
    pub median_return: Option<f64>,
    pub mean_return: Option<f64>,
    pub clip_frac: f64,
    pub entropy: f64,
    pub penalty_mean: Option<f64>,
    pub gate_active_frac: Option<f64>,
    pub k_current: Option<f64>,
    pub eps_total: Option<f64>,
    pub delta_total: Option<f64>,
}

/// What one training run needs besides its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub layout: Layout,
    pub hidden: Vec<usize>,
    pub eta: f64,
    pub ppo: PpoConfig,
    pub epochs: usize,
}

/// How the teacher's answers are protected.
#[derive(Debug, Clone)]
pub struct PrivacySetup {
    pub schedule: KSchedule,
    pub budget: Budget,
    pub pricing: PricingConfig,
}

/// Teacher-side setup of a kickstarted run. Without `privacy` the teacher
/// answers with its exact policy and the gate radius is 0.
#[derive(Debug, Clone)]
pub struct KickstartSetup {
    pub teacher: PolicyNet,
    pub privacy: Option<PrivacySetup>,
    pub kickstart: KickstartConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<EpochRow>,
    pub agent: Agent,
    pub ledger: Option<PrivacyLedger>,
}

/// Nearest-rank median of a sample, `None` when empty.
pub(crate) fn median(xs: &[f64]) -> Option<f64> {
    crate::experiment::nearest_rank(xs, 50.0)
}

/// Trains from scratch with plain PPO.
pub fn run_scratch(spec: &RunSpec, seed: u64) -> Result<RunOutcome, PpoError> {
    train(spec, None, seed)
}

/// Trains a kickstarted student. Each epoch is one rollout: step the
/// schedule, price and record it, collect with teacher queries, update.
pub fn run_student(spec: &RunSpec, setup: &KickstartSetup, seed: u64) -> Result<RunOutcome, PpoError> {
    train(spec, Some(setup), seed)
}

enum Teacher<'a> {
    Private(PrivateTeacher),
    Exact(&'a PolicyNet),
}

fn train(spec: &RunSpec, setup: Option<&KickstartSetup>, seed: u64) -> Result<RunOutcome, PpoError> {
    spec.ppo.validate()?;
    if let Some(s) = setup {
        s.kickstart.validate()?;
    }
    let mut env = FeatureGrid::new(spec.layout.clone())?;
    let mut init_rng = RngState::derived(seed, "init", 0);
    let mut env_rng = RngState::derived(seed, "env", 0);
    let mut update_rng = RngState::derived(seed, "update", 0);
    let mut query_rng = RngState::derived(seed, "teacher", 0);
    let m = env.num_actions();
    let mut agent = Agent::new(env.obs_dim(), &spec.hidden, m, spec.eta, &spec.ppo, &mut init_rng)?;
    let mut teacher = setup.map(|s| match &s.privacy {
        Some(p) => Teacher::Private(PrivateTeacher::new(
            s.teacher.clone(),
            p.schedule,
            p.budget,
            p.pricing,
            RngState::derived(seed, "pricing", 0),
        )),
        None => Teacher::Exact(&s.teacher),
    });
    let mut rows = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let (rollout, stats) = match (teacher.as_mut(), setup) {
            (Some(teacher), Some(setup)) => {
                let (aux, source): (KickstartPenalty, &dyn TeacherQuery) = match teacher {
                    Teacher::Private(t) => {
                        let k = t.begin_rollout(epoch)?;
                        (KickstartPenalty::new(setup.kickstart, k), &*t)
                    }
                    Teacher::Exact(net) => (KickstartPenalty::exact(setup.kickstart), *net),
                };
                let rollout = collect_rollout(
                    &mut env,
                    &agent,
                    spec.ppo.steps_per_epoch,
                    Some(TeacherSource {
                        teacher: source,
                        rng: &mut query_rng,
                        gate: Some(&aux),
                    }),
                    &mut env_rng,
                )?;
                let stats = ppo_update(&mut agent, &rollout, &spec.ppo, Some(&aux), &mut update_rng)?;
                (rollout, stats)
            }
            _ => {
                let rollout = collect_rollout(&mut env, &agent, spec.ppo.steps_per_epoch, None, &mut env_rng)?;
                let stats = ppo_update(&mut agent, &rollout, &spec.ppo, None, &mut update_rng)?;
                (rollout, stats)
            }
        };
        let returns = &rollout.episode_returns;
        let mean = (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64);
        let kickstarted = teacher.is_some();
        let gate_frac = rollout.steps.iter().filter(|s| s.gate_active).count() as f64 / rollout.len() as f64;
        let private = match &teacher {
            Some(Teacher::Private(t)) => Some(t),
            _ => None,
        };
        rows.push(EpochRow {
            epoch,
            env_steps: (epoch + 1) * spec.ppo.steps_per_epoch,
            median_return: median(returns),
            mean_return: mean,
            clip_frac: stats.clip_frac,
            entropy: stats.entropy,
            penalty_mean: kickstarted.then_some(stats.penalty_mean),
            gate_active_frac: kickstarted.then_some(gate_frac),
            k_current: private.map(|t| t.k_current()),
            eps_total: private.map(|t| t.ledger().epsilon_total()),
            delta_total: private.map(|t| t.ledger().delta_total()),
        });
    }
    let ledger = match teacher {
        Some(Teacher::Private(t)) => Some(t.ledger().clone()),
        _ => None,
    };
    Ok(RunOutcome { rows, agent, ledger })
}
