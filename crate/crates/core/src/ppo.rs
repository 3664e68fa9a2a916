//! Clipped-surrogate policy optimization with generalized advantage
//! estimation.
//!
//! One epoch collects a fixed-length [`Rollout`], computes advantages, then
//! runs several passes of shuffled minibatch Adam steps on the policy and the
//! value network. Passes stop early once the mean approximate KL divergence
//! from the behaviour policy exceeds `target_kl`.
//!
//! An [`AuxiliaryLoss`] can add a per-state term on the policy output; the
//! kickstarting penalty plugs in through it.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{BudgetError, PrivateTeacher};
use crate::env::{EnvError, FeatureGrid};
use crate::nn::{floored_softmax_backward, Adam, MlpCache, NetError, PolicyNet, ValueNet};
use crate::rng::RngState;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("non-finite loss during update ({0})")]
    NonFiniteLoss(&'static str),
    #[error("rollout step {0} has no teacher policy")]
    MissingTeacherData(usize),
    #[error("rollout length must be at least 1")]
    EmptyRollout,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub steps_per_epoch: usize,
    /// passes over each batch
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub pi_lr: f64,
    pub vf_lr: f64,
    /// stop the passes once mean approximate KL exceeds this
    pub target_kl: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            steps_per_epoch: 1000,
            update_epochs: 10,
            minibatch_size: 250,
            entropy_coef: 0.0,
            pi_lr: 3e-4,
            vf_lr: 1e-3,
            target_kl: 0.015,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |s: &str| Err(PpoError::InvalidConfig(s.into()));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.steps_per_epoch == 0 || self.minibatch_size == 0 {
            return bad("steps_per_epoch and minibatch_size must be positive");
        }
        if !(self.pi_lr > 0.0 && self.vf_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.entropy_coef >= 0.0) || !(self.target_kl > 0.0) {
            return bad("entropy_coef must be non-negative and target_kl positive");
        }
        Ok(())
    }
}

/// One environment interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// log-probability of `action` under the behaviour policy
    pub log_prob: f64,
    pub value: f64,
    /// the teacher's privatized answer at this observation, when attached
    pub teacher: Option<Vec<f64>>,
    /// whether the kickstart gate was open under the behaviour policy
    pub gate_active: bool,
    /// `Some(v)` when the trajectory segment ends after this step: `v` is the
    /// bootstrap value (0 at the goal, `V(s′)` on truncation or at the end of
    /// the rollout)
    pub boundary_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub steps: Vec<Step>,
    /// returns of episodes that finished inside this rollout
    pub episode_returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn has_teacher(&self) -> bool {
        self.steps.iter().all(|s| s.teacher.is_some())
    }
}

/// A per-state term added to the policy loss.
pub trait AuxiliaryLoss {
    /// Adds `∂term/∂π` for step `t` into `grad_pi` and returns
    /// `(term value, gate open)`.
    fn apply(&self, t: usize, step: &Step, pi: &[f64], grad_pi: &mut [f64]) -> Result<(f64, bool), PpoError>;

    /// Gate state at collection time, for logging.
    fn gate(&self, pi: &[f64], teacher: &[f64]) -> bool;
}

/// Policy and value networks with their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub pi_opt: Adam,
    pub v_opt: Adam,
}

impl Agent {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        m: usize,
        eta: f64,
        cfg: &PpoConfig,
        rng: &mut RngState,
    ) -> Result<Self, PpoError> {
        let policy = PolicyNet::new(obs_dim, hidden, m, eta, rng)?;
        let value = ValueNet::new(obs_dim, hidden, rng)?;
        let pi_opt = Adam::new(policy.mlp.params().len(), cfg.pi_lr);
        let v_opt = Adam::new(value.mlp.params().len(), cfg.vf_lr);
        Ok(Agent {
            policy,
            value,
            pi_opt,
            v_opt,
        })
    }
}

/// Anything that answers a policy query at an observation.
pub trait TeacherQuery {
    fn answer(&self, observation: &[f64], rng: &mut RngState) -> Result<Vec<f64>, PpoError>;
}

impl TeacherQuery for PrivateTeacher {
    fn answer(&self, observation: &[f64], rng: &mut RngState) -> Result<Vec<f64>, PpoError> {
        Ok(self.query(observation, rng)?.into_entries())
    }
}

/// The noiseless teacher of conventional kickstarting.
impl TeacherQuery for PolicyNet {
    fn answer(&self, observation: &[f64], _rng: &mut RngState) -> Result<Vec<f64>, PpoError> {
        Ok(self.forward(observation)?.pi.into_simplex().into_entries())
    }
}

/// Teacher attached to a rollout, with its own query stream.
pub struct TeacherSource<'a> {
    pub teacher: &'a dyn TeacherQuery,
    pub rng: &'a mut RngState,
    pub gate: Option<&'a dyn AuxiliaryLoss>,
}

fn sample_action(pi: &[f64], rng: &mut RngState) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pi.len() - 1
}

/// Collects `t_steps` on-policy interactions, starting from a fresh episode.
pub fn collect_rollout(
    env: &mut FeatureGrid,
    agent: &Agent,
    t_steps: usize,
    mut teacher: Option<TeacherSource<'_>>,
    rng: &mut RngState,
) -> Result<Rollout, PpoError> {
    if t_steps == 0 {
        return Err(PpoError::EmptyRollout);
    }
    let mut rollout = Rollout {
        steps: Vec::with_capacity(t_steps),
        episode_returns: Vec::new(),
    };
    let mut obs = env.reset(rng);
    let mut episode_return = 0.0;
    for t in 0..t_steps {
        let pi = agent.policy.forward(&obs)?.pi;
        let value = agent.value.forward(&obs)?;
        let action = sample_action(pi.entries(), rng);
        let (teacher_pi, gate_active) = match teacher.as_mut() {
            Some(src) => {
                let answer = src.teacher.answer(&obs, src.rng)?;
                let gate = src.gate.is_some_and(|g| g.gate(pi.entries(), &answer));
                (Some(answer), gate)
            }
            None => (None, false),
        };
        let result = env.step(action)?;
        episode_return += result.reward;
        let boundary_value = if result.done {
            rollout.episode_returns.push(episode_return);
            episode_return = 0.0;
            Some(if result.truncated {
                agent.value.forward(&result.observation)?
            } else {
                0.0
            })
        } else if t + 1 == t_steps {
            Some(agent.value.forward(&result.observation)?)
        } else {
            None
        };
        rollout.steps.push(Step {
            observation: std::mem::take(&mut obs),
            action,
            reward: result.reward,
            log_prob: pi.entries()[action].ln(),
            value,
            teacher: teacher_pi,
            gate_active,
            boundary_value,
        });
        obs = if result.done {
            env.reset(rng)
        } else {
            result.observation
        };
    }
    Ok(rollout)
}

/// Generalized advantage estimates and returns (`advantages + values`).
pub fn gae_advantages(rollout: &Rollout, gamma: f64, gae_lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rollout.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let s = &rollout.steps[t];
        let (next_value, carry) = match s.boundary_value {
            Some(v) => (v, 0.0),
            None => (rollout.steps[t + 1].value, running),
        };
        let delta = s.reward + gamma * next_value - s.value;
        running = delta + gamma * gae_lambda * carry;
        adv[t] = running;
    }
    let returns = adv
        .iter()
        .zip(&rollout.steps)
        .map(|(a, s)| a + s.value)
        .collect();
    (adv, returns)
}

/// Shifts and scales to mean 0, standard deviation 1.
pub fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

/// Values of the policy objective on a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyLossParts {
    /// mean clipped surrogate (to be maximized)
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    /// mean auxiliary term
    pub penalty: f64,
    pub gate_frac: f64,
    /// `−surrogate − entropy_coef·entropy + penalty` (to be minimized)
    pub loss: f64,
}

/// Policy loss on `idx` and its gradient, accumulated into `grads`.
///
/// Per sample: `−min(r·A, clip(r, 1±ε)·A) − c_H·H(π) + aux`, averaged over
/// `idx`, with `r = π(a)/π_old(a)`.
pub fn policy_loss_grad(
    policy: &PolicyNet,
    rollout: &Rollout,
    advantages: &[f64],
    idx: &[usize],
    clip: f64,
    entropy_coef: f64,
    aux: Option<&dyn AuxiliaryLoss>,
    grads: &mut [f64],
) -> Result<PolicyLossParts, PpoError> {
    let n = idx.len() as f64;
    let mut parts = PolicyLossParts::default();
    let mut cache = MlpCache::default();
    let m = policy.m();
    let mut grad_pi = vec![0.0; m];
    for &t in idx {
        let step = &rollout.steps[t];
        let (pi, soft) = policy.forward_cached(&step.observation, &mut cache)?;
        let a = step.action;
        let adv = advantages[t];
        let logp = pi[a].ln();
        let ratio = (logp - step.log_prob).exp();
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let surrogate = (ratio * adv).min(clipped * adv);
        if (ratio - 1.0).abs() > clip {
            parts.clip_frac += 1.0;
        }
        parts.surrogate += surrogate;
        parts.approx_kl += step.log_prob - logp;
        grad_pi.iter_mut().for_each(|g| *g = 0.0);
        // gradient of −min(·): flows only when the unclipped branch is selected
        if ratio * adv <= clipped * adv {
            grad_pi[a] -= adv * ratio / pi[a] / n;
        }
        let entropy: f64 = -pi.iter().map(|p| p * p.ln()).sum::<f64>();
        parts.entropy += entropy;
        if entropy_coef != 0.0 {
            for (g, p) in grad_pi.iter_mut().zip(&pi) {
                *g += entropy_coef * (p.ln() + 1.0) / n;
            }
        }
        if let Some(aux) = aux {
            let mut g_aux = vec![0.0; m];
            let (value, gate) = aux.apply(t, step, &pi, &mut g_aux)?;
            parts.penalty += value;
            if gate {
                parts.gate_frac += 1.0;
            }
            for (g, ga) in grad_pi.iter_mut().zip(&g_aux) {
                *g += ga / n;
            }
        }
        let grad_logits = floored_softmax_backward(&soft, policy.eta, &grad_pi);
        policy.mlp.backward(&cache, &grad_logits, grads);
    }
    parts.surrogate /= n;
    parts.entropy /= n;
    parts.clip_frac /= n;
    parts.approx_kl /= n;
    parts.penalty /= n;
    parts.gate_frac /= n;
    parts.loss = -parts.surrogate - entropy_coef * parts.entropy + parts.penalty;
    if !parts.loss.is_finite() {
        return Err(PpoError::NonFiniteLoss("policy"));
    }
    Ok(parts)
}

/// Mean squared value error on `idx`, gradient accumulated into `grads`.
pub fn value_loss_grad(
    value: &ValueNet,
    rollout: &Rollout,
    returns: &[f64],
    idx: &[usize],
    grads: &mut [f64],
) -> Result<f64, PpoError> {
    let n = idx.len() as f64;
    let mut cache = MlpCache::default();
    let mut loss = 0.0;
    for &t in idx {
        let v = value.mlp.forward_cached(&rollout.steps[t].observation, &mut cache)?[0];
        let err = v - returns[t];
        loss += err * err / n;
        value.mlp.backward(&cache, &[2.0 * err / n], grads);
    }
    if !loss.is_finite() {
        return Err(PpoError::NonFiniteLoss("value"));
    }
    Ok(loss)
}

/// Diagnostics of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub penalty_mean: f64,
    pub gate_frac: f64,
    /// passes completed before early stopping
    pub passes: usize,
}

/// One update of `agent` on `rollout`.
pub fn ppo_update(
    agent: &mut Agent,
    rollout: &Rollout,
    cfg: &PpoConfig,
    aux: Option<&dyn AuxiliaryLoss>,
    rng: &mut RngState,
) -> Result<UpdateStats, PpoError> {
    if rollout.is_empty() {
        return Err(PpoError::EmptyRollout);
    }
    let (mut adv, returns) = gae_advantages(rollout, cfg.gamma, cfg.gae_lambda);
    normalize(&mut adv);
    let n = rollout.len();
    let mb = cfg.minibatch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pi_grads = vec![0.0; agent.policy.mlp.params().len()];
    let mut v_grads = vec![0.0; agent.value.mlp.params().len()];
    let mut stats = UpdateStats::default();
    let mut first = true;
    for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        let mut kl_sum = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(mb) {
            pi_grads.iter_mut().for_each(|g| *g = 0.0);
            let parts = policy_loss_grad(
                &agent.policy,
                rollout,
                &adv,
                chunk,
                cfg.clip,
                cfg.entropy_coef,
                aux,
                &mut pi_grads,
            )?;
            if first {
                // report the objective at the behaviour policy
                stats.surrogate = parts.surrogate;
                stats.entropy = parts.entropy;
                stats.penalty_mean = parts.penalty;
                stats.gate_frac = parts.gate_frac;
                first = false;
            }
            kl_sum += parts.approx_kl;
            stats.clip_frac = parts.clip_frac;
            batches += 1.0;
            agent.pi_opt.step(agent.policy.mlp.params_mut(), &pi_grads);

            v_grads.iter_mut().for_each(|g| *g = 0.0);
            stats.value_loss = value_loss_grad(&agent.value, rollout, &returns, chunk, &mut v_grads)?;
            agent.v_opt.step(agent.value.mlp.params_mut(), &v_grads);
        }
        stats.passes += 1;
        stats.approx_kl = kl_sum / batches;
        if stats.approx_kl > cfg.target_kl {
            break;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(reward: f64, value: f64, boundary_value: Option<f64>) -> Step {
        Step {
            observation: vec![0.0],
            action: 0,
            reward,
            log_prob: 0.0,
            value,
            teacher: None,
            gate_active: false,
            boundary_value,
        }
    }

    #[test]
    fn single_step_advantage() {
        let r = Rollout {
            steps: vec![step(1.5, 0.4, Some(2.0))],
            episode_returns: vec![],
        };
        let (adv, ret) = gae_advantages(&r, 1.0, 1.0);
        assert!((adv[0] - (1.5 + 2.0 - 0.4)).abs() < 1e-15);
        assert!((ret[0] - (1.5 + 2.0)).abs() < 1e-15);
        let r = Rollout {
            steps: vec![step(1.5, 0.4, Some(0.0))],
            episode_returns: vec![],
        };
        let (adv, _) = gae_advantages(&r, 1.0, 1.0);
        assert!((adv[0] - (1.5 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn zero_rollout_has_zero_advantages() {
        let r = Rollout {
            steps: vec![step(0.0, 0.0, None), step(0.0, 0.0, Some(0.0)), step(0.0, 0.0, Some(0.0))],
            episode_returns: vec![],
        };
        let (adv, ret) = gae_advantages(&r, 0.99, 0.95);
        assert!(adv.iter().chain(&ret).all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_gives_unit_moments() {
        let mut xs = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_follows_the_policy() {
        let pi = [0.1, 0.2, 0.7];
        let mut rng = RngState::from_seed(0);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[sample_action(&pi, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&pi) {
            let f = *c as f64 / 1e5;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / 1e5).sqrt());
        }
    }
}
