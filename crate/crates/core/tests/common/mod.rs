//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use privkick::env::{FeatureGrid, Layout};
use privkick::nn::PolicyNet;
use privkick::ppo::{collect_rollout, policy_loss_grad, Agent, AuxiliaryLoss, PpoConfig, Rollout, TeacherSource};
use privkick::rng::RngState;

pub const HIDDEN: [usize; 1] = [8];

pub fn agent(seed: u64) -> Agent {
    let cfg = PpoConfig::default();
    Agent::new(16, &HIDDEN, 5, 1e-3, &cfg, &mut RngState::from_seed(seed)).unwrap()
}

/// A five-step rollout with teacher answers from a second network.
pub fn fixture() -> (Agent, Rollout) {
    let a = agent(1);
    let teacher = PolicyNet::new(16, &HIDDEN, 5, 1e-3, &mut RngState::from_seed(2)).unwrap();
    let mut env = FeatureGrid::new(Layout::default()).unwrap();
    let mut trng = RngState::from_seed(3);
    let src = TeacherSource {
        teacher: &teacher,
        rng: &mut trng,
        gate: None,
    };
    let rollout = collect_rollout(&mut env, &a, 5, Some(src), &mut RngState::from_seed(4)).unwrap();
    (a, rollout)
}

pub fn advantages() -> Vec<f64> {
    vec![1.3, -0.7, 0.4, -1.1, 0.9]
}

/// Loss and analytic gradient of the policy objective at `params`.
pub fn loss_at(
    policy: &PolicyNet,
    params: &[f64],
    rollout: &Rollout,
    adv: &[f64],
    entropy_coef: f64,
    aux: Option<&dyn AuxiliaryLoss>,
) -> (f64, Vec<f64>) {
    let mut p = policy.clone();
    p.mlp.params_mut().copy_from_slice(params);
    let idx: Vec<usize> = (0..rollout.len()).collect();
    let mut grads = vec![0.0; params.len()];
    let parts = policy_loss_grad(&p, rollout, adv, &idx, 0.2, entropy_coef, aux, &mut grads).unwrap();
    (parts.loss, grads)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `∫₀^x t^{a−1}(1−t)^{b−1} dt` for `x ≤ 1/2`. Shapes below one get the
/// substitution `u = t^a`, which removes the endpoint singularity.
pub fn lower_tail(a: f64, b: f64, x: f64) -> f64 {
    if a < 1.0 {
        simpson(|u: f64| (1.0 - u.powf(1.0 / a)).powf(b - 1.0), 0.0, x.powf(a), 20_000) / a
    } else {
        simpson(|t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0), 0.0, x, 20_000)
    }
}

/// `P(X < τ) + P(X > 1 − τ)` for `X ~ Beta(a, b)`, by quadrature.
pub fn beta_tails(a: f64, b: f64, tau: f64) -> f64 {
    let total = lower_tail(a, b, 0.5) + lower_tail(b, a, 0.5);
    (lower_tail(a, b, tau) + lower_tail(b, a, tau)) / total
}

