use privkick::env::{FeatureGrid, Layout};
use privkick::nn::PolicyNet;
use privkick::ppo::{
    collect_rollout, gae_advantages, ppo_update, value_loss_grad, PpoConfig, Rollout, Step, TeacherSource,
};
use privkick::rng::RngState;
use privkick::student::{alpha_lambda, penalty, KickstartConfig, KickstartPenalty};
use proptest::prelude::*;

mod common;

use common::*;

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let (a, rollout) = fixture();
    let x0 = a.policy.mlp.params().to_vec();
    let adv = advantages();
    let (_, analytic) = loss_at(&a.policy, &x0, &rollout, &adv, 0.05, None);
    let numeric = numeric_grad(|x| loss_at(&a.policy, x, &rollout, &adv, 0.05, None).0, &x0, 1e-6);
    let e = rel_err(&analytic, &numeric);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn penalty_gradient_matches_finite_differences_with_frozen_gates() {
    let (a, rollout) = fixture();
    let x0 = a.policy.mlp.params().to_vec();
    let adv = advantages();
    let cfg = KickstartConfig {
        balance: 3.0,
        ..KickstartConfig::default()
    };
    let mut aux = KickstartPenalty::new(cfg, 5.0);
    aux.frozen = Some(vec![true, false, true, true, false]);
    let (_, analytic) = loss_at(&a.policy, &x0, &rollout, &adv, 0.0, Some(&aux));
    let numeric = numeric_grad(
        |x| loss_at(&a.policy, x, &rollout, &adv, 0.0, Some(&aux)).0,
        &x0,
        1e-6,
    );
    let e = rel_err(&analytic, &numeric);
    assert!(e < 1e-4, "{e}");

    // the penalty part alone, with zero advantages
    let zero = vec![0.0; 5];
    let (_, analytic) = loss_at(&a.policy, &x0, &rollout, &zero, 0.0, Some(&aux));
    let numeric = numeric_grad(
        |x| loss_at(&a.policy, x, &rollout, &zero, 0.0, Some(&aux)).0,
        &x0,
        1e-6,
    );
    assert!(rel_err(&analytic, &numeric) < 1e-4);
}

#[test]
fn value_gradient_matches_finite_differences() {
    let (a, rollout) = fixture();
    let returns = vec![0.5, -1.0, 2.0, 0.0, 9.0];
    let idx: Vec<usize> = (0..5).collect();
    let x0 = a.value.mlp.params().to_vec();
    let eval = |x: &[f64]| {
        let mut v = a.value.clone();
        v.mlp.params_mut().copy_from_slice(x);
        let mut g = vec![0.0; x.len()];
        (value_loss_grad(&v, &rollout, &returns, &idx, &mut g).unwrap(), g)
    };
    let (_, analytic) = eval(&x0);
    let numeric = numeric_grad(|x| eval(x).0, &x0, 1e-6);
    assert!(rel_err(&analytic, &numeric) < 1e-4);
}

#[test]
fn unclipped_gradient_is_the_vanilla_policy_gradient() {
    let (a, rollout) = fixture();
    let x0 = a.policy.mlp.params().to_vec();
    let adv = advantages();
    let (_, surrogate) = loss_at(&a.policy, &x0, &rollout, &adv, 0.0, None);
    // −mean A·log π(a), differentiated numerically
    let vanilla = numeric_grad(
        |x| {
            let mut p = a.policy.clone();
            p.mlp.params_mut().copy_from_slice(x);
            -rollout
                .steps
                .iter()
                .zip(&adv)
                .map(|(s, ad)| ad * p.forward(&s.observation).unwrap().pi.entries()[s.action].ln())
                .sum::<f64>()
                / 5.0
        },
        &x0,
        1e-6,
    );
    let c = cosine(&surrogate, &vanilla);
    assert!(c > 0.9999, "{c}");
}

#[test]
fn zero_advantage_gives_zero_gradient() {
    let (a, rollout) = fixture();
    let x0 = a.policy.mlp.params().to_vec();
    let (loss, g) = loss_at(&a.policy, &x0, &rollout, &[0.0; 5], 0.0, None);
    assert_eq!(loss, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
}

fn synthetic_step(reward: f64, value: f64, boundary_value: Option<f64>) -> Step {
    Step {
        observation: vec![],
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
fn gae_matches_the_explicit_sum() {
    let mut rng = RngState::from_seed(8);
    use rand::Rng;
    let n = 60;
    let steps: Vec<Step> = (0..n)
        .map(|t| {
            let boundary = if t + 1 == n || rng.random::<f64>() < 0.1 {
                Some(if rng.random::<bool>() { 0.0 } else { rng.random::<f64>() })
            } else {
                None
            };
            synthetic_step(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>(), boundary)
        })
        .collect();
    let rollout = Rollout {
        steps,
        episode_returns: vec![],
    };
    let (gamma, lam) = (0.99, 0.95);
    let (adv, ret) = gae_advantages(&rollout, gamma, lam);
    let s = &rollout.steps;
    let delta = |t: usize| {
        let next = s[t].boundary_value.unwrap_or_else(|| s[t + 1].value);
        s[t].reward + gamma * next - s[t].value
    };
    for t in 0..n {
        let mut expected = 0.0;
        let mut w = 1.0;
        for u in t..n {
            expected += w * delta(u);
            if s[u].boundary_value.is_some() {
                break;
            }
            w *= gamma * lam;
        }
        assert!((adv[t] - expected).abs() < 1e-12, "t={t}");
        assert!((ret[t] - (expected + s[t].value)).abs() < 1e-12);
    }
}

#[test]
fn rollouts_have_the_requested_length_and_replay() {
    let a = agent(5);
    let collect = || {
        let mut env = FeatureGrid::new(Layout::default()).unwrap();
        collect_rollout(&mut env, &a, 1000, None, &mut RngState::from_seed(6)).unwrap()
    };
    let r = collect();
    assert_eq!(r.len(), 1000);
    assert!(r.steps.last().unwrap().boundary_value.is_some());
    assert_eq!(r, collect());
}

#[test]
fn closed_gates_leave_the_update_unchanged() {
    let teacher = PolicyNet::new(16, &HIDDEN, 5, 1e-3, &mut RngState::from_seed(9)).unwrap();
    let base = agent(10);
    let mut env = FeatureGrid::new(Layout::default()).unwrap();
    let mut trng = RngState::from_seed(11);
    let src = TeacherSource {
        teacher: &teacher,
        rng: &mut trng,
        gate: None,
    };
    let rollout = collect_rollout(&mut env, &base, 1000, Some(src), &mut RngState::from_seed(12)).unwrap();
    let cfg = PpoConfig {
        entropy_coef: 0.05,
        ..PpoConfig::default()
    };
    let closed = KickstartPenalty::new(
        KickstartConfig {
            lambda: 1e9,
            ..KickstartConfig::default()
        },
        5.0,
    );
    let mut plain = base.clone();
    let mut gated = base.clone();
    let s1 = ppo_update(&mut plain, &rollout, &cfg, None, &mut RngState::from_seed(13)).unwrap();
    let s2 = ppo_update(&mut gated, &rollout, &cfg, Some(&closed), &mut RngState::from_seed(13)).unwrap();
    assert_eq!(s2.gate_frac, 0.0);
    assert_eq!(s1.passes, s2.passes);
    assert_eq!(plain.policy.mlp.params(), gated.policy.mlp.params());
    assert_eq!(plain.value.mlp.params(), gated.value.mlp.params());
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let t: f64 = raw.iter().sum();
    raw.iter().map(|x| x / t).collect()
}

proptest! {
    #[test]
    fn gate_opens_monotonically(
        raw_s in prop::collection::vec(0.01f64..1.0, 4),
        raw_t in prop::collection::vec(0.01f64..1.0, 4),
        l1 in 0.0f64..3.0,
        l2 in 0.0f64..3.0,
        k1 in 0.0f64..50.0,
        k2 in 0.0f64..50.0,
    ) {
        let (s, t) = (simplex(&raw_s), simplex(&raw_t));
        let at = |lambda: f64, k: f64| {
            let cfg = KickstartConfig { lambda, ..KickstartConfig::default() };
            penalty(&cfg, &s, &t, k).unwrap()
        };
        let (lo, hi) = (l1.min(l2), l1.max(l2));
        // a smaller λ never closes an open gate
        if at(hi, k1).1 {
            prop_assert!(at(lo, k1).1);
        }
        // a larger k shrinks the radius and never closes an open gate
        let (klo, khi) = (k1.min(k2), k1.max(k2));
        if at(l1, klo).1 {
            prop_assert!(at(l1, khi).1);
        }
        let cfg = KickstartConfig { lambda: l1, ..KickstartConfig::default() };
        prop_assert!(alpha_lambda(&cfg, khi) <= alpha_lambda(&cfg, klo));
        let (value, open) = at(l1, k1);
        prop_assert_eq!(open, value > 0.0);
    }
}
