mod common;

use biopay_core::loss::{
    bce_objectness, bce_objectness_grad, fast_rcnn_loss, rpn_reg_grad, rpn_reg_loss, smooth_l1, softmax,
    softmax_ce, softmax_ce_grad, AdamConfig, AdamState, LossInputs,
};
use common::oracles::{adam_scalar, rel_err};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

/// Uniform in [-3, 3] but at least 1e-3 away from the smooth-L1 kink.
fn off_kink(rng: &mut impl Rng) -> f64 {
    loop {
        let x: f64 = rng.random_range(-3.0..3.0);
        if (x.abs() - 1.0).abs() >= 1e-3 {
            return x;
        }
    }
}

#[test]
fn objectness_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let p: f64 = rng.random_range(0.02..0.98);
        let y = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let fd = central(|q| bce_objectness(q, y), p);
        assert!(rel_err(bce_objectness_grad(p, y), fd) < 1e-5, "p={p} y={y}");
    }
}

#[test]
fn regression_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let t_star: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let t: [f64; 4] = std::array::from_fn(|i| t_star[i] + off_kink(&mut rng));
        let g = rpn_reg_grad(&t, &t_star);
        for i in 0..4 {
            let fd = central(
                |x| {
                    let mut tt = t;
                    tt[i] = x;
                    rpn_reg_loss(&tt, &t_star)
                },
                t[i],
            );
            assert!(rel_err(g[i], fd) < 1e-5, "component {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn box_head_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(2..14);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let class = rng.random_range(0..n);
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let t_u: [f64; 4] = std::array::from_fn(|i| v[i] + off_kink(&mut rng));
        let inputs = LossInputs { logits: logits.clone(), class, t_u, v, lambda: 1.0 };

        let g = softmax_ce_grad(&logits, class).unwrap();
        for k in 0..n {
            let fd = central(
                |x| {
                    let mut l = inputs.clone();
                    l.logits[k] = x;
                    fast_rcnn_loss(&l).unwrap()
                },
                logits[k],
            );
            assert!(rel_err(g[k], fd) < 1e-5, "logit {k}: {} vs {fd}", g[k]);
        }
        let reg = rpn_reg_grad(&t_u, &v);
        for i in 0..4 {
            let fd = central(
                |x| {
                    let mut l = inputs.clone();
                    l.t_u[i] = x;
                    fast_rcnn_loss(&l).unwrap()
                },
                t_u[i],
            );
            let want = if class > 0 { reg[i] } else { 0.0 };
            assert!((want - fd).abs() < 1e-5 * want.abs().max(1.0), "delta {i}");
        }
    }
}

#[test]
fn adam_single_step() {
    let config = AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() };
    let s = AdamState::new(vec![0.0], config).unwrap().step(&[1.0]).unwrap();
    assert!((s.theta[0] - -0.000999999990).abs() < 1e-12);
}

#[test]
fn adam_trajectory_matches_scalar_oracle() {
    // f(θ) = Σ a_i (θ_i - c_i)^2
    let a = [0.5, 2.0, 7.0];
    let c = [1.0, -3.0, 0.25];
    let theta0 = [0.3, 0.0, -1.5];
    let config = AdamConfig { learning_rate: 0.05, ..AdamConfig::default() };
    let mut state = AdamState::new(theta0.to_vec(), config).unwrap();
    let mut traj = Vec::new();
    for _ in 0..10 {
        let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (state.theta[i] - c[i])).collect();
        state = state.step(&g).unwrap();
        traj.push(state.theta.clone());
    }
    for i in 0..3 {
        let want = adam_scalar(theta0[i], |_, th| 2.0 * a[i] * (th - c[i]), 10, 0.05, 0.9, 0.999, 1e-8);
        for (step, w) in want.iter().enumerate() {
            assert!((traj[step][i] - w).abs() < 1e-12, "param {i} step {step}");
        }
    }
    assert_eq!(state.t, 10);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn cross_entropy_is_nonnegative(logits in prop::collection::vec(-500.0f64..500.0, 1..20), pick in 0usize..20) {
        let class = pick % logits.len();
        let l = softmax_ce(&logits, class).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn smooth_l1_bounds(x in -100.0f64..100.0) {
        let s = smooth_l1(x);
        prop_assert!(s >= 0.0 && s <= x.abs().max(0.5 * x * x));
        prop_assert_eq!(s, smooth_l1(-x));
    }
}
