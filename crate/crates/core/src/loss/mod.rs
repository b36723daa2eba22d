//! Detector loss terms with analytic gradients, the Adam update and ReLU.

mod adam;
mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::numerical_gradient;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Class index reserved for background in the second-stage classifier.
pub const BACKGROUND_CLASS: usize = 0;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("weights must be non-negative and finite")]
    NegativeWeight,
    #[error("loss component must be non-negative and finite")]
    NegativeComponent,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(&'static str),
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of an objectness probability against a 0/1 label.
pub fn bce_objectness(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// d/dp of [`bce_objectness`], evaluated at the clamped probability.
pub fn bce_objectness_grad(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -target / p + (1.0 - target) / (1.0 - p)
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Sum of smooth-L1 over the four box-delta coordinates.
pub fn rpn_reg_loss(t: &[f64; 4], t_star: &[f64; 4]) -> f64 {
    t.iter().zip(t_star).map(|(a, b)| smooth_l1(a - b)).sum()
}

/// Gradient of [`rpn_reg_loss`] with respect to `t`.
pub fn rpn_reg_grad(t: &[f64; 4], t_star: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| smooth_l1_grad(t[i] - t_star[i]))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_class(logits: &[f64], class: usize) -> Result<(), LossError> {
    if class >= logits.len() {
        return Err(LossError::ClassOutOfRange {
            class,
            classes: logits.len(),
        });
    }
    Ok(())
}

/// Softmax cross-entropy `-ln softmax(logits)[class]`, computed as
/// `logsumexp(logits) - logits[class]` with max subtraction.
pub fn softmax_ce(logits: &[f64], class: usize) -> Result<f64, LossError> {
    check_class(logits, class)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok((lse - logits[class]).max(0.0))
}

/// `softmax(logits) - one_hot(class)`.
pub fn softmax_ce_grad(logits: &[f64], class: usize) -> Result<Vec<f64>, LossError> {
    check_class(logits, class)?;
    let mut g = softmax(logits);
    g[class] -= 1.0;
    Ok(g)
}

/// Operands of the second-stage (box head) loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossInputs {
    /// Raw class scores, background at index 0.
    pub logits: Vec<f64>,
    /// True class index.
    pub class: usize,
    /// Predicted deltas for the true class.
    pub t_u: [f64; 4],
    /// Ground-truth deltas.
    pub v: [f64; 4],
    pub lambda: f64,
}

/// Classification loss plus `lambda`-weighted regression for non-background samples.
pub fn fast_rcnn_loss(inputs: &LossInputs) -> Result<f64, LossError> {
    let cls = softmax_ce(&inputs.logits, inputs.class)?;
    if inputs.class > BACKGROUND_CLASS {
        Ok(cls + inputs.lambda * rpn_reg_loss(&inputs.t_u, &inputs.v))
    } else {
        Ok(cls)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub box_cls: f64,
    pub box_reg: f64,
}

impl LossComponents {
    pub fn to_array(self) -> [f64; 4] {
        [self.rpn_cls, self.rpn_reg, self.box_cls, self.box_reg]
    }
}

pub const DEFAULT_LOSS_WEIGHTS: [f64; 4] = [1.0; 4];

/// Weighted sum of the two proposal-stage and two box-head losses.
pub fn total_loss(components: &LossComponents, weights: &[f64; 4]) -> Result<f64, LossError> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(LossError::NegativeWeight);
    }
    let c = components.to_array();
    if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(LossError::NegativeComponent);
    }
    Ok(c.iter().zip(weights).map(|(c, w)| c * w).sum())
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn bce_values() {
        assert!(bce_objectness(1.0 - 1e-12, 1.0) < 1e-11);
        assert!((bce_objectness(0.5, 1.0) - LN_2).abs() < 1e-15);
        assert!(bce_objectness(0.0, 1.0).is_finite());
        assert!(bce_objectness(1.0, 0.0).is_finite());
    }

    #[test]
    fn bce_grad_matches_central_difference() {
        let h = 1e-6;
        let fd = (bce_objectness(0.3 + h, 0.0) - bce_objectness(0.3 - h, 0.0)) / (2.0 * h);
        let g = bce_objectness_grad(0.3, 0.0);
        assert!(((fd - g) / g).abs() < 1e-6);
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        let d = 1e-9;
        assert!((smooth_l1(1.0 - d) - smooth_l1(1.0 + d)).abs() < 1e-8);
    }

    #[test]
    fn reg_loss_values() {
        let t = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(rpn_reg_loss(&t, &t), 0.0);
        assert_eq!(rpn_reg_loss(&[0.5, 0., 0., 0.], &[0.; 4]), 0.125);
    }

    #[test]
    fn softmax_ce_values() {
        assert!((softmax_ce(&[0.3, 0.3], 0).unwrap() - LN_2).abs() < 1e-15);
        assert!((softmax_ce(&[0.3, 0.3], 1).unwrap() - LN_2).abs() < 1e-15);
        assert!(softmax_ce(&[-50.0, 50.0, -50.0], 1).unwrap() < 1e-40);
        assert_eq!(
            softmax_ce(&[1.0, 2.0], 2).unwrap_err(),
            LossError::ClassOutOfRange { class: 2, classes: 2 }
        );
    }

    #[test]
    fn softmax_ce_shift_invariant() {
        let l = [0.2, -1.3, 4.0, 0.7];
        let shifted: Vec<f64> = l.iter().map(|v| v + 123.456).collect();
        for u in 0..4 {
            let a = softmax_ce(&l, u).unwrap();
            let b = softmax_ce(&shifted, u).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fast_rcnn_cases() {
        let mut inp = LossInputs {
            logits: vec![0.0, 0.0],
            class: 1,
            t_u: [0.5, 0., 0., 0.],
            v: [0.; 4],
            lambda: 1.0,
        };
        assert!((fast_rcnn_loss(&inp).unwrap() - (LN_2 + 0.125)).abs() < 1e-15);
        inp.lambda = 0.0;
        assert_eq!(fast_rcnn_loss(&inp).unwrap(), softmax_ce(&inp.logits, 1).unwrap());
        inp.lambda = 1.0;
        inp.class = 0;
        assert_eq!(fast_rcnn_loss(&inp).unwrap(), softmax_ce(&inp.logits, 0).unwrap());
    }

    #[test]
    fn total_loss_cases() {
        let c = LossComponents {
            rpn_cls: 0.0366,
            rpn_reg: 0.0112,
            box_cls: 0.1833,
            box_reg: 0.0261,
        };
        assert!((total_loss(&c, &DEFAULT_LOSS_WEIGHTS).unwrap() - 0.2572).abs() < 1e-12);
        assert_eq!(total_loss(&c, &[0., 0., 0., 1.]).unwrap(), 0.0261);
        assert_eq!(total_loss(&LossComponents::default(), &[1.0; 4]).unwrap(), 0.0);
        assert_eq!(
            total_loss(&c, &[1., -1., 1., 1.]).unwrap_err(),
            LossError::NegativeWeight
        );
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(&[-3.0, 5.0, 0.0]), vec![0.0, 5.0, 0.0]);
    }
}
