//! Focal classification loss and smooth-L1 box regression.

use serde::{Deserialize, Serialize};

use super::anchors::{AnchorAssignment, AnchorTarget, GroundTruthBox};
use super::RawPrediction;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalLossParams {
    /// Weight on the positive branch; negatives get `1 - alpha`.
    pub alpha: f64,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            gamma_pos: 2.5,
            gamma_neg: 2.5,
        }
    }
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "focal alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= 0.0) {
            return Err(Error::Config("focal gammas must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocalTarget {
    Positive,
    Negative,
}

fn check_domain<T: Scalar>(p: T, target: FocalTarget) -> Result<()> {
    let ok = match target {
        FocalTarget::Positive => p > T::zero() && p <= T::one(),
        FocalTarget::Negative => p >= T::zero() && p < T::one(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "score {p} outside the focal loss domain for {target:?}"
        )))
    }
}

/// `-alpha (1-p)^gamma_pos log p` for positives and
/// `-(1-alpha) p^gamma_neg log(1-p)` for negatives.
pub fn focal_loss<T: Scalar>(p: T, target: FocalTarget, params: &FocalLossParams) -> Result<T> {
    check_domain(p, target)?;
    let one = T::one();
    Ok(match target {
        FocalTarget::Positive => -T::lit(params.alpha) * (one - p).powf(T::lit(params.gamma_pos)) * p.ln(),
        FocalTarget::Negative => -T::lit(1.0 - params.alpha) * p.powf(T::lit(params.gamma_neg)) * (one - p).ln(),
    })
}

/// Derivative of [`focal_loss`] with respect to `p`.
pub fn focal_loss_grad<T: Scalar>(p: T, target: FocalTarget, params: &FocalLossParams) -> Result<T> {
    check_domain(p, target)?;
    let one = T::one();
    Ok(match target {
        FocalTarget::Positive => {
            let g = T::lit(params.gamma_pos);
            let q = one - p;
            // (1-p)^(g-1) log p -> 0 as p -> 1 for g > 0
            let focus = if q == T::zero() {
                T::zero()
            } else {
                g * q.powf(g - one) * p.ln()
            };
            T::lit(params.alpha) * (focus - q.powf(g) / p)
        }
        FocalTarget::Negative => {
            let g = T::lit(params.gamma_neg);
            let q = one - p;
            let focus = if p == T::zero() {
                T::zero()
            } else {
                g * p.powf(g - one) * q.ln()
            };
            -T::lit(1.0 - params.alpha) * (focus - p.powf(g) / q)
        }
    })
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Focal loss of `sigmoid(logit)` and its derivative with respect to the
/// logit, computed stably for any finite logit.
pub fn focal_loss_logit<T: Scalar>(logit: T, target: FocalTarget, params: &FocalLossParams) -> (T, T) {
    let p = sigmoid(logit);
    let one = T::one();
    match target {
        FocalTarget::Positive => {
            let a = T::lit(params.alpha);
            let g = T::lit(params.gamma_pos);
            let nlogp = softplus(-logit);
            let w = (one - p).powf(g);
            (a * w * nlogp, a * w * (-g * p * nlogp - (one - p)))
        }
        FocalTarget::Negative => {
            let a = T::lit(1.0 - params.alpha);
            let g = T::lit(params.gamma_neg);
            let nlog1mp = softplus(logit);
            let w = p.powf(g);
            (a * w * nlog1mp, a * w * (g * (one - p) * nlog1mp + p))
        }
    }
}

/// Smooth-L1 with knee 1: value and derivative.
pub fn smooth_l1<T: Scalar>(d: T) -> (T, T) {
    let half = T::lit(0.5);
    if d.abs() < T::one() {
        (half * d * d, d)
    } else {
        (d.abs() - half, d.signum())
    }
}

/// Mean over positive anchors of the summed smooth-L1 coordinate error; 0
/// when there are no positives.
pub fn box_regression_loss<T: Scalar>(deltas: &[T], targets: &[[f64; 4]], positive_mask: &[bool]) -> Result<T> {
    if deltas.len() != targets.len() * 4 || targets.len() != positive_mask.len() {
        return Err(Error::Input(format!(
            "box loss shapes disagree: {} deltas, {} targets, {} mask entries",
            deltas.len(),
            targets.len(),
            positive_mask.len()
        )));
    }
    let mut total = T::zero();
    let mut npos = 0usize;
    for (a, &pos) in positive_mask.iter().enumerate() {
        if !pos {
            continue;
        }
        npos += 1;
        for j in 0..4 {
            total += smooth_l1(deltas[a * 4 + j] - T::lit(targets[a][j])).0;
        }
    }
    Ok(if npos == 0 {
        T::zero()
    } else {
        total / T::lit(npos as f64)
    })
}

#[derive(Debug, Clone)]
pub struct DetectionLoss<T> {
    pub total: T,
    pub classification: T,
    pub regression: T,
    pub positives: usize,
    /// dTotal/dLogit, `(anchors, classes)`.
    pub grad_logits: Vec<T>,
    /// dTotal/dDelta, `(anchors, 4)`.
    pub grad_deltas: Vec<T>,
}

/// Focal loss over every (anchor, class) pair plus `box_weight` times the
/// box loss, both normalized by the positive-anchor count (floor 1).
/// Gradients are scaled by `grad_scale` (e.g. `1/batch`).
pub fn detection_loss<T: Scalar>(
    raw: &RawPrediction<T>,
    assignment: &AnchorAssignment,
    gts: &[GroundTruthBox],
    params: &FocalLossParams,
    box_weight: f64,
    grad_scale: f64,
) -> DetectionLoss<T> {
    let k = raw.num_classes;
    let n = raw.num_anchors();
    let npos = assignment.positives();
    let norm = T::lit(npos.max(1) as f64);
    let scale = T::lit(grad_scale) / norm;
    let bw = T::lit(box_weight);
    let mut grad_logits = vec![T::zero(); n * k];
    let mut grad_deltas = vec![T::zero(); n * 4];
    let mut cls = T::zero();
    let mut reg = T::zero();
    for a in 0..n {
        let positive_class = match assignment.targets[a] {
            AnchorTarget::Ignore => continue,
            AnchorTarget::Negative => None,
            AnchorTarget::Positive(gi) => Some(gts[gi].class.index()),
        };
        for c in 0..k {
            let target = if positive_class == Some(c) {
                FocalTarget::Positive
            } else {
                FocalTarget::Negative
            };
            let (l, g) = focal_loss_logit(raw.class_logits[a * k + c], target, params);
            cls += l;
            grad_logits[a * k + c] = g * scale;
        }
        if positive_class.is_some() {
            for j in 0..4 {
                let d = raw.box_deltas[a * 4 + j] - T::lit(assignment.regression[a][j]);
                let (l, g) = smooth_l1(d);
                reg += l;
                grad_deltas[a * 4 + j] = bw * g * scale;
            }
        }
    }
    let classification = cls / norm;
    let regression = reg / norm;
    DetectionLoss {
        total: classification + bw * regression,
        classification,
        regression,
        positives: npos,
        grad_logits,
        grad_deltas,
    }
}
