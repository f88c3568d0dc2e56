//! Lesion matching, FROC curves, truncated FROC area and operating-point
//! selection.

mod io;

pub use io::{read_predictions, write_predictions};

use std::collections::HashMap;
use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::synthgen::{ManifestEntry, PixelBox};

pub const DEFAULT_RADIUS_FLOOR: f64 = 100.0;

/// Numeric type for curve coordinates. `f64` in production, an exact
/// rational in the oracle tests.
pub trait CurveScalar: Num + Clone + PartialOrd + FromPrimitive + Debug {}

impl<T: Num + Clone + PartialOrd + FromPrimitive + Debug> CurveScalar for T {}

/// Hit radius for a ground-truth box of the given size.
pub fn match_radius(gt_width: f64, gt_height: f64) -> Result<f64> {
    match_radius_with_floor(gt_width, gt_height, DEFAULT_RADIUS_FLOOR)
}

pub fn match_radius_with_floor(gt_width: f64, gt_height: f64, floor: f64) -> Result<f64> {
    Ok(radius_sq(gt_width, gt_height, floor)?.sqrt())
}

/// Squared radius, computed without a square root so boundary cases are
/// exact for representable inputs.
fn radius_sq(w: f64, h: f64, floor: f64) -> Result<f64> {
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::Input(format!("box dimensions must be positive, got {w}x{h}")));
    }
    Ok(((w * w + h * h) / 4.0).max(floor * floor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status", content = "gt", rename_all = "snake_case")]
pub enum DetectionStatus {
    TruePositive(usize),
    FalsePositive,
    /// Within range of a ground truth already claimed by a higher-ranked
    /// detection. Counts as neither hit nor false positive.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Index of the matching detection for each ground truth.
    pub gt_matches: Vec<Option<usize>>,
    /// Status of each detection, in input order.
    pub statuses: Vec<DetectionStatus>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.gt_matches.iter().filter(|m| m.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.statuses
            .iter()
            .filter(|s| **s == DetectionStatus::FalsePositive)
            .count()
    }
}

/// Detection indices in processing order: descending score, then index.
pub fn processing_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching of one image's detections against its ground truths.
pub fn match_detections(detections: &[Detection], gts: &[PixelBox], radius_floor: f64) -> Result<MatchResult> {
    let radii = gts
        .iter()
        .map(|g| radius_sq(g.w, g.h, radius_floor))
        .collect::<Result<Vec<_>>>()?;
    let mut gt_matches = vec![None; gts.len()];
    let mut statuses = vec![DetectionStatus::FalsePositive; detections.len()];
    for d in processing_order(detections) {
        let det = &detections[d];
        let mut best: Option<(f64, usize)> = None;
        let mut near_claimed = false;
        for (g, gt) in gts.iter().enumerate() {
            let d2 = (det.cx - gt.cx).powi(2) + (det.cy - gt.cy).powi(2);
            if d2 >= radii[g] {
                continue;
            }
            if gt_matches[g].is_some() {
                near_claimed = true;
            } else if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, g));
            }
        }
        statuses[d] = match best {
            Some((_, g)) => {
                gt_matches[g] = Some(d);
                DetectionStatus::TruePositive(g)
            }
            None if near_claimed => DetectionStatus::Duplicate,
            None => DetectionStatus::FalsePositive,
        };
    }
    Ok(MatchResult { gt_matches, statuses })
}

/// One image's detections and ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub sample_id: String,
    pub detections: Vec<Detection>,
    pub gts: Vec<PixelBox>,
}

/// Pairs predictions with manifest ground truth, one [`ImageEval`] per
/// entry in manifest order. Predictions for unknown samples are an error.
pub fn collect_images(entries: &[ManifestEntry], detections: &[Detection]) -> Result<Vec<ImageEval>> {
    let index: HashMap<&str, usize> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.sample_id.as_str(), i))
        .collect();
    let mut images: Vec<ImageEval> = entries
        .iter()
        .map(|e| ImageEval {
            sample_id: e.sample_id.clone(),
            detections: Vec::new(),
            gts: e.lesion_boxes(),
        })
        .collect();
    for d in detections {
        let i = *index
            .get(d.sample_id.as_str())
            .ok_or_else(|| Error::Input(format!("prediction for {} which is not in the manifest", d.sample_id)))?;
        images[i].detections.push(d.clone());
    }
    Ok(images)
}

/// Keeps only images with at least one annotated lesion.
pub fn positive_only(images: &[ImageEval]) -> Vec<ImageEval> {
    images.iter().filter(|i| !i.gts.is_empty()).cloned().collect()
}

/// Drops detections scoring below `tau`.
pub fn apply_threshold(images: &[ImageEval], tau: f64) -> Vec<ImageEval> {
    images
        .iter()
        .map(|i| ImageEval {
            detections: i.detections.iter().filter(|d| d.score >= tau).cloned().collect(),
            ..i.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint<T> {
    pub fp_per_image: T,
    pub sensitivity: T,
    /// Score cutoff producing this point; detections with score ≥ it count.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve<T> {
    pub points: Vec<FrocPoint<T>>,
}

pub type FrocCurveF64 = FrocCurve<f64>;

/// Cumulative (threshold, TP, FP) after each distinct score, descending.
/// Restricting to scores ≥ τ is a prefix of the matching order, so one
/// greedy pass per image yields every threshold's counts.
fn sweep(images: &[ImageEval], radius_floor: f64) -> Result<Vec<(f64, usize, usize)>> {
    let mut marks: Vec<(f64, usize, usize)> = Vec::new();
    for img in images {
        let m = match_detections(&img.detections, &img.gts, radius_floor)?;
        for (d, status) in m.statuses.iter().enumerate() {
            let s = img.detections[d].score;
            // duplicates still define a threshold
            marks.push(match status {
                DetectionStatus::TruePositive(_) => (s, 1, 0),
                DetectionStatus::FalsePositive => (s, 0, 1),
                DetectionStatus::Duplicate => (s, 0, 0),
            });
        }
    }
    marks.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < marks.len() {
        let s = marks[i].0;
        while i < marks.len() && marks[i].0 == s {
            tp += marks[i].1;
            fp += marks[i].2;
            i += 1;
        }
        out.push((s, tp, fp));
    }
    Ok(out)
}

/// FROC curve over all images, one point per distinct detection score.
/// With no detections the curve is the single point (0, 0).
pub fn froc_curve<T: CurveScalar>(images: &[ImageEval], radius_floor: f64) -> Result<FrocCurve<T>> {
    let total_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    if total_gt == 0 {
        return Err(Error::Input(
            "sensitivity is undefined without ground-truth lesions".into(),
        ));
    }
    let n = T::from_usize(images.len()).expect("image count fits");
    let g = T::from_usize(total_gt).expect("lesion count fits");
    let frac = |num: usize, den: &T| T::from_usize(num).expect("count fits") / den.clone();
    let steps = sweep(images, radius_floor)?;
    if steps.is_empty() {
        return Ok(FrocCurve {
            points: vec![FrocPoint {
                fp_per_image: T::zero(),
                sensitivity: T::zero(),
                threshold: f64::INFINITY,
            }],
        });
    }
    let points = steps
        .into_iter()
        .map(|(s, tp, fp)| FrocPoint {
            fp_per_image: frac(fp, &n),
            sensitivity: frac(tp, &g),
            threshold: s,
        })
        .collect();
    Ok(FrocCurve { points })
}

/// Area under the FROC curve on `[0, x]`, divided by `x`.
pub fn fauc<T: CurveScalar>(curve: &FrocCurve<T>, x: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::Input("FAUC cutoff must be positive".into()));
    }
    let Some(first) = curve.points.first() else {
        return Ok(T::zero());
    };
    let two = T::one() + T::one();
    let start_s = if first.fp_per_image == T::zero() {
        first.sensitivity.clone()
    } else {
        T::zero()
    };
    let (mut px, mut ps) = (T::zero(), start_s);
    let mut area = T::zero();
    for p in &curve.points {
        if px >= x {
            break;
        }
        let (qx, qs) = (p.fp_per_image.clone(), p.sensitivity.clone());
        if qx > x {
            let sx = ps.clone() + (qs - ps.clone()) * (x.clone() - px.clone()) / (qx - px.clone());
            area = area + (x.clone() - px.clone()) * (ps + sx.clone()) / two.clone();
            px = x.clone();
            ps = sx;
            break;
        }
        area = area + (qx.clone() - px) * (ps + qs.clone()) / two.clone();
        px = qx;
        ps = qs;
    }
    if px < x {
        area = area + (x.clone() - px) * ps;
    }
    Ok(area / x)
}

/// Smallest observed score whose false-positive rate is within
/// `target_fp_per_image`. If every observed score exceeds the budget, a
/// cutoff just above the highest score. No detections at all gives 0.
pub fn select_threshold(images: &[ImageEval], target_fp_per_image: f64, radius_floor: f64) -> Result<f64> {
    let steps = sweep(images, radius_floor)?;
    let n = images.len() as f64;
    let mut best = None;
    for &(s, _, fp) in &steps {
        if fp as f64 <= target_fp_per_image * n {
            best = Some(s);
        } else {
            break;
        }
    }
    Ok(match (best, steps.first()) {
        (Some(s), _) => s,
        (None, Some(&(top, _, _))) => top + f64::EPSILON * top.abs().max(1.0),
        (None, None) => 0.0,
    })
}

/// Sensitivity and false positives per image of the detections at or above
/// `tau`.
pub fn operating_point(images: &[ImageEval], tau: f64, radius_floor: f64) -> Result<(f64, f64)> {
    let total_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    let (mut tp, mut fp) = (0, 0);
    for img in apply_threshold(images, tau) {
        let m = match_detections(&img.detections, &img.gts, radius_floor)?;
        tp += m.true_positives();
        fp += m.false_positives();
    }
    let sens = if total_gt == 0 {
        0.0
    } else {
        tp as f64 / total_gt as f64
    };
    Ok((sens, fp as f64 / images.len().max(1) as f64))
}

#[cfg(test)]
mod tests;
