use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::RawPrediction;
use crate::scalar::Scalar;
use crate::synthgen::{LesionClass, PixelBox};

pub const DEFAULT_SCORE_FLOOR: f64 = 0.05;
pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Log-size deltas are clamped to this magnitude before exponentiation.
const MAX_LOG_SCALE: f64 = 4.0;

/// A scored box. Field order matches the predictions CSV header
/// `sample_id,cx,cy,w,h,score,class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub sample_id: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub class: LesionClass,
}

impl Detection {
    pub fn bbox(&self) -> PixelBox {
        PixelBox::new(self.cx, self.cy, self.w, self.h)
    }
}

/// Greedy non-maximum suppression over `(box, score, tie_key)` candidates.
/// Visits in descending score (ascending `tie_key` on ties) and drops any
/// candidate whose IoU with a kept box exceeds `iou_threshold`. Returns the
/// kept candidate indices in visit order.
pub fn nms(candidates: &[(PixelBox, f64, usize)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .1
            .total_cmp(&candidates[a].1)
            .then(candidates[a].2.cmp(&candidates[b].2))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let bi = candidates[i].0;
        if kept.iter().all(|&k| candidates[k].0.iou(&bi) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

fn clip(b: PixelBox, size: f64) -> PixelBox {
    let x0 = b.x0().clamp(0.0, size);
    let x1 = b.x1().clamp(0.0, size);
    let y0 = b.y0().clamp(0.0, size);
    let y1 = b.y1().clamp(0.0, size);
    PixelBox::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
}

/// Scores every anchor with its best class probability, applies box
/// deltas, clips to the image, drops scores below `score_floor` and runs
/// NMS. Output is sorted by descending score.
pub fn decode_detections<T: Scalar>(
    raw: &RawPrediction<T>,
    sample_id: &str,
    score_floor: f64,
    nms_iou: f64,
) -> Vec<Detection> {
    let size = raw.grid.image_size as f64;
    let mut candidates = Vec::new();
    let mut classes = Vec::new();
    for a in 0..raw.num_anchors() {
        let (mut best_c, mut best_p) = (0usize, f64::NEG_INFINITY);
        for (c, &logit) in raw.logits(a).iter().enumerate() {
            let p = sigmoid(logit).as_f64();
            if p > best_p {
                best_p = p;
                best_c = c;
            }
        }
        if best_p < score_floor {
            continue;
        }
        let d = raw.deltas(a);
        let deltas = [
            d[0].as_f64(),
            d[1].as_f64(),
            d[2].as_f64().clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
            d[3].as_f64().clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE),
        ];
        let b = clip(raw.grid.decode(a, deltas), size);
        if !(b.w > 0.0 && b.h > 0.0) {
            continue;
        }
        candidates.push((b, best_p, a));
        classes.push(best_c);
    }
    nms(&candidates, nms_iou)
        .into_iter()
        .map(|i| {
            let (b, score, _) = candidates[i];
            Detection {
                sample_id: sample_id.to_string(),
                cx: b.cx,
                cy: b.cy,
                w: b.w,
                h: b.h,
                score,
                class: LesionClass::from_index(classes[i]).unwrap_or(LesionClass::Malignant),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::AnchorGrid;
    use proptest::prelude::*;

    /// Exhaustive check: the kept set is the unique subset in which a box is
    /// dropped exactly when some higher-ranked kept box overlaps it.
    fn brute_nms(c: &[(PixelBox, f64, usize)], thr: f64) -> Vec<usize> {
        let n = c.len();
        let rank = |i: usize| (std::cmp::Reverse(c[i].1.to_bits()), c[i].2);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by_key(|&i| rank(i));
        let mut found = None;
        for mask in 0u32..(1 << n) {
            let kept: Vec<usize> = idx.iter().copied().filter(|&i| mask >> i & 1 == 1).collect();
            let ok = idx.iter().all(|&i| {
                let higher_kept: Vec<usize> = kept.iter().copied().filter(|&k| rank(k) < rank(i)).collect();
                let suppressed = higher_kept.iter().any(|&k| c[k].0.iou(&c[i].0) > thr);
                (mask >> i & 1 == 1) != suppressed
            });
            if ok {
                assert!(found.is_none(), "greedy NMS must be unique");
                found = Some(kept);
            }
        }
        found.unwrap()
    }

    fn raw_with(logits: Vec<f64>, deltas: Vec<f64>) -> RawPrediction<f64> {
        RawPrediction {
            class_logits: logits,
            box_deltas: deltas,
            num_classes: 2,
            grid: AnchorGrid::new(2, 2, 16, 12.0, 32),
        }
    }

    #[test]
    fn very_negative_logits_give_nothing() {
        let raw = raw_with(vec![-50.0; 8], vec![0.0; 16]);
        assert!(decode_detections(&raw, "x", DEFAULT_SCORE_FLOOR, 0.5).is_empty());
    }

    #[test]
    fn identical_boxes_keep_the_higher_score() {
        let b = PixelBox::new(10.0, 10.0, 8.0, 8.0);
        assert_eq!(nms(&[(b, 0.8, 0), (b, 0.9, 1)], 0.5), vec![1]);
    }

    #[test]
    fn three_box_fixture_matches_brute_force() {
        // A-B IoU 0.6, A-C 3/17, B-C 5.5/14.5
        let a = PixelBox::new(5.0, 0.5, 10.0, 1.0);
        let b = PixelBox::new(7.5, 0.5, 10.0, 1.0);
        let c = PixelBox::new(12.0, 0.5, 10.0, 1.0);
        assert!((a.iou(&b) - 0.6).abs() < 1e-12);
        let cands = [(a, 0.9, 0), (b, 0.8, 1), (c, 0.7, 2)];
        for thr in [0.1, 0.25, 0.5, 0.7] {
            assert_eq!(nms(&cands, thr), brute_nms(&cands, thr), "thr {thr}");
        }
        assert_eq!(nms(&cands, 0.5).len(), 2);
    }

    #[test]
    fn decoded_boxes_are_clipped_and_sorted() {
        let mut logits = vec![-50.0; 8];
        logits[0] = 3.0; // anchor 0, malignant
        logits[7] = 1.0; // anchor 3, benign
        let mut deltas = vec![0.0; 16];
        deltas[0] = -0.5; // anchor 0 straddles the left edge
        let raw = raw_with(logits, deltas);
        let dets = decode_detections(&raw, "s1", 0.05, 0.5);
        assert_eq!(dets.len(), 2);
        assert!(dets[0].score > dets[1].score);
        assert_eq!(dets[0].class, LesionClass::Malignant);
        assert_eq!(dets[1].class, LesionClass::Benign);
        assert!(dets[0].bbox().x0() >= 0.0);
        assert_eq!(dets[0].sample_id, "s1");
    }

    proptest! {
        #[test]
        fn nms_matches_brute_force_and_is_permutation_invariant(
            boxes in proptest::collection::vec((0.0..30.0f64, 0.0..30.0f64, 2.0..15.0f64, 0.0..1.0f64), 1..8),
            thr in 0.1..0.9f64,
        ) {
            let cands: Vec<(PixelBox, f64, usize)> = boxes.iter().enumerate()
                .map(|(i, &(x, y, s, p))| (PixelBox::new(x, y, s, s), p, i)).collect();
            let kept = nms(&cands, thr);
            let mut want = brute_nms(&cands, thr);
            let mut got = kept.clone();
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
            let mut rev = cands.clone();
            rev.reverse();
            let kept_rev: Vec<usize> = nms(&rev, thr).into_iter().map(|i| rev[i].2).collect();
            let kept_ids: Vec<usize> = kept.into_iter().map(|i| cands[i].2).collect();
            prop_assert_eq!(kept_rev, kept_ids);
        }
    }
}
