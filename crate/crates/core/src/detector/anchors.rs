use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{LesionClass, PixelBox};

/// One square anchor centred in every feature cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: usize,
    pub anchor_size: f64,
    pub image_size: usize,
}

impl AnchorGrid {
    pub fn new(grid_h: usize, grid_w: usize, stride: usize, anchor_size: f64, image_size: usize) -> Self {
        Self {
            grid_h,
            grid_w,
            stride,
            anchor_size,
            image_size,
        }
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centre(&self, anchor: usize) -> (f64, f64) {
        let (y, x) = (anchor / self.grid_w, anchor % self.grid_w);
        let s = self.stride as f64;
        ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s)
    }

    pub fn anchor_box(&self, anchor: usize) -> PixelBox {
        let (cx, cy) = self.centre(anchor);
        PixelBox::new(cx, cy, self.anchor_size, self.anchor_size)
    }

    /// Regression target that maps `anchor` onto `gt`.
    pub fn encode(&self, anchor: usize, gt: &PixelBox) -> [f64; 4] {
        let a = self.anchor_box(anchor);
        [
            (gt.cx - a.cx) / a.w,
            (gt.cy - a.cy) / a.h,
            (gt.w / a.w).ln(),
            (gt.h / a.h).ln(),
        ]
    }

    /// Inverse of [`AnchorGrid::encode`].
    pub fn decode(&self, anchor: usize, deltas: [f64; 4]) -> PixelBox {
        let a = self.anchor_box(anchor);
        PixelBox::new(
            a.cx + deltas[0] * a.w,
            a.cy + deltas[1] * a.h,
            a.w * deltas[2].exp(),
            a.h * deltas[3].exp(),
        )
    }
}

/// Annotated lesion box used as a training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub id: u32,
    pub bbox: PixelBox,
    pub class: LesionClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorTarget {
    /// Index into the ground-truth slice passed to [`assign_anchors`].
    Positive(usize),
    Negative,
    /// Excluded from the classification loss.
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorAssignment {
    pub targets: Vec<AnchorTarget>,
    /// Zero for non-positive anchors.
    pub regression: Vec<[f64; 4]>,
}

impl AnchorAssignment {
    pub fn positives(&self) -> usize {
        self.targets
            .iter()
            .filter(|t| matches!(t, AnchorTarget::Positive(_)))
            .count()
    }
}

/// Nearest-centre assignment. Ground truths are processed in ascending id
/// order; each claims its nearest unclaimed anchor (lowest index on ties).
/// Other anchors within half a ground-truth diagonal are ignored.
pub fn assign_anchors(gts: &[GroundTruthBox], grid: &AnchorGrid) -> Result<AnchorAssignment> {
    let n = grid.len();
    let size = grid.image_size as f64;
    for g in gts {
        let b = g.bbox;
        if !(b.cx >= 0.0 && b.cx < size && b.cy >= 0.0 && b.cy < size) {
            return Err(Error::Input(format!(
                "ground truth {} centre ({}, {}) lies outside the {size}px image",
                g.id, b.cx, b.cy
            )));
        }
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::Input(format!("ground truth {} has non-positive size", g.id)));
        }
    }
    if gts.len() > n {
        return Err(Error::Input(format!(
            "{} ground truths cannot each claim one of {n} anchors",
            gts.len()
        )));
    }

    let mut order: Vec<usize> = (0..gts.len()).collect();
    order.sort_by_key(|&i| (gts[i].id, i));

    let mut targets = vec![AnchorTarget::Negative; n];
    let mut regression = vec![[0.0; 4]; n];
    for &gi in &order {
        let b = gts[gi].bbox;
        let mut best: Option<(f64, usize)> = None;
        for (a, t) in targets.iter().enumerate() {
            if matches!(t, AnchorTarget::Positive(_)) {
                continue;
            }
            let (ax, ay) = grid.centre(a);
            let d2 = (ax - b.cx).powi(2) + (ay - b.cy).powi(2);
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, a));
            }
        }
        let (_, a) = best.expect("free anchor exists");
        targets[a] = AnchorTarget::Positive(gi);
        regression[a] = grid.encode(a, &b);
    }

    for (a, target) in targets.iter_mut().enumerate() {
        if matches!(target, AnchorTarget::Positive(_)) {
            continue;
        }
        let (ax, ay) = grid.centre(a);
        let near = gts.iter().any(|g| {
            let half_diag = (g.bbox.w.powi(2) + g.bbox.h.powi(2)).sqrt() / 2.0;
            ((ax - g.bbox.cx).powi(2) + (ay - g.bbox.cy).powi(2)).sqrt() < half_diag
        });
        if near {
            *target = AnchorTarget::Ignore;
        }
    }
    Ok(AnchorAssignment { targets, regression })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> AnchorGrid {
        AnchorGrid::new(8, 8, 16, 14.0, 128)
    }

    fn gt(id: u32, cx: f64, cy: f64, s: f64) -> GroundTruthBox {
        GroundTruthBox {
            id,
            bbox: PixelBox::new(cx, cy, s, s),
            class: LesionClass::Malignant,
        }
    }

    /// Brute force: try every ordering of ground truths, simulate the
    /// lowest-id-first rule literally, and check the result is unique.
    fn brute_positive_map(gts: &[GroundTruthBox], grid: &AnchorGrid) -> Vec<(u32, usize)> {
        let mut ids: Vec<u32> = gts.iter().map(|g| g.id).collect();
        ids.sort();
        let mut taken: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for id in ids {
            let g = gts.iter().find(|g| g.id == id).unwrap();
            let mut cands: Vec<(f64, usize)> = (0..grid.len())
                .filter(|a| !taken.contains(a))
                .map(|a| {
                    let (x, y) = grid.centre(a);
                    ((x - g.bbox.cx).powi(2) + (y - g.bbox.cy).powi(2), a)
                })
                .collect();
            cands.sort_by(|p, q| p.partial_cmp(q).unwrap());
            taken.push(cands[0].1);
            out.push((id, cands[0].1));
        }
        out
    }

    #[test]
    fn no_ground_truth_means_all_negative() {
        let a = assign_anchors(&[], &grid()).unwrap();
        assert!(a.targets.iter().all(|t| *t == AnchorTarget::Negative));
    }

    #[test]
    fn exact_cell_centre_claims_that_anchor() {
        let a = assign_anchors(&[gt(0, 40.0, 24.0, 10.0)], &grid()).unwrap();
        // cell (x=2, y=1)
        assert_eq!(a.targets[8 + 2], AnchorTarget::Positive(0));
        assert_eq!(a.positives(), 1);
        assert_eq!(
            a.regression[10],
            [0.0, 0.0, (10.0f64 / 14.0).ln(), (10.0f64 / 14.0).ln()]
        );
    }

    #[test]
    fn contested_anchor_goes_to_lower_id() {
        // both nearest to anchor 10 (centre 40,24)
        let gts = [gt(5, 42.0, 25.0, 10.0), gt(2, 39.0, 26.0, 10.0)];
        let a = assign_anchors(&gts, &grid()).unwrap();
        assert_eq!(a.targets[10], AnchorTarget::Positive(1));
        let want = brute_positive_map(&gts, &grid());
        assert_eq!(want[0], (2, 10));
        let (_, other) = want[1];
        assert_eq!(a.targets[other], AnchorTarget::Positive(0));
        assert_eq!(a.positives(), 2);
    }

    #[test]
    fn big_box_ignores_neighbours() {
        let a = assign_anchors(&[gt(0, 40.0, 40.0, 40.0)], &grid()).unwrap();
        assert!(a.targets.contains(&AnchorTarget::Ignore));
    }

    #[test]
    fn centre_outside_image_is_an_error() {
        assert!(matches!(
            assign_anchors(&[gt(0, 130.0, 10.0, 5.0)], &grid()),
            Err(Error::Input(_))
        ));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(cx in 0.0..128.0f64, cy in 0.0..128.0f64,
                                    w in 1.0..60.0f64, h in 1.0..60.0f64, anchor in 0usize..64) {
            let g = grid();
            let b = PixelBox::new(cx, cy, w, h);
            let back = g.decode(anchor, g.encode(anchor, &b));
            prop_assert!((back.cx - cx).abs() < 1e-6);
            prop_assert!((back.cy - cy).abs() < 1e-6);
            prop_assert!((back.w - w).abs() < 1e-6);
            prop_assert!((back.h - h).abs() < 1e-6);
        }

        #[test]
        fn assignment_is_permutation_invariant(
            pts in proptest::collection::vec((1.0..127.0f64, 1.0..127.0f64, 4.0..20.0f64), 0..6),
            rot in 0usize..6,
        ) {
            let gts: Vec<GroundTruthBox> = pts.iter().enumerate()
                .map(|(i, &(x, y, s))| gt(i as u32, x, y, s)).collect();
            let mut shuffled = gts.clone();
            if !shuffled.is_empty() {
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            let a = assign_anchors(&gts, &grid()).unwrap();
            let b = assign_anchors(&shuffled, &grid()).unwrap();
            let map = |asg: &AnchorAssignment, src: &[GroundTruthBox]| -> Vec<Option<u32>> {
                asg.targets.iter().map(|t| match t {
                    AnchorTarget::Positive(i) => Some(src[*i].id),
                    _ => None,
                }).collect()
            };
            prop_assert_eq!(map(&a, &gts), map(&b, &shuffled));
            let flags = |asg: &AnchorAssignment| -> Vec<bool> {
                asg.targets.iter().map(|t| *t == AnchorTarget::Ignore).collect()
            };
            prop_assert_eq!(flags(&a), flags(&b));
            let want = brute_positive_map(&gts, &grid());
            for (id, anchor) in want {
                prop_assert_eq!(map(&a, &gts)[anchor], Some(id));
            }
        }
    }
}
