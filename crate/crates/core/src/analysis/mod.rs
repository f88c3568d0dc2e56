//! Per-lesion and per-detection comparison of two models, three-way miss
//! cross-tabulation, and attribution of disagreements to the generator's
//! ground-truth causes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{apply_threshold, match_detections, DetectionStatus, ImageEval};
use crate::synthgen::{ManifestEntry, PixelBox};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LesionRef {
    pub sample_id: String,
    /// Position in the image's ground-truth list.
    pub lesion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRef {
    pub sample_id: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl DetectionRef {
    pub fn bbox(&self) -> PixelBox {
        PixelBox::new(self.cx, self.cy, self.w, self.h)
    }

    fn key(&self) -> (f64, f64, f64) {
        (self.cx, self.cy, self.score)
    }
}

fn cmp_key(a: (f64, f64, f64), b: (f64, f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
}

/// A false detection of the F model paired with one of the S model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsePair {
    pub f: DetectionRef,
    pub s: DetectionRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub tau_f: f64,
    pub tau_s: f64,
    pub missed_in_f_only: Vec<LesionRef>,
    pub missed_in_s_only: Vec<LesionRef>,
    pub missed_in_both: Vec<LesionRef>,
    pub found_by_both: Vec<LesionRef>,
    pub false_dets_f_only: Vec<DetectionRef>,
    pub false_dets_s_only: Vec<DetectionRef>,
    pub false_dets_both: Vec<FalsePair>,
    /// Bucket name to the sorted, de-duplicated sample ids it touches.
    pub samples: BTreeMap<String, Vec<String>>,
}

impl BucketReport {
    /// The three miss buckets are disjoint and, with the found-by-both
    /// bucket, cover every lesion exactly once.
    pub fn check_partition(&self, total_lesions: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for l in self
            .missed_in_f_only
            .iter()
            .chain(&self.missed_in_s_only)
            .chain(&self.missed_in_both)
            .chain(&self.found_by_both)
        {
            if !seen.insert(l) {
                return Err(Error::Contract(format!("lesion {l:?} lies in two buckets")));
            }
        }
        if seen.len() != total_lesions {
            return Err(Error::Contract(format!(
                "buckets cover {} of {total_lesions} lesions",
                seen.len()
            )));
        }
        Ok(())
    }

    /// Same report with the roles of the two models exchanged.
    pub fn swapped(&self) -> Self {
        let mut samples = BTreeMap::new();
        for (k, v) in &self.samples {
            let k = match k.as_str() {
                "missed_in_f_only" => "missed_in_s_only",
                "missed_in_s_only" => "missed_in_f_only",
                "false_dets_f_only" => "false_dets_s_only",
                "false_dets_s_only" => "false_dets_f_only",
                other => other,
            };
            samples.insert(k.to_string(), v.clone());
        }
        Self {
            tau_f: self.tau_s,
            tau_s: self.tau_f,
            missed_in_f_only: self.missed_in_s_only.clone(),
            missed_in_s_only: self.missed_in_f_only.clone(),
            missed_in_both: self.missed_in_both.clone(),
            found_by_both: self.found_by_both.clone(),
            false_dets_f_only: self.false_dets_s_only.clone(),
            false_dets_s_only: self.false_dets_f_only.clone(),
            false_dets_both: self
                .false_dets_both
                .iter()
                .map(|p| FalsePair {
                    f: p.s.clone(),
                    s: p.f.clone(),
                })
                .collect(),
            samples,
        }
    }
}

struct Outcome {
    found: Vec<bool>,
    false_dets: Vec<DetectionRef>,
}

fn outcome(img: &ImageEval, radius_floor: f64) -> Result<Outcome> {
    let m = match_detections(&img.detections, &img.gts, radius_floor)?;
    let false_dets = m
        .statuses
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == DetectionStatus::FalsePositive)
        .map(|(i, _)| {
            let d = &img.detections[i];
            DetectionRef {
                sample_id: d.sample_id.clone(),
                cx: d.cx,
                cy: d.cy,
                w: d.w,
                h: d.h,
                score: d.score,
            }
        })
        .collect();
    Ok(Outcome {
        found: m.gt_matches.iter().map(Option::is_some).collect(),
        false_dets,
    })
}

/// One-to-one pairing of two models' false detections, closest pairs
/// first, only within `pair_radius`. The order does not depend on which
/// model is passed first.
fn pair_false(
    f: &[DetectionRef],
    s: &[DetectionRef],
    pair_radius: f64,
) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    let mut cands = Vec::new();
    for (i, a) in f.iter().enumerate() {
        for (j, b) in s.iter().enumerate() {
            let d2 = (a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2);
            if d2 < pair_radius * pair_radius {
                let (lo, hi) = if cmp_key(a.key(), b.key()) == Ordering::Greater {
                    (b.key(), a.key())
                } else {
                    (a.key(), b.key())
                };
                cands.push((d2, lo, hi, i, j));
            }
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(cmp_key(x.1, y.1)).then(cmp_key(x.2, y.2)));
    let mut used_f = vec![false; f.len()];
    let mut used_s = vec![false; s.len()];
    let mut pairs = Vec::new();
    for (_, _, _, i, j) in cands {
        if !used_f[i] && !used_s[j] {
            used_f[i] = true;
            used_s[j] = true;
            pairs.push((i, j));
        }
    }
    let only_f = (0..f.len()).filter(|&i| !used_f[i]).collect();
    let only_s = (0..s.len()).filter(|&j| !used_s[j]).collect();
    (pairs, only_f, only_s)
}

/// Splits lesions and false detections into agreement buckets for an F
/// model (thresholded at `tau_f`) and an S model (at `tau_s`). Both inputs
/// must list the same samples in the same order.
pub fn bucketize(
    images_f: &[ImageEval],
    images_s: &[ImageEval],
    tau_f: f64,
    tau_s: f64,
    radius_floor: f64,
    pair_radius: f64,
) -> Result<BucketReport> {
    if images_f.len() != images_s.len()
        || images_f
            .iter()
            .zip(images_s)
            .any(|(a, b)| a.sample_id != b.sample_id || a.gts != b.gts)
    {
        return Err(Error::Input("both models must be evaluated on the same samples".into()));
    }
    let images_f = apply_threshold(images_f, tau_f);
    let images_s = apply_threshold(images_s, tau_s);
    let mut r = BucketReport {
        tau_f,
        tau_s,
        missed_in_f_only: Vec::new(),
        missed_in_s_only: Vec::new(),
        missed_in_both: Vec::new(),
        found_by_both: Vec::new(),
        false_dets_f_only: Vec::new(),
        false_dets_s_only: Vec::new(),
        false_dets_both: Vec::new(),
        samples: BTreeMap::new(),
    };
    for (imf, ims) in images_f.iter().zip(&images_s) {
        let of = outcome(imf, radius_floor)?;
        let os = outcome(ims, radius_floor)?;
        for lesion in 0..imf.gts.len() {
            let l = LesionRef {
                sample_id: imf.sample_id.clone(),
                lesion,
            };
            let bucket = match (of.found[lesion], os.found[lesion]) {
                (false, true) => &mut r.missed_in_f_only,
                (true, false) => &mut r.missed_in_s_only,
                (false, false) => &mut r.missed_in_both,
                (true, true) => &mut r.found_by_both,
            };
            bucket.push(l);
        }
        let (pairs, only_f, only_s) = pair_false(&of.false_dets, &os.false_dets, pair_radius);
        r.false_dets_both.extend(pairs.into_iter().map(|(i, j)| FalsePair {
            f: of.false_dets[i].clone(),
            s: os.false_dets[j].clone(),
        }));
        r.false_dets_f_only
            .extend(only_f.into_iter().map(|i| of.false_dets[i].clone()));
        r.false_dets_s_only
            .extend(only_s.into_iter().map(|j| os.false_dets[j].clone()));
    }
    let ids = |it: &mut dyn Iterator<Item = &String>| -> Vec<String> {
        it.cloned().collect::<BTreeSet<_>>().into_iter().collect()
    };
    let lesion_ids = |v: &[LesionRef]| ids(&mut v.iter().map(|l| &l.sample_id));
    let det_ids = |v: &[DetectionRef]| ids(&mut v.iter().map(|d| &d.sample_id));
    r.samples = BTreeMap::from([
        ("missed_in_f_only".to_string(), lesion_ids(&r.missed_in_f_only)),
        ("missed_in_s_only".to_string(), lesion_ids(&r.missed_in_s_only)),
        ("missed_in_both".to_string(), lesion_ids(&r.missed_in_both)),
        ("false_dets_f_only".to_string(), det_ids(&r.false_dets_f_only)),
        ("false_dets_s_only".to_string(), det_ids(&r.false_dets_s_only)),
        (
            "false_dets_both".to_string(),
            ids(&mut r.false_dets_both.iter().map(|p| &p.f.sample_id)),
        ),
    ]);
    Ok(r)
}

/// Samples with at least one unmatched lesion at threshold `tau`.
pub fn images_with_misses(images: &[ImageEval], tau: f64, radius_floor: f64) -> Result<BTreeSet<String>> {
    missed(images, tau, radius_floor, |img, _| img.sample_id.clone())
}

/// Unmatched lesions at threshold `tau`, as `sample_id#index`.
pub fn missed_lesions(images: &[ImageEval], tau: f64, radius_floor: f64) -> Result<BTreeSet<String>> {
    missed(images, tau, radius_floor, |img, i| format!("{}#{i}", img.sample_id))
}

fn missed(
    images: &[ImageEval],
    tau: f64,
    radius_floor: f64,
    key: impl Fn(&ImageEval, usize) -> String,
) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for img in apply_threshold(images, tau) {
        let m = match_detections(&img.detections, &img.gts, radius_floor)?;
        for (i, hit) in m.gt_matches.iter().enumerate() {
            if hit.is_none() {
                out.insert(key(&img, i));
            }
        }
    }
    Ok(out)
}

/// Sizes of the three miss sets and all of their intersections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTab {
    pub sm: usize,
    pub ffdm: usize,
    pub fused: usize,
    pub sm_ffdm: usize,
    pub sm_fused: usize,
    pub ffdm_fused: usize,
    pub all_three: usize,
}

impl CrossTab {
    /// Every intersection is bounded by each of its parents.
    pub fn check_consistency(&self) -> Result<()> {
        let ok = self.sm_ffdm <= self.sm.min(self.ffdm)
            && self.sm_fused <= self.sm.min(self.fused)
            && self.ffdm_fused <= self.ffdm.min(self.fused)
            && self.all_three <= self.sm_ffdm.min(self.sm_fused).min(self.ffdm_fused);
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("inconsistent cross-tabulation {self:?}")))
        }
    }

    /// Question-and-answer rendering; `unit` names what is counted, for
    /// example "images".
    pub fn narrative(&self, unit: &str) -> String {
        let mut s = String::new();
        let lines = [
            (format!("{unit} missed by Model_SM"), self.sm),
            (format!("{unit} missed by Model_FFDM"), self.ffdm),
            (format!("{unit} missed by Fused"), self.fused),
            ("missed by Model_SM and by Model_FFDM".to_string(), self.sm_ffdm),
            ("missed by Model_SM and by Fused".to_string(), self.sm_fused),
            ("missed by Model_FFDM and by Fused".to_string(), self.ffdm_fused),
            ("missed by all three".to_string(), self.all_three),
            (
                "captured by Fused, missed by Model_SM".to_string(),
                self.sm - self.sm_fused,
            ),
            (
                "captured by Fused, missed by Model_FFDM".to_string(),
                self.ffdm - self.ffdm_fused,
            ),
            (
                "captured by Fused, missed by both single-modality models".to_string(),
                self.sm_ffdm - self.all_three,
            ),
            (
                "missed by Fused, captured by Model_SM".to_string(),
                self.fused - self.sm_fused,
            ),
        ];
        let width = lines.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        for (label, n) in lines {
            let _ = writeln!(s, "{label:<width$}  {n}");
        }
        s
    }
}

pub fn cross_tabulate(sm: &BTreeSet<String>, ffdm: &BTreeSet<String>, fused: &BTreeSet<String>) -> CrossTab {
    let both = |a: &BTreeSet<String>, b: &BTreeSet<String>| a.intersection(b).count();
    CrossTab {
        sm: sm.len(),
        ffdm: ffdm.len(),
        fused: fused.len(),
        sm_ffdm: both(sm, ffdm),
        sm_fused: both(sm, fused),
        ffdm_fused: both(ffdm, fused),
        all_three: sm.iter().filter(|k| ffdm.contains(*k) && fused.contains(*k)).count(),
    }
}

/// `numerator / denominator`, or `None` for an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub numerator: usize,
    pub denominator: usize,
    pub value: Option<f64>,
}

impl Rate {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        Self {
            numerator,
            denominator,
            value: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Share of F-only misses whose lesion is hidden in F.
    pub missed_f_only_hidden_in_f: Rate,
    /// Share of lesions hidden in F that land in the F-only miss bucket.
    pub hidden_in_f_missed_f_only: Rate,
    pub missed_s_only_hidden_in_s: Rate,
    pub hidden_in_s_missed_s_only: Rate,
    /// Share of S-only false detections overlapping an S artifact.
    pub false_s_only_on_artifact: Rate,
}

/// Joins a bucket report against the generator's visibility flags and
/// artifact boxes.
pub fn complementarity_audit(report: &BucketReport, entries: &[ManifestEntry]) -> Result<AuditReport> {
    let by_id: BTreeMap<&str, &ManifestEntry> = entries.iter().map(|e| (e.sample_id.as_str(), e)).collect();
    let mut hidden_f = BTreeSet::new();
    let mut hidden_s = BTreeSet::new();
    for e in entries {
        for (i, l) in e.lesions.iter().enumerate() {
            let (Some(vf), Some(vs)) = (l.visible_f, l.visible_s) else {
                return Err(Error::Unsupported(format!(
                    "lesion {} of {} has no visibility flags; the audit needs generator output",
                    l.id, e.sample_id
                )));
            };
            let key = LesionRef {
                sample_id: e.sample_id.clone(),
                lesion: i,
            };
            if !vf {
                hidden_f.insert(key.clone());
            }
            if !vs {
                hidden_s.insert(key);
            }
        }
    }
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Input(format!("sample {id} is not in the manifest")))
    };
    for l in report
        .missed_in_f_only
        .iter()
        .chain(&report.missed_in_s_only)
        .chain(&report.missed_in_both)
    {
        if l.lesion >= lookup(&l.sample_id)?.lesions.len() {
            return Err(Error::Input(format!(
                "lesion {} of {} is not in the manifest",
                l.lesion, l.sample_id
            )));
        }
    }
    let count = |bucket: &[LesionRef], set: &BTreeSet<LesionRef>| bucket.iter().filter(|l| set.contains(*l)).count();
    let f_only = count(&report.missed_in_f_only, &hidden_f);
    let s_only = count(&report.missed_in_s_only, &hidden_s);
    let mut on_artifact = 0;
    for d in &report.false_dets_s_only {
        let e = lookup(&d.sample_id)?;
        let b = d.bbox();
        if e.artifact_boxes_s.iter().any(|a| a.bbox().iou(&b) > 0.0) {
            on_artifact += 1;
        }
    }
    Ok(AuditReport {
        missed_f_only_hidden_in_f: Rate::new(f_only, report.missed_in_f_only.len()),
        hidden_in_f_missed_f_only: Rate::new(f_only, hidden_f.len()),
        missed_s_only_hidden_in_s: Rate::new(s_only, report.missed_in_s_only.len()),
        hidden_in_s_missed_s_only: Rate::new(s_only, hidden_s.len()),
        false_s_only_on_artifact: Rate::new(on_artifact, report.false_dets_s_only.len()),
    })
}

#[cfg(test)]
mod tests;
