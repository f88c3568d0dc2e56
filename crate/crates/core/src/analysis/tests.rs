use super::*;
use crate::detector::Detection;
use crate::synthgen::{BoxRecord, LesionClass, LesionKind, LesionRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FLOOR: f64 = 8.0;

fn det(id: &str, cx: f64, cy: f64, score: f64) -> Detection {
    Detection {
        sample_id: id.into(),
        cx,
        cy,
        w: 10.0,
        h: 10.0,
        score,
        class: LesionClass::Malignant,
    }
}

fn img(id: &str, dets: Vec<Detection>, gts: Vec<PixelBox>) -> ImageEval {
    ImageEval {
        sample_id: id.into(),
        detections: dets,
        gts,
    }
}

fn gt(cx: f64, cy: f64) -> PixelBox {
    PixelBox::new(cx, cy, 10.0, 10.0)
}

/// Images a..d hold one lesion at (50,50); image a is found only by S, b
/// only by F, c by neither, d by both. F has a false detection at
/// (100,100) in a, S one at (101,100) in a and one at (20,20) in b.
fn fixture() -> (Vec<ImageEval>, Vec<ImageEval>) {
    let f = vec![
        img("a", vec![det("a", 100.0, 100.0, 0.7)], vec![gt(50.0, 50.0)]),
        img("b", vec![det("b", 51.0, 50.0, 0.9)], vec![gt(50.0, 50.0)]),
        img("c", vec![det("c", 50.0, 50.0, 0.1)], vec![gt(50.0, 50.0)]),
        img("d", vec![det("d", 50.0, 52.0, 0.8)], vec![gt(50.0, 50.0)]),
    ];
    let s = vec![
        img(
            "a",
            vec![det("a", 49.0, 50.0, 0.9), det("a", 101.0, 100.0, 0.6)],
            vec![gt(50.0, 50.0)],
        ),
        img("b", vec![det("b", 20.0, 20.0, 0.6)], vec![gt(50.0, 50.0)]),
        img("c", vec![], vec![gt(50.0, 50.0)]),
        img("d", vec![det("d", 50.0, 50.0, 0.95)], vec![gt(50.0, 50.0)]),
    ];
    (f, s)
}

/// Direct membership: a lone lesion is found iff some detection at or
/// above the threshold lies strictly inside its radius.
fn brute_found(im: &ImageEval, tau: f64) -> bool {
    let g = im.gts[0];
    let r2 = ((g.w * g.w + g.h * g.h) / 4.0).max(FLOOR * FLOOR);
    im.detections
        .iter()
        .any(|d| d.score >= tau && (d.cx - g.cx).powi(2) + (d.cy - g.cy).powi(2) < r2)
}

#[test]
fn four_image_fixture_matches_brute_force() {
    let (f, s) = fixture();
    let r = bucketize(&f, &s, 0.5, 0.5, FLOOR, FLOOR).unwrap();
    let mut want: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (a, b) in f.iter().zip(&s) {
        let key = match (brute_found(a, 0.5), brute_found(b, 0.5)) {
            (false, true) => "f_only",
            (true, false) => "s_only",
            (false, false) => "both",
            (true, true) => "found",
        };
        want.entry(key).or_default().push(a.sample_id.clone());
    }
    let got = |v: &[LesionRef]| v.iter().map(|l| l.sample_id.clone()).collect::<Vec<_>>();
    assert_eq!(got(&r.missed_in_f_only), want["f_only"]);
    assert_eq!(got(&r.missed_in_s_only), want["s_only"]);
    assert_eq!(got(&r.missed_in_both), want["both"]);
    assert_eq!(got(&r.found_by_both), want["found"]);
    assert_eq!(want["f_only"], vec!["a"]);
    assert_eq!(want["s_only"], vec!["b"]);
    assert_eq!(want["both"], vec!["c"]);
    assert_eq!(want["found"], vec!["d"]);
    r.check_partition(4).unwrap();

    assert_eq!(r.false_dets_both.len(), 1);
    assert_eq!(r.false_dets_both[0].f.cx, 100.0);
    assert_eq!(r.false_dets_both[0].s.cx, 101.0);
    assert!(r.false_dets_f_only.is_empty());
    assert_eq!(r.false_dets_s_only.len(), 1);
    assert_eq!(r.false_dets_s_only[0].sample_id, "b");
    assert_eq!(r.samples["missed_in_both"], vec!["c"]);
}

#[test]
fn one_model_finds_everything() {
    let (f, s) = fixture();
    let perfect: Vec<ImageEval> = s
        .iter()
        .map(|i| img(&i.sample_id, vec![det(&i.sample_id, 50.0, 50.0, 0.9)], i.gts.clone()))
        .collect();
    let blind: Vec<ImageEval> = f.iter().map(|i| img(&i.sample_id, vec![], i.gts.clone())).collect();
    let r = bucketize(&blind, &perfect, 0.5, 0.5, FLOOR, FLOOR).unwrap();
    assert_eq!(r.missed_in_f_only.len(), 4);
    assert!(r.missed_in_s_only.is_empty() && r.missed_in_both.is_empty());

    let same = bucketize(&s, &s, 0.5, 0.5, FLOOR, FLOOR).unwrap();
    assert!(same.missed_in_f_only.is_empty() && same.missed_in_s_only.is_empty());
    assert!(same.false_dets_f_only.is_empty() && same.false_dets_s_only.is_empty());
}

#[test]
fn mismatched_samples_are_rejected() {
    let (f, mut s) = fixture();
    s.pop();
    assert!(matches!(
        bucketize(&f, &s, 0.5, 0.5, FLOOR, FLOOR),
        Err(Error::Input(_))
    ));
}

#[test]
fn crosstab_examples() {
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let a = set(&["1", "2", "3"]);
    let t = cross_tabulate(&a, &a, &a);
    assert_eq!(
        t,
        CrossTab {
            sm: 3,
            ffdm: 3,
            fused: 3,
            sm_ffdm: 3,
            sm_fused: 3,
            ffdm_fused: 3,
            all_three: 3
        }
    );
    let t = cross_tabulate(&set(&["1"]), &set(&["2"]), &set(&["3"]));
    assert_eq!((t.sm_ffdm, t.sm_fused, t.ffdm_fused, t.all_three), (0, 0, 0, 0));
    assert!(t.narrative("images").contains("captured by Fused, missed by Model_SM"));
}

#[test]
fn crosstab_matches_brute_force_on_random_subsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let mut sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); 3];
        let mut member = [[false; 3]; 50];
        for (i, m) in member.iter_mut().enumerate() {
            for (k, set) in sets.iter_mut().enumerate() {
                if rng.random_bool(0.4) {
                    m[k] = true;
                    set.insert(format!("img{i}"));
                }
            }
        }
        let t = cross_tabulate(&sets[0], &sets[1], &sets[2]);
        let count = |want: &[usize]| member.iter().filter(|m| want.iter().all(|&k| m[k])).count();
        assert_eq!(t.sm, count(&[0]));
        assert_eq!(t.ffdm, count(&[1]));
        assert_eq!(t.fused, count(&[2]));
        assert_eq!(t.sm_ffdm, count(&[0, 1]));
        assert_eq!(t.sm_fused, count(&[0, 2]));
        assert_eq!(t.ffdm_fused, count(&[1, 2]));
        assert_eq!(t.all_three, count(&[0, 1, 2]));
        // inclusion-exclusion on the union
        let union = member.iter().filter(|m| m.iter().any(|&x| x)).count();
        assert_eq!(
            union,
            t.sm + t.ffdm + t.fused - t.sm_ffdm - t.sm_fused - t.ffdm_fused + t.all_three
        );
        t.check_consistency().unwrap();
    }
}

fn entry(id: &str, visible_f: Option<bool>, visible_s: Option<bool>, artifacts: Vec<BoxRecord>) -> ManifestEntry {
    ManifestEntry {
        sample_id: id.into(),
        image_f_path: String::new(),
        image_s_path: String::new(),
        lesions: vec![LesionRecord {
            id: 0,
            kind: LesionKind::Mass,
            class: LesionClass::Malignant,
            cx: 50.0,
            cy: 50.0,
            w: 10.0,
            h: 10.0,
            contrast: 0.5,
            spiculated: false,
            visible_f,
            visible_s,
        }],
        artifact_boxes_s: artifacts,
        label: true,
    }
}

#[test]
fn audit_attributes_causes() {
    let (f, s) = fixture();
    let r = bucketize(&f, &s, 0.5, 0.5, FLOOR, FLOOR).unwrap();
    let art = BoxRecord {
        cx: 22.0,
        cy: 22.0,
        w: 6.0,
        h: 6.0,
    };
    let entries = vec![
        entry("a", Some(false), Some(true), vec![]),
        entry("b", Some(true), Some(false), vec![art]),
        entry("c", Some(true), Some(true), vec![]),
        entry("d", Some(true), Some(true), vec![]),
    ];
    let a = complementarity_audit(&r, &entries).unwrap();
    assert_eq!(a.missed_f_only_hidden_in_f.value, Some(1.0));
    assert_eq!(a.missed_s_only_hidden_in_s.value, Some(1.0));
    assert_eq!(a.false_s_only_on_artifact.value, Some(1.0));

    let visible: Vec<_> = ["a", "b", "c", "d"]
        .iter()
        .map(|id| entry(id, Some(true), Some(true), vec![]))
        .collect();
    let a = complementarity_audit(&r, &visible).unwrap();
    assert_eq!(a.hidden_in_f_missed_f_only.value, None);
    assert_eq!(a.hidden_in_s_missed_s_only.value, None);
    assert_eq!(a.false_s_only_on_artifact, Rate::new(0, 1));

    let unflagged: Vec<_> = ["a", "b", "c", "d"]
        .iter()
        .map(|id| entry(id, None, None, vec![]))
        .collect();
    assert!(matches!(
        complementarity_audit(&r, &unflagged),
        Err(Error::Unsupported(_))
    ));
}

fn arb_side() -> impl Strategy<Value = Vec<Vec<(u8, u8, u8)>>> {
    proptest::collection::vec(proptest::collection::vec((0u8..60, 0u8..60, 0u8..10), 0..5), 4)
}

proptest! {
    #[test]
    fn bucketize_is_symmetric_and_partitions(
        gts in proptest::collection::vec(proptest::collection::vec((0u8..60, 0u8..60), 0..3), 4),
        df in arb_side(), ds in arb_side(), tf in 0.0..1.0f64, ts in 0.0..1.0f64,
    ) {
        let build = |d: &Vec<Vec<(u8, u8, u8)>>| -> Vec<ImageEval> {
            (0..4).map(|i| {
                let id = format!("i{i}");
                img(&id,
                    d[i].iter().map(|&(x, y, s)| det(&id, x as f64, y as f64, s as f64 / 10.0)).collect(),
                    gts[i].iter().map(|&(x, y)| gt(x as f64, y as f64)).collect())
            }).collect()
        };
        let (f, s) = (build(&df), build(&ds));
        let r = bucketize(&f, &s, tf, ts, FLOOR, FLOOR).unwrap();
        let total: usize = gts.iter().map(Vec::len).sum();
        r.check_partition(total).unwrap();
        let swapped = bucketize(&s, &f, ts, tf, FLOOR, FLOOR).unwrap();
        prop_assert_eq!(swapped, r.swapped());
    }
}
