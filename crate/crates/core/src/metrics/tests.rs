use super::*;
use crate::synthgen::LesionClass;
use num_rational::Ratio;
use proptest::prelude::*;

type Q = Ratio<i64>;

fn det(id: &str, cx: f64, cy: f64, score: f64) -> Detection {
    Detection {
        sample_id: id.into(),
        cx,
        cy,
        w: 10.0,
        h: 10.0,
        score,
        class: LesionClass::Benign,
    }
}

fn image(id: &str, dets: Vec<Detection>, gts: Vec<PixelBox>) -> ImageEval {
    ImageEval {
        sample_id: id.into(),
        detections: dets,
        gts,
    }
}

#[test]
fn radius_examples() {
    assert_eq!(match_radius(60.0, 80.0).unwrap(), 100.0);
    assert_eq!(match_radius(300.0, 400.0).unwrap(), 250.0);
    assert_eq!(match_radius(0.1, 0.1).unwrap(), 100.0);
    assert!(matches!(match_radius(0.0, 5.0), Err(Error::Input(_))));
    assert!(matches!(match_radius(5.0, -1.0), Err(Error::Input(_))));
}

#[test]
fn boundary_distance_is_a_false_positive() {
    let gt = PixelBox::new(200.0, 200.0, 60.0, 80.0);
    let on_edge = det("a", 260.0, 280.0, 0.9);
    let m = match_detections(&[on_edge], &[gt], DEFAULT_RADIUS_FLOOR).unwrap();
    assert_eq!(m.statuses, vec![DetectionStatus::FalsePositive]);
    assert_eq!(m.gt_matches, vec![None]);
    let inside = det("a", 259.9, 280.0, 0.9);
    let m = match_detections(&[inside], &[gt], DEFAULT_RADIUS_FLOOR).unwrap();
    assert_eq!(m.statuses, vec![DetectionStatus::TruePositive(0)]);
}

#[test]
fn no_detections_leave_gt_unmatched() {
    let m = match_detections(&[], &[PixelBox::new(5.0, 5.0, 4.0, 4.0)], 100.0).unwrap();
    assert_eq!(m.gt_matches, vec![None]);
    assert_eq!(m.false_positives(), 0);
}

#[test]
fn three_detections_two_gts() {
    // floor 10: radius 10 for both 8x8 boxes
    let gts = [PixelBox::new(0.0, 0.0, 8.0, 8.0), PixelBox::new(12.0, 0.0, 8.0, 8.0)];
    let dets = [
        det("x", 7.0, 0.0, 0.9),  // nearer gt1 (5) than gt0 (7)
        det("x", 1.0, 0.0, 0.8),  // gt0 free
        det("x", 11.0, 0.0, 0.7), // both claimed -> duplicate
        det("x", 40.0, 0.0, 0.6), // nowhere near
    ];
    let m = match_detections(&dets, &gts, 10.0).unwrap();
    assert_eq!(
        m.statuses,
        vec![
            DetectionStatus::TruePositive(1),
            DetectionStatus::TruePositive(0),
            DetectionStatus::Duplicate,
            DetectionStatus::FalsePositive,
        ]
    );
    assert_eq!(m.gt_matches, vec![Some(1), Some(0)]);
}

#[test]
fn score_ties_break_by_index() {
    let gts = [PixelBox::new(0.0, 0.0, 8.0, 8.0)];
    let dets = [det("x", 3.0, 0.0, 0.5), det("x", 1.0, 0.0, 0.5)];
    let m = match_detections(&dets, &gts, 10.0).unwrap();
    assert_eq!(m.gt_matches, vec![Some(0)]);
    assert_eq!(m.statuses[1], DetectionStatus::Duplicate);
}

fn three_point_fixture() -> Vec<ImageEval> {
    let g = |x| PixelBox::new(x, 0.0, 4.0, 4.0);
    vec![
        image(
            "a",
            vec![det("a", 0.0, 0.0, 0.9), det("a", 500.0, 0.0, 0.8)],
            vec![g(0.0)],
        ),
        image("b", vec![det("b", 300.0, 0.0, 0.7)], vec![g(300.0)]),
    ]
}

#[test]
fn froc_examples() {
    let perfect = vec![image(
        "a",
        vec![det("a", 5.0, 5.0, 1.0)],
        vec![PixelBox::new(5.0, 5.0, 4.0, 4.0)],
    )];
    let c: FrocCurve<Q> = froc_curve(&perfect, 100.0).unwrap();
    assert_eq!(c.points.len(), 1);
    assert_eq!(
        (c.points[0].fp_per_image, c.points[0].sensitivity),
        (Q::from(0), Q::from(1))
    );
    assert_eq!(fauc(&c, Q::from(1)).unwrap(), Q::from(1));

    let empty = vec![image("a", vec![], vec![PixelBox::new(5.0, 5.0, 4.0, 4.0)])];
    let c: FrocCurve<Q> = froc_curve(&empty, 100.0).unwrap();
    assert_eq!(
        (c.points[0].fp_per_image, c.points[0].sensitivity),
        (Q::from(0), Q::from(0))
    );
    assert_eq!(fauc(&c, Q::from(1)).unwrap(), Q::from(0));

    let c: FrocCurve<Q> = froc_curve(&three_point_fixture(), 100.0).unwrap();
    let pts: Vec<(Q, Q)> = c.points.iter().map(|p| (p.fp_per_image, p.sensitivity)).collect();
    let h = Q::new(1, 2);
    assert_eq!(pts, vec![(Q::from(0), h), (h, h), (h, Q::from(1))]);
    assert_eq!(fauc(&c, Q::from(1)).unwrap(), Q::new(3, 4));
    let cf: FrocCurveF64 = froc_curve(&three_point_fixture(), 100.0).unwrap();
    assert_eq!(fauc(&cf, 1.0).unwrap(), 0.75);
}

#[test]
fn froc_without_lesions_is_an_error() {
    let imgs = vec![image("a", vec![det("a", 0.0, 0.0, 0.5)], vec![])];
    assert!(matches!(froc_curve::<f64>(&imgs, 100.0), Err(Error::Input(_))));
}

#[test]
fn fauc_interpolates_past_the_cutoff() {
    let c = FrocCurve {
        points: vec![
            FrocPoint {
                fp_per_image: Q::from(1),
                sensitivity: Q::new(1, 2),
                threshold: 0.5,
            },
            FrocPoint {
                fp_per_image: Q::from(3),
                sensitivity: Q::from(1),
                threshold: 0.1,
            },
        ],
    };
    // (0,0)-(1,1/2): 1/4; (1,1/2)-(2,3/4): 5/8
    assert_eq!(
        fauc(&c, Q::from(2)).unwrap(),
        (Q::new(1, 4) + Q::new(5, 8)) / Q::from(2)
    );
    assert_eq!(fauc(&c, Q::new(1, 2)).unwrap(), Q::new(1, 8));
    assert!(fauc(&c, Q::from(0)).is_err());
    assert_eq!(
        fauc(&FrocCurve::<Q> { points: vec![] }, Q::from(1)).unwrap(),
        Q::from(0)
    );
}

#[test]
fn threshold_examples() {
    let g = PixelBox::new(0.0, 0.0, 4.0, 4.0);
    let all_hits = vec![
        image("a", vec![det("a", 0.0, 0.0, 0.6)], vec![g]),
        image("b", vec![det("b", 0.0, 0.0, 0.3)], vec![g]),
    ];
    assert_eq!(select_threshold(&all_hits, 1.0, 100.0).unwrap(), 0.3);

    let one_fp_each = vec![
        image(
            "a",
            vec![
                det("a", 0.0, 0.0, 0.95),
                det("a", 400.0, 0.0, 0.9),
                det("a", 800.0, 0.0, 0.2),
            ],
            vec![g],
        ),
        image("b", vec![det("b", 0.0, 0.0, 0.95), det("b", 400.0, 0.0, 0.9)], vec![g]),
    ];
    assert_eq!(select_threshold(&one_fp_each, 1.0, 100.0).unwrap(), 0.9);

    let fp_on_top = vec![image(
        "a",
        vec![det("a", 400.0, 0.0, 0.8), det("a", 0.0, 0.0, 0.4)],
        vec![g],
    )];
    let tau = select_threshold(&fp_on_top, 0.0, 100.0).unwrap();
    assert!(tau > 0.8);
    let (sens, fp) = operating_point(&fp_on_top, tau, 100.0).unwrap();
    assert_eq!((sens, fp), (0.0, 0.0));
}

#[test]
fn prediction_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let dets = vec![
        Detection {
            class: LesionClass::Malignant,
            ..det("s000001", 1.0 / 3.0, 2.5, 0.1 + 0.2)
        },
        det("s000002", 64.0, 7.125, 0.05),
    ];
    write_predictions(&path, &dets).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("sample_id,cx,cy,w,h,score,class\n"));
    assert_eq!(read_predictions(&path).unwrap(), dets);
    write_predictions(&path, &[]).unwrap();
    assert!(read_predictions(&path).unwrap().is_empty());
}

#[test]
fn unknown_sample_is_rejected() {
    assert!(matches!(
        collect_images(&[], &[det("zzz", 0.0, 0.0, 0.5)]),
        Err(Error::Input(_))
    ));
}

fn arb_images() -> impl Strategy<Value = Vec<ImageEval>> {
    let gt = (0u8..40, 0u8..40, 1u8..20).prop_map(|(x, y, s)| PixelBox::new(x as f64, y as f64, s as f64, s as f64));
    let d = (0u8..40, 0u8..40, 0u8..6);
    let img = (proptest::collection::vec(gt, 0..4), proptest::collection::vec(d, 0..6));
    proptest::collection::vec(img, 1..4).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (gts, ds))| {
                let id = format!("i{i}");
                let dets = ds
                    .into_iter()
                    .map(|(x, y, s)| det(&id, x as f64, y as f64, s as f64 / 5.0))
                    .collect();
                image(&id, dets, gts)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn radius_lower_bounds(w in 0.01..500.0f64, h in 0.01..500.0f64) {
        let r = match_radius(w, h).unwrap();
        prop_assert!(r >= 100.0);
        prop_assert!(r >= (w * w + h * h).sqrt() / 2.0 - 1e-9);
    }

    #[test]
    fn curve_invariants(images in arb_images(), x in 0.1..3.0f64) {
        prop_assume!(images.iter().any(|i| !i.gts.is_empty()));
        let c: FrocCurveF64 = froc_curve(&images, 8.0).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[0].fp_per_image <= w[1].fp_per_image);
            prop_assert!(w[0].sensitivity <= w[1].sensitivity);
            prop_assert!(w[0].threshold > w[1].threshold);
        }
        let a = fauc(&c, x).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));

        // duplicating points changes nothing
        let mut dup = c.clone();
        dup.points = c.points.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        prop_assert_eq!(fauc(&dup, x).unwrap(), a);

        // strictly monotone score rescaling changes nothing
        let squashed: Vec<ImageEval> = images.iter().map(|i| ImageEval {
            detections: i.detections.iter().map(|d| Detection { score: (3.0 * d.score).exp() / 50.0, ..d.clone() }).collect(),
            ..i.clone()
        }).collect();
        let c2: FrocCurveF64 = froc_curve(&squashed, 8.0).unwrap();
        prop_assert_eq!(fauc(&c2, x).unwrap(), a);
    }

    #[test]
    fn selected_threshold_respects_budget(images in arb_images(), target in 0.0..2.0f64) {
        let tau = select_threshold(&images, target, 8.0).unwrap();
        let (_, fp) = operating_point(&images, tau, 8.0).unwrap();
        prop_assert!(fp <= target + 1e-12);
        // nothing lower that is also observed would still fit
        let lower: Vec<f64> = images.iter().flat_map(|i| i.detections.iter().map(|d| d.score)).filter(|&s| s < tau).collect();
        for s in lower {
            let (_, fp_s) = operating_point(&images, s, 8.0).unwrap();
            prop_assert!(fp_s > target);
        }
    }
}
