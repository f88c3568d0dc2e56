use super::*;
use crate::detector::ExtractorConfig;
use crate::metrics::FrocPoint;
use crate::pipeline::StageEpochs;

fn curve(points: &[(f64, f64, f64)]) -> FrocCurveF64 {
    FrocCurveF64 {
        points: points
            .iter()
            .map(|&(fp_per_image, sensitivity, threshold)| FrocPoint {
                fp_per_image,
                sensitivity,
                threshold,
            })
            .collect(),
    }
}

#[test]
fn curve_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let c = curve(&[
        (0.0, 0.1, 0.987654321),
        (1.0 / 3.0, 2.0 / 7.0, 0.1 + 0.2),
        (2.5, 1.0, 1e-300),
    ]);
    let path = dir.path().join("c.csv");
    write_curve_csv(&path, &c).unwrap();
    assert_eq!(read_curve_csv(&path).unwrap(), c);
    let lone = curve(&[(0.0, 0.0, f64::INFINITY)]);
    write_curve_csv(&path, &lone).unwrap();
    assert_eq!(read_curve_csv(&path).unwrap(), lone);
}

#[test]
fn plots_have_one_line_per_nonempty_curve() {
    let dir = tempfile::tempdir().unwrap();
    let curves: Vec<(String, FrocCurveF64)> = MODELS
        .iter()
        .enumerate()
        .map(|(i, m)| {
            (
                m.to_string(),
                curve(&[(0.0, 0.2 * i as f64, 0.9), (0.5, 0.9, 0.3), (3.0, 1.0, 0.1)]),
            )
        })
        .collect();
    let files = emit_plots(dir.path(), &curves, 2.0).unwrap();
    assert_eq!(files.len(), 5);
    let svg = fs::read_to_string(dir.path().join("froc.svg")).unwrap();
    assert_eq!(svg.matches("class=\"curve\"").count(), 4);
    assert_eq!(svg.matches("class=\"legend\"").count(), 4);
    for (m, c) in &curves {
        assert_eq!(&read_curve_csv(&dir.path().join(format!("froc_{m}.csv"))).unwrap(), c);
    }
    let again = tempfile::tempdir().unwrap();
    emit_plots(again.path(), &curves, 2.0).unwrap();
    assert_eq!(svg, fs::read_to_string(again.path().join("froc.svg")).unwrap());

    let empty = vec![("none".to_string(), FrocCurveF64 { points: vec![] })];
    emit_plots(dir.path(), &empty, 1.0).unwrap();
    let svg = fs::read_to_string(dir.path().join("froc.svg")).unwrap();
    assert!(svg.contains("id=\"axes\""));
    assert_eq!(svg.matches("class=\"legend\"").count(), 1);
    assert!(!svg.contains("<polyline"));
}

#[test]
fn polyline_interpolates_at_the_plot_edge() {
    let pts = polyline_of(&[(0.0, 0.5, 0.9), (2.0, 1.0, 0.1)], 1.0);
    assert_eq!(pts, vec![(0.0, 0.5), (0.0, 0.5), (1.0, 0.75)]);
    let pts = polyline_of(&[(0.5, 0.5, 0.9)], 1.0);
    assert_eq!(pts, vec![(0.0, 0.0), (0.5, 0.5), (1.0, 0.5)]);
}

fn polyline_of(p: &[(f64, f64, f64)], max: f64) -> Vec<(f64, f64)> {
    super::plot::polyline(&curve(p), max)
}

fn cell_values(v: &[f64]) -> Cell {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    Cell::new(v.to_vec(), &mut rng)
}

use rand::SeedableRng;

#[test]
fn single_seed_cells_have_no_interval() {
    let c = cell_values(&[0.4]);
    assert_eq!(c.mean, 0.4);
    assert!(c.min.is_none() && c.max.is_none() && c.ci95.is_none());
    let c = cell_values(&[0.1, 0.2, 0.3, 0.4, 0.5]);
    assert!((c.mean - 0.3).abs() < 1e-12);
    assert_eq!((c.min, c.max), (Some(0.1), Some(0.5)));
    let [lo, hi] = c.ci95.unwrap();
    assert!(0.1 <= lo && lo <= c.mean && c.mean <= hi && hi <= 0.5);
}

#[test]
fn config_parses_and_checks() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
run_id = "x"
seeds = 2
[splits]
train = 10
val = 4
test = 6
[eval]
fauc_x = [0.5, 1.0]
"#,
    )
    .unwrap();
    assert_eq!(cfg.seed_values(), vec![0, 1]);
    assert_eq!(cfg.splits.val, 4);
    assert!(ExperimentConfig::from_toml_str("run_id = \"a/b\"").is_err());
    assert!(ExperimentConfig::from_toml_str("seeds = 0").is_err());
    assert!(ExperimentConfig::from_toml_str("[eval]\nfauc_x = []").is_err());
    assert!(ExperimentConfig::from_toml_str("[scene]\nimage_size = 64").is_err());
    let mut moved = cfg.clone();
    moved.out = PathBuf::from("/elsewhere");
    assert_eq!(moved.digest(), cfg.digest());
    moved.seeds = 3;
    assert_ne!(moved.digest(), cfg.digest());
}

/// Small enough to run in a few seconds.
pub(crate) fn tiny_experiment(out: &Path, run_id: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        run_id: run_id.into(),
        out: out.to_path_buf(),
        seeds: 2,
        splits: SplitSizes {
            train: 16,
            val: 6,
            test: 8,
        },
        ..ExperimentConfig::default()
    };
    cfg.scene.image_size = 32;
    cfg.scene.lesion_size_range = [5.0, 9.0];
    cfg.scene.positive_fraction = 0.6;
    cfg.train.extractor = ExtractorConfig {
        input_size: 32,
        in_channels: 1,
        channels: vec![4, 8],
        strides: vec![2, 2],
    };
    cfg.train.head_hidden = 8;
    cfg.train.anchor_size = 7.0;
    cfg.train.batch_size = 4;
    cfg.train.learning_rate = 1e-3;
    cfg.train.epochs = StageEpochs {
        stage1: 1,
        stage2: 1,
        stage3: 1,
        upper_bound: 1,
    };
    cfg
}

#[test]
fn tiny_run_is_deterministic_and_resumable() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(root.path(), "a");
    let first = run_experiment::<f64>(&cfg).unwrap();
    assert_eq!(first.report.table.len(), 4);
    assert!(first.report.ci_method.is_some());
    let cell = &first.report.row(MODEL_FUSED).unwrap().cells["test_fauc_1"];
    assert_eq!(cell.per_seed.len(), 2);
    for r in &first.report.per_seed {
        r.crosstab_images.check_consistency().unwrap();
        let b = &r.buckets;
        assert_eq!(
            b.missed_in_f_only + b.missed_in_s_only + b.missed_in_both + b.found_by_both,
            r.test_lesions
        );
    }
    for f in [
        "report.json",
        "report.txt",
        "report.sha256",
        "seed_0/plots/froc.svg",
        "seed_1/predictions/Fused_test.csv",
    ] {
        assert!(first.dir.join(f).is_file(), "{f}");
    }

    let other_root = tempfile::tempdir().unwrap();
    let second = run_experiment::<f64>(&tiny_experiment(other_root.path(), "a")).unwrap();
    assert_eq!(first.digest, second.digest);
    assert_eq!(
        fs::read(first.dir.join("report.json")).unwrap(),
        fs::read(second.dir.join("report.json")).unwrap()
    );

    // resume from stage bundles alone
    fs::remove_file(first.dir.join("seed_1").join(SEED_RESULT)).unwrap();
    fs::remove_dir_all(first.dir.join("seed_1").join(STAGE3_DIR)).unwrap();
    let resumed = run_experiment::<f64>(&cfg).unwrap();
    assert_eq!(resumed.digest, first.digest);
    assert_eq!(report_from_dir(&first.dir).unwrap().digest, first.digest);

    let mut changed = cfg.clone();
    changed.train.learning_rate = 2e-3;
    let err = run_experiment::<f64>(&changed).unwrap_err();
    assert!(
        matches!(err, Error::Stage { ref stage, .. } if stage == "config"),
        "{err}"
    );
}

#[test]
fn single_seed_report_has_point_estimates() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(root.path(), "one");
    cfg.seeds = 1;
    let out = run_experiment::<f64>(&cfg).unwrap();
    assert!(out.report.ci_method.is_none());
    for row in &out.report.table {
        for c in row.cells.values() {
            assert!(c.ci95.is_none() && c.min.is_none());
        }
    }
}
