//! End-to-end runs: data generation, all training stages, evaluation of the
//! four models, bucket and cross-tab analysis, and the aggregated report.

mod plot;
mod report;

pub use plot::{emit_plots, read_curve_csv, write_curve_csv};
pub use report::{aggregate, Cell, ExperimentReport, TableRow, CI_METHOD};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    bucketize, complementarity_audit, cross_tabulate, images_with_misses, missed_lesions, AuditReport, CrossTab,
};
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::metrics::{
    collect_images, fauc, froc_curve, operating_point, positive_only, select_threshold, write_predictions,
    FrocCurveF64, ImageEval,
};
use crate::pipeline::{
    load_fused, load_single, load_stage2, load_upper_bound, mean_cosine, samples_from_manifest, save_fused,
    save_single_pair, save_stage2, save_upper_bound, strip_predictor, train_stage1, train_stage2, train_stage3,
    train_upper_bound, BundleManifest, FusedModel, SingleDetector, TrainConfig, TrainSample, UpperBoundModel,
    STAGE1_DIR, STAGE2_DIR, STAGE3_DIR, UB_DIR,
};
use crate::scalar::Scalar;
use crate::synthgen::{generate_dataset, DatasetManifest, DatasetSplit, SceneConfig, SplitFractions};

/// Environment variable that replaces the configured output root.
pub const OUT_ENV: &str = "CROSSDISTILL_OUT";

pub const MODEL_SM: &str = "Model_SM";
pub const MODEL_FFDM: &str = "Model_FFDM";
pub const MODEL_UB: &str = "Base_UB";
pub const MODEL_FUSED: &str = "Fused";
pub const MODELS: [&str; 4] = [MODEL_SM, MODEL_FFDM, MODEL_UB, MODEL_FUSED];

const SEED_RESULT: &str = "seed_result.json";
const CONFIG_STAMP: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 300,
            test: 600,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// FROC cutoffs, in false positives per image, reported as FAUC-x.
    pub fauc_x: Vec<f64>,
    /// False-positive budget per image used to pick each model's threshold
    /// on the validation split.
    pub target_fp: f64,
    /// Lower bound on the lesion matching radius, in pixels.
    pub radius_floor: f64,
    /// Centre distance under which two models' false detections pair up.
    pub pair_radius: f64,
    /// Right edge of the FROC plots.
    pub plot_max_fp: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fauc_x: vec![1.0],
            target_fp: 1.0,
            radius_floor: 8.0,
            pair_radius: 8.0,
            plot_max_fp: 2.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fauc_x.is_empty() || self.fauc_x.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Config("fauc_x must list positive cutoffs".into()));
        }
        if !(self.target_fp >= 0.0) || !(self.radius_floor >= 0.0) || !(self.pair_radius >= 0.0) {
            return Err(Error::Config(
                "target_fp, radius_floor and pair_radius must be non-negative".into(),
            ));
        }
        if !(self.plot_max_fp > 0.0) {
            return Err(Error::Config("plot_max_fp must be positive".into()));
        }
        Ok(())
    }
}

pub fn fauc_key(x: f64) -> String {
    format!("fauc_{x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    /// Output root; the run writes to `<out>/<run_id>`.
    pub out: PathBuf,
    /// Number of seeds; seed k runs with root seed `first_seed + k`.
    pub seeds: usize,
    pub first_seed: u64,
    pub splits: SplitSizes,
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: "default".into(),
            out: PathBuf::from("runs"),
            seeds: 1,
            first_seed: 0,
            splits: SplitSizes::default(),
            scene: SceneConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return Err(Error::Config(format!(
                "run_id {:?} is not a plain directory name",
                self.run_id
            )));
        }
        if self.seeds == 0 {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.splits.train == 0 || self.splits.val == 0 || self.splits.test == 0 {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        if self.scene.image_size != self.train.extractor.input_size {
            return Err(Error::Config(format!(
                "scene image_size {} differs from extractor input_size {}",
                self.scene.image_size, self.train.extractor.input_size
            )));
        }
        self.scene.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn seed_values(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.first_seed + k).collect()
    }

    /// Output root after the environment override.
    pub fn out_root(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out.clone(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_root().join(&self.run_id)
    }

    /// Hash of everything that influences results. The output location is
    /// excluded so a run can move without invalidating its artifacts.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Scene and training settings for one root seed.
    pub fn for_seed(&self, seed: u64) -> (SceneConfig, TrainConfig) {
        let mut scene = self.scene.clone();
        scene.seed = seed;
        let mut train = self.train.clone();
        train.seed = seed;
        (scene, train)
    }
}

/// Threshold, operating point and FAUC values of one model on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    /// Threshold pegging validation false positives to the budget.
    pub tau: f64,
    pub val_fp_per_image: f64,
    pub test_sensitivity: f64,
    pub test_fp_per_image: f64,
    /// FAUC-x on every test image, keyed by `fauc_<x>`.
    pub test: BTreeMap<String, f64>,
    /// FAUC-x on test images holding at least one lesion.
    pub test_positive: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub missed_in_f_only: usize,
    pub missed_in_s_only: usize,
    pub missed_in_both: usize,
    pub found_by_both: usize,
    pub false_dets_f_only: usize,
    pub false_dets_s_only: usize,
    pub false_dets_both: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub config_digest: String,
    pub models: BTreeMap<String, ModelEval>,
    /// Model_FFDM (F side) against Model_SM (S side) on the test split.
    pub buckets: BucketCounts,
    pub audit: AuditReport,
    pub crosstab_images: CrossTab,
    pub crosstab_lesions: CrossTab,
    /// Mean projected-student to teacher cosine on the validation split.
    pub stage2_val_cosine: f64,
    /// Test-split lesion and image counts.
    pub test_lesions: usize,
    pub test_images: usize,
}

/// Evaluation of one prediction set against one manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub lesions: usize,
    pub tau: f64,
    pub sensitivity_at_tau: f64,
    pub fp_per_image_at_tau: f64,
    pub fauc: BTreeMap<String, f64>,
    pub fauc_positive: BTreeMap<String, f64>,
    pub curve: FrocCurveF64,
}

fn fauc_map(curve: &FrocCurveF64, xs: &[f64]) -> Result<BTreeMap<String, f64>> {
    xs.iter().map(|&x| Ok((fauc_key(x), fauc(curve, x)?))).collect()
}

/// FROC, FAUC and a budget threshold chosen on the same images.
pub fn evaluate_predictions(images: &[ImageEval], eval: &EvalConfig) -> Result<EvalReport> {
    eval.validate()?;
    let curve = froc_curve::<f64>(images, eval.radius_floor)?;
    let pos = positive_only(images);
    let curve_pos = froc_curve::<f64>(&pos, eval.radius_floor)?;
    let tau = select_threshold(images, eval.target_fp, eval.radius_floor)?;
    let (sens, fp) = operating_point(images, tau, eval.radius_floor)?;
    Ok(EvalReport {
        images: images.len(),
        lesions: images.iter().map(|i| i.gts.len()).sum(),
        tau,
        sensitivity_at_tau: sens,
        fp_per_image_at_tau: fp,
        fauc: fauc_map(&curve, &eval.fauc_x)?,
        fauc_positive: fauc_map(&curve_pos, &eval.fauc_x)?,
        curve,
    })
}

/// Tags an error with the step of the run that raised it.
fn at<T>(step: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: step.to_string(),
        source: Box::new(e),
    })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generated splits of one seed, read back from disk.
struct SeedData<T> {
    manifests: Vec<DatasetManifest>,
    samples: Vec<Vec<TrainSample<T>>>,
}

fn prepare_data<T: Scalar>(dir: &Path, scene: &SceneConfig, sizes: SplitSizes) -> Result<SeedData<T>> {
    let have_all = DatasetSplit::ALL.iter().all(|s| dir.join(s.manifest_file()).is_file());
    let manifests = if have_all {
        let ms: Vec<DatasetManifest> = DatasetSplit::ALL
            .iter()
            .map(|s| DatasetManifest::load(&dir.join(s.manifest_file())))
            .collect::<Result<_>>()?;
        let sizes_ok = ms
            .iter()
            .map(|m| m.entries.len())
            .eq([sizes.train, sizes.val, sizes.test]);
        if &ms[0].config == scene && sizes_ok {
            ms
        } else {
            generate(dir, scene, sizes)?
        }
    } else {
        generate(dir, scene, sizes)?
    };
    let samples = manifests
        .iter()
        .map(|m| samples_from_manifest(m, dir))
        .collect::<Result<_>>()?;
    Ok(SeedData { manifests, samples })
}

fn generate(dir: &Path, scene: &SceneConfig, sizes: SplitSizes) -> Result<Vec<DatasetManifest>> {
    let fractions = SplitFractions::from_counts(sizes.train, sizes.val, sizes.test);
    generate_dataset(scene, sizes.total(), fractions, dir)
}

/// All trained models of one seed.
pub struct SeedModels<T> {
    pub sm: SingleDetector<T>,
    pub ffdm: SingleDetector<T>,
    pub fused: FusedModel<T>,
    pub upper_bound: UpperBoundModel<T>,
}

fn done(dir: &Path) -> bool {
    dir.join("bundle.json").is_file()
}

/// Trains every stage, reusing any stage whose bundle is already on disk.
fn train_all<T: Scalar>(dir: &Path, train: &[TrainSample<T>], cfg: &TrainConfig) -> Result<SeedModels<T>> {
    let s1_dir = dir.join(STAGE1_DIR);
    let (sm, ffdm) = if done(&s1_dir) {
        (
            load_single(&s1_dir, "A", "head_A")?,
            load_single(&s1_dir, "C", "head_C")?,
        )
    } else {
        let t = Instant::now();
        let out = at("stage 1", train_stage1(train, cfg))?;
        mkdir(&s1_dir)?;
        save_single_pair(&s1_dir, &out)?;
        log::info!("stage 1 done in {:.1}s", t.elapsed().as_secs_f64());
        (out.sm, out.ffdm)
    };

    let s2_dir = dir.join(STAGE2_DIR);
    let (b, projection, c_digest) = if done(&s2_dir) {
        let (b, p) = load_stage2(&s2_dir)?;
        let c_digest = BundleManifest::load(&s2_dir)?
            .upstream
            .get("C")
            .cloned()
            .ok_or_else(|| Error::Contract("stage 2 bundle lacks the teacher digest".into()))?;
        (b, p, c_digest)
    } else {
        let t = Instant::now();
        let c = at("stage 2", strip_predictor(&ffdm))?;
        let out = at("stage 2", train_stage2(train, &c, cfg))?;
        mkdir(&s2_dir)?;
        save_stage2(&s2_dir, &out)?;
        log::info!("stage 2 done in {:.1}s", t.elapsed().as_secs_f64());
        (out.b, out.projection, out.c_digest)
    };
    if c_digest != crate::nn::param_digest(&ffdm.extractor) {
        return Err(Error::Contract("teacher C changed after stage 2".into()));
    }

    let s3_dir = dir.join(STAGE3_DIR);
    let fused = if done(&s3_dir) {
        load_fused(&s3_dir)?
    } else {
        let t = Instant::now();
        let (fused, _) = at("stage 3", train_stage3(train, &sm, &b, &projection, cfg))?;
        mkdir(&s3_dir)?;
        save_fused(&s3_dir, &fused, &c_digest)?;
        log::info!("stage 3 done in {:.1}s", t.elapsed().as_secs_f64());
        fused
    };
    if fused.b.digest() != b.digest() || fused.projection.digest() != projection.digest() {
        return Err(Error::Contract("B or the projection changed during stage 3".into()));
    }

    let ub_dir = dir.join(UB_DIR);
    let upper_bound = if done(&ub_dir) {
        load_upper_bound(&ub_dir)?
    } else {
        let t = Instant::now();
        let (ub, _) = at("upper bound", train_upper_bound(train, &sm, &ffdm, cfg))?;
        mkdir(&ub_dir)?;
        save_upper_bound(&ub_dir, &ub)?;
        log::info!("upper bound done in {:.1}s", t.elapsed().as_secs_f64());
        ub
    };
    Ok(SeedModels {
        sm,
        ffdm,
        fused,
        upper_bound,
    })
}

/// Detections of one model over a split.
pub fn predict_split<T: Scalar>(
    models: &SeedModels<T>,
    model: &str,
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
) -> Result<Vec<Detection>> {
    let decode = cfg.decode_params();
    let mut out = Vec::new();
    for s in samples {
        let id = s.sample_id.as_str();
        let dets = match model {
            MODEL_SM => models.sm.detect(&s.image_s, id, decode)?,
            MODEL_FFDM => models.ffdm.detect(&s.image_f, id, decode)?,
            MODEL_FUSED => crate::pipeline::infer_fused(&models.fused, &s.image_s, id, decode)?,
            MODEL_UB => models.upper_bound.detect(&s.image_s, Some(&s.image_f), id, decode)?,
            other => return Err(Error::Input(format!("unknown model {other}"))),
        };
        out.extend(dets);
    }
    Ok(out)
}

/// Runs one seed end to end inside `dir`, or returns the stored result when
/// that seed already finished under the same configuration.
pub fn run_seed<T: Scalar>(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedResult> {
    let digest = cfg.digest();
    let result_path = dir.join(SEED_RESULT);
    if result_path.is_file() {
        let r: SeedResult = read_json(&result_path)?;
        if r.config_digest == digest && r.seed == seed {
            log::info!("seed {seed}: reusing {}", result_path.display());
            return Ok(r);
        }
    }
    mkdir(dir)?;
    let (scene, train_cfg) = cfg.for_seed(seed);
    let t = Instant::now();
    let data = at("generate", prepare_data::<T>(&dir.join("data"), &scene, cfg.splits))?;
    log::info!("seed {seed}: data ready in {:.1}s", t.elapsed().as_secs_f64());
    let [train, val, test] = [&data.samples[0], &data.samples[1], &data.samples[2]];
    let models = train_all(dir, train, &train_cfg)?;

    let cosine = at(
        "evaluate",
        mean_cosine(
            models.fused.b.extractor(),
            models.fused.projection.projection(),
            &strip_predictor(&models.ffdm)?,
            val,
            train_cfg.epsilon_cos,
        ),
    )?;

    let pred_dir = dir.join("predictions");
    let plot_dir = dir.join("plots");
    let mut evals = BTreeMap::new();
    let mut test_images: BTreeMap<&str, Vec<ImageEval>> = BTreeMap::new();
    let mut curves = Vec::new();
    for model in MODELS {
        let r: Result<()> = (|| {
            let val_dets = predict_split(&models, model, val, &train_cfg)?;
            let test_dets = predict_split(&models, model, test, &train_cfg)?;
            write_predictions(&pred_dir.join(format!("{model}_val.csv")), &val_dets)?;
            write_predictions(&pred_dir.join(format!("{model}_test.csv")), &test_dets)?;
            let val_imgs = collect_images(&data.manifests[1].entries, &val_dets)?;
            let test_imgs = collect_images(&data.manifests[2].entries, &test_dets)?;
            let tau = select_threshold(&val_imgs, cfg.eval.target_fp, cfg.eval.radius_floor)?;
            let (_, val_fp) = operating_point(&val_imgs, tau, cfg.eval.radius_floor)?;
            let (sens, fp) = operating_point(&test_imgs, tau, cfg.eval.radius_floor)?;
            let curve = froc_curve::<f64>(&test_imgs, cfg.eval.radius_floor)?;
            let curve_pos = froc_curve::<f64>(&positive_only(&test_imgs), cfg.eval.radius_floor)?;
            evals.insert(
                model.to_string(),
                ModelEval {
                    tau,
                    val_fp_per_image: val_fp,
                    test_sensitivity: sens,
                    test_fp_per_image: fp,
                    test: fauc_map(&curve, &cfg.eval.fauc_x)?,
                    test_positive: fauc_map(&curve_pos, &cfg.eval.fauc_x)?,
                },
            );
            curves.push((model.to_string(), curve));
            test_images.insert(model, test_imgs);
            Ok(())
        })();
        at(&format!("evaluate {model}"), r)?;
    }
    at(
        "plots",
        emit_plots(&plot_dir, &curves, cfg.eval.plot_max_fp).map(|_| ()),
    )?;

    let tau = |m: &str| evals[m].tau;
    let floor = cfg.eval.radius_floor;
    let buckets = at(
        "buckets",
        bucketize(
            &test_images[MODEL_FFDM],
            &test_images[MODEL_SM],
            tau(MODEL_FFDM),
            tau(MODEL_SM),
            floor,
            cfg.eval.pair_radius,
        ),
    )?;
    let test_lesions: usize = test_images[MODEL_SM].iter().map(|i| i.gts.len()).sum();
    at("buckets", buckets.check_partition(test_lesions))?;
    write_json(&dir.join("buckets.json"), &buckets)?;
    let audit = at("audit", complementarity_audit(&buckets, &data.manifests[2].entries))?;

    let tab = |f: fn(&[ImageEval], f64, f64) -> Result<std::collections::BTreeSet<String>>| -> Result<CrossTab> {
        let set = |m: &str| f(&test_images[m], tau(m), floor);
        let t = cross_tabulate(&set(MODEL_SM)?, &set(MODEL_FFDM)?, &set(MODEL_FUSED)?);
        t.check_consistency()?;
        Ok(t)
    };
    let crosstab_images = at("compare", tab(images_with_misses))?;
    let crosstab_lesions = at("compare", tab(missed_lesions))?;

    let result = SeedResult {
        seed,
        config_digest: digest,
        models: evals,
        buckets: BucketCounts {
            missed_in_f_only: buckets.missed_in_f_only.len(),
            missed_in_s_only: buckets.missed_in_s_only.len(),
            missed_in_both: buckets.missed_in_both.len(),
            found_by_both: buckets.found_by_both.len(),
            false_dets_f_only: buckets.false_dets_f_only.len(),
            false_dets_s_only: buckets.false_dets_s_only.len(),
            false_dets_both: buckets.false_dets_both.len(),
        },
        audit,
        crosstab_images,
        crosstab_lesions,
        stage2_val_cosine: cosine,
        test_lesions,
        test_images: test.len(),
    };
    write_json(&result_path, &result)?;
    log::info!(
        "seed {seed}: finished in {:.1}s; FAUC-1 {}",
        t.elapsed().as_secs_f64(),
        MODELS
            .iter()
            .map(|m| format!(
                "{m}={:.4}",
                result.models[*m].test.values().next().copied().unwrap_or(0.0)
            ))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(result)
}

/// Paths written by a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub dir: PathBuf,
    pub digest: String,
}

/// Runs every configured seed, then writes `report.json`, `report.txt` and
/// `report.sha256` under the run directory.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<RunOutput> {
    at("config", cfg.validate())?;
    let dir = cfg.run_dir();
    mkdir(&dir)?;
    let stamp = dir.join(CONFIG_STAMP);
    let digest = cfg.digest();
    if stamp.is_file() {
        let previous: ExperimentConfig = at("config", read_json(&stamp))?;
        if previous.digest() != digest {
            return Err(Error::Stage {
                stage: "config".into(),
                source: Box::new(Error::Config(format!(
                    "run id {} already holds a run with a different configuration",
                    cfg.run_id
                ))),
            });
        }
    } else {
        let mut c = cfg.clone();
        c.out = PathBuf::new();
        write_json(&stamp, &c)?;
    }
    let mut results = Vec::new();
    for seed in cfg.seed_values() {
        let seed_dir = dir.join(format!("seed_{seed}"));
        results.push(at(&format!("seed {seed}"), run_seed::<T>(cfg, seed, &seed_dir))?);
    }
    write_report(&dir, cfg, results)
}

/// Aggregates stored seed results into the report files.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, results: Vec<SeedResult>) -> Result<RunOutput> {
    let report = aggregate(cfg, results)?;
    let digest = report.digest();
    write_json(&dir.join("report.json"), &report)?;
    fs::write(dir.join("report.txt"), report.render_text()).map_err(|e| Error::io(dir, e))?;
    fs::write(dir.join("report.sha256"), format!("{digest}\n")).map_err(|e| Error::io(dir, e))?;
    Ok(RunOutput {
        report,
        dir: dir.to_path_buf(),
        digest,
    })
}

/// Rebuilds the report of an existing run directory from its seed results.
pub fn report_from_dir(dir: &Path) -> Result<RunOutput> {
    let cfg: ExperimentConfig = read_json(&dir.join(CONFIG_STAMP))?;
    let mut results = Vec::new();
    for seed in cfg.seed_values() {
        let path = dir.join(format!("seed_{seed}")).join(SEED_RESULT);
        if !path.is_file() {
            return Err(Error::Input(format!(
                "seed {seed} has not finished: {} is missing",
                path.display()
            )));
        }
        results.push(read_json(&path)?);
    }
    write_report(dir, &cfg, results)
}

#[cfg(test)]
mod tests;
