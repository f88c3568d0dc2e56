use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crossdistill::analysis::{bucketize, complementarity_audit, cross_tabulate, images_with_misses, missed_lesions};
use crossdistill::experiment::{
    emit_plots, evaluate_predictions, report_from_dir, run_experiment, EvalConfig, ExperimentConfig,
};
use crossdistill::metrics::{collect_images, read_predictions, select_threshold, write_predictions};
use crossdistill::pipeline::{
    infer_fused, load_fused, load_samples, load_single, load_stage2, load_upper_bound, save_fused, save_single_pair,
    save_stage2, save_upper_bound, strip_predictor, train_stage1, train_stage2, train_stage3, train_upper_bound,
    TrainConfig, STAGE1_DIR, STAGE2_DIR,
};
use crossdistill::synthgen::{generate_dataset, DatasetManifest, SceneConfig, SplitFractions};
use crossdistill::{Real, Sample};

#[derive(Parser)]
#[command(
    name = "crossdistill",
    version,
    about = "Cross-modal distillation experiments on paired synthetic images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    #[value(name = "ub")]
    UpperBound,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    /// Stage-1 detector on S images (needs the stage 1 bundle).
    Sm,
    /// Stage-1 detector on F images (needs the stage 1 bundle).
    Ffdm,
    /// Stage-3 fused detector; reads S images only.
    Fused,
    /// Upper-bound comparator; reads both modalities.
    Ub,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// FAUC cutoff in false positives per image; repeat for several.
    #[arg(long = "fauc-x", default_values_t = [1.0])]
    fauc_x: Vec<f64>,
    /// False-positive budget per image for the operating threshold.
    #[arg(long, default_value_t = 1.0)]
    target_fp: f64,
    /// Minimum lesion matching radius in pixels.
    #[arg(long, default_value_t = EvalConfig::default().radius_floor)]
    radius_floor: f64,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            fauc_x: self.fauc_x.clone(),
            target_fp: self.target_fp,
            radius_floor: self.radius_floor,
            ..EvalConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a paired-modality dataset with train/val/test manifests.
    Generate {
        /// Scene configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Total number of samples.
        #[arg(long)]
        n: usize,
        /// Root seed; overrides the one in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Train, val and test fractions, comma-separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.1, 0.3])]
        fractions: Vec<f64>,
    },
    /// Train one stage. Stage 2 and ub take --from <stage1 dir>; stage 3
    /// takes --from <stage1 dir> --from <stage2 dir>.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Training manifest.
        #[arg(long)]
        data: PathBuf,
        /// Training configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        from: Vec<PathBuf>,
    },
    /// Write detections of a trained model as CSV.
    Predict {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Bundle directory of the model.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training configuration, for the decoding settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// FROC curve, FAUC and operating threshold of a prediction file.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
        /// Report JSON; the FROC plot and curve CSV go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an F-model and an S-model lesion by lesion.
    Buckets {
        #[arg(long)]
        pred_f: PathBuf,
        #[arg(long)]
        pred_s: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Threshold of the F model; chosen from the budget when omitted.
        #[arg(long)]
        tau_f: Option<f64>,
        #[arg(long)]
        tau_s: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        target_fp: f64,
        #[arg(long, default_value_t = EvalConfig::default().radius_floor)]
        radius_floor: f64,
        /// Centre distance under which false detections of both models pair up.
        #[arg(long, default_value_t = EvalConfig::default().pair_radius)]
        pair_radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-tabulate missed lesions of the S, F and fused models.
    Compare {
        #[arg(long)]
        pred_sm: PathBuf,
        #[arg(long)]
        pred_ffdm: PathBuf,
        #[arg(long)]
        pred_fused: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        target_fp: f64,
        #[arg(long, default_value_t = EvalConfig::default().radius_floor)]
        radius_floor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, train every stage, evaluate and analyse, for each seed.
    RunExperiment {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds; overrides the config.
        #[arg(long)]
        seeds: Option<usize>,
        /// Output root; overrides the config and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report.json and report.txt from a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn train_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn samples(path: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    Ok(load_samples::<Real>(path)?)
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn from_dir<'a>(from: &'a [PathBuf], i: usize, what: &str) -> Result<&'a Path> {
    from.get(i)
        .map(PathBuf::as_path)
        .with_context(|| format!("missing --from <{what}>"))
}

fn train(stage: StageArg, data: &Path, config: &Option<PathBuf>, out: &Path, from: &[PathBuf]) -> Result<()> {
    let cfg = train_config(config)?;
    let (_, train) = samples(data)?;
    std::fs::create_dir_all(out)?;
    match stage {
        StageArg::One => {
            let r = train_stage1(&train, &cfg)?;
            save_single_pair(out, &r)?;
        }
        StageArg::Two => {
            let s1 = from_dir(from, 0, STAGE1_DIR)?;
            let c = strip_predictor(&load_single::<Real>(s1, "C", "head_C")?)?;
            save_stage2(out, &train_stage2(&train, &c, &cfg)?)?;
        }
        StageArg::Three => {
            let s1 = from_dir(from, 0, STAGE1_DIR)?;
            let s2 = from_dir(from, 1, STAGE2_DIR)?;
            let a = load_single::<Real>(s1, "A", "head_A")?;
            let (b, p) = load_stage2::<Real>(s2)?;
            let c_digest = crossdistill::pipeline::BundleManifest::load(s2)?
                .upstream
                .get("C")
                .cloned()
                .context("stage 2 bundle lacks the teacher digest")?;
            let (fused, _) = train_stage3(&train, &a, &b, &p, &cfg)?;
            save_fused(out, &fused, &c_digest)?;
        }
        StageArg::UpperBound => {
            let s1 = from_dir(from, 0, STAGE1_DIR)?;
            let a = load_single::<Real>(s1, "A", "head_A")?;
            let c = load_single::<Real>(s1, "C", "head_C")?;
            let (ub, _) = train_upper_bound(&train, &a, &c, &cfg)?;
            save_upper_bound(out, &ub)?;
        }
    }
    Ok(())
}

fn predict(model: ModelArg, ckpt: &Path, data: &Path, config: &Option<PathBuf>, out: &Path) -> Result<()> {
    let decode = train_config(config)?.decode_params();
    let (_, data) = samples(data)?;
    let mut dets = Vec::new();
    match model {
        ModelArg::Sm | ModelArg::Ffdm => {
            let f_side = matches!(model, ModelArg::Ffdm);
            let (ex, head) = if f_side { ("C", "head_C") } else { ("A", "head_A") };
            let m = load_single::<Real>(ckpt, ex, head)?;
            for s in &data {
                let img = if f_side { &s.image_f } else { &s.image_s };
                dets.extend(m.detect(img, &s.sample_id, decode)?);
            }
        }
        ModelArg::Fused => {
            let m = load_fused::<Real>(ckpt)?;
            for s in &data {
                dets.extend(infer_fused(&m, &s.image_s, &s.sample_id, decode)?);
            }
        }
        ModelArg::Ub => {
            let m = load_upper_bound::<Real>(ckpt)?;
            for s in &data {
                dets.extend(m.detect(&s.image_s, Some(&s.image_f), &s.sample_id, decode)?);
            }
        }
    }
    write_predictions(out, &dets)?;
    Ok(())
}

fn images(pred: &Path, manifest: &DatasetManifest) -> Result<Vec<crossdistill::metrics::ImageEval>> {
    let dets = read_predictions(pred)?;
    Ok(collect_images(&manifest.entries, &dets)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            out,
            n,
            seed,
            fractions,
        } => {
            let mut scene = match &config {
                Some(p) => SceneConfig::load(p)?,
                None => SceneConfig::default(),
            };
            if let Some(s) = seed {
                scene.seed = s;
            }
            if fractions.len() != 3 {
                anyhow::bail!("[generate] --fractions takes three values, got {}", fractions.len());
            }
            let fractions = SplitFractions {
                train: fractions[0],
                val: fractions[1],
                test: fractions[2],
            };
            let ms = generate_dataset(&scene, n, fractions, &out).context("[generate]")?;
            for m in &ms {
                println!("{}: {} samples", m.split.manifest_file(), m.entries.len());
            }
        }
        Command::Train {
            stage,
            data,
            config,
            out,
            from,
        } => {
            let tag = match stage {
                StageArg::One => "train stage 1",
                StageArg::Two => "train stage 2",
                StageArg::Three => "train stage 3",
                StageArg::UpperBound => "train upper bound",
            };
            train(stage, &data, &config, &out, &from).with_context(|| format!("[{tag}]"))?;
        }
        Command::Predict {
            model,
            ckpt,
            data,
            config,
            out,
        } => predict(model, &ckpt, &data, &config, &out).context("[predict]")?,
        Command::Evaluate { pred, data, eval, out } => {
            let r: Result<()> = (|| {
                let manifest = DatasetManifest::load(&data)?;
                let report = evaluate_predictions(&images(&pred, &manifest)?, &eval.config())?;
                write_json(&out, &report)?;
                let dir = out
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .unwrap_or(Path::new("."));
                let name = pred
                    .file_stem()
                    .map_or("model".into(), |s| s.to_string_lossy().into_owned());
                let max = eval.fauc_x.iter().copied().fold(1.0, f64::max) * 2.0;
                emit_plots(dir, &[(name, report.curve.clone())], max)?;
                for (k, v) in &report.fauc {
                    println!("{k} = {v:.6}");
                }
                println!(
                    "tau = {} (sensitivity {:.4}, {:.4} FP/image)",
                    report.tau, report.sensitivity_at_tau, report.fp_per_image_at_tau
                );
                Ok(())
            })();
            r.context("[evaluate]")?;
        }
        Command::Buckets {
            pred_f,
            pred_s,
            data,
            tau_f,
            tau_s,
            target_fp,
            radius_floor,
            pair_radius,
            out,
        } => {
            let r: Result<()> = (|| {
                let manifest = DatasetManifest::load(&data)?;
                let (f, s) = (images(&pred_f, &manifest)?, images(&pred_s, &manifest)?);
                let tau_f = match tau_f {
                    Some(t) => t,
                    None => select_threshold(&f, target_fp, radius_floor)?,
                };
                let tau_s = match tau_s {
                    Some(t) => t,
                    None => select_threshold(&s, target_fp, radius_floor)?,
                };
                let report = bucketize(&f, &s, tau_f, tau_s, radius_floor, pair_radius)?;
                report.check_partition(f.iter().map(|i| i.gts.len()).sum())?;
                let audit = match complementarity_audit(&report, &manifest.entries) {
                    Ok(a) => Some(a),
                    Err(crossdistill::Error::Unsupported(msg)) => {
                        eprintln!("audit skipped: {msg}");
                        None
                    }
                    Err(e) => return Err(e.into()),
                };
                write_json(&out, &serde_json::json!({ "buckets": report, "audit": audit }))?;
                println!(
                    "missed: F-only {}, S-only {}, both {}; false detections: F-only {}, S-only {}, both {}",
                    report.missed_in_f_only.len(),
                    report.missed_in_s_only.len(),
                    report.missed_in_both.len(),
                    report.false_dets_f_only.len(),
                    report.false_dets_s_only.len(),
                    report.false_dets_both.len()
                );
                Ok(())
            })();
            r.context("[buckets]")?;
        }
        Command::Compare {
            pred_sm,
            pred_ffdm,
            pred_fused,
            data,
            target_fp,
            radius_floor,
            out,
        } => {
            let r: Result<()> = (|| {
                let manifest = DatasetManifest::load(&data)?;
                let mut by_image = Vec::new();
                let mut by_lesion = Vec::new();
                for p in [&pred_sm, &pred_ffdm, &pred_fused] {
                    let imgs = images(p, &manifest)?;
                    let tau = select_threshold(&imgs, target_fp, radius_floor)?;
                    by_image.push(images_with_misses(&imgs, tau, radius_floor)?);
                    by_lesion.push(missed_lesions(&imgs, tau, radius_floor)?);
                }
                let images = cross_tabulate(&by_image[0], &by_image[1], &by_image[2]);
                let lesions = cross_tabulate(&by_lesion[0], &by_lesion[1], &by_lesion[2]);
                images.check_consistency()?;
                lesions.check_consistency()?;
                write_json(&out, &serde_json::json!({ "images": images, "lesions": lesions }))?;
                print!("{}", images.narrative("images"));
                let text = format!("{}\n{}", images.narrative("images"), lesions.narrative("lesions"));
                std::fs::write(out.with_extension("txt"), text)?;
                Ok(())
            })();
            r.context("[compare]")?;
        }
        Command::RunExperiment { config, seeds, out } => {
            let mut cfg = ExperimentConfig::load(&config).context("[config]")?;
            if let Some(n) = seeds {
                cfg.seeds = n;
            }
            if let Some(o) = out {
                // the flag wins over the environment
                std::env::set_var(crossdistill::experiment::OUT_ENV, &o);
                cfg.out = o;
            }
            let r = run_experiment::<Real>(&cfg)?;
            print!("{}", r.report.render_text());
            println!("report {} sha256 {}", r.dir.join("report.json").display(), r.digest);
        }
        Command::Report { run } => {
            let r = report_from_dir(&run).context("[report]")?;
            print!("{}", r.report.render_text());
            println!("sha256 {}", r.digest);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
