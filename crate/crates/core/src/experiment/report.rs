use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{fauc_key, ExperimentConfig, SeedResult, MODELS};
use crate::error::{Error, Result};

pub const CI_METHOD: &str =
    "seed-resampling percentile bootstrap of the mean over seeds (2000 resamples, 95%); not a case-level interval";

const RESAMPLES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x005E_EDC1;

/// One table cell summarised over seeds. With a single seed only the point
/// estimate is filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub ci95: Option<[f64; 2]>,
}

impl Cell {
    pub(super) fn new(values: Vec<f64>, rng: &mut ChaCha8Rng) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self {
                per_seed: values,
                mean,
                min: None,
                max: None,
                ci95: None,
            };
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut means: Vec<f64> = (0..RESAMPLES)
            .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        means.sort_by(f64::total_cmp);
        let q = |p: f64| means[((p * (RESAMPLES - 1) as f64).round() as usize).min(RESAMPLES - 1)];
        Self {
            per_seed: values,
            mean,
            min: Some(min),
            max: Some(max),
            ci95: Some([q(0.025), q(0.975)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    /// `test_fauc_<x>` and `test_positive_fauc_<x>` cells.
    pub cells: BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub run_id: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub fauc_x: Vec<f64>,
    pub ci_method: Option<String>,
    pub table: Vec<TableRow>,
    pub per_seed: Vec<SeedResult>,
}

impl ExperimentReport {
    /// SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("report serializes")))
    }

    pub fn row(&self, model: &str) -> Option<&TableRow> {
        self.table.iter().find(|r| r.model == model)
    }

    /// Seed-mean of a cell such as `test_fauc_1`.
    pub fn mean(&self, model: &str, cell: &str) -> Option<f64> {
        self.row(model)?.cells.get(cell).map(|c| c.mean)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run {}  seeds {:?}", self.run_id, self.seeds);
        if let Some(m) = &self.ci_method {
            let _ = writeln!(s, "interval: {m}");
        }
        for &x in &self.fauc_x {
            let _ = writeln!(s, "\nFAUC-{x}");
            let _ = writeln!(s, "{:<12} {:>28} {:>28}", "model", "Test", "Test+");
            for row in &self.table {
                let fmt = |key: String| {
                    row.cells.get(&key).map_or_else(String::new, |c| match c.ci95 {
                        Some([lo, hi]) => format!("{:.4} [{lo:.4}, {hi:.4}]", c.mean),
                        None => format!("{:.4}", c.mean),
                    })
                };
                let _ = writeln!(
                    s,
                    "{:<12} {:>28} {:>28}",
                    row.model,
                    fmt(format!("test_{}", fauc_key(x))),
                    fmt(format!("test_positive_{}", fauc_key(x)))
                );
            }
        }
        for r in &self.per_seed {
            let _ = writeln!(s, "\nseed {}", r.seed);
            let b = &r.buckets;
            let _ = writeln!(
                s,
                "  missed lesions: F-only {}, S-only {}, both {}; found by both {}",
                b.missed_in_f_only, b.missed_in_s_only, b.missed_in_both, b.found_by_both
            );
            let _ = writeln!(
                s,
                "  false detections: F-only {}, S-only {}, both {}",
                b.false_dets_f_only, b.false_dets_s_only, b.false_dets_both
            );
            let rate = |r: &crate::analysis::Rate| match r.value {
                Some(v) => format!("{}/{} ({:.1}%)", r.numerator, r.denominator, 100.0 * v),
                None => "n/a".to_string(),
            };
            let a = &r.audit;
            let _ = writeln!(s, "  F-only misses hidden in F: {}", rate(&a.missed_f_only_hidden_in_f));
            let _ = writeln!(s, "  S-only misses hidden in S: {}", rate(&a.missed_s_only_hidden_in_s));
            let _ = writeln!(
                s,
                "  S-only false detections on artifacts: {}",
                rate(&a.false_s_only_on_artifact)
            );
            for line in r.crosstab_images.narrative("images").lines() {
                let _ = writeln!(s, "  {line}");
            }
        }
        s
    }
}

/// Builds the model-by-metric table from per-seed results.
pub fn aggregate(cfg: &ExperimentConfig, per_seed: Vec<SeedResult>) -> Result<ExperimentReport> {
    if per_seed.is_empty() {
        return Err(Error::Input("no seed results to aggregate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut table = Vec::new();
    for model in MODELS {
        let mut cells = BTreeMap::new();
        for &x in &cfg.eval.fauc_x {
            let key = fauc_key(x);
            for (prefix, pick) in [
                (
                    "test",
                    (|e: &super::ModelEval| &e.test) as fn(&super::ModelEval) -> &BTreeMap<String, f64>,
                ),
                ("test_positive", |e: &super::ModelEval| &e.test_positive),
            ] {
                let values = per_seed
                    .iter()
                    .map(|r| {
                        r.models
                            .get(model)
                            .and_then(|e| pick(e).get(&key))
                            .copied()
                            .ok_or_else(|| Error::Input(format!("seed {} lacks {model} {key}", r.seed)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                cells.insert(format!("{prefix}_{key}"), Cell::new(values, &mut rng));
            }
        }
        table.push(TableRow {
            model: model.to_string(),
            cells,
        });
    }
    Ok(ExperimentReport {
        run_id: cfg.run_id.clone(),
        config_digest: cfg.digest(),
        seeds: per_seed.iter().map(|r| r.seed).collect(),
        fauc_x: cfg.eval.fauc_x.clone(),
        ci_method: (per_seed.len() > 1).then(|| CI_METHOD.to_string()),
        table,
        per_seed,
    })
}
