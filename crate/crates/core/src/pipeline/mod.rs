//! Three-stage training: single-modality detectors, representation
//! mimicry from S to F features, and a fused detector that needs only S at
//! inference. Also the two-modality upper-bound comparator.

mod bundle;
mod models;
mod ops;
mod train;

pub use bundle::{
    load_fused, load_single, load_stage2, load_upper_bound, save_fused, save_single_pair, save_stage2,
    save_upper_bound, BundleManifest, STAGE1_DIR, STAGE2_DIR, STAGE3_DIR, UB_DIR,
};
pub use models::{
    infer_fused, strip_predictor, DecodeParams, FrozenExtractor, FrozenProjection, FusedModel, SingleDetector,
    UpperBoundModel,
};
pub use ops::{cosine_similarity, cosine_similarity_grad, fuse, project_linear, split_fused_grad, Projection};
pub use train::{
    mean_cosine, train_stage1, train_stage2, train_stage3, train_upper_bound, Stage1Output, Stage2Output, StageLog,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{ExtractorConfig, FocalLossParams, GroundTruthBox, HeadConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthgen::{load_pair, stream_seed, DatasetManifest};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageEpochs {
    pub stage1: usize,
    pub stage2: usize,
    pub stage3: usize,
    pub upper_bound: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        Self {
            stage1: 12,
            stage2: 8,
            stage3: 8,
            upper_bound: 8,
        }
    }
}

/// How the S-side student extractor starts before mimicry training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    /// Copy of the frozen F-side teacher.
    Teacher,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub focal: FocalLossParams,
    pub epochs: StageEpochs,
    /// Images per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub epsilon_cos: f64,
    /// Recorded only: every code path is single-threaded and deterministic.
    pub deterministic_mode: bool,
    pub box_weight: f64,
    pub extractor: ExtractorConfig,
    pub head_hidden: usize,
    pub anchor_size: f64,
    pub student_init: StudentInit,
    pub score_floor: f64,
    pub nms_iou: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.5e-4,
            focal: FocalLossParams::default(),
            epochs: StageEpochs::default(),
            batch_size: 8,
            seed: 0,
            epsilon_cos: 1e-8,
            deterministic_mode: true,
            box_weight: 1.0,
            extractor: ExtractorConfig::default(),
            head_hidden: 32,
            anchor_size: 14.0,
            student_init: StudentInit::Teacher,
            score_floor: crate::detector::DEFAULT_SCORE_FLOOR,
            nms_iou: crate::detector::DEFAULT_NMS_IOU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.epsilon_cos > 0.0) {
            return Err(Error::Config("epsilon_cos must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.box_weight >= 0.0) {
            return Err(Error::Config("box_weight must be non-negative".into()));
        }
        if self.head_hidden == 0 || !(self.anchor_size > 0.0) {
            return Err(Error::Config("head_hidden and anchor_size must be positive".into()));
        }
        self.focal.validate()?;
        self.extractor.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn head_config(&self, in_channels: usize) -> HeadConfig {
        HeadConfig {
            in_channels,
            hidden: self.head_hidden,
            num_classes: 2,
            anchor_size: self.anchor_size,
            image_size: self.extractor.input_size,
        }
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            score_floor: self.score_floor,
            nms_iou: self.nms_iou,
        }
    }

    /// Seed for one named random stream of one stage.
    pub fn stream(&self, stage: u64, stream: u64) -> u64 {
        stream_seed(self.seed, stage, stream)
    }
}

/// One epoch's visiting order: every image of the smaller class plus an
/// equal number drawn without replacement from the larger one, shuffled.
/// Deterministic in `(seed, epoch)`.
pub fn balanced_sampler(positive: &[bool], seed: u64, epoch: usize) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..positive.len()).filter(|&i| positive[i]).collect();
    let neg: Vec<usize> = (0..positive.len()).filter(|&i| !positive[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Config(format!(
            "balanced sampling needs both classes, got {} positive and {} negative images",
            pos.len(),
            neg.len()
        )));
    }
    let n = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, epoch as u64, 0x5A3F));
    let mut pos = pos;
    let mut neg = neg;
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut order: Vec<usize> = pos[..n].iter().chain(&neg[..n]).copied().collect();
    order.shuffle(&mut rng);
    Ok(order)
}

/// Plain per-epoch shuffle of `0..n`.
pub fn shuffled_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, epoch as u64, 0x5A40));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// A decoded image pair with its annotations.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub sample_id: String,
    pub image_s: Tensor3<T>,
    pub image_f: Tensor3<T>,
    pub gts: Vec<GroundTruthBox>,
}

impl<T> TrainSample<T> {
    pub fn is_positive(&self) -> bool {
        !self.gts.is_empty()
    }
}

/// Loads every pair listed in a manifest file.
pub fn load_samples<T: Scalar>(manifest_path: &Path) -> Result<(DatasetManifest, Vec<TrainSample<T>>)> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let samples = samples_from_manifest(&manifest, dir)?;
    Ok((manifest, samples))
}

pub fn samples_from_manifest<T: Scalar>(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<TrainSample<T>>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let (f, s) = load_pair(dir, e)?;
            let gts = e
                .lesions
                .iter()
                .map(|l| GroundTruthBox {
                    id: l.id,
                    bbox: l.bbox(),
                    class: l.class,
                })
                .collect();
            Ok(TrainSample {
                sample_id: e.sample_id.clone(),
                image_s: s.to_tensor(),
                image_f: f.to_tensor(),
                gts,
            })
        })
        .collect()
}
