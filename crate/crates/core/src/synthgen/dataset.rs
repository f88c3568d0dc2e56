use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_modality_f, render_modality_s};
use super::scene::generate_scene;
use super::{stream_seed, GrayImage, Lesion, LesionClass, LesionKind, PairedSample, PixelBox, SceneConfig};
use crate::error::{Error, Result};

const SPLIT_STREAM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSplit {
    Train,
    Val,
    Test,
}

impl DatasetSplit {
    pub const ALL: [DatasetSplit; 3] = [DatasetSplit::Train, DatasetSplit::Val, DatasetSplit::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetSplit::Train => "train",
            DatasetSplit::Val => "val",
            DatasetSplit::Test => "test",
        }
    }

    pub fn manifest_file(self) -> String {
        format!("manifest_{}.json", self.as_str())
    }
}

/// Train/val/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.1,
            test: 0.3,
        }
    }
}

impl SplitFractions {
    /// Fractions that reproduce the given counts exactly.
    pub fn from_counts(train: usize, val: usize, test: usize) -> Self {
        let n = (train + val + test) as f64;
        Self {
            train: train as f64 / n,
            val: val as f64 / n,
            test: test as f64 / n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!("split fractions out of range: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` samples.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let parts = [self.train, self.val, self.test];
        let exact: Vec<f64> = parts.iter().map(|f| f * n as f64).collect();
        // nudge so values like 0.1*100 = 10.000000000000002 floor correctly
        let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
        let mut assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - counts[a] as f64;
            let rb = exact[b] - counts[b] as f64;
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        let mut i = 0;
        while assigned < n {
            counts[order[i % 3]] += 1;
            assigned += 1;
            i += 1;
        }
        [counts[0], counts[1], counts[2]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub id: u32,
    pub kind: LesionKind,
    pub class: LesionClass,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub contrast: f64,
    pub spiculated: bool,
    /// Absent for annotations that do not come from the generator.
    #[serde(rename = "visible_F", default, skip_serializing_if = "Option::is_none")]
    pub visible_f: Option<bool>,
    #[serde(rename = "visible_S", default, skip_serializing_if = "Option::is_none")]
    pub visible_s: Option<bool>,
}

impl LesionRecord {
    pub fn bbox(&self) -> PixelBox {
        PixelBox::new(self.cx, self.cy, self.w, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl From<PixelBox> for BoxRecord {
    fn from(b: PixelBox) -> Self {
        Self {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
        }
    }
}

impl BoxRecord {
    pub fn bbox(&self) -> PixelBox {
        PixelBox::new(self.cx, self.cy, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    /// Relative to the manifest's directory.
    #[serde(rename = "image_F_path")]
    pub image_f_path: String,
    #[serde(rename = "image_S_path")]
    pub image_s_path: String,
    pub lesions: Vec<LesionRecord>,
    #[serde(rename = "artifact_boxes_S", default)]
    pub artifact_boxes_s: Vec<BoxRecord>,
    pub label: bool,
}

impl ManifestEntry {
    pub fn lesion_boxes(&self) -> Vec<PixelBox> {
        self.lesions.iter().map(LesionRecord::bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: SceneConfig,
    pub split: DatasetSplit,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.label).count()
    }
}

pub fn sample_id(index: u64) -> String {
    format!("s{index:06}")
}

/// Generates and renders scene `index` of the stream rooted at `cfg.seed`.
pub fn generate_sample(cfg: &SceneConfig, index: u64) -> Result<PairedSample> {
    let scene = generate_scene(cfg.seed, index, cfg)?;
    let f = render_modality_f(&scene, cfg);
    let s = render_modality_s(&scene, cfg);
    let lesions: Vec<Lesion> = scene
        .lesions
        .iter()
        .zip(f.visible.iter().zip(&s.visible))
        .map(|(l, (&vf, &vs))| Lesion {
            id: l.id,
            kind: l.kind,
            class: l.class,
            bbox: l.bbox,
            contrast: l.contrast,
            spiculated: l.spiculated,
            visible_f: vf,
            visible_s: vs,
        })
        .collect();
    let label = lesions.iter().any(|l| l.class == LesionClass::Malignant);
    Ok(PairedSample {
        sample_id: sample_id(index),
        image_f: f.image,
        image_s: s.image,
        lesions,
        label,
        artifact_boxes_s: s.artifact_boxes,
    })
}

fn entry_for(sample: &PairedSample) -> ManifestEntry {
    ManifestEntry {
        sample_id: sample.sample_id.clone(),
        image_f_path: format!("images/{}_F.png", sample.sample_id),
        image_s_path: format!("images/{}_S.png", sample.sample_id),
        lesions: sample
            .lesions
            .iter()
            .map(|l| LesionRecord {
                id: l.id,
                kind: l.kind,
                class: l.class,
                cx: l.bbox.cx,
                cy: l.bbox.cy,
                w: l.bbox.w,
                h: l.bbox.h,
                contrast: l.contrast,
                spiculated: l.spiculated,
                visible_f: Some(l.visible_f),
                visible_s: Some(l.visible_s),
            })
            .collect(),
        artifact_boxes_s: sample.artifact_boxes_s.iter().map(|&b| b.into()).collect(),
        label: sample.label,
    }
}

/// Writes `images/*.png` and one `manifest_<split>.json` per split under
/// `out_dir`; returns the three manifests in train/val/test order.
pub fn generate_dataset(
    cfg: &SceneConfig,
    n_samples: usize,
    fractions: SplitFractions,
    out_dir: &Path,
) -> Result<Vec<DatasetManifest>> {
    cfg.validate()?;
    fractions.validate()?;
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut order: Vec<u64> = (0..n_samples as u64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 0, SPLIT_STREAM));
    order.shuffle(&mut rng);
    let [n_train, n_val, _] = fractions.counts(n_samples);
    let mut assignment = vec![DatasetSplit::Test; n_samples];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx as usize] = if rank < n_train {
            DatasetSplit::Train
        } else if rank < n_train + n_val {
            DatasetSplit::Val
        } else {
            DatasetSplit::Test
        };
    }

    let mut manifests: Vec<DatasetManifest> = DatasetSplit::ALL
        .iter()
        .map(|&split| DatasetManifest {
            config: cfg.clone(),
            split,
            entries: Vec::new(),
        })
        .collect();
    for index in 0..n_samples as u64 {
        let sample = generate_sample(cfg, index)?;
        let entry = entry_for(&sample);
        sample.image_f.write_png(&out_dir.join(&entry.image_f_path))?;
        sample.image_s.write_png(&out_dir.join(&entry.image_s_path))?;
        let slot = match assignment[index as usize] {
            DatasetSplit::Train => 0,
            DatasetSplit::Val => 1,
            DatasetSplit::Test => 2,
        };
        manifests[slot].entries.push(entry);
    }
    for m in &manifests {
        m.save(&out_dir.join(m.split.manifest_file()))?;
    }
    Ok(manifests)
}

/// Resolves an entry's image path against the manifest location.
fn resolve(manifest_dir: &Path, rel: &str) -> PathBuf {
    manifest_dir.join(rel)
}

/// Reads one entry's two images.
pub fn load_pair(manifest_dir: &Path, entry: &ManifestEntry) -> Result<(GrayImage, GrayImage)> {
    let f = GrayImage::read_png(&resolve(manifest_dir, &entry.image_f_path))?;
    let s = GrayImage::read_png(&resolve(manifest_dir, &entry.image_s_path))?;
    Ok((f, s))
}
