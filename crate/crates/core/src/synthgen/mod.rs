//! Paired two-modality synthetic lesion data.
//!
//! Modality F is a projection-style rendering in which dense background
//! tissue hides masses; modality S is a contrast-enhanced rendering that sees
//! through density but under-emphasizes subtle non-spiculated masses and
//! faint calcifications, and carries lesion-like pseudo-artifacts.

mod dataset;
mod image;
mod render;
mod scene;

pub use dataset::{
    generate_dataset, generate_sample, load_pair, sample_id, BoxRecord, DatasetManifest, DatasetSplit, LesionRecord,
    ManifestEntry, SplitFractions,
};
pub use image::GrayImage;
pub use render::{
    density_map, occlusion, render_modality_f, render_modality_s, FRender, SRender, F_HIDDEN_RESIDUAL,
    S_HIDDEN_RESIDUAL,
};
pub use scene::{generate_scene, Blob, LatentScene};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, stored by centre and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection(&self, other: &PixelBox) -> f64 {
        let w = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let h = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &PixelBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn inside(&self, size: f64) -> bool {
        self.x0() >= 0.0 && self.y0() >= 0.0 && self.x1() <= size && self.y1() <= size
    }

    /// Same box grown by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> PixelBox {
        PixelBox::new(self.cx, self.cy, self.w + 2.0 * margin, self.h + 2.0 * margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionKind {
    Mass,
    CalcificationCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionClass {
    Malignant,
    Benign,
}

impl LesionClass {
    pub const ALL: [LesionClass; 2] = [LesionClass::Malignant, LesionClass::Benign];

    pub fn index(self) -> usize {
        match self {
            LesionClass::Malignant => 0,
            LesionClass::Benign => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LesionClass::Malignant => "malignant",
            LesionClass::Benign => "benign",
        }
    }
}

impl std::str::FromStr for LesionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "malignant" => Ok(LesionClass::Malignant),
            "benign" => Ok(LesionClass::Benign),
            other => Err(Error::Input(format!("unknown lesion class '{other}'"))),
        }
    }
}

/// A lesion with its per-modality visibility flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub id: u32,
    pub kind: LesionKind,
    pub class: LesionClass,
    pub bbox: PixelBox,
    pub contrast: f64,
    pub spiculated: bool,
    pub visible_f: bool,
    pub visible_s: bool,
}

/// Inclusive integer range for the number of lesions in a positive scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Square image side in pixels.
    pub image_size: usize,
    pub n_background_blobs: usize,
    /// Per-scene tissue density level is drawn uniformly from this range.
    pub density_range: [f64; 2],
    pub lesions_per_positive: CountRange,
    pub positive_fraction: f64,
    /// Mean box density at or above which a mass is hidden in modality F.
    pub occlusion_threshold: f64,
    /// Contrast below which non-spiculated masses and calcifications are
    /// hidden in modality S.
    pub subtlety_threshold: f64,
    /// Poisson mean of pseudo-artifacts per modality-S image.
    pub artifact_rate: f64,
    pub seed: u64,
    pub contrast_range: [f64; 2],
    /// Lesion box side length range in pixels.
    pub lesion_size_range: [f64; 2],
    pub mass_fraction: f64,
    pub spiculated_fraction: f64,
    /// Standard deviation of additive pixel noise (intensity units in [0,1]).
    pub noise_sigma: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            n_background_blobs: 6,
            density_range: [0.2, 1.0],
            lesions_per_positive: CountRange { min: 1, max: 2 },
            positive_fraction: 0.5,
            occlusion_threshold: 0.5,
            subtlety_threshold: 0.45,
            artifact_rate: 0.8,
            seed: 0,
            contrast_range: [0.15, 0.9],
            lesion_size_range: [10.0, 18.0],
            mass_fraction: 0.6,
            spiculated_fraction: 0.4,
            noise_sigma: 0.03,
        }
    }
}

impl SceneConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Configuration with no complementary signal: nothing is hidden in
    /// either modality and no pseudo-artifacts are injected.
    pub fn without_complementarity(mut self) -> Self {
        self.occlusion_threshold = 1.0;
        self.subtlety_threshold = 0.0;
        self.artifact_rate = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0,1], got {v}")))
            }
        };
        if self.image_size < 32 {
            return Err(Error::Config(format!(
                "image_size must be at least 32, got {}",
                self.image_size
            )));
        }
        unit("positive_fraction", self.positive_fraction)?;
        unit("occlusion_threshold", self.occlusion_threshold)?;
        unit("subtlety_threshold", self.subtlety_threshold)?;
        unit("mass_fraction", self.mass_fraction)?;
        unit("spiculated_fraction", self.spiculated_fraction)?;
        for (name, r) in [
            ("density_range", self.density_range),
            ("contrast_range", self.contrast_range),
        ] {
            unit(name, r[0])?;
            unit(name, r[1])?;
            if r[0] > r[1] {
                return Err(Error::Config(format!("{name} is reversed: {r:?}")));
            }
        }
        let [lo, hi] = self.lesion_size_range;
        if !(lo > 0.0 && lo <= hi && hi <= self.image_size as f64 / 3.0) {
            return Err(Error::Config(format!(
                "lesion_size_range {:?} must be positive, ordered and at most a third of the image",
                self.lesion_size_range
            )));
        }
        let c = self.lesions_per_positive;
        if c.min == 0 || c.min > c.max {
            return Err(Error::Config(format!(
                "lesions_per_positive must satisfy 1 <= min <= max, got {}..={}",
                c.min, c.max
            )));
        }
        if !(self.artifact_rate >= 0.0 && self.artifact_rate.is_finite()) {
            return Err(Error::Config(format!(
                "artifact_rate must be finite and non-negative, got {}",
                self.artifact_rate
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// One latent scene rendered in both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub sample_id: String,
    pub image_f: GrayImage,
    pub image_s: GrayImage,
    pub lesions: Vec<Lesion>,
    /// True when at least one lesion is malignant.
    pub label: bool,
    pub artifact_boxes_s: Vec<PixelBox>,
}

/// Independent RNG stream for `(seed, index, stream)`.
pub fn stream_seed(seed: u64, index: u64, stream: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ index) ^ stream.wrapping_mul(0xA24B_AED4_963E_E407))
}
