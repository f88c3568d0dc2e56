use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, LesionClass, LesionKind, PixelBox, SceneConfig};
use crate::error::{Error, Result};

const SCENE_STREAM: u64 = 1;
const PLACEMENT_ATTEMPTS: usize = 1000;

/// Isotropic Gaussian bump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

impl Blob {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// A lesion before rendering. `shape_seed` fixes spoke angles and
/// calcification positions so both modalities share geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLesion {
    pub id: u32,
    pub kind: LesionKind,
    pub class: LesionClass,
    pub bbox: PixelBox,
    pub contrast: f64,
    pub spiculated: bool,
    pub shape_seed: u64,
}

/// Everything about a scene that both renderers share.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentScene {
    pub seed: u64,
    pub index: u64,
    pub size: usize,
    /// Scales the summed background blobs before the density nonlinearity.
    pub density_level: f64,
    pub background: Vec<Blob>,
    /// Fine-scale tissue clutter, signed amplitudes.
    pub texture: Vec<Blob>,
    pub lesions: Vec<LatentLesion>,
}

pub fn generate_scene(seed: u64, index: u64, cfg: &SceneConfig) -> Result<LatentScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, index, SCENE_STREAM));
    let size = cfg.image_size as f64;

    let [dlo, dhi] = cfg.density_range;
    let density_level = if dhi > dlo { rng.random_range(dlo..=dhi) } else { dlo };
    let background = (0..cfg.n_background_blobs)
        .map(|_| Blob {
            cx: rng.random_range(0.0..size),
            cy: rng.random_range(0.0..size),
            sigma: rng.random_range(0.1..0.3) * size,
            amplitude: rng.random_range(0.8..2.5),
        })
        .collect();
    let n_texture = (cfg.image_size * cfg.image_size) / 256;
    let texture = (0..n_texture)
        .map(|_| Blob {
            cx: rng.random_range(0.0..size),
            cy: rng.random_range(0.0..size),
            sigma: rng.random_range(1.5..3.5),
            amplitude: rng.random_range(-1.0..1.0),
        })
        .collect();

    let mut lesions: Vec<LatentLesion> = Vec::new();
    if rng.random_bool(cfg.positive_fraction) {
        let c = cfg.lesions_per_positive;
        let count = rng.random_range(c.min..=c.max);
        let [slo, shi] = cfg.lesion_size_range;
        let [clo, chi] = cfg.contrast_range;
        for id in 0..count {
            let kind = if rng.random_bool(cfg.mass_fraction) {
                LesionKind::Mass
            } else {
                LesionKind::CalcificationCluster
            };
            let spiculated = kind == LesionKind::Mass && rng.random_bool(cfg.spiculated_fraction);
            let p_malignant = match (kind, spiculated) {
                (LesionKind::Mass, true) => 0.85,
                (LesionKind::Mass, false) => 0.35,
                (LesionKind::CalcificationCluster, _) => 0.6,
            };
            let class = if rng.random_bool(p_malignant) {
                LesionClass::Malignant
            } else {
                LesionClass::Benign
            };
            let contrast = if chi > clo { rng.random_range(clo..=chi) } else { clo };
            let w = if shi > slo { rng.random_range(slo..=shi) } else { slo };
            let h = (w * rng.random_range(0.8..1.25)).clamp(slo, shi);
            let shape_seed = rng.random();
            let mut placed = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let cx = rng.random_range(w / 2.0 + 1.0..=size - w / 2.0 - 1.0);
                let cy = rng.random_range(h / 2.0 + 1.0..=size - h / 2.0 - 1.0);
                let bbox = PixelBox::new(cx, cy, w, h);
                let clear = lesions.iter().all(|l| l.bbox.inflate(2.0).intersection(&bbox) == 0.0);
                if clear {
                    placed = Some(bbox);
                    break;
                }
            }
            let bbox = placed.ok_or_else(|| {
                Error::Config(format!(
                    "could not place {count} non-overlapping lesions in a {}px image",
                    cfg.image_size
                ))
            })?;
            lesions.push(LatentLesion {
                id,
                kind,
                class,
                bbox,
                contrast,
                spiculated,
                shape_seed,
            });
        }
    }

    Ok(LatentScene {
        seed,
        index,
        size: cfg.image_size,
        density_level,
        background,
        texture,
        lesions,
    })
}
