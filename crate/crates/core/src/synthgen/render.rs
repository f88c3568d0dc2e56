use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::scene::LatentLesion;
use super::{stream_seed, GrayImage, LatentScene, LesionKind, PixelBox, SceneConfig};

const F_NOISE_STREAM: u64 = 2;
const S_NOISE_STREAM: u64 = 3;
const ARTIFACT_STREAM: u64 = 4;

/// Fraction of its attenuated contrast an occluded mass keeps in modality F.
pub const F_HIDDEN_RESIDUAL: f64 = 0.1;
/// Fraction of its contrast a subtle lesion keeps in modality S.
pub const S_HIDDEN_RESIDUAL: f64 = 0.35;

const BASE_INTENSITY: f64 = 0.12;
const F_DENSITY_GAIN: f64 = 0.5;
const F_TEXTURE_GAIN: f64 = 0.08;
const S_DENSITY_GAIN: f64 = 0.2;
const S_TEXTURE_GAIN: f64 = 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct FRender {
    pub image: GrayImage,
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SRender {
    pub image: GrayImage,
    pub visible: Vec<bool>,
    pub artifact_boxes: Vec<PixelBox>,
}

/// Tissue density at a point, in `[0, 1)`.
#[inline]
pub(crate) fn density_at(scene: &LatentScene, x: f64, y: f64) -> f64 {
    let sum: f64 = scene.background.iter().map(|b| b.eval(x, y)).sum();
    1.0 - (-scene.density_level * sum).exp()
}

/// Density sampled at pixel centres, row-major.
pub fn density_map(scene: &LatentScene) -> Vec<f64> {
    let n = scene.size;
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            out.push(density_at(scene, x as f64 + 0.5, y as f64 + 0.5));
        }
    }
    out
}

/// Pixel index range whose centres fall in `[lo, hi)`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let start = (lo - 0.5).ceil().max(0.0) as usize;
    let end = ((hi - 0.5).ceil().max(0.0) as usize).min(n);
    start..end.max(start)
}

/// Mean density over the pixels whose centres lie inside `bbox`.
pub fn occlusion(density: &[f64], size: usize, bbox: &PixelBox) -> f64 {
    let xs = pixel_span(bbox.x0(), bbox.x1(), size);
    let ys = pixel_span(bbox.y0(), bbox.y1(), size);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in ys {
        for x in xs.clone() {
            sum += density[y * size + x];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn texture_map(scene: &LatentScene) -> Vec<f64> {
    let n = scene.size;
    let mut out = vec![0.0; n * n];
    for blob in &scene.texture {
        let r = 3.0 * blob.sigma;
        let xs = pixel_span(blob.cx - r, blob.cx + r, n);
        let ys = pixel_span(blob.cy - r, blob.cy + r, n);
        for y in ys {
            for x in xs.clone() {
                out[y * n + x] += blob.eval(x as f64 + 0.5, y as f64 + 0.5);
            }
        }
    }
    out
}

fn smooth_disc(r: f64) -> f64 {
    if r < 0.5 {
        1.0
    } else if r < 1.0 {
        0.5 * (1.0 + (PI * (r - 0.5) / 0.5).cos())
    } else {
        0.0
    }
}

/// Thin radial lines between normalized radii `r0` and `r1`.
fn spokes(dx: f64, dy: f64, half: f64, angles: &[f64], r0: f64, r1: f64) -> f64 {
    let mut best: f64 = 0.0;
    for &a in angles {
        let (s, c) = a.sin_cos();
        let along = dx * c + dy * s;
        if along < r0 * half || along > r1 * half {
            continue;
        }
        let perp = -dx * s + dy * c;
        best = best.max((-(perp * perp) / (2.0 * 0.55 * 0.55)).exp());
    }
    best
}

fn spoke_angles(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let offset = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|k| offset + 2.0 * PI * k as f64 / n as f64 + rng.random_range(-0.3..0.3))
        .collect()
}

fn dot_positions(rng: &mut ChaCha8Rng, bbox: &PixelBox, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            (
                bbox.cx + rng.random_range(-0.4..0.4) * bbox.w,
                bbox.cy + rng.random_range(-0.4..0.4) * bbox.h,
            )
        })
        .collect()
}

/// Adds `amplitude * profile` over a window around `bbox`.
fn stamp(canvas: &mut [f64], size: usize, bbox: &PixelBox, amplitude: f64, profile: impl Fn(f64, f64) -> f64) {
    let win = bbox.inflate(2.0);
    let xs = pixel_span(win.x0(), win.x1(), size);
    let ys = pixel_span(win.y0(), win.y1(), size);
    for y in ys {
        for x in xs.clone() {
            let v = profile(x as f64 + 0.5, y as f64 + 0.5);
            canvas[y * size + x] += amplitude * v;
        }
    }
}

fn mass_profile(lesion: &LatentLesion) -> impl Fn(f64, f64) -> f64 {
    let b = lesion.bbox;
    let angles = if lesion.spiculated {
        let mut rng = ChaCha8Rng::seed_from_u64(lesion.shape_seed);
        spoke_angles(&mut rng, 7)
    } else {
        Vec::new()
    };
    let spiculated = lesion.spiculated;
    move |x, y| {
        let dx = x - b.cx;
        let dy = y - b.cy;
        let u = dx / (b.w / 2.0);
        let v = dy / (b.h / 2.0);
        let r = (u * u + v * v).sqrt();
        if spiculated {
            let half = b.w.min(b.h) / 2.0;
            smooth_disc(r / 0.6).max(0.8 * spokes(dx, dy, half, &angles, 0.3, 1.0))
        } else {
            smooth_disc(r)
        }
    }
}

fn dots_profile(dots: Vec<(f64, f64)>, sigma: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| {
        let s: f64 = dots
            .iter()
            .map(|&(px, py)| {
                let d2 = (x - px).powi(2) + (y - py).powi(2);
                (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum();
        s.min(1.0)
    }
}

fn calc_dots(lesion: &LatentLesion) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(lesion.shape_seed);
    let n = rng.random_range(5..=9);
    dot_positions(&mut rng, &lesion.bbox, n)
}

fn finish(mut canvas: Vec<f64>, size: usize, noise_sigma: f64, noise_seed: u64) -> GrayImage {
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, noise_sigma).expect("finite noise sigma");
        for v in canvas.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    GrayImage::from_intensities(size, size, &canvas)
}

/// Visibility of each lesion in modality F, as a pure function of the
/// density field and the occlusion threshold.
pub(crate) fn f_visibility(lesion: &LatentLesion, occ: f64, cfg: &SceneConfig) -> bool {
    match lesion.kind {
        LesionKind::CalcificationCluster => true,
        LesionKind::Mass => occ < cfg.occlusion_threshold,
    }
}

pub(crate) fn s_visibility(lesion: &LatentLesion, cfg: &SceneConfig) -> bool {
    match (lesion.kind, lesion.spiculated) {
        (LesionKind::Mass, true) => true,
        _ => lesion.contrast >= cfg.subtlety_threshold,
    }
}

/// Projection rendering: dense tissue is bright and cluttered, and masses
/// are attenuated by the mean density over their box. Calcifications render
/// crisply regardless of density.
pub fn render_modality_f(scene: &LatentScene, cfg: &SceneConfig) -> FRender {
    let n = scene.size;
    let density = density_map(scene);
    let texture = texture_map(scene);
    let mut canvas: Vec<f64> = density
        .iter()
        .zip(&texture)
        .map(|(&d, &t)| BASE_INTENSITY + F_DENSITY_GAIN * d + F_TEXTURE_GAIN * d * t)
        .collect();
    let mut visible = Vec::with_capacity(scene.lesions.len());
    for lesion in &scene.lesions {
        let occ = occlusion(&density, n, &lesion.bbox);
        let vis = f_visibility(lesion, occ, cfg);
        visible.push(vis);
        match lesion.kind {
            LesionKind::Mass => {
                let attenuated = lesion.contrast * (1.0 - 0.5 * occ);
                let amp = if vis {
                    attenuated
                } else {
                    attenuated * F_HIDDEN_RESIDUAL
                };
                stamp(&mut canvas, n, &lesion.bbox, amp, mass_profile(lesion));
            }
            LesionKind::CalcificationCluster => {
                let profile = dots_profile(calc_dots(lesion), 0.6);
                stamp(&mut canvas, n, &lesion.bbox, lesion.contrast, profile);
            }
        }
    }
    let image = finish(
        canvas,
        n,
        cfg.noise_sigma,
        stream_seed(scene.seed, scene.index, F_NOISE_STREAM),
    );
    FRender { image, visible }
}

/// Contrast-enhanced rendering that sees through density. Subtle lesions
/// keep only a residual of their contrast; pseudo-artifacts are stamped at
/// lesion-free locations.
pub fn render_modality_s(scene: &LatentScene, cfg: &SceneConfig) -> SRender {
    let n = scene.size;
    let density = density_map(scene);
    let texture = texture_map(scene);
    let mut canvas: Vec<f64> = density
        .iter()
        .zip(&texture)
        .map(|(&d, &t)| BASE_INTENSITY + S_DENSITY_GAIN * d + S_TEXTURE_GAIN * t)
        .collect();
    let mut visible = Vec::with_capacity(scene.lesions.len());
    for lesion in &scene.lesions {
        let vis = s_visibility(lesion, cfg);
        visible.push(vis);
        let amp = if vis {
            lesion.contrast
        } else {
            lesion.contrast * S_HIDDEN_RESIDUAL
        };
        match lesion.kind {
            LesionKind::Mass => stamp(&mut canvas, n, &lesion.bbox, amp, mass_profile(lesion)),
            LesionKind::CalcificationCluster => {
                let sigma = if vis { 0.8 } else { 1.4 };
                let profile = dots_profile(calc_dots(lesion), sigma);
                stamp(&mut canvas, n, &lesion.bbox, amp, profile);
            }
        }
    }

    let artifact_boxes = inject_artifacts(scene, cfg, &mut canvas);
    let image = finish(
        canvas,
        n,
        cfg.noise_sigma,
        stream_seed(scene.seed, scene.index, S_NOISE_STREAM),
    );
    SRender {
        image,
        visible,
        artifact_boxes,
    }
}

/// Pseudo-distortions (spokes without a central mass) and pseudo-calcifications
/// (a few coarse dots), never touching a lesion box.
fn inject_artifacts(scene: &LatentScene, cfg: &SceneConfig, canvas: &mut [f64]) -> Vec<PixelBox> {
    let mut boxes = Vec::new();
    if cfg.artifact_rate <= 0.0 {
        return boxes;
    }
    let n = scene.size;
    let size = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(scene.seed, scene.index, ARTIFACT_STREAM));
    let poisson = Poisson::new(cfg.artifact_rate).expect("positive artifact rate");
    let count = poisson.sample(&mut rng) as usize;
    let [slo, shi] = cfg.lesion_size_range;
    for _ in 0..count {
        let side = if shi > slo { rng.random_range(slo..=shi) } else { slo };
        let distortion = rng.random_bool(0.5);
        let amp = rng.random_range(0.35..0.8);
        let shape_seed: u64 = rng.random();
        let mut placed = None;
        for _ in 0..200 {
            let cx = rng.random_range(side / 2.0 + 1.0..=size - side / 2.0 - 1.0);
            let cy = rng.random_range(side / 2.0 + 1.0..=size - side / 2.0 - 1.0);
            let bbox = PixelBox::new(cx, cy, side, side);
            // rendering spills up to 2px outside the box
            let probe = bbox.inflate(2.0);
            let clear_lesions = scene
                .lesions
                .iter()
                .all(|l| l.bbox.inflate(2.0).intersection(&probe) == 0.0);
            let clear_artifacts = boxes
                .iter()
                .all(|b: &PixelBox| b.inflate(2.0).intersection(&probe) == 0.0);
            if clear_lesions && clear_artifacts {
                placed = Some(bbox);
                break;
            }
        }
        let Some(bbox) = placed else { continue };
        let mut shape_rng = ChaCha8Rng::seed_from_u64(shape_seed);
        if distortion {
            let angles = spoke_angles(&mut shape_rng, 6);
            let half = side / 2.0;
            stamp(canvas, n, &bbox, amp, move |x, y| {
                spokes(x - bbox.cx, y - bbox.cy, half, &angles, 0.15, 1.0)
            });
        } else {
            let k = shape_rng.random_range(3..=4);
            let dots = dot_positions(&mut shape_rng, &bbox, k);
            stamp(canvas, n, &bbox, amp, dots_profile(dots, 1.1));
        }
        boxes.push(bbox);
    }
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::scene::{Blob, LatentLesion};
    use crate::synthgen::{generate_scene, LesionClass};

    fn bare_scene(size: usize) -> LatentScene {
        LatentScene {
            seed: 1,
            index: 0,
            size,
            density_level: 1.0,
            background: Vec::new(),
            texture: Vec::new(),
            lesions: Vec::new(),
        }
    }

    fn mass(id: u32, bbox: PixelBox, contrast: f64, spiculated: bool) -> LatentLesion {
        LatentLesion {
            id,
            kind: LesionKind::Mass,
            class: LesionClass::Malignant,
            bbox,
            contrast,
            spiculated,
            shape_seed: 42,
        }
    }

    /// Independent box integral straight from the blob formula.
    fn brute_occlusion(scene: &LatentScene, b: &PixelBox) -> f64 {
        let mut sum = 0.0;
        let mut count = 0;
        for y in 0..scene.size {
            for x in 0..scene.size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if px >= b.x0() && px < b.x1() && py >= b.y0() && py < b.y1() {
                    let s: f64 = scene
                        .background
                        .iter()
                        .map(|bl| {
                            bl.amplitude
                                * (-((px - bl.cx).powi(2) + (py - bl.cy).powi(2)) / (2.0 * bl.sigma * bl.sigma)).exp()
                        })
                        .sum();
                    sum += 1.0 - (-scene.density_level * s).exp();
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    #[test]
    fn empty_scene_renders_background_only() {
        let cfg = SceneConfig::default();
        let scene = bare_scene(64);
        let f = render_modality_f(
            &scene,
            &SceneConfig {
                noise_sigma: 0.0,
                ..cfg.clone()
            },
        );
        assert!(f.visible.is_empty());
        let expected = (BASE_INTENSITY * 255.0).round() as u8;
        assert!(f.image.pixels.iter().all(|&p| p == expected));
    }

    #[test]
    fn zero_density_lesion_is_visible_in_f() {
        let cfg = SceneConfig::default();
        let mut scene = bare_scene(64);
        scene
            .lesions
            .push(mass(0, PixelBox::new(32.0, 32.0, 12.0, 12.0), 0.5, false));
        let f = render_modality_f(&scene, &cfg);
        assert_eq!(f.visible, vec![true]);
    }

    #[test]
    fn stacked_blobs_hide_a_mass_in_f() {
        let cfg = SceneConfig {
            occlusion_threshold: 0.5,
            ..Default::default()
        };
        let mut scene = bare_scene(64);
        for _ in 0..4 {
            scene.background.push(Blob {
                cx: 32.0,
                cy: 32.0,
                sigma: 30.0,
                amplitude: 0.6,
            });
        }
        let bbox = PixelBox::new(32.0, 32.0, 12.0, 12.0);
        scene.lesions.push(mass(0, bbox, 0.5, false));
        let occ = brute_occlusion(&scene, &bbox);
        assert!(occ > 0.88 && occ < 0.92, "occlusion {occ}");
        let f = render_modality_f(&scene, &cfg);
        assert_eq!(f.visible, vec![false]);
        assert_eq!(occlusion(&density_map(&scene), 64, &bbox), occ);
    }

    #[test]
    fn s_visibility_follows_spiculation_and_subtlety() {
        let cfg = SceneConfig {
            subtlety_threshold: 0.3,
            artifact_rate: 0.0,
            ..Default::default()
        };
        let mut scene = bare_scene(64);
        for _ in 0..6 {
            scene.background.push(Blob {
                cx: 20.0,
                cy: 20.0,
                sigma: 40.0,
                amplitude: 1.0,
            });
        }
        scene
            .lesions
            .push(mass(0, PixelBox::new(16.0, 16.0, 12.0, 12.0), 0.9, true));
        scene
            .lesions
            .push(mass(1, PixelBox::new(44.0, 44.0, 12.0, 12.0), 0.1, false));
        let s = render_modality_s(&scene, &cfg);
        assert_eq!(s.visible, vec![true, false]);
        assert!(s.artifact_boxes.is_empty());
    }

    #[test]
    fn artifacts_avoid_lesions() {
        let cfg = SceneConfig {
            positive_fraction: 1.0,
            artifact_rate: 3.0,
            ..Default::default()
        };
        let mut total = 0;
        for i in 0..40 {
            let scene = generate_scene(2, i, &cfg).unwrap();
            let s = render_modality_s(&scene, &cfg);
            total += s.artifact_boxes.len();
            for a in &s.artifact_boxes {
                assert!(a.inside(cfg.image_size as f64));
                for l in &scene.lesions {
                    assert_eq!(a.intersection(&l.bbox), 0.0);
                }
            }
        }
        assert!(total > 60, "expected roughly 120 artifacts, got {total}");
    }

    #[test]
    fn pixel_span_selects_contained_centres() {
        assert_eq!(pixel_span(0.0, 3.0, 10), 0..3);
        assert_eq!(pixel_span(0.6, 3.5, 10), 1..3);
        assert_eq!(pixel_span(-4.0, 40.0, 10), 0..10);
    }
}
