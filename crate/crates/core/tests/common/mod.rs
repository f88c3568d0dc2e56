#![allow(dead_code)]

use std::path::Path;

use crossdistill::pipeline::samples_from_manifest;
use crossdistill::synthgen::{generate_dataset, DatasetManifest, SceneConfig, SplitFractions};
use crossdistill::Sample;

/// Generates `train + test` samples into `dir` and reads them back.
pub fn dataset(
    dir: &Path,
    scene: &SceneConfig,
    train: usize,
    test: usize,
) -> (Vec<DatasetManifest>, Vec<Sample>, Vec<Sample>) {
    let ms = generate_dataset(scene, train + test, SplitFractions::from_counts(train, 0, test), dir).unwrap();
    let tr = samples_from_manifest(&ms[0], dir).unwrap();
    let te = samples_from_manifest(&ms[2], dir).unwrap();
    (ms, tr, te)
}

/// Bright, unoccluded, artifact-free lesions.
pub fn easy_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        seed,
        contrast_range: [0.7, 0.9],
        noise_sigma: 0.02,
        ..SceneConfig::default().without_complementarity()
    }
}
