use crate::detector::{decode_detections, Detection, Extractor, Head, RawPrediction, Stage};
use crate::error::{Error, Result};
use crate::nn::{param_digest, Module};
use crate::scalar::Scalar;
use crate::tensor::{Representation, Tensor3};

use super::ops::{fuse, Projection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub score_floor: f64,
    pub nms_iou: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            score_floor: crate::detector::DEFAULT_SCORE_FLOOR,
            nms_iou: crate::detector::DEFAULT_NMS_IOU,
        }
    }
}

/// Extractor plus head trained on one modality.
#[derive(Debug, Clone)]
pub struct SingleDetector<T> {
    pub stage: Stage,
    pub extractor: Extractor<T>,
    pub head: Head<T>,
}

impl<T: Scalar> SingleDetector<T> {
    pub fn predict(&self, image: &Tensor3<T>) -> Result<RawPrediction<T>> {
        self.head.forward(&self.extractor.forward(image)?)
    }

    pub fn detect(&self, image: &Tensor3<T>, sample_id: &str, decode: DecodeParams) -> Result<Vec<Detection>> {
        let raw = self.predict(image)?;
        Ok(decode_detections(&raw, sample_id, decode.score_floor, decode.nms_iou))
    }
}

/// Extractor whose parameters can no longer change. The digest taken at
/// construction is re-verified at stage boundaries.
#[derive(Debug, Clone)]
pub struct FrozenExtractor<T> {
    extractor: Extractor<T>,
    digest: String,
}

impl<T: Scalar> FrozenExtractor<T> {
    pub fn freeze(extractor: Extractor<T>) -> Self {
        let digest = param_digest(&extractor);
        Self { extractor, digest }
    }

    pub fn forward(&self, image: &Tensor3<T>) -> Result<Representation<T>> {
        self.extractor.forward(image)
    }

    pub fn extractor(&self) -> &Extractor<T> {
        &self.extractor
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Recomputes the digest and fails with a contract error on change.
    pub fn verify(&self, what: &str) -> Result<()> {
        let now = param_digest(&self.extractor);
        if now != self.digest {
            return Err(Error::Contract(format!(
                "{what} changed while frozen: {} -> {now}",
                self.digest
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FrozenProjection<T> {
    projection: Projection<T>,
    digest: String,
}

impl<T: Scalar> FrozenProjection<T> {
    pub fn freeze(projection: Projection<T>) -> Self {
        let digest = param_digest(&projection);
        Self { projection, digest }
    }

    pub fn projection(&self) -> &Projection<T> {
        &self.projection
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn verify(&self, what: &str) -> Result<()> {
        let now = param_digest(&self.projection);
        if now != self.digest {
            return Err(Error::Contract(format!(
                "{what} changed while frozen: {} -> {now}",
                self.digest
            )));
        }
        Ok(())
    }
}

/// Drops the head of a first-stage detector and freezes its extractor.
pub fn strip_predictor<T: Scalar>(detector: &SingleDetector<T>) -> Result<FrozenExtractor<T>> {
    if detector.stage != Stage::I {
        return Err(Error::Contract(format!(
            "only stage I detectors can be stripped, got stage {}",
            detector.stage
        )));
    }
    Ok(FrozenExtractor::freeze(detector.extractor.clone()))
}

/// Fine-tuned S extractor, frozen mimicry extractor and projection, and a
/// head over their concatenated features.
#[derive(Debug, Clone)]
pub struct FusedModel<T> {
    pub a: Extractor<T>,
    pub b: FrozenExtractor<T>,
    /// Kept for provenance; inference does not use it.
    pub projection: FrozenProjection<T>,
    pub head: Head<T>,
}

impl<T: Scalar> FusedModel<T> {
    pub fn predict(&self, image_s: &Tensor3<T>) -> Result<RawPrediction<T>> {
        let h = fuse(&self.a.forward(image_s)?, &self.b.forward(image_s)?)?;
        self.head.forward(&h)
    }
}

/// Detections from the S image alone.
pub fn infer_fused<T: Scalar>(
    model: &FusedModel<T>,
    image_s: &Tensor3<T>,
    sample_id: &str,
    decode: DecodeParams,
) -> Result<Vec<Detection>> {
    let raw = model.predict(image_s)?;
    Ok(decode_detections(&raw, sample_id, decode.score_floor, decode.nms_iou))
}

/// Comparator fusing real features from both modalities. Needs the F image
/// at inference.
#[derive(Debug, Clone)]
pub struct UpperBoundModel<T> {
    pub a: Extractor<T>,
    pub c: Extractor<T>,
    pub head: Head<T>,
}

impl<T: Scalar> UpperBoundModel<T> {
    pub fn predict(&self, image_s: &Tensor3<T>, image_f: Option<&Tensor3<T>>) -> Result<RawPrediction<T>> {
        let image_f =
            image_f.ok_or_else(|| Error::Input("the upper-bound model needs the F image at inference".into()))?;
        let h = fuse(&self.a.forward(image_s)?, &self.c.forward(image_f)?)?;
        self.head.forward(&h)
    }

    pub fn detect(
        &self,
        image_s: &Tensor3<T>,
        image_f: Option<&Tensor3<T>>,
        sample_id: &str,
        decode: DecodeParams,
    ) -> Result<Vec<Detection>> {
        let raw = self.predict(image_s, image_f)?;
        Ok(decode_detections(&raw, sample_id, decode.score_floor, decode.nms_iou))
    }
}

impl<T: Scalar> Module<T> for SingleDetector<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&[T])) {
        self.extractor.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        self.extractor.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}
