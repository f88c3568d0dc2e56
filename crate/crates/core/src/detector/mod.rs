//! Single-stage anchor-grid detector, split into a feature extractor and a
//! predictor head.

mod anchors;
mod checkpoint;
mod decode;
mod loss;

pub use anchors::{assign_anchors, AnchorAssignment, AnchorGrid, AnchorTarget, GroundTruthBox};
pub use checkpoint::{load_module, save_module, ModuleArch, ModuleId, ModuleSidecar, Stage};
pub use decode::{decode_detections, nms, Detection, DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR};
pub use loss::{
    box_regression_loss, detection_loss, focal_loss, focal_loss_grad, focal_loss_logit, smooth_l1, DetectionLoss,
    FocalLossParams, FocalTarget,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, leaky_relu_backward, Conv2d, ConvCache, Module};
use crate::scalar::Scalar;
use crate::tensor::{Representation, Tensor3};

/// Strided convolution stack. Each stage is a 3×3 convolution followed by a
/// leaky ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            in_channels: 1,
            channels: vec![8, 16, 32, 64],
            strides: vec![2, 2, 2, 2],
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "extractor needs one stride per stage, got {} channels and {} strides",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("extractor channels and strides must be positive".into()));
        }
        if !self.input_size.is_multiple_of(self.total_stride()) {
            return Err(Error::Config(format!(
                "input size {} is not a multiple of total stride {}",
                self.input_size,
                self.total_stride()
            )));
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    /// `(C, H, W)` of the representation for a square input.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        let g = self.input_size / self.total_stride();
        (self.out_channels(), g, g)
    }
}

/// Backward-pass record of one [`Extractor::forward_train`] call.
#[derive(Debug, Clone)]
pub struct ExtractorTape<T> {
    caches: Vec<ConvCache<T>>,
    outputs: Vec<Tensor3<T>>,
}

#[derive(Debug, Clone)]
pub struct Extractor<T> {
    config: ExtractorConfig,
    convs: Vec<Conv2d<T>>,
}

impl<T: Scalar> Extractor<T> {
    pub fn new<R: Rng>(config: ExtractorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.channels.len());
        let mut c_in = config.in_channels;
        for (&c_out, &s) in config.channels.iter().zip(&config.strides) {
            convs.push(Conv2d::he_init(c_in, c_out, 3, s, 1, rng));
            c_in = c_out;
        }
        Ok(Self { config, convs })
    }

    pub fn zeroed(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.channels.len());
        let mut c_in = config.in_channels;
        for (&c_out, &s) in config.channels.iter().zip(&config.strides) {
            convs.push(Conv2d::zeros(c_in, c_out, 3, s, 1));
            c_in = c_out;
        }
        Ok(Self { config, convs })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.config.output_shape()
    }

    pub fn stride(&self) -> usize {
        self.config.total_stride()
    }

    fn check_image(&self, image: &Tensor3<T>) -> Result<()> {
        let want = (self.config.in_channels, self.config.input_size, self.config.input_size);
        if image.shape() != want {
            return Err(Error::Input(format!(
                "extractor expects input {want:?}, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, image: &Tensor3<T>) -> Result<Representation<T>> {
        self.check_image(image)?;
        let mut x = image.clone();
        for conv in &self.convs {
            x = conv.forward(&x)?;
            leaky_relu(&mut x);
        }
        Ok(Representation::new(x, self.stride()))
    }

    pub fn forward_train(&self, image: &Tensor3<T>) -> Result<(Representation<T>, ExtractorTape<T>)> {
        self.check_image(image)?;
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut outputs = Vec::with_capacity(self.convs.len());
        let mut x = image.clone();
        for conv in &self.convs {
            let (mut y, cache) = conv.forward_cached(&x)?;
            leaky_relu(&mut y);
            caches.push(cache);
            outputs.push(y.clone());
            x = y;
        }
        Ok((Representation::new(x, self.stride()), ExtractorTape { caches, outputs }))
    }

    /// Accumulates parameter gradients given dLoss/dRepresentation.
    pub fn backward(&mut self, tape: &ExtractorTape<T>, grad: Tensor3<T>) {
        let mut g = grad;
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward(&mut g, &tape.outputs[i]);
            match self.convs[i].backward(&g, &tape.caches[i], i > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }
}

impl<T: Scalar> Module<T> for Extractor<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&[T])) {
        self.convs.iter().for_each(|c| c.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        self.convs.iter_mut().for_each(|c| c.visit_params_mut(f));
    }
}

/// Per-anchor class logits and box deltas for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction<T> {
    /// `(anchors, classes)` row-major.
    pub class_logits: Vec<T>,
    /// `(anchors, 4)` row-major: centre offsets then log-size offsets.
    pub box_deltas: Vec<T>,
    pub num_classes: usize,
    pub grid: AnchorGrid,
}

impl<T: Scalar> RawPrediction<T> {
    pub fn num_anchors(&self) -> usize {
        self.grid.len()
    }

    pub fn logits(&self, anchor: usize) -> &[T] {
        &self.class_logits[anchor * self.num_classes..(anchor + 1) * self.num_classes]
    }

    pub fn deltas(&self, anchor: usize) -> &[T] {
        &self.box_deltas[anchor * 4..anchor * 4 + 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub num_classes: usize,
    /// Side of the single square anchor per cell, in pixels.
    pub anchor_size: f64,
    pub image_size: usize,
}

#[derive(Debug, Clone)]
pub struct HeadTape<T> {
    hidden_cache: ConvCache<T>,
    hidden_out: Tensor3<T>,
    out_cache: ConvCache<T>,
    grid: AnchorGrid,
}

/// Predictor: 1×1 hidden layer, then 1×1 projection to class logits and
/// box deltas.
#[derive(Debug, Clone)]
pub struct Head<T> {
    config: HeadConfig,
    hidden: Conv2d<T>,
    out: Conv2d<T>,
}

/// Initial foreground probability encoded in the classification bias.
const PRIOR_PROBABILITY: f64 = 0.01;

impl<T: Scalar> Head<T> {
    pub fn new<R: Rng>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        Self::check_config(&config)?;
        let hidden = Conv2d::he_init(config.in_channels, config.hidden, 1, 1, 0, rng);
        let mut out = Conv2d::he_init(config.hidden, config.num_classes + 4, 1, 1, 0, rng);
        for w in out.weight.iter_mut() {
            *w *= T::lit(0.1);
        }
        let prior = -((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY).ln();
        for b in out.bias.iter_mut().take(config.num_classes) {
            *b = T::lit(prior);
        }
        Ok(Self { config, hidden, out })
    }

    pub fn zeroed(config: HeadConfig) -> Result<Self> {
        Self::check_config(&config)?;
        Ok(Self {
            config,
            hidden: Conv2d::zeros(config.in_channels, config.hidden, 1, 1, 0),
            out: Conv2d::zeros(config.hidden, config.num_classes + 4, 1, 1, 0),
        })
    }

    fn check_config(config: &HeadConfig) -> Result<()> {
        if config.in_channels == 0 || config.hidden == 0 || config.num_classes == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if !(config.anchor_size > 0.0) {
            return Err(Error::Config("anchor size must be positive".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    fn check_rep(&self, rep: &Representation<T>) -> Result<AnchorGrid> {
        let (c, h, w) = rep.shape();
        if c != self.config.in_channels {
            return Err(Error::Config(format!(
                "head configured for {} input channels, representation has {c}",
                self.config.in_channels
            )));
        }
        Ok(AnchorGrid::new(
            h,
            w,
            rep.stride,
            self.config.anchor_size,
            self.config.image_size,
        ))
    }

    fn split(&self, out: &Tensor3<T>, grid: AnchorGrid) -> RawPrediction<T> {
        let k = self.config.num_classes;
        let n = out.plane_len();
        let data = out.data();
        let mut class_logits = vec![T::zero(); n * k];
        let mut box_deltas = vec![T::zero(); n * 4];
        for a in 0..n {
            for c in 0..k {
                class_logits[a * k + c] = data[c * n + a];
            }
            for d in 0..4 {
                box_deltas[a * 4 + d] = data[(k + d) * n + a];
            }
        }
        RawPrediction {
            class_logits,
            box_deltas,
            num_classes: k,
            grid,
        }
    }

    pub fn forward(&self, rep: &Representation<T>) -> Result<RawPrediction<T>> {
        let grid = self.check_rep(rep)?;
        let mut h = self.hidden.forward(&rep.values)?;
        leaky_relu(&mut h);
        let out = self.out.forward(&h)?;
        Ok(self.split(&out, grid))
    }

    pub fn forward_train(&self, rep: &Representation<T>) -> Result<(RawPrediction<T>, HeadTape<T>)> {
        let grid = self.check_rep(rep)?;
        let (mut h, hidden_cache) = self.hidden.forward_cached(&rep.values)?;
        leaky_relu(&mut h);
        let (out, out_cache) = self.out.forward_cached(&h)?;
        let raw = self.split(&out, grid);
        Ok((
            raw,
            HeadTape {
                hidden_cache,
                hidden_out: h,
                out_cache,
                grid,
            },
        ))
    }

    /// Accumulates head gradients; returns dLoss/dRepresentation.
    pub fn backward(&mut self, tape: &HeadTape<T>, grad_logits: &[T], grad_deltas: &[T]) -> Tensor3<T> {
        let k = self.config.num_classes;
        let n = tape.grid.len();
        let mut g = Tensor3::zeros(k + 4, tape.grid.grid_h, tape.grid.grid_w);
        {
            let d = g.data_mut();
            for a in 0..n {
                for c in 0..k {
                    d[c * n + a] = grad_logits[a * k + c];
                }
                for j in 0..4 {
                    d[(k + j) * n + a] = grad_deltas[a * 4 + j];
                }
            }
        }
        let mut gh = self
            .out
            .backward(&g, &tape.out_cache, true)
            .expect("input grad requested");
        leaky_relu_backward(&mut gh, &tape.hidden_out);
        self.hidden
            .backward(&gh, &tape.hidden_cache, true)
            .expect("input grad requested")
    }
}

impl<T: Scalar> Module<T> for Head<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&[T])) {
        self.hidden.visit_params(f);
        self.out.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        self.hidden.visit_params_mut(f);
        self.out.visit_params_mut(f);
    }
}
