use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    assign_anchors, detection_loss, AnchorAssignment, AnchorGrid, Extractor, GroundTruthBox, Head, Stage,
};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::scalar::Scalar;
use crate::tensor::{Representation, Tensor3};

use super::models::{FrozenExtractor, FrozenProjection, FusedModel, SingleDetector, UpperBoundModel};
use super::ops::{cosine_similarity, cosine_similarity_grad, fuse, split_fused_grad, Projection};
use super::{balanced_sampler, shuffled_order, StudentInit, TrainConfig, TrainSample};

/// Per-epoch mean training loss of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

trait Trainer {
    /// Forward and backward for one sample; returns its loss.
    fn accumulate(&mut self, index: usize, grad_scale: f64) -> Result<f64>;
    fn update(&mut self);
}

fn run_epochs<M: Trainer>(
    stage: &str,
    epochs: usize,
    batch_size: usize,
    order: impl Fn(usize) -> Result<Vec<usize>>,
    trainer: &mut M,
) -> Result<StageLog> {
    let mut log = StageLog {
        stage: stage.to_string(),
        epoch_losses: Vec::with_capacity(epochs),
        steps: 0,
    };
    for epoch in 0..epochs {
        let order = order(epoch)?;
        let mut sum = 0.0;
        for (step, batch) in order.chunks(batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let loss = trainer.accumulate(i, scale)?;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        stage: stage.to_string(),
                        epoch,
                        step,
                        message: format!("non-finite loss {loss}"),
                    });
                }
                sum += loss;
            }
            trainer.update();
            log.steps += 1;
        }
        let mean = sum / order.len().max(1) as f64;
        log::info!("{stage}: epoch {}/{epochs} mean loss {mean:.5}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

fn grid_for<T: Scalar>(extractor: &Extractor<T>, cfg: &TrainConfig) -> AnchorGrid {
    let (_, gh, gw) = extractor.output_shape();
    AnchorGrid::new(gh, gw, extractor.stride(), cfg.anchor_size, cfg.extractor.input_size)
}

fn assignments<T>(samples: &[TrainSample<T>], grid: &AnchorGrid) -> Result<Vec<AnchorAssignment>> {
    samples.iter().map(|s| assign_anchors(&s.gts, grid)).collect()
}

fn positives<T>(samples: &[TrainSample<T>]) -> Vec<bool> {
    samples.iter().map(TrainSample::is_positive).collect()
}

struct DetectorTrainer<'a, T> {
    extractor: &'a mut Extractor<T>,
    head: &'a mut Head<T>,
    images: Vec<&'a Tensor3<T>>,
    gts: Vec<&'a [GroundTruthBox]>,
    assignments: Vec<AnchorAssignment>,
    cfg: &'a TrainConfig,
    adam: Adam<T>,
}

impl<T: Scalar> Trainer for DetectorTrainer<'_, T> {
    fn accumulate(&mut self, i: usize, grad_scale: f64) -> Result<f64> {
        let (rep, tape) = self.extractor.forward_train(self.images[i])?;
        let (raw, head_tape) = self.head.forward_train(&rep)?;
        let loss = detection_loss(
            &raw,
            &self.assignments[i],
            self.gts[i],
            &self.cfg.focal,
            self.cfg.box_weight,
            grad_scale,
        );
        let g = self.head.backward(&head_tape, &loss.grad_logits, &loss.grad_deltas);
        self.extractor.backward(&tape, g);
        Ok(loss.total.as_f64())
    }

    fn update(&mut self) {
        self.adam.step(&mut [&mut *self.extractor, &mut *self.head]);
    }
}

fn train_single<T: Scalar>(
    stage: &str,
    samples: &[TrainSample<T>],
    image: fn(&TrainSample<T>) -> &Tensor3<T>,
    seeds: [u64; 3],
    cfg: &TrainConfig,
) -> Result<(SingleDetector<T>, StageLog)> {
    let mut extractor = Extractor::new(cfg.extractor.clone(), &mut ChaCha8Rng::seed_from_u64(seeds[0]))?;
    let mut head = Head::new(
        cfg.head_config(cfg.extractor.out_channels()),
        &mut ChaCha8Rng::seed_from_u64(seeds[1]),
    )?;
    let grid = grid_for(&extractor, cfg);
    let flags = positives(samples);
    let log = {
        let mut trainer = DetectorTrainer {
            extractor: &mut extractor,
            head: &mut head,
            images: samples.iter().map(image).collect(),
            gts: samples.iter().map(|s| s.gts.as_slice()).collect(),
            assignments: assignments(samples, &grid)?,
            cfg,
            adam: Adam::new(cfg.learning_rate),
        };
        run_epochs(
            stage,
            cfg.epochs.stage1,
            cfg.batch_size,
            |e| balanced_sampler(&flags, seeds[2], e),
            &mut trainer,
        )?
    };
    Ok((
        SingleDetector {
            stage: Stage::I,
            extractor,
            head,
        },
        log,
    ))
}

#[derive(Debug, Clone)]
pub struct Stage1Output<T> {
    /// Extractor A with its head, trained on S images.
    pub sm: SingleDetector<T>,
    /// Extractor C with its head, trained on F images.
    pub ffdm: SingleDetector<T>,
    pub log_sm: StageLog,
    pub log_ffdm: StageLog,
}

/// Trains the two single-modality detectors independently.
pub fn train_stage1<T: Scalar>(samples: &[TrainSample<T>], cfg: &TrainConfig) -> Result<Stage1Output<T>> {
    cfg.validate()?;
    let (sm, log_sm) = train_single(
        "stage I (A on S)",
        samples,
        |s| &s.image_s,
        [cfg.stream(1, 0), cfg.stream(1, 1), cfg.stream(1, 2)],
        cfg,
    )?;
    let (ffdm, log_ffdm) = train_single(
        "stage I (C on F)",
        samples,
        |s| &s.image_f,
        [cfg.stream(1, 3), cfg.stream(1, 4), cfg.stream(1, 5)],
        cfg,
    )?;
    Ok(Stage1Output {
        sm,
        ffdm,
        log_sm,
        log_ffdm,
    })
}

struct MimicTrainer<'a, T> {
    b: &'a mut Extractor<T>,
    projection: &'a mut Projection<T>,
    images_s: Vec<&'a Tensor3<T>>,
    targets: Vec<Tensor3<T>>,
    epsilon: f64,
    adam: Adam<T>,
}

impl<T: Scalar> Trainer for MimicTrainer<'_, T> {
    fn accumulate(&mut self, i: usize, grad_scale: f64) -> Result<f64> {
        let (h, tape) = self.b.forward_train(self.images_s[i])?;
        let (z, cache) = self.projection.forward_cached(&h)?;
        let (cos, grad) = cosine_similarity_grad(&z.values, &self.targets[i], self.epsilon)?;
        // loss is -cos
        let scale = T::lit(-grad_scale);
        let grad = grad.map(|g| g * scale);
        let gh = self.projection.backward(&grad, &cache);
        self.b.backward(&tape, gh);
        Ok(-cos)
    }

    fn update(&mut self) {
        self.adam.step(&mut [&mut *self.b, &mut *self.projection]);
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Output<T> {
    pub b: FrozenExtractor<T>,
    pub projection: FrozenProjection<T>,
    /// Digest of the teacher, identical before and after the stage.
    pub c_digest: String,
    pub log: StageLog,
}

/// Mean cosine similarity between projected student features on S and
/// teacher features on F.
pub fn mean_cosine<T: Scalar>(
    b: &Extractor<T>,
    projection: &Projection<T>,
    c: &FrozenExtractor<T>,
    samples: &[TrainSample<T>],
    epsilon: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let z = super::ops::project_linear(projection, &b.forward(&s.image_s)?)?;
        total += cosine_similarity(&z.values, &c.forward(&s.image_f)?.values, epsilon)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains B and the projection so that projected B features on S match the
/// frozen teacher's features on F.
pub fn train_stage2<T: Scalar>(
    samples: &[TrainSample<T>],
    frozen_c: &FrozenExtractor<T>,
    cfg: &TrainConfig,
) -> Result<Stage2Output<T>> {
    cfg.validate()?;
    frozen_c.verify("teacher extractor C")?;
    if frozen_c.extractor().config() != &cfg.extractor {
        return Err(Error::Config(
            "teacher architecture differs from the configured extractor".into(),
        ));
    }
    let mut b = match cfg.student_init {
        StudentInit::Teacher => frozen_c.extractor().clone(),
        StudentInit::Random => Extractor::new(cfg.extractor.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.stream(2, 0)))?,
    };
    let mut projection = Projection::identity(cfg.extractor.out_channels());
    let targets = samples
        .iter()
        .map(|s| Ok(frozen_c.forward(&s.image_f)?.values))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len();
    let sampler_seed = cfg.stream(2, 1);
    let log = {
        let mut trainer = MimicTrainer {
            b: &mut b,
            projection: &mut projection,
            images_s: samples.iter().map(|s| &s.image_s).collect(),
            targets,
            epsilon: cfg.epsilon_cos,
            adam: Adam::new(cfg.learning_rate),
        };
        run_epochs(
            "stage II (B mimics C)",
            cfg.epochs.stage2,
            cfg.batch_size,
            |e| Ok(shuffled_order(n, sampler_seed, e)),
            &mut trainer,
        )?
    };
    frozen_c.verify("teacher extractor C")?;
    Ok(Stage2Output {
        b: FrozenExtractor::freeze(b),
        projection: FrozenProjection::freeze(projection),
        c_digest: frozen_c.digest().to_string(),
        log,
    })
}

struct FusedTrainer<'a, T> {
    a: &'a mut Extractor<T>,
    head: &'a mut Head<T>,
    images_s: Vec<&'a Tensor3<T>>,
    /// Student features, fixed for the whole stage.
    b_features: Vec<Representation<T>>,
    gts: Vec<&'a [GroundTruthBox]>,
    assignments: Vec<AnchorAssignment>,
    cfg: &'a TrainConfig,
    adam: Adam<T>,
}

impl<T: Scalar> Trainer for FusedTrainer<'_, T> {
    fn accumulate(&mut self, i: usize, grad_scale: f64) -> Result<f64> {
        let (ha, tape) = self.a.forward_train(self.images_s[i])?;
        let ca = ha.values.channels();
        let fused = fuse(&ha, &self.b_features[i])?;
        let (raw, head_tape) = self.head.forward_train(&fused)?;
        let loss = detection_loss(
            &raw,
            &self.assignments[i],
            self.gts[i],
            &self.cfg.focal,
            self.cfg.box_weight,
            grad_scale,
        );
        let g = self.head.backward(&head_tape, &loss.grad_logits, &loss.grad_deltas);
        let (ga, _) = split_fused_grad(g, ca);
        self.a.backward(&tape, ga);
        Ok(loss.total.as_f64())
    }

    fn update(&mut self) {
        self.adam.step(&mut [&mut *self.a, &mut *self.head]);
    }
}

/// Fresh head over A(S) ⊕ B(S); A is fine-tuned, B and the projection stay
/// frozen.
pub fn train_stage3<T: Scalar>(
    samples: &[TrainSample<T>],
    a_checkpoint: &SingleDetector<T>,
    b: &FrozenExtractor<T>,
    projection: &FrozenProjection<T>,
    cfg: &TrainConfig,
) -> Result<(FusedModel<T>, StageLog)> {
    cfg.validate()?;
    if a_checkpoint.stage != Stage::I {
        return Err(Error::Contract(format!(
            "stage III fine-tunes a stage I extractor, got stage {}",
            a_checkpoint.stage
        )));
    }
    b.verify("student extractor B")?;
    projection.verify("projection")?;
    let mut a = a_checkpoint.extractor.clone();
    let b_features = samples
        .iter()
        .map(|s| b.forward(&s.image_s))
        .collect::<Result<Vec<_>>>()?;
    let channels = a.output_shape().0 + b.extractor().output_shape().0;
    let mut head = Head::new(
        cfg.head_config(channels),
        &mut ChaCha8Rng::seed_from_u64(cfg.stream(3, 0)),
    )?;
    let grid = grid_for(&a, cfg);
    let flags = positives(samples);
    let sampler_seed = cfg.stream(3, 1);
    let log = {
        let mut trainer = FusedTrainer {
            a: &mut a,
            head: &mut head,
            images_s: samples.iter().map(|s| &s.image_s).collect(),
            b_features,
            gts: samples.iter().map(|s| s.gts.as_slice()).collect(),
            assignments: assignments(samples, &grid)?,
            cfg,
            adam: Adam::new(cfg.learning_rate),
        };
        run_epochs(
            "stage III (fused head, fine-tune A)",
            cfg.epochs.stage3,
            cfg.batch_size,
            |e| balanced_sampler(&flags, sampler_seed, e),
            &mut trainer,
        )?
    };
    b.verify("student extractor B")?;
    projection.verify("projection")?;
    Ok((
        FusedModel {
            a,
            b: b.clone(),
            projection: projection.clone(),
            head,
        },
        log,
    ))
}

struct UpperBoundTrainer<'a, T> {
    a: &'a mut Extractor<T>,
    c: &'a mut Extractor<T>,
    head: &'a mut Head<T>,
    samples: &'a [TrainSample<T>],
    assignments: Vec<AnchorAssignment>,
    cfg: &'a TrainConfig,
    adam: Adam<T>,
}

impl<T: Scalar> Trainer for UpperBoundTrainer<'_, T> {
    fn accumulate(&mut self, i: usize, grad_scale: f64) -> Result<f64> {
        let s = &self.samples[i];
        let (ha, tape_a) = self.a.forward_train(&s.image_s)?;
        let (hc, tape_c) = self.c.forward_train(&s.image_f)?;
        let ca = ha.values.channels();
        let fused = fuse(&ha, &hc)?;
        let (raw, head_tape) = self.head.forward_train(&fused)?;
        let loss = detection_loss(
            &raw,
            &self.assignments[i],
            &s.gts,
            &self.cfg.focal,
            self.cfg.box_weight,
            grad_scale,
        );
        let g = self.head.backward(&head_tape, &loss.grad_logits, &loss.grad_deltas);
        let (ga, gc) = split_fused_grad(g, ca);
        self.a.backward(&tape_a, ga);
        self.c.backward(&tape_c, gc);
        Ok(loss.total.as_f64())
    }

    fn update(&mut self) {
        self.adam.step(&mut [&mut *self.a, &mut *self.c, &mut *self.head]);
    }
}

/// Head over A(S) ⊕ C(F), trained end to end from the stage I extractors.
pub fn train_upper_bound<T: Scalar>(
    samples: &[TrainSample<T>],
    a_checkpoint: &SingleDetector<T>,
    c_checkpoint: &SingleDetector<T>,
    cfg: &TrainConfig,
) -> Result<(UpperBoundModel<T>, StageLog)> {
    cfg.validate()?;
    for d in [a_checkpoint, c_checkpoint] {
        if d.stage != Stage::I {
            return Err(Error::Contract(format!(
                "the upper bound starts from stage I extractors, got stage {}",
                d.stage
            )));
        }
    }
    let mut a = a_checkpoint.extractor.clone();
    let mut c = c_checkpoint.extractor.clone();
    let channels = a.output_shape().0 + c.output_shape().0;
    let mut head = Head::new(
        cfg.head_config(channels),
        &mut ChaCha8Rng::seed_from_u64(cfg.stream(4, 0)),
    )?;
    let grid = grid_for(&a, cfg);
    let flags = positives(samples);
    let sampler_seed = cfg.stream(4, 1);
    let log = {
        let mut trainer = UpperBoundTrainer {
            a: &mut a,
            c: &mut c,
            head: &mut head,
            samples,
            assignments: assignments(samples, &grid)?,
            cfg,
            adam: Adam::new(cfg.learning_rate),
        };
        run_epochs(
            "upper bound (A on S + C on F)",
            cfg.epochs.upper_bound,
            cfg.batch_size,
            |e| balanced_sampler(&flags, sampler_seed, e),
            &mut trainer,
        )?
    };
    Ok((UpperBoundModel { a, c, head }, log))
}
