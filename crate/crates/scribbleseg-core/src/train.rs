//! Mean-teacher training loop.
//!
//! A student network is fitted with momentum SGD on the combined objective
//! from [`crate::loss`]; a teacher network shadows it as an exponential
//! moving average of its parameters and supplies the soft consistency
//! targets. The teacher always sees the clean frame, the student an
//! augmented copy, and gradients never flow into the teacher.
//!
//! The loop is strictly sequential and all randomness comes from one seeded
//! generator, so a given (frames, config, seed) triple always produces the
//! same parameters.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_student, AugmentConfig};
use crate::cloud::{point_features, FeatureMatrix, LabelArray, PointCloud};
use crate::error::{Error, Result};
use crate::loss::{combined_step_loss, supervised_loss};
use crate::model::{Gradients, Mlp};
use crate::pls::{augment_points, PlsMatrix};

/// Student network plus its exponential-moving-average teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStudent {
    pub student: Mlp,
    pub teacher: Mlp,
    /// EMA smoothing: teacher keeps `alpha` of itself per update.
    pub alpha: f64,
    /// Number of EMA updates applied so far.
    pub step: u64,
}

impl TeacherStudent {
    /// Starts the teacher as an exact copy of the student.
    pub fn new(student: Mlp, alpha: f64) -> Self {
        assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
        let teacher = student.clone();
        TeacherStudent {
            student,
            teacher,
            alpha,
            step: 0,
        }
    }

    /// One EMA step: `teacher <- alpha * teacher + (1 - alpha) * student`.
    /// With a constant student the teacher-student gap decays geometrically
    /// by `alpha` per call; `alpha = 1` freezes the teacher and `alpha = 0`
    /// copies the student outright.
    pub fn ema_update(&mut self) {
        let student = self.student.clone();
        self.teacher.ema_from(&student, self.alpha);
        self.step += 1;
    }
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Full sweeps over the frame list.
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Frames whose gradients are averaged into one SGD step. A partial
    /// batch left at the end of an epoch is flushed as its own step.
    pub batch_frames: usize,
    /// Factor applied to the planar x/y feature columns before the network,
    /// so coordinates in tens of meters do not dwarf the unit-scale
    /// features. Height and intensity are already order-one and pass
    /// through untouched.
    pub coord_scale: f64,
    /// Weight of the soft consistency term; zero skips the teacher forward
    /// pass entirely and trains on scribbles alone.
    pub consistency_weight: f64,
    /// Probability of blanking a point's descriptor block (the columns past
    /// the four geometric features) in the student input. Context built
    /// from sparse annotations is over-informative exactly on the points
    /// that carry labels, so a classifier quickly learns to read the label
    /// back out of it and collapses wherever the context is thin. Randomly
    /// hiding the block — a zero block is what an empty context cell looks
    /// like anyway — keeps the classifier grounded in geometry while
    /// context can still sharpen its decisions. Zero disables the mask; the
    /// teacher and frames without descriptors are never masked.
    pub descriptor_dropout: f64,
    /// Seed for the augmentation stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_frames: 1,
            coord_scale: 0.02,
            consistency_weight: 1.0,
            descriptor_dropout: 0.0,
            seed: 0,
        }
    }
}

/// One frame of training data: geometry, scribble (or merged) labels, and
/// optionally a context descriptor row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFrame {
    pub cloud: PointCloud,
    pub labels: LabelArray,
    pub pls: Option<PlsMatrix>,
}

/// Builds classifier input rows for a frame: `(x, y, z, intensity)` plus
/// the descriptor when present, with the planar coordinates scaled by
/// `coord_scale`. Both training and inference must assemble features
/// through here so the network always sees the same recipe.
pub fn assemble_features(
    cloud: &PointCloud,
    pls: Option<&PlsMatrix>,
    coord_scale: f64,
) -> Result<FeatureMatrix> {
    assert!(
        coord_scale > 0.0 && coord_scale.is_finite(),
        "coordinate scale must be positive"
    );
    let mut feats = match pls {
        Some(p) => augment_points(cloud, p)?,
        None => point_features(cloud),
    };
    for i in 0..feats.rows() {
        let row = feats.row_mut(i);
        row[0] *= coord_scale;
        row[1] *= coord_scale;
    }
    Ok(feats)
}

/// Runs the mean-teacher loop and returns the trained pair.
///
/// Frames are visited in order every epoch; each frame contributes one
/// combined loss (hard term on labeled points, consistency elsewhere).
/// After every optimizer step the teacher EMA advances once. A non-finite
/// loss aborts with [`Error::DivergenceDetected`] and the step at which it
/// happened.
pub fn train(
    frames: &[TrainFrame],
    mut ts: TeacherStudent,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
) -> Result<TeacherStudent> {
    assert!(cfg.batch_frames >= 1, "batch must hold at least one frame");
    assert!(
        (0.0..1.0).contains(&cfg.descriptor_dropout),
        "descriptor dropout must be in [0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Teacher features never change: the teacher reads the clean frame.
    let teacher_feats: Vec<FeatureMatrix> = frames
        .iter()
        .map(|f| assemble_features(&f.cloud, f.pls.as_ref(), cfg.coord_scale))
        .collect::<Result<_>>()?;

    let mut velocity = Gradients::zeros_like(&ts.student);
    let mut accum = Gradients::zeros_like(&ts.student);
    let mut in_batch = 0usize;
    let mut step = 0u64;

    let flush = |ts: &mut TeacherStudent,
                     accum: &mut Gradients,
                     velocity: &mut Gradients,
                     in_batch: &mut usize,
                     step: &mut u64| {
        if *in_batch == 0 {
            return;
        }
        accum.scale(1.0 / *in_batch as f64);
        ts.student
            .apply_sgd(accum, velocity, cfg.learning_rate, cfg.momentum);
        accum.reset();
        *in_batch = 0;
        ts.ema_update();
        *step += 1;
    };

    for _ in 0..cfg.epochs {
        for (fi, frame) in frames.iter().enumerate() {
            let student_cloud = augment_student(&frame.cloud, aug, &mut rng);
            let mut sfeats =
                assemble_features(&student_cloud, frame.pls.as_ref(), cfg.coord_scale)?;
            if cfg.descriptor_dropout > 0.0 && frame.pls.is_some() {
                for i in 0..sfeats.rows() {
                    if rng.random::<f64>() < cfg.descriptor_dropout {
                        for v in &mut sfeats.row_mut(i)[4..] {
                            *v = 0.0;
                        }
                    }
                }
            }
            let (spred, trace) = ts.student.forward_trace(&sfeats)?;
            let lg = if cfg.consistency_weight > 0.0 {
                let tpred = ts.teacher.forward(&teacher_feats[fi])?;
                combined_step_loss(
                    &spred,
                    &tpred,
                    &frame.labels,
                    None,
                    cfg.consistency_weight,
                )
            } else {
                let (labeled, _) = frame.labels.split_supervision();
                if !labeled.iter().any(|&b| b) {
                    continue; // nothing to learn from this frame
                }
                supervised_loss(&spred, &frame.labels, &labeled)?
            };
            if !lg.loss.is_finite() {
                return Err(Error::DivergenceDetected { step });
            }
            let grads = ts.student.backward(&sfeats, &trace, &lg.dlogits);
            accum.add_assign(&grads);
            in_batch += 1;
            if in_batch == cfg.batch_frames {
                flush(&mut ts, &mut accum, &mut velocity, &mut in_batch, &mut step);
            }
        }
        flush(&mut ts, &mut accum, &mut velocity, &mut in_batch, &mut step);
    }
    Ok(ts)
}
