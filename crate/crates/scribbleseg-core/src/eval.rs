//! Segmentation metrics: confusion matrices, per-class IoU, pseudo-label
//! accuracy and dataset distribution summaries.

use alloc::vec;
use alloc::vec::Vec;

use crate::binning::AnnulusSpec;
use crate::cloud::{LabelArray, PointCloud};
use crate::crb::PseudoSet;
use crate::error::{Error, Result};

/// Class-by-class prediction counts; row = ground truth, column = predicted,
/// both as train ids minus one.
///
/// Points whose ground truth is unlabeled are ignored, as are points whose
/// prediction is unlabeled: the matrix only judges points where both sides
/// commit to a class. Dense predictions always commit, so the second rule
/// only matters when comparing sparse label files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        assert!(classes >= 1, "need at least one class");
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, gt: u16, pred: u16) {
        if gt == 0 || pred == 0 {
            return;
        }
        assert!(
            (gt as usize) <= self.classes && (pred as usize) <= self.classes,
            "label beyond class count"
        );
        self.counts[(gt as usize - 1) * self.classes + pred as usize - 1] += 1;
    }

    pub fn count(&self, gt: u16, pred: u16) -> u64 {
        assert!(gt >= 1 && pred >= 1, "matrix has no unlabeled cells");
        self.counts[(gt as usize - 1) * self.classes + pred as usize - 1]
    }

    /// Adds a frame's labels point by point.
    pub fn add_frame(&mut self, gt: &LabelArray, pred: &LabelArray) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::LengthMismatch {
                what: "predictions",
                got: pred.len(),
                expected: gt.len(),
            });
        }
        for i in 0..gt.len() {
            self.record(gt.get(i), pred.get(i));
        }
        Ok(())
    }

    /// Accumulates another matrix, e.g. per-frame matrices computed in
    /// parallel. Counts are plain sums, so merge order does not matter.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "matrix size mismatch");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    fn tp_fp_fn(&self, class: u16) -> (u64, u64, u64) {
        let c = class as usize - 1;
        let tp = self.counts[c * self.classes + c];
        let mut fp = 0;
        let mut fng = 0;
        for other in 0..self.classes {
            if other != c {
                fp += self.counts[other * self.classes + c];
                fng += self.counts[c * self.classes + other];
            }
        }
        (tp, fp, fng)
    }
}

/// Per-class intersection over union: `TP / (TP + FP + FN)`. Classes whose
/// union is empty (never in the ground truth, never predicted) get `None`.
pub fn per_class_iou(m: &ConfusionMatrix) -> Vec<Option<f64>> {
    (1..=m.classes() as u16)
        .map(|c| {
            let (tp, fp, fng) = m.tp_fp_fn(c);
            let union = tp + fp + fng;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect()
}

/// Mean IoU over classes with a nonzero union.
pub fn miou(m: &ConfusionMatrix) -> Result<f64> {
    let ious = per_class_iou(m);
    let present: Vec<f64> = ious.into_iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::NoEvaluableClass);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Score as a percentage of a baseline: `100 * score / baseline`. Both
/// arguments must share units (typically mIoU percentages).
pub fn relative_performance(score: f64, baseline: f64) -> Result<f64> {
    if baseline <= 0.0 {
        return Err(Error::ZeroBaseline { baseline });
    }
    Ok(100.0 * score / baseline)
}

/// Fraction of pseudo-labeled points whose label matches the dense ground
/// truth, over points where dense truth exists.
pub fn pseudo_accuracy(pseudo: &PseudoSet, dense: &[LabelArray]) -> Result<f64> {
    assert_eq!(
        pseudo.frames.len(),
        dense.len(),
        "pseudo-labels and ground truth must cover the same frames"
    );
    let mut evaluated = 0u64;
    let mut correct = 0u64;
    for (frame, gt) in pseudo.frames.iter().zip(dense) {
        for &(i, class) in frame.entries() {
            let truth = gt.get(i);
            if truth == 0 {
                continue;
            }
            evaluated += 1;
            if truth == class {
                correct += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyPseudoSet);
    }
    Ok(correct as f64 / evaluated as f64)
}

/// Dataset composition summary over a set of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    /// Labeled points per class, indexed by train id minus one.
    pub class_counts: Vec<u64>,
    pub labeled: u64,
    pub total: u64,
    /// Points per range annulus (all points, labeled or not), when range
    /// statistics were requested. Annuli are per frame: each frame's rings
    /// cover its own maximum range.
    pub annulus_counts: Option<Vec<u64>>,
}

impl DistributionStats {
    pub fn labeled_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.labeled as f64 / self.total as f64
        }
    }
}

/// Counts labels per class, the labeled fraction, and optionally the range
/// distribution over per-frame annuli.
pub fn distribution(
    frames: &[(&PointCloud, &LabelArray)],
    classes: usize,
    annuli: Option<usize>,
) -> Result<DistributionStats> {
    let mut stats = DistributionStats {
        class_counts: vec![0; classes],
        labeled: 0,
        total: 0,
        annulus_counts: annuli.map(|r| vec![0; r]),
    };
    for (cloud, labels) in frames {
        if labels.len() != cloud.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                got: labels.len(),
                expected: cloud.len(),
            });
        }
        stats.total += cloud.len() as u64;
        for i in 0..labels.len() {
            let l = labels.get(i);
            if l != 0 {
                assert!((l as usize) <= classes, "label beyond class count");
                stats.class_counts[l as usize - 1] += 1;
                stats.labeled += 1;
            }
        }
        if let (Some(counts), Some(r)) = (stats.annulus_counts.as_mut(), annuli) {
            let spec = AnnulusSpec::from_cloud(cloud, r)?;
            for i in 0..cloud.len() {
                counts[spec.index_of_range(cloud.planar_range(i))] += 1;
            }
        }
    }
    Ok(stats)
}
