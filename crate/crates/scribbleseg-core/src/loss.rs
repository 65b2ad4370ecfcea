//! Training objectives: hard cross-entropy on labeled points, soft
//! teacher-student consistency on unlabeled points, and the combined
//! per-frame objective used by the training loop.
//!
//! Every function returns the scalar loss together with its gradient with
//! respect to the *logits* of the student prediction, because softmax plus
//! cross-entropy collapses to the simple form `probability - target` there.
//! Gradients carry the same mask averaging as the loss, so backprop can sum
//! over points without further scaling.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::{LabelArray, SoftPrediction};
use crate::crb::PseudoLabels;
use crate::error::{Error, Result};

/// A scalar objective and its gradient with respect to student logits,
/// row-major `points x classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub dlogits: Vec<f64>,
}

fn check_rows(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::LengthMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class over masked points.
///
/// Masked points must be labeled; the mask will usually be the labeled side
/// of [`LabelArray::split_supervision`]. A probability of zero for a true
/// class produces an infinite loss, which the training loop reports as
/// divergence rather than silently clamping.
pub fn supervised_loss(
    pred: &SoftPrediction,
    labels: &LabelArray,
    mask: &[bool],
) -> Result<LossGrad> {
    check_rows("labels", labels.len(), pred.len())?;
    check_rows("mask", mask.len(), pred.len())?;
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::EmptyMask);
    }
    let classes = pred.classes();
    let scale = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; pred.len() * classes];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let label = labels.get(i);
        assert!(label != 0, "supervised mask covers unlabeled point {i}");
        let row = pred.row(i);
        loss -= libm::log(row[label as usize - 1]) * scale;
        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for (c, (slot, &p)) in drow.iter_mut().zip(row).enumerate() {
            let target = if c == label as usize - 1 { 1.0 } else { 0.0 };
            *slot = (p - target) * scale;
        }
    }
    Ok(LossGrad { loss, dlogits })
}

/// Mean soft-target cross-entropy from teacher to student over masked
/// points: `-sum_c teacher_c * log(student_c)`, averaged over the mask.
///
/// The teacher is treated as a constant target, so the returned gradient
/// `(student - teacher) / m` flows into the student only. When student and
/// teacher agree the loss equals the teacher's entropy and the gradient is
/// identically zero.
pub fn consistency_loss(
    student: &SoftPrediction,
    teacher: &SoftPrediction,
    mask: &[bool],
) -> Result<LossGrad> {
    check_rows("teacher prediction", teacher.len(), student.len())?;
    check_rows("mask", mask.len(), student.len())?;
    assert_eq!(
        teacher.classes(),
        student.classes(),
        "teacher and student disagree on class count"
    );
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::EmptyMask);
    }
    let classes = student.classes();
    let scale = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; student.len() * classes];
    for i in 0..student.len() {
        if !mask[i] {
            continue;
        }
        let s = student.row(i);
        let t = teacher.row(i);
        for c in 0..classes {
            if t[c] > 0.0 {
                loss -= t[c] * libm::log(s[c]) * scale;
            }
        }
        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for ((slot, &sp), &tp) in drow.iter_mut().zip(s).zip(t) {
            *slot = (sp - tp) * scale;
        }
    }
    Ok(LossGrad { loss, dlogits })
}

/// The full per-frame objective: hard cross-entropy on scribbled plus
/// pseudo-labeled points, consistency on the remaining points, each term
/// averaged within its own mask and summed with unit weights (scaled by
/// `consistency_weight` for the soft term).
///
/// Either subset may be empty, in which case its term simply contributes
/// zero; an entirely unlabeled frame with no pseudo-labels yields pure
/// consistency and vice versa.
pub fn combined_step_loss(
    student: &SoftPrediction,
    teacher: &SoftPrediction,
    labels: &LabelArray,
    pseudo: Option<&PseudoLabels>,
    consistency_weight: f64,
) -> LossGrad {
    let n = student.len();
    assert_eq!(labels.len(), n, "labels must align with predictions");
    let classes = student.classes();
    // Effective hard target per point: scribbles win over pseudo-labels.
    let hard: Vec<u16> = (0..n)
        .map(|i| match labels.get(i) {
            0 => pseudo.and_then(|p| p.get(i)).unwrap_or(0),
            l => l,
        })
        .collect();
    let hard_mask: Vec<bool> = hard.iter().map(|&l| l != 0).collect();
    let soft_mask: Vec<bool> = hard_mask.iter().map(|&b| !b).collect();

    let mut total = LossGrad {
        loss: 0.0,
        dlogits: vec![0.0; n * classes],
    };
    if hard_mask.iter().any(|&b| b) {
        let term = supervised_loss(student, &LabelArray::new(hard), &hard_mask)
            .expect("nonempty mask");
        total.loss += term.loss;
        for (acc, g) in total.dlogits.iter_mut().zip(&term.dlogits) {
            *acc += g;
        }
    }
    if soft_mask.iter().any(|&b| b) {
        let term = consistency_loss(student, teacher, &soft_mask).expect("nonempty mask");
        total.loss += consistency_weight * term.loss;
        for (acc, g) in total.dlogits.iter_mut().zip(&term.dlogits) {
            *acc += consistency_weight * g;
        }
    }
    total
}
