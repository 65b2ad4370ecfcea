//! Pseudo-label generation from teacher predictions, including the
//! class-range-balanced (CRB) scheme.
//!
//! Confidence thresholding with a single global quantile keeps mostly
//! nearby, easy points: prediction confidence drops with range, so a global
//! cut starves the far field, and frequent classes crowd out rare ones. CRB
//! instead buckets the teacher's top-1 confidences by (predicted class,
//! range annulus) and cuts each bucket at its own top-`beta` quantile, so
//! every class keeps roughly the `beta` share of its candidates in every
//! range band.
//!
//! Thresholds are stored as raw minimum confidences and compared with a
//! strict `>`; the equivalent negative-log form is only derived for
//! reporting, so no exp/log round-trip can perturb the cut.

use alloc::vec;
use alloc::vec::Vec;

use crate::binning::AnnulusSpec;
use crate::cloud::{LabelArray, PointCloud, SoftPrediction};
use crate::error::{Error, Result};

/// How to turn teacher predictions on unlabeled points into pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Keep every argmax prediction.
    Naive,
    /// Keep predictions whose confidence strictly exceeds a fixed value.
    Threshold(f64),
    /// Per-class top-`beta` quantile cut, ignoring range.
    ClassBalanced,
    /// Per-class, per-annulus top-`beta` quantile cut.
    Crb,
}

/// One frame's worth of inputs to pseudo-label generation.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub cloud: &'a PointCloud,
    pub pred: &'a SoftPrediction,
    /// True where the point carries no scribble label.
    pub unlabeled: &'a [bool],
}

/// Top-1 confidences bucketed by (predicted class, range annulus), in frame
/// then point order so that parallel collection merged in frame order is
/// byte-identical to a sequential pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceStore {
    classes: usize,
    annuli: usize,
    cells: Vec<Vec<f64>>,
}

impl ConfidenceStore {
    pub fn new(classes: usize, annuli: usize) -> Self {
        assert!(classes >= 1 && annuli >= 1, "degenerate store shape");
        ConfidenceStore {
            classes,
            annuli,
            cells: vec![Vec::new(); classes * annuli],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn annuli(&self) -> usize {
        self.annuli
    }

    fn cell_index(&self, class: u16, annulus: usize) -> usize {
        assert!(class >= 1 && (class as usize) <= self.classes, "class id out of range");
        assert!(annulus < self.annuli, "annulus out of range");
        (class as usize - 1) * self.annuli + annulus
    }

    pub fn push(&mut self, class: u16, annulus: usize, confidence: f64) {
        let idx = self.cell_index(class, annulus);
        self.cells[idx].push(confidence);
    }

    pub fn cell(&self, class: u16, annulus: usize) -> &[f64] {
        &self.cells[self.cell_index(class, annulus)]
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Appends another store's confidences cell by cell. Call in frame order
    /// to keep results independent of how collection was parallelized.
    pub fn merge(&mut self, other: &ConfidenceStore) {
        assert_eq!(self.classes, other.classes, "store class count mismatch");
        assert_eq!(self.annuli, other.annuli, "store annulus count mismatch");
        for (mine, theirs) in self.cells.iter_mut().zip(&other.cells) {
            mine.extend_from_slice(theirs);
        }
    }
}

/// Builds the annulus spec for one frame: equal-width rings covering the
/// frame's own maximum range, or a fixed shared width when given.
fn frame_annuli(cloud: &PointCloud, annuli: usize, width: Option<f64>) -> Result<AnnulusSpec> {
    match width {
        Some(w) => Ok(AnnulusSpec::fixed(annuli, w)),
        None => AnnulusSpec::from_cloud(cloud, annuli),
    }
}

/// Collects one frame's unlabeled top-1 confidences into a fresh store.
pub fn collect_frame(
    cloud: &PointCloud,
    pred: &SoftPrediction,
    unlabeled: &[bool],
    annuli: usize,
    width: Option<f64>,
) -> Result<ConfidenceStore> {
    if pred.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            got: pred.len(),
            expected: cloud.len(),
        });
    }
    if unlabeled.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "unlabeled mask",
            got: unlabeled.len(),
            expected: cloud.len(),
        });
    }
    let spec = frame_annuli(cloud, annuli, width)?;
    let mut store = ConfidenceStore::new(pred.classes(), annuli);
    for (i, &unl) in unlabeled.iter().enumerate() {
        if !unl {
            continue;
        }
        let (class, conf) = pred.argmax_conf(i);
        let annulus = spec.index_of_range(cloud.planar_range(i));
        store.push(class, annulus, conf);
    }
    Ok(store)
}

/// Sequential collection over a dataset, frame order preserved.
pub fn collect_confidences(
    frames: &[FrameInput<'_>],
    annuli: usize,
    width: Option<f64>,
) -> Result<ConfidenceStore> {
    assert!(!frames.is_empty(), "need at least one frame");
    let mut store = ConfidenceStore::new(frames[0].pred.classes(), annuli);
    for f in frames {
        let part = collect_frame(f.cloud, f.pred, f.unlabeled, annuli, width)?;
        store.merge(&part);
    }
    Ok(store)
}

/// Per-cell confidence cuts at the top-`beta` quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    classes: usize,
    annuli: usize,
    beta: f64,
    /// Minimum admissible confidence per cell; `None` marks an empty cell,
    /// which never admits anything.
    cells: Vec<Option<f64>>,
}

impl ThresholdTable {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn annuli(&self) -> usize {
        self.annuli
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn cell_index(&self, class: u16, annulus: usize) -> usize {
        assert!(class >= 1 && (class as usize) <= self.classes, "class id out of range");
        assert!(annulus < self.annuli, "annulus out of range");
        (class as usize - 1) * self.annuli + annulus
    }

    /// Raw confidence cut for a cell, `None` when the cell saw no candidates.
    pub fn cut(&self, class: u16, annulus: usize) -> Option<f64> {
        self.cells[self.cell_index(class, annulus)]
    }

    /// The cut in negative-log form, `inf` for empty cells. Report-only.
    pub fn neg_log_cut(&self, class: u16, annulus: usize) -> f64 {
        match self.cut(class, annulus) {
            Some(c) => -libm::log(c),
            None => f64::INFINITY,
        }
    }

    /// Whether a confidence clears its cell's cut. Strictly greater, so a
    /// candidate equal to the cut value (including the quantile point
    /// itself) is rejected.
    pub fn admits(&self, class: u16, annulus: usize, confidence: f64) -> bool {
        match self.cut(class, annulus) {
            Some(c) => confidence > c,
            None => false,
        }
    }
}

/// Cuts every cell at its descending-order index `floor(beta * len)`,
/// clamped to the last element. With distinct confidences this admits
/// exactly `floor(beta * len)` candidates per nonempty cell; ties fall
/// below the strict comparison and are dropped.
pub fn determine_thresholds(store: &ConfidenceStore, beta: f64) -> ThresholdTable {
    assert!(beta > 0.0 && beta <= 1.0, "beta must be in (0, 1]");
    let mut cells = Vec::with_capacity(store.cells.len());
    for cell in &store.cells {
        if cell.is_empty() {
            cells.push(None);
            continue;
        }
        let mut sorted = cell.clone();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let idx = (libm::floor(beta * sorted.len() as f64) as usize).min(sorted.len() - 1);
        cells.push(Some(sorted[idx]));
    }
    ThresholdTable {
        classes: store.classes,
        annuli: store.annuli,
        beta,
        cells,
    }
}

/// Sparse pseudo-labels for one frame: ascending point indices paired with
/// train ids, covering a subset of the frame's unlabeled points.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PseudoLabels {
    entries: Vec<(usize, u16)>,
}

impl PseudoLabels {
    pub fn from_entries(mut entries: Vec<(usize, u16)>) -> Self {
        entries.sort_unstable_by_key(|&(i, _)| i);
        for pair in entries.windows(2) {
            assert!(pair[0].0 != pair[1].0, "duplicate pseudo-label for point {}", pair[0].0);
        }
        assert!(entries.iter().all(|&(_, c)| c != 0), "pseudo-label cannot be unlabeled");
        PseudoLabels { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, u16)] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<u16> {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .ok()
            .map(|pos| self.entries[pos].1)
    }
}

/// Pseudo-labels for a whole dataset, frame by frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PseudoSet {
    pub frames: Vec<PseudoLabels>,
}

impl PseudoSet {
    pub fn total(&self) -> usize {
        self.frames.iter().map(PseudoLabels::len).sum()
    }
}

/// Applies a threshold table to one frame: every unlabeled point whose
/// argmax confidence clears its (class, annulus) cut becomes a pseudo-label.
pub fn solve_frame(
    cloud: &PointCloud,
    pred: &SoftPrediction,
    unlabeled: &[bool],
    table: &ThresholdTable,
    width: Option<f64>,
) -> Result<PseudoLabels> {
    if pred.len() != cloud.len() || unlabeled.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "frame inputs",
            got: pred.len().max(unlabeled.len()),
            expected: cloud.len(),
        });
    }
    let spec = frame_annuli(cloud, table.annuli, width)?;
    let mut entries = Vec::new();
    for (i, &unl) in unlabeled.iter().enumerate() {
        if !unl {
            continue;
        }
        let (class, conf) = pred.argmax_conf(i);
        let annulus = spec.index_of_range(cloud.planar_range(i));
        if table.admits(class, annulus, conf) {
            entries.push((i, class));
        }
    }
    Ok(PseudoLabels { entries })
}

/// Runs a pseudo-labeling strategy over a dataset.
///
/// `beta` applies to the quantile strategies, `annuli`/`width` to `Crb`
/// only. `ClassBalanced` is implemented directly as a per-class global sort
/// rather than through the annulus machinery; it coincides with `Crb` over a
/// single annulus of any width.
pub fn generate(
    strategy: Strategy,
    frames: &[FrameInput<'_>],
    beta: f64,
    annuli: usize,
    width: Option<f64>,
) -> Result<PseudoSet> {
    assert!(!frames.is_empty(), "need at least one frame");
    let classes = frames[0].pred.classes();
    match strategy {
        Strategy::Naive => {
            let mut set = PseudoSet::default();
            for f in frames {
                let mut entries = Vec::new();
                for i in 0..f.cloud.len() {
                    if f.unlabeled[i] {
                        entries.push((i, f.pred.argmax_conf(i).0));
                    }
                }
                set.frames.push(PseudoLabels { entries });
            }
            Ok(set)
        }
        Strategy::Threshold(tau) => {
            assert!(tau > 0.0 && tau < 1.0, "tau must be in (0, 1)");
            let mut set = PseudoSet::default();
            for f in frames {
                let mut entries = Vec::new();
                for i in 0..f.cloud.len() {
                    if !f.unlabeled[i] {
                        continue;
                    }
                    let (class, conf) = f.pred.argmax_conf(i);
                    if conf > tau {
                        entries.push((i, class));
                    }
                }
                set.frames.push(PseudoLabels { entries });
            }
            Ok(set)
        }
        Strategy::ClassBalanced => {
            assert!(beta > 0.0 && beta <= 1.0, "beta must be in (0, 1]");
            // Gather per-class confidences over the whole dataset.
            let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); classes];
            for f in frames {
                for i in 0..f.cloud.len() {
                    if !f.unlabeled[i] {
                        continue;
                    }
                    let (class, conf) = f.pred.argmax_conf(i);
                    per_class[class as usize - 1].push(conf);
                }
            }
            let cuts: Vec<Option<f64>> = per_class
                .iter()
                .map(|vals| {
                    if vals.is_empty() {
                        return None;
                    }
                    let mut sorted = vals.clone();
                    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
                    let idx =
                        (libm::floor(beta * sorted.len() as f64) as usize).min(sorted.len() - 1);
                    Some(sorted[idx])
                })
                .collect();
            let mut set = PseudoSet::default();
            for f in frames {
                let mut entries = Vec::new();
                for i in 0..f.cloud.len() {
                    if !f.unlabeled[i] {
                        continue;
                    }
                    let (class, conf) = f.pred.argmax_conf(i);
                    if matches!(cuts[class as usize - 1], Some(c) if conf > c) {
                        entries.push((i, class));
                    }
                }
                set.frames.push(PseudoLabels { entries });
            }
            Ok(set)
        }
        Strategy::Crb => {
            let store = collect_confidences(frames, annuli, width)?;
            let table = determine_thresholds(&store, beta);
            let mut set = PseudoSet::default();
            for f in frames {
                set.frames
                    .push(solve_frame(f.cloud, f.pred, f.unlabeled, &table, width)?);
            }
            Ok(set)
        }
    }
}

/// Overlays pseudo-labels onto scribbles; scribbles win where both exist.
pub fn merge_labels(scribbles: &LabelArray, pseudo: &PseudoLabels) -> LabelArray {
    let mut merged = scribbles.clone();
    for &(i, class) in pseudo.entries() {
        if merged.get(i) == 0 {
            merged.set(i, class);
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One frame, every point unlabeled, confidence and position injected
    /// directly: point i sits at planar range `ranges[i]` with top-1
    /// probability `confs[i]` for class 1 (two-class predictions).
    fn frame(ranges: &[f64], confs: &[f64]) -> (PointCloud, SoftPrediction, Vec<bool>) {
        let mut cloud = PointCloud::new(0);
        let mut probs = Vec::new();
        for (&r, &c) in ranges.iter().zip(confs) {
            cloud.push(r as f32, 0.0, 0.0, 0.0);
            probs.extend_from_slice(&[c, 1.0 - c]);
        }
        let pred = SoftPrediction::from_rows(2, probs);
        let unlabeled = vec![true; ranges.len()];
        (cloud, pred, unlabeled)
    }

    #[test]
    fn quantile_cut_matches_hand_computation() {
        let (cloud, pred, unlabeled) = frame(&[1.0, 2.0, 3.0, 4.0], &[0.9, 0.8, 0.7, 0.6]);
        let store = collect_frame(&cloud, &pred, &unlabeled, 1, None).unwrap();
        assert_eq!(store.cell(1, 0), &[0.9, 0.8, 0.7, 0.6]);
        let table = determine_thresholds(&store, 0.5);
        // Descending index floor(0.5 * 4) = 2 -> cut at 0.7.
        assert_eq!(table.cut(1, 0), Some(0.7));
        assert!((table.neg_log_cut(1, 0) - 0.356674943938732).abs() < 1e-12);
        let labels = solve_frame(&cloud, &pred, &unlabeled, &table, None).unwrap();
        assert_eq!(labels.entries(), &[(0, 1), (1, 1)]);
    }

    #[test]
    fn beta_one_clamps_to_the_last_element() {
        let (cloud, pred, unlabeled) = frame(&[1.0, 2.0], &[0.9, 0.8]);
        let store = collect_frame(&cloud, &pred, &unlabeled, 1, None).unwrap();
        let table = determine_thresholds(&store, 1.0);
        assert_eq!(table.cut(1, 0), Some(0.8));
        // Strict comparison still drops the cut point itself.
        let labels = solve_frame(&cloud, &pred, &unlabeled, &table, None).unwrap();
        assert_eq!(labels.entries(), &[(0, 1)]);
    }

    #[test]
    fn empty_cells_never_admit() {
        let (cloud, pred, unlabeled) = frame(&[1.0], &[0.99]);
        let store = collect_frame(&cloud, &pred, &unlabeled, 4, None).unwrap();
        let table = determine_thresholds(&store, 0.5);
        assert_eq!(table.cut(2, 0), None);
        assert_eq!(table.neg_log_cut(2, 0), f64::INFINITY);
        assert!(!table.admits(2, 0, 1.0));
    }

    #[test]
    fn confidences_point_into_class_and_annulus_cells() {
        let mut cloud = PointCloud::new(0);
        cloud.push(3.0, 0.0, 0.0, 0.0); // range 3 -> annulus 0 of width 5
        cloud.push(0.0, 8.0, 0.0, 0.0); // range 8 -> annulus 1
        let pred = SoftPrediction::from_rows(2, vec![0.7, 0.3, 0.4, 0.6]);
        let store =
            collect_frame(&cloud, &pred, &[true, true], 2, Some(5.0)).unwrap();
        assert_eq!(store.cell(1, 0), &[0.7]);
        assert_eq!(store.cell(2, 1), &[0.6]);
        assert!(store.cell(1, 1).is_empty());
    }

    #[test]
    fn scribbled_points_are_excluded_from_collection() {
        let (cloud, pred, _) = frame(&[1.0, 2.0], &[0.9, 0.8]);
        let store = collect_frame(&cloud, &pred, &[false, true], 1, None).unwrap();
        assert_eq!(store.total(), 1);
        assert_eq!(store.cell(1, 0), &[0.8]);
    }

    #[test]
    fn naive_labels_every_unlabeled_point() {
        let (cloud, pred, unlabeled) = frame(&[1.0, 2.0, 3.0], &[0.9, 0.5, 0.51]);
        let frames = [FrameInput {
            cloud: &cloud,
            pred: &pred,
            unlabeled: &unlabeled,
        }];
        let set = generate(Strategy::Naive, &frames, 0.5, 1, None).unwrap();
        assert_eq!(set.total(), 3);
    }

    #[test]
    fn fixed_threshold_is_strict() {
        let (cloud, pred, unlabeled) = frame(&[1.0, 2.0, 3.0], &[0.95, 0.9, 0.7]);
        let frames = [FrameInput {
            cloud: &cloud,
            pred: &pred,
            unlabeled: &unlabeled,
        }];
        let set = generate(Strategy::Threshold(0.9), &frames, 0.5, 1, None).unwrap();
        assert_eq!(set.frames[0].entries(), &[(0, 1)]);
    }

    #[test]
    fn class_balanced_coincides_with_single_annulus_crb() {
        let (cloud, pred, unlabeled) = frame(
            &[1.0, 5.0, 9.0, 13.0, 17.0, 21.0],
            &[0.93, 0.9, 0.86, 0.8, 0.7, 0.62],
        );
        let frames = [FrameInput {
            cloud: &cloud,
            pred: &pred,
            unlabeled: &unlabeled,
        }];
        let cb = generate(Strategy::ClassBalanced, &frames, 0.5, 10, None).unwrap();
        let crb1 = generate(Strategy::Crb, &frames, 0.5, 1, None).unwrap();
        assert_eq!(cb, crb1);
    }

    #[test]
    fn merge_keeps_scribbles_over_pseudo_labels() {
        let scribbles = LabelArray::new(vec![4, 0, 0]);
        let pseudo = PseudoLabels::from_entries(vec![(0, 1), (2, 2)]);
        let merged = merge_labels(&scribbles, &pseudo);
        assert_eq!(merged.as_slice(), &[4, 0, 2]);
    }

    #[test]
    fn pseudo_label_lookup_by_point() {
        let p = PseudoLabels::from_entries(vec![(5, 2), (1, 3)]);
        assert_eq!(p.get(1), Some(3));
        assert_eq!(p.get(5), Some(2));
        assert_eq!(p.get(2), None);
        assert_eq!(p.len(), 2);
    }
}
