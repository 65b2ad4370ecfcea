//! Pyramid local semantic context: per-point descriptors summarizing which
//! classes were scribbled near a point, at several grid resolutions.
//!
//! Labeled points are histogrammed into cylindrical sector cells at every
//! pyramid level; a point's descriptor concatenates its cell's histogram at
//! each level, normalized by the cell's largest count. Cells that received no
//! labels yield all-zero blocks, so the descriptor stays in `[0, 1]` and a
//! nonempty cell always contains an entry equal to one.

use alloc::vec;
use alloc::vec::Vec;

use crate::binning::CylGridSpec;
use crate::cloud::{FeatureMatrix, LabelArray, PointCloud};
use crate::error::{Error, Result};

/// Grid pyramid plus the number of semantic classes being counted.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsConfig {
    pub grid: CylGridSpec,
    pub class_count: usize,
}

impl PlsConfig {
    pub fn new(grid: CylGridSpec, class_count: usize) -> Self {
        assert!(class_count >= 1, "need at least one class");
        PlsConfig { grid, class_count }
    }

    /// Default pyramid over 19 classes: descriptor width 3 * 19 = 57.
    pub fn default_kitti() -> Self {
        PlsConfig::new(CylGridSpec::default_pyramid(), 19)
    }

    /// Width of one descriptor row: one class histogram per pyramid level.
    pub fn descriptor_dim(&self) -> usize {
        self.grid.levels() * self.class_count
    }
}

/// Per-level, per-cell class counts accumulated from labeled points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramPyramid {
    class_count: usize,
    /// One flat `cells * class_count` buffer per level, cell-major.
    levels: Vec<Vec<u32>>,
}

impl HistogramPyramid {
    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Count for one (level, cell, class) triple; `class` is a train id.
    pub fn count(&self, level: usize, cell: usize, class: u16) -> u32 {
        assert!(class >= 1, "class histogram has no unlabeled slot");
        self.levels[level][cell * self.class_count + class as usize - 1]
    }

    fn cell_counts(&self, level: usize, cell: usize) -> &[u32] {
        &self.levels[level][cell * self.class_count..(cell + 1) * self.class_count]
    }
}

/// Accumulates scribble labels into per-cell class histograms at every
/// pyramid level. Unlabeled points contribute nothing.
pub fn build_histograms(
    cloud: &PointCloud,
    labels: &LabelArray,
    cfg: &PlsConfig,
) -> HistogramPyramid {
    assert_eq!(
        labels.len(),
        cloud.len(),
        "labels must align with the cloud"
    );
    let mut levels: Vec<Vec<u32>> = (0..cfg.grid.levels())
        .map(|l| vec![0u32; cfg.grid.cells(l) * cfg.class_count])
        .collect();
    for i in 0..cloud.len() {
        let label = labels.get(i);
        if label == 0 {
            continue;
        }
        assert!(
            (label as usize) <= cfg.class_count,
            "label {label} exceeds class count {}",
            cfg.class_count
        );
        let x = cloud.xs()[i] as f64;
        let y = cloud.ys()[i] as f64;
        for (l, hist) in levels.iter_mut().enumerate() {
            let cell = cfg.grid.cell_of_point(l, x, y);
            hist[cell * cfg.class_count + label as usize - 1] += 1;
        }
    }
    HistogramPyramid {
        class_count: cfg.class_count,
        levels,
    }
}

/// Row-major per-point descriptors, `rows x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PlsMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn from_data(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim, "descriptor buffer size mismatch");
        PlsMatrix { rows, dim, data }
    }
}

/// Looks up every point's cell histogram at each level and emits the
/// concatenated max-normalized blocks.
pub fn compute_pls(cloud: &PointCloud, pyramid: &HistogramPyramid, cfg: &PlsConfig) -> PlsMatrix {
    assert_eq!(pyramid.class_count, cfg.class_count, "pyramid/config class count mismatch");
    assert_eq!(pyramid.levels(), cfg.grid.levels(), "pyramid/config level mismatch");
    let dim = cfg.descriptor_dim();
    let c = cfg.class_count;
    let mut data = vec![0.0f64; cloud.len() * dim];
    for i in 0..cloud.len() {
        let x = cloud.xs()[i] as f64;
        let y = cloud.ys()[i] as f64;
        let row = &mut data[i * dim..(i + 1) * dim];
        for l in 0..pyramid.levels() {
            let cell = cfg.grid.cell_of_point(l, x, y);
            let counts = pyramid.cell_counts(l, cell);
            let max = counts.iter().copied().max().unwrap_or(0);
            if max == 0 {
                continue; // empty cell stays an all-zero block
            }
            let block = &mut row[l * c..(l + 1) * c];
            for (slot, &n) in block.iter_mut().zip(counts) {
                *slot = n as f64 / max as f64;
            }
        }
    }
    PlsMatrix {
        rows: cloud.len(),
        dim,
        data,
    }
}

/// Like [`compute_pls`], but a labeled point's own vote is held out of its
/// histograms before normalization.
///
/// Supervised training reads descriptors at exactly the annotated points,
/// and each of those points contributed to its own cell counts. Left in,
/// that vote lets a per-point classifier copy the annotation straight out
/// of the feature and learn nothing else, which collapses at inference
/// where unannotated points only ever see their neighbors' votes. Holding
/// the vote out gives labeled points the same neighbors-only view.
/// Unlabeled points are untouched, so this matches [`compute_pls`] on them
/// bit for bit.
pub fn compute_pls_excluding_self(
    cloud: &PointCloud,
    labels: &LabelArray,
    pyramid: &HistogramPyramid,
    cfg: &PlsConfig,
) -> PlsMatrix {
    assert_eq!(pyramid.class_count, cfg.class_count, "pyramid/config class count mismatch");
    assert_eq!(pyramid.levels(), cfg.grid.levels(), "pyramid/config level mismatch");
    assert_eq!(labels.len(), cloud.len(), "labels must align with the cloud");
    let dim = cfg.descriptor_dim();
    let c = cfg.class_count;
    let mut data = vec![0.0f64; cloud.len() * dim];
    let mut counts = vec![0u32; c];
    for i in 0..cloud.len() {
        let x = cloud.xs()[i] as f64;
        let y = cloud.ys()[i] as f64;
        let own = labels.get(i);
        let row = &mut data[i * dim..(i + 1) * dim];
        for l in 0..pyramid.levels() {
            let cell = cfg.grid.cell_of_point(l, x, y);
            counts.copy_from_slice(pyramid.cell_counts(l, cell));
            if own != 0 {
                let slot = &mut counts[own as usize - 1];
                debug_assert!(*slot > 0, "a labeled point must be in its own histogram");
                *slot -= 1;
            }
            let max = counts.iter().copied().max().unwrap_or(0);
            if max == 0 {
                continue;
            }
            let block = &mut row[l * c..(l + 1) * c];
            for (slot, &n) in block.iter_mut().zip(counts.iter()) {
                *slot = n as f64 / max as f64;
            }
        }
    }
    PlsMatrix {
        rows: cloud.len(),
        dim,
        data,
    }
}

/// Joins plain geometry with context descriptors into classifier input rows
/// `(x, y, z, intensity, descriptor...)`.
pub fn augment_points(cloud: &PointCloud, pls: &PlsMatrix) -> Result<FeatureMatrix> {
    if pls.rows() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "descriptors",
            got: pls.rows(),
            expected: cloud.len(),
        });
    }
    let cols = 4 + pls.dim();
    let mut m = FeatureMatrix::zeros(cloud.len(), cols);
    for i in 0..cloud.len() {
        let row = m.row_mut(i);
        row[0] = cloud.xs()[i] as f64;
        row[1] = cloud.ys()[i] as f64;
        row[2] = cloud.zs()[i] as f64;
        row[3] = cloud.intensity()[i] as f64;
        row[4..].copy_from_slice(pls.row(i));
    }
    Ok(m)
}
