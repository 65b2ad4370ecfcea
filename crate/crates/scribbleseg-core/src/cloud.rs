//! Point clouds, label arrays, class maps and per-point feature matrices.
//!
//! Labels use the *train id* convention throughout the crate: `0` means
//! unlabeled, `1..=C` are semantic classes. Raw sensor ids only appear at the
//! edges, where a [`ClassMap`] translates them into train ids and back.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A single LiDAR frame in columnar layout: coordinates in meters in the
/// sensor frame, intensity as a unitless reflectance reading.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    frame_id: u32,
    xs: Vec<f32>,
    ys: Vec<f32>,
    zs: Vec<f32>,
    intensity: Vec<f32>,
}

impl PointCloud {
    pub fn new(frame_id: u32) -> Self {
        PointCloud {
            frame_id,
            xs: Vec::new(),
            ys: Vec::new(),
            zs: Vec::new(),
            intensity: Vec::new(),
        }
    }

    /// Builds a cloud from parallel columns. The columns must have equal
    /// lengths; values are not otherwise inspected (see [`validate_frame`]).
    pub fn from_columns(
        frame_id: u32,
        xs: Vec<f32>,
        ys: Vec<f32>,
        zs: Vec<f32>,
        intensity: Vec<f32>,
    ) -> Result<Self> {
        let n = xs.len();
        for (what, len) in [
            ("y column", ys.len()),
            ("z column", zs.len()),
            ("intensity column", intensity.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    what,
                    got: len,
                    expected: n,
                });
            }
        }
        Ok(PointCloud {
            frame_id,
            xs,
            ys,
            zs,
            intensity,
        })
    }

    pub fn push(&mut self, x: f32, y: f32, z: f32, intensity: f32) {
        self.xs.push(x);
        self.ys.push(y);
        self.zs.push(z);
        self.intensity.push(intensity);
    }

    pub fn frame_id(&self) -> u32 {
        self.frame_id
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f32] {
        &self.xs
    }

    pub fn ys(&self) -> &[f32] {
        &self.ys
    }

    pub fn zs(&self) -> &[f32] {
        &self.zs
    }

    pub fn intensity(&self) -> &[f32] {
        &self.intensity
    }

    /// Distance from the sensor axis in the ground plane, in f64 so that
    /// downstream binning is not at the mercy of f32 rounding.
    pub fn planar_range(&self, i: usize) -> f64 {
        let x = self.xs[i] as f64;
        let y = self.ys[i] as f64;
        libm::sqrt(x * x + y * y)
    }

    /// Largest planar range over the frame, `None` for an empty cloud.
    pub fn max_planar_range(&self) -> Option<f64> {
        (0..self.len()).map(|i| self.planar_range(i)).reduce(f64::max)
    }
}

/// Per-point train ids aligned with a cloud; `0` marks unlabeled points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelArray {
    labels: Vec<u16>,
}

impl LabelArray {
    pub fn new(labels: Vec<u16>) -> Self {
        LabelArray { labels }
    }

    /// An all-unlabeled array of the given length.
    pub fn unlabeled(len: usize) -> Self {
        LabelArray {
            labels: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> u16 {
        self.labels[i]
    }

    pub fn set(&mut self, i: usize, label: u16) {
        self.labels[i] = label;
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.labeled_count() as f64 / self.labels.len() as f64
        }
    }

    /// Splits the frame into the labeled set and its complement. The two
    /// masks partition the points: exactly one of them is true per index.
    pub fn split_supervision(&self) -> (Vec<bool>, Vec<bool>) {
        let labeled: Vec<bool> = self.labels.iter().map(|&l| l != 0).collect();
        let unlabeled: Vec<bool> = labeled.iter().map(|&s| !s).collect();
        (labeled, unlabeled)
    }
}

/// Row-major per-point class probabilities, one row of `classes` entries per
/// point, stored in f64 so threshold comparisons are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    classes: usize,
    probs: Vec<f64>,
}

impl SoftPrediction {
    /// Wraps row-major probabilities. Panics if the buffer is not a whole
    /// number of rows; value checks are left to [`validate_frame`].
    pub fn from_rows(classes: usize, probs: Vec<f64>) -> Self {
        assert!(classes > 0, "prediction needs at least one class");
        assert!(
            probs.len().is_multiple_of(classes),
            "probability buffer length {} is not a multiple of {classes}",
            probs.len()
        );
        SoftPrediction { classes, probs }
    }

    pub fn uniform(points: usize, classes: usize) -> Self {
        assert!(classes > 0, "prediction needs at least one class");
        SoftPrediction {
            classes,
            probs: vec![1.0 / classes as f64; points * classes],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    /// Most likely class (as a train id in `1..=C`) and its probability.
    /// Ties resolve to the lowest class id, so results are deterministic.
    pub fn argmax_conf(&self, i: usize) -> (u16, f64) {
        let row = self.row(i);
        let mut best = 0usize;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        (best as u16 + 1, row[best])
    }

    /// Hard labels from row-wise argmax; every point gets a class, none stay
    /// unlabeled.
    pub fn argmax_labels(&self) -> LabelArray {
        LabelArray::new((0..self.len()).map(|i| self.argmax_conf(i).0).collect())
    }
}

/// Bidirectional mapping between raw sensor label ids and compact train ids
/// `1..=C`, with id `0` reserved for unlabeled on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
    raw_to_train: BTreeMap<u16, u16>,
    train_to_raw: BTreeMap<u16, u16>,
}

impl ClassMap {
    /// `names[i]` names train id `i + 1`. Panics if a mapping refers to a
    /// train id outside `0..=C` or if the inverse misses a class, since a
    /// malformed map is a construction bug rather than a data problem.
    pub fn new(
        names: Vec<String>,
        raw_to_train: BTreeMap<u16, u16>,
        train_to_raw: BTreeMap<u16, u16>,
    ) -> Self {
        let classes = names.len() as u16;
        for (&raw, &train) in &raw_to_train {
            assert!(
                train <= classes,
                "raw id {raw} maps to train id {train}, beyond class count {classes}"
            );
        }
        for train in 0..=classes {
            assert!(
                train_to_raw.contains_key(&train),
                "train id {train} has no inverse raw id"
            );
        }
        ClassMap {
            names,
            raw_to_train,
            train_to_raw,
        }
    }

    /// Trivial map for data that already carries train ids: raw id `c` is
    /// train id `c` for `c <= classes`.
    pub fn identity(classes: usize) -> Self {
        let names = (1..=classes).map(|c| alloc::format!("class-{c:02}")).collect();
        let ids = (0..=classes as u16).map(|c| (c, c));
        ClassMap::new(names, ids.clone().collect(), ids.collect())
    }

    /// The 19-class SemanticKITTI single-scan setup: moving object ids fold
    /// onto their static classes, structure/outlier ids fold onto unlabeled.
    pub fn semantic_kitti() -> Self {
        let names = [
            "car",
            "bicycle",
            "motorcycle",
            "truck",
            "other-vehicle",
            "person",
            "bicyclist",
            "motorcyclist",
            "road",
            "parking",
            "sidewalk",
            "other-ground",
            "building",
            "fence",
            "vegetation",
            "trunk",
            "terrain",
            "pole",
            "traffic-sign",
        ];
        let raw_to_train = [
            (0, 0),
            (1, 0),
            (10, 1),
            (11, 2),
            (13, 5),
            (15, 3),
            (16, 5),
            (18, 4),
            (20, 5),
            (30, 6),
            (31, 7),
            (32, 8),
            (40, 9),
            (44, 10),
            (48, 11),
            (49, 12),
            (50, 13),
            (51, 14),
            (52, 0),
            (60, 9),
            (70, 15),
            (71, 16),
            (72, 17),
            (80, 18),
            (81, 19),
            (99, 0),
            (252, 1),
            (253, 7),
            (254, 6),
            (255, 8),
            (256, 5),
            (257, 5),
            (258, 4),
            (259, 5),
        ];
        let train_to_raw = [
            (0, 0),
            (1, 10),
            (2, 11),
            (3, 15),
            (4, 18),
            (5, 20),
            (6, 30),
            (7, 31),
            (8, 32),
            (9, 40),
            (10, 44),
            (11, 48),
            (12, 49),
            (13, 50),
            (14, 51),
            (15, 70),
            (16, 71),
            (17, 72),
            (18, 80),
            (19, 81),
        ];
        ClassMap::new(
            names.iter().map(|&s| String::from(s)).collect(),
            raw_to_train.into_iter().collect(),
            train_to_raw.into_iter().collect(),
        )
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    /// Name of a class by train id; `None` for 0 and out-of-range ids.
    pub fn name(&self, train_id: u16) -> Option<&str> {
        (train_id != 0)
            .then(|| self.names.get(train_id as usize - 1))
            .flatten()
            .map(String::as_str)
    }

    /// Translates raw sensor ids into train ids.
    pub fn remap(&self, raw: &[u16]) -> Result<LabelArray> {
        let mut labels = Vec::with_capacity(raw.len());
        for (index, &id) in raw.iter().enumerate() {
            match self.raw_to_train.get(&id) {
                Some(&train) => labels.push(train),
                None => return Err(Error::UnknownRawId { id, index }),
            }
        }
        Ok(LabelArray::new(labels))
    }

    /// Inverse lookup used when writing label files.
    pub fn raw_for_train(&self, train_id: u16) -> Result<u16> {
        self.train_to_raw
            .get(&train_id)
            .copied()
            .ok_or(Error::MissingInverse { id: train_id })
    }
}

/// Dense row-major feature matrix feeding the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "feature buffer size mismatch");
        FeatureMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Plain geometric features `(x, y, z, intensity)`, one row per point.
pub fn point_features(cloud: &PointCloud) -> FeatureMatrix {
    let mut m = FeatureMatrix::zeros(cloud.len(), 4);
    for i in 0..cloud.len() {
        let row = m.row_mut(i);
        row[0] = cloud.xs()[i] as f64;
        row[1] = cloud.ys()[i] as f64;
        row[2] = cloud.zs()[i] as f64;
        row[3] = cloud.intensity()[i] as f64;
    }
    m
}

/// Checks that labels (and optionally predictions) line up with a cloud and
/// that every stored value is usable: finite coordinates and intensities,
/// probability rows summing to one within `1e-5` with entries in `[0, 1]`.
pub fn validate_frame(
    cloud: &PointCloud,
    labels: &LabelArray,
    preds: Option<&SoftPrediction>,
) -> Result<()> {
    if labels.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            got: labels.len(),
            expected: cloud.len(),
        });
    }
    for i in 0..cloud.len() {
        let finite = cloud.xs()[i].is_finite()
            && cloud.ys()[i].is_finite()
            && cloud.zs()[i].is_finite();
        if !finite {
            return Err(Error::NonFiniteValue {
                what: "coordinates",
                index: i,
            });
        }
        if !cloud.intensity()[i].is_finite() {
            return Err(Error::NonFiniteValue {
                what: "intensity",
                index: i,
            });
        }
    }
    if let Some(p) = preds {
        if p.len() != cloud.len() {
            return Err(Error::LengthMismatch {
                what: "predictions",
                got: p.len(),
                expected: cloud.len(),
            });
        }
        for i in 0..p.len() {
            let row = p.row(i);
            let mut sum = 0.0;
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        what: "probabilities",
                        index: i,
                    });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::UnnormalizedDistribution { index: i, sum: v });
                }
                sum += v;
            }
            if libm::fabs(sum - 1.0) > 1e-5 {
                return Err(Error::UnnormalizedDistribution { index: i, sum });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cloud(n: usize) -> PointCloud {
        let mut c = PointCloud::new(7);
        for i in 0..n {
            c.push(i as f32, -(i as f32), 0.5, 0.25);
        }
        c
    }

    #[test]
    fn split_supervision_partitions_points() {
        let labels = LabelArray::new(vec![0, 3, 0, 1, 1]);
        let (s, u) = labels.split_supervision();
        assert_eq!(s, vec![false, true, false, true, true]);
        assert_eq!(u, vec![true, false, true, false, false]);
        assert_eq!(labels.labeled_count(), 3);
    }

    #[test]
    fn semantic_kitti_remaps_road() {
        let map = ClassMap::semantic_kitti();
        assert_eq!(map.class_count(), 19);
        let labels = map.remap(&[40, 0, 10, 252]).unwrap();
        assert_eq!(labels.as_slice(), &[9, 0, 1, 1]);
        assert_eq!(map.name(9), Some("road"));
        assert_eq!(map.raw_for_train(9).unwrap(), 40);
    }

    #[test]
    fn unknown_raw_id_is_rejected() {
        let map = ClassMap::semantic_kitti();
        let err = map.remap(&[40, 7]).unwrap_err();
        assert_eq!(err, Error::UnknownRawId { id: 7, index: 1 });
    }

    #[test]
    fn missing_inverse_is_reported() {
        let map = ClassMap::semantic_kitti();
        assert_eq!(map.raw_for_train(20), Err(Error::MissingInverse { id: 20 }));
    }

    #[test]
    fn identity_map_round_trips() {
        let map = ClassMap::identity(5);
        let labels = map.remap(&[0, 5, 2]).unwrap();
        assert_eq!(labels.as_slice(), &[0, 5, 2]);
        assert_eq!(map.raw_for_train(3).unwrap(), 3);
        assert!(map.remap(&[6]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_toward_lower_id() {
        let p = SoftPrediction::from_rows(3, vec![0.2, 0.4, 0.4, 0.5, 0.25, 0.25]);
        assert_eq!(p.argmax_conf(0), (2, 0.4));
        assert_eq!(p.argmax_conf(1), (1, 0.5));
        assert_eq!(p.argmax_labels().as_slice(), &[2, 1]);
    }

    #[test]
    fn validate_frame_accepts_matching_frame() {
        let cloud = toy_cloud(3);
        let labels = LabelArray::unlabeled(3);
        let preds = SoftPrediction::uniform(3, 4);
        validate_frame(&cloud, &labels, Some(&preds)).unwrap();
    }

    #[test]
    fn validate_frame_catches_length_mismatch() {
        let cloud = toy_cloud(3);
        let labels = LabelArray::unlabeled(2);
        let err = validate_frame(&cloud, &labels, None).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { got: 2, expected: 3, .. }));
    }

    #[test]
    fn validate_frame_catches_nan_coordinate() {
        let mut cloud = toy_cloud(2);
        cloud.push(f32::NAN, 0.0, 0.0, 0.0);
        let labels = LabelArray::unlabeled(3);
        let err = validate_frame(&cloud, &labels, None).unwrap_err();
        assert_eq!(
            err,
            Error::NonFiniteValue {
                what: "coordinates",
                index: 2
            }
        );
    }

    #[test]
    fn validate_frame_catches_unnormalized_row() {
        let cloud = toy_cloud(1);
        let labels = LabelArray::unlabeled(1);
        let preds = SoftPrediction::from_rows(2, vec![0.5, 0.3]);
        let err = validate_frame(&cloud, &labels, Some(&preds)).unwrap_err();
        assert!(matches!(err, Error::UnnormalizedDistribution { index: 0, .. }));
    }

    #[test]
    fn point_features_copies_columns() {
        let cloud = toy_cloud(2);
        let feats = point_features(&cloud);
        assert_eq!(feats.cols(), 4);
        assert_eq!(feats.row(1), &[1.0, -1.0, 0.5, 0.25]);
    }

    #[test]
    fn planar_range_ignores_height() {
        let mut c = PointCloud::new(0);
        c.push(3.0, 4.0, 10.0, 0.0);
        assert_eq!(c.planar_range(0), 5.0);
        assert_eq!(c.max_planar_range(), Some(5.0));
    }
}
