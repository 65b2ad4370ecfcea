//! KITTI-style on-disk formats and directory layout.
//!
//! A dataset root looks like
//!
//! ```text
//! root/sequences/<seq>/velodyne/000000.bin    packed f32 LE: x y z intensity
//! root/sequences/<seq>/scribbles/000000.label u32 LE per point, sparse labels
//! root/sequences/<seq>/labels/000000.label    u32 LE per point, dense labels
//! ```
//!
//! A label word stores the raw semantic id in its low 16 bits; the high 16
//! bits are an instance id, which this pipeline ignores on read and writes
//! as zero. Raw ids are translated to contiguous train ids through a
//! [`ClassMap`] at the IO boundary, so everything downstream only ever sees
//! train ids.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use scribbleseg_core::{ClassMap, Error as CoreError, LabelArray, PointCloud};

use crate::error::{io_at, PipelineError, Result};

/// Bytes per point record: four little-endian f32 values.
pub const POINT_RECORD: usize = 16;
/// Bytes per label record: one little-endian u32.
pub const LABEL_RECORD: usize = 4;

/// Canonical zero-padded frame file stem, e.g. `000042`.
pub fn frame_stem(frame_id: u32) -> String {
    format!("{frame_id:06}")
}

/// `root/sequences/<seq>`.
pub fn sequence_dir(root: &Path, sequence: &str) -> PathBuf {
    root.join("sequences").join(sequence)
}

/// Parses a `x y z intensity` point buffer.
pub fn decode_points(path: &Path, bytes: &[u8], frame_id: u32) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(POINT_RECORD) {
        return Err(PipelineError::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: POINT_RECORD,
        });
    }
    let n = bytes.len() / POINT_RECORD;
    let mut cloud = PointCloud::new(frame_id);
    for rec in bytes.chunks_exact(POINT_RECORD) {
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
        cloud.push(f(0), f(4), f(8), f(12));
    }
    debug_assert_eq!(cloud.len(), n);
    for i in 0..cloud.len() {
        let finite = cloud.xs()[i].is_finite()
            && cloud.ys()[i].is_finite()
            && cloud.zs()[i].is_finite()
            && cloud.intensity()[i].is_finite();
        if !finite {
            return Err(PipelineError::Decode {
                path: path.to_path_buf(),
                source: CoreError::NonFiniteValue {
                    what: "point record",
                    index: i,
                },
            });
        }
    }
    Ok(cloud)
}

/// Serializes a cloud back into the packed point format.
pub fn encode_points(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_RECORD);
    for i in 0..cloud.len() {
        out.extend_from_slice(&cloud.xs()[i].to_le_bytes());
        out.extend_from_slice(&cloud.ys()[i].to_le_bytes());
        out.extend_from_slice(&cloud.zs()[i].to_le_bytes());
        out.extend_from_slice(&cloud.intensity()[i].to_le_bytes());
    }
    out
}

pub fn read_points(path: &Path, frame_id: u32) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    decode_points(path, &bytes, frame_id)
}

pub fn write_points(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_points(cloud)).map_err(io_at(path))
}

/// Parses raw label words without any class translation.
pub fn decode_label_words(path: &Path, bytes: &[u8]) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(LABEL_RECORD) {
        return Err(PipelineError::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: LABEL_RECORD,
        });
    }
    Ok(bytes
        .chunks_exact(LABEL_RECORD)
        .map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]))
        .collect())
}

/// Parses a label file and translates raw semantic ids to train ids.
/// Instance ids in the high bits are discarded.
pub fn decode_labels(path: &Path, bytes: &[u8], map: &ClassMap) -> Result<LabelArray> {
    let words = decode_label_words(path, bytes)?;
    let raw: Vec<u16> = words.iter().map(|&w| (w & 0xffff) as u16).collect();
    map.remap(&raw).map_err(|source| PipelineError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Serializes train ids as label words via the map's inverse. Written words
/// carry a zero instance id.
pub fn encode_labels(labels: &LabelArray, map: &ClassMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(labels.len() * LABEL_RECORD);
    for i in 0..labels.len() {
        let raw = map.raw_for_train(labels.get(i))?;
        out.extend_from_slice(&(raw as u32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_labels(path: &Path, map: &ClassMap) -> Result<LabelArray> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    decode_labels(path, &bytes, map)
}

pub fn write_labels(path: &Path, labels: &LabelArray, map: &ClassMap) -> Result<()> {
    fs::write(path, encode_labels(labels, map)?).map_err(io_at(path))
}

/// One frame's files as found on disk. Label paths are present only when
/// the file exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameFiles {
    pub frame_id: u32,
    pub stem: String,
    pub points: PathBuf,
    pub scribbles: Option<PathBuf>,
    pub dense: Option<PathBuf>,
}

/// Which label kinds a caller insists on; a missing required file turns
/// into [`PipelineError::UnpairedFrame`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RequiredLabels {
    pub scribbles: bool,
    pub dense: bool,
}

/// Collects the stems of files with the given extension in a directory,
/// keeping only names that parse as frame ids. The directory may be absent.
fn collect_stems(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(stems);
    }
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let entry = entry.map_err(io_at(dir))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.parse::<u32>().is_ok() {
            stems.insert(stem.to_string());
        }
    }
    Ok(stems)
}

/// Walks a sequence and pairs every point file with its label files.
///
/// Frames come back sorted by id, so repeated scans of the same directory
/// always agree on ordering. Files whose stem is not a frame number are
/// ignored. Label files without a matching point file are reported as
/// unpaired, as are point files lacking a label kind listed in `require`.
pub fn scan_sequence(
    root: &Path,
    sequence: &str,
    require: RequiredLabels,
) -> Result<Vec<FrameFiles>> {
    let seq = sequence_dir(root, sequence);
    let velodyne = seq.join("velodyne");
    if !velodyne.is_dir() {
        return Err(PipelineError::MissingDirectory { path: velodyne });
    }
    let scribble_dir = seq.join("scribbles");
    let dense_dir = seq.join("labels");

    let bins = collect_stems(&velodyne, "bin")?;
    for dir in [&scribble_dir, &dense_dir] {
        for stem in collect_stems(dir, "label")? {
            if !bins.contains(&stem) {
                return Err(PipelineError::UnpairedFrame {
                    stem,
                    missing: velodyne.clone(),
                });
            }
        }
    }

    let mut frames = Vec::with_capacity(bins.len());
    for stem in bins {
        let frame_id: u32 = stem.parse().expect("stems were filtered to frame ids");
        let label_file = |dir: &Path, required: bool| -> Result<Option<PathBuf>> {
            let path = dir.join(format!("{stem}.label"));
            if path.is_file() {
                Ok(Some(path))
            } else if required {
                Err(PipelineError::UnpairedFrame {
                    stem: stem.clone(),
                    missing: path,
                })
            } else {
                Ok(None)
            }
        };
        frames.push(FrameFiles {
            points: velodyne.join(format!("{stem}.bin")),
            scribbles: label_file(&scribble_dir, require.scribbles)?,
            dense: label_file(&dense_dir, require.dense)?,
            frame_id,
            stem,
        });
    }
    frames.sort_by_key(|f| f.frame_id);
    if frames.is_empty() {
        return Err(PipelineError::EmptySequence { path: seq });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mem() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn point_record_layout_matches_hand_packed_bytes() {
        // One record assembled byte by byte from the f32 values.
        let mut bytes = Vec::new();
        for v in [1.5f32, -2.25, 0.125, 0.7] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = decode_points(mem(), &bytes, 9).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.frame_id(), 9);
        assert_eq!(cloud.xs()[0], 1.5);
        assert_eq!(cloud.ys()[0], -2.25);
        assert_eq!(cloud.zs()[0], 0.125);
        assert_eq!(cloud.intensity()[0], 0.7);
        assert_eq!(encode_points(&cloud), bytes);
    }

    #[test]
    fn truncated_point_file_is_rejected_with_sizes() {
        let err = decode_points(mem(), &[0u8; 17], 0).unwrap_err();
        match err {
            PipelineError::Truncated { len, record, .. } => {
                assert_eq!(len, 17);
                assert_eq!(record, POINT_RECORD);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_finite_point_is_a_decode_error() {
        let mut bytes = Vec::new();
        for v in [1.0f32, f32::NAN, 0.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let err = decode_points(mem(), &bytes, 0).unwrap_err();
        assert!(matches!(err, PipelineError::Decode { .. }), "{err:?}");
    }

    #[test]
    fn label_words_split_into_semantic_and_instance_halves() {
        // Raw id 40 with instance 7 in the high bits.
        let word: u32 = 40 | (7 << 16);
        let map = ClassMap::semantic_kitti();
        let labels = decode_labels(mem(), &word.to_le_bytes(), &map).unwrap();
        assert_eq!(labels.get(0), 9, "road folds to train id 9");
        // Re-encoding drops the instance id.
        let bytes = encode_labels(&labels, &map).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[..4].try_into().unwrap()), 40);
    }

    #[test]
    fn identity_map_round_trips_random_label_arrays() {
        let map = ClassMap::identity(19);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(0..200);
            let labels =
                LabelArray::new((0..n).map(|_| rng.random_range(0..=19) as u16).collect());
            let bytes = encode_labels(&labels, &map).unwrap();
            assert_eq!(bytes.len(), labels.len() * LABEL_RECORD);
            let back = decode_labels(mem(), &bytes, &map).unwrap();
            assert_eq!(back, labels);
        }
    }

    #[test]
    fn unknown_raw_id_names_the_file() {
        let map = ClassMap::identity(3);
        let err = decode_labels(mem(), &7u32.to_le_bytes(), &map).unwrap_err();
        match err {
            PipelineError::Decode { path, source } => {
                assert_eq!(path, mem());
                assert_eq!(source, CoreError::UnknownRawId { id: 7, index: 0 });
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn write_frame_set(root: &Path, seq: &str, stems: &[(&str, bool, bool)]) {
        let seq_dir = sequence_dir(root, seq);
        for sub in ["velodyne", "scribbles", "labels"] {
            fs::create_dir_all(seq_dir.join(sub)).unwrap();
        }
        for &(stem, scribble, dense) in stems {
            fs::write(seq_dir.join("velodyne").join(format!("{stem}.bin")), [0u8; 16]).unwrap();
            if scribble {
                fs::write(
                    seq_dir.join("scribbles").join(format!("{stem}.label")),
                    1u32.to_le_bytes(),
                )
                .unwrap();
            }
            if dense {
                fs::write(
                    seq_dir.join("labels").join(format!("{stem}.label")),
                    1u32.to_le_bytes(),
                )
                .unwrap();
            }
        }
    }

    #[test]
    fn scan_orders_frames_and_tracks_optional_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_set(
            dir.path(),
            "00",
            &[("000002", true, false), ("000000", true, true), ("000001", true, false)],
        );
        let frames = scan_sequence(dir.path(), "00", RequiredLabels::default()).unwrap();
        assert_eq!(
            frames.iter().map(|f| f.frame_id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert!(frames[0].dense.is_some());
        assert!(frames[1].dense.is_none());
        assert!(frames.iter().all(|f| f.scribbles.is_some()));
    }

    #[test]
    fn missing_velodyne_directory_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = scan_sequence(dir.path(), "00", RequiredLabels::default()).unwrap_err();
        assert!(matches!(err, PipelineError::MissingDirectory { .. }), "{err:?}");
    }

    #[test]
    fn required_scribbles_flag_catches_the_gap() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_set(dir.path(), "00", &[("000000", true, false), ("000001", false, false)]);
        let require = RequiredLabels {
            scribbles: true,
            dense: false,
        };
        let err = scan_sequence(dir.path(), "00", require).unwrap_err();
        match err {
            PipelineError::UnpairedFrame { stem, .. } => assert_eq!(stem, "000001"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn stray_label_without_points_is_unpaired() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_set(dir.path(), "00", &[("000000", true, true)]);
        fs::write(
            sequence_dir(dir.path(), "00").join("labels").join("000009.label"),
            1u32.to_le_bytes(),
        )
        .unwrap();
        let err = scan_sequence(dir.path(), "00", RequiredLabels::default()).unwrap_err();
        match err {
            PipelineError::UnpairedFrame { stem, .. } => assert_eq!(stem, "000009"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_sequence_is_an_error_not_a_silent_noop() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(sequence_dir(dir.path(), "00").join("velodyne")).unwrap();
        let err = scan_sequence(dir.path(), "00", RequiredLabels::default()).unwrap_err();
        assert!(matches!(err, PipelineError::EmptySequence { .. }), "{err:?}");
    }

    #[test]
    fn files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cloud = PointCloud::new(3);
        for _ in 0..64 {
            cloud.push(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-2.0..4.0),
                rng.random::<f32>(),
            );
        }
        let bin = dir.path().join("000003.bin");
        write_points(&bin, &cloud).unwrap();
        assert_eq!(read_points(&bin, 3).unwrap(), cloud);

        let map = ClassMap::identity(19);
        let labels = LabelArray::new((0..64).map(|i| (i % 20) as u16).collect());
        let lab = dir.path().join("000003.label");
        write_labels(&lab, &labels, &map).unwrap();
        assert_eq!(read_labels(&lab, &map).unwrap(), labels);
    }
}
