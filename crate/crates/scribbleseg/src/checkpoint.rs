//! Binary checkpoint format for a teacher-student pair.
//!
//! Layout, all little-endian:
//!
//! ```text
//! u32            input dimension
//! u32            number of hidden layers
//! u32 * hidden   hidden layer widths
//! u32            class count
//! f64 * P        student parameters, flat layout
//! f64 * P        teacher parameters, flat layout
//! f64            EMA smoothing factor
//! u64            optimizer steps taken
//! ```
//!
//! The flat parameter layout is the model's own: per layer, weights in
//! row-major order followed by biases. Parameters survive a write/read
//! cycle bit for bit, so re-encoding a loaded checkpoint reproduces the
//! original file exactly.

use std::fs;
use std::path::Path;

use scribbleseg_core::{Mlp, TeacherStudent};

use crate::error::{io_at, PipelineError, Result};

/// Upper bound on the hidden layer count a header may claim. Anything past
/// this is a corrupt file, not a plausible network.
const MAX_HIDDEN_LAYERS: u32 = 64;

pub fn encode_checkpoint(ts: &TeacherStudent) -> Vec<u8> {
    let hidden = ts.student.hidden_dims();
    let mut out = Vec::new();
    out.extend_from_slice(&(ts.student.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(hidden.len() as u32).to_le_bytes());
    for h in &hidden {
        out.extend_from_slice(&(*h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(ts.student.classes() as u32).to_le_bytes());
    for p in ts.student.params_flat().iter().chain(ts.teacher.params_flat().iter()) {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&ts.alpha.to_le_bytes());
    out.extend_from_slice(&ts.step.to_le_bytes());
    out
}

/// Cursor over the byte buffer; every read checks the remaining length.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(PipelineError::Checkpoint {
                path: self.path.to_path_buf(),
                detail: format!(
                    "file ends inside {what}: need {n} more bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<TeacherStudent> {
    let fail = |detail: String| PipelineError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = Reader { path, bytes, pos: 0 };

    let input_dim = r.u32("header")?;
    let hidden_count = r.u32("header")?;
    if hidden_count > MAX_HIDDEN_LAYERS {
        return Err(fail(format!(
            "header claims {hidden_count} hidden layers; limit is {MAX_HIDDEN_LAYERS}"
        )));
    }
    let mut hidden = Vec::with_capacity(hidden_count as usize);
    for _ in 0..hidden_count {
        hidden.push(r.u32("header")? as usize);
    }
    let classes = r.u32("header")?;
    if input_dim == 0 || classes == 0 || hidden.contains(&0) {
        return Err(fail(format!(
            "degenerate shape: input {input_dim}, hidden {hidden:?}, classes {classes}"
        )));
    }

    let mut student = Mlp::zeros(input_dim as usize, &hidden, classes as usize);
    let params = student.param_count();
    student.set_params_flat(&r.f64_vec(params, "student parameters")?);
    let mut teacher = Mlp::zeros(input_dim as usize, &hidden, classes as usize);
    teacher.set_params_flat(&r.f64_vec(params, "teacher parameters")?);

    let alpha = r.f64("smoothing factor")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(fail(format!("smoothing factor {alpha} outside [0, 1]")));
    }
    let step = r.u64("step counter")?;
    if r.pos != bytes.len() {
        return Err(fail(format!(
            "{} trailing bytes after a complete checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(TeacherStudent {
        student,
        teacher,
        alpha,
        step,
    })
}

/// Writes a checkpoint, creating parent directories as needed.
pub fn save_checkpoint(path: &Path, ts: &TeacherStudent) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    fs::write(path, encode_checkpoint(ts)).map_err(io_at(path))
}

pub fn load_checkpoint(path: &Path) -> Result<TeacherStudent> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    decode_checkpoint(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_pair() -> TeacherStudent {
        let student = Mlp::new(61, &[16, 8], 19, 77);
        let mut ts = TeacherStudent::new(student, 0.99);
        // Separate the teacher from the student so both payloads matter.
        let mut other = Mlp::new(61, &[16, 8], 19, 78);
        std::mem::swap(&mut ts.teacher, &mut other);
        ts.step = 1234;
        ts
    }

    #[test]
    fn checkpoint_round_trips_bit_for_bit() {
        let ts = sample_pair();
        let bytes = encode_checkpoint(&ts);
        let back = decode_checkpoint(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back, ts);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn header_length_matches_the_documented_layout() {
        let ts = sample_pair();
        let bytes = encode_checkpoint(&ts);
        let header = 4 * (2 + 2 + 1); // input, count, two widths, classes
        let params = 2 * ts.student.param_count() * 8;
        assert_eq!(bytes.len(), header + params + 8 + 8);
        // Spot-check the first header word.
        assert_eq!(u32::from_le_bytes(bytes[..4].try_into().unwrap()), 61);
    }

    #[test]
    fn short_and_long_files_are_both_rejected() {
        let ts = sample_pair();
        let bytes = encode_checkpoint(&ts);
        let short = decode_checkpoint(Path::new("mem"), &bytes[..bytes.len() - 1]);
        assert!(matches!(short, Err(PipelineError::Checkpoint { .. })), "{short:?}");
        let mut long = bytes.clone();
        long.push(0);
        let long = decode_checkpoint(Path::new("mem"), &long);
        assert!(matches!(long, Err(PipelineError::Checkpoint { .. })), "{long:?}");
    }

    #[test]
    fn implausible_header_fails_before_allocation() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        let err = decode_checkpoint(Path::new("mem"), &bytes).unwrap_err();
        match err {
            PipelineError::Checkpoint { detail, .. } => {
                assert!(detail.contains("hidden layers"), "{detail}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_range_smoothing_factor_is_rejected() {
        let ts = sample_pair();
        let mut bytes = encode_checkpoint(&ts);
        let alpha_at = bytes.len() - 16;
        bytes[alpha_at..alpha_at + 8].copy_from_slice(&2.5f64.to_le_bytes());
        let err = decode_checkpoint(Path::new("mem"), &bytes).unwrap_err();
        match err {
            PipelineError::Checkpoint { detail, .. } => {
                assert!(detail.contains("smoothing"), "{detail}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn saves_into_a_fresh_directory_tree() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out").join("checkpoints").join("pair.ckpt");
        let ts = sample_pair();
        save_checkpoint(&path, &ts).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ts);
    }
}
