//! JSON configuration for the whole pipeline.
//!
//! One file drives every stage, so a run is reproducible from the config
//! plus the dataset alone. Every field has a default; an empty object
//! `{}` is a complete, working configuration for the synthetic desk-scale
//! pipeline. Unknown keys are rejected rather than ignored, which turns
//! typos into errors instead of silently dropped settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scribbleseg_core::synth::default_weights;
use scribbleseg_core::{
    AugmentConfig, ClassMap, CylGridSpec, PlsConfig, SceneConfig, Strategy, TrainConfig,
};

use crate::error::{io_at, PipelineError, Result};

fn bad(detail: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset root holding `sequences/<seq>/...`.
    pub data_root: PathBuf,
    /// Where checkpoints, pseudo-labels and reports are written.
    pub out_dir: PathBuf,
    pub train_sequence: String,
    pub val_sequence: String,
    /// Class vocabulary: `semantic-kitti`, `identity:<N>`, or the path of a
    /// JSON file with `names`, `raw_to_train` and `train_to_raw` tables.
    pub class_map: String,
    /// Seed for synthetic scene generation.
    pub seed: u64,
    /// Worker threads for per-frame work; `0` picks the machine default.
    /// The thread count never changes any output byte, only wall time.
    pub threads: usize,
    pub pls: PlsSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub distill: TrainSection,
    pub crb: CrbSection,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            train_sequence: "00".into(),
            val_sequence: "01".into(),
            class_map: "identity:19".into(),
            seed: 42,
            threads: 0,
            pls: PlsSection::default(),
            augment: AugmentSection::default(),
            train: TrainSection::default(),
            distill: TrainSection::distill_default(),
            crb: CrbSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Pyramid context descriptors appended to the training-stage features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlsSection {
    /// Disable to train on raw geometry in the first stage as well.
    pub enabled: bool,
    /// `(rings, sectors)` per pyramid level, coarse to fine.
    pub levels: Vec<(usize, usize)>,
    /// Disk radius in meters; points beyond it clamp into the last ring.
    pub r_max: f64,
}

impl Default for PlsSection {
    fn default() -> Self {
        PlsSection {
            enabled: true,
            levels: vec![(20, 40), (40, 80), (80, 120)],
            r_max: 50.0,
        }
    }
}

/// Student-side input perturbations; the teacher always sees clean frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub rotation: f64,
    pub translation: f64,
    pub flip_prob: f64,
    pub noise_std: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let core = AugmentConfig::default();
        AugmentSection {
            rotation: core.rotation,
            translation: core.translation,
            flip_prob: core.flip_prob,
            noise_std: core.noise_std,
        }
    }
}

/// Hyperparameters for one training stage. The first stage and the
/// distillation stage carry separate copies so they can diverge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_frames: usize,
    /// Hidden layer widths; empty means a single linear-softmax layer.
    pub hidden: Vec<usize>,
    /// Teacher EMA smoothing per optimizer step.
    pub alpha: f64,
    pub consistency_weight: f64,
    /// Probability of hiding a point's descriptor block from the student;
    /// keeps the classifier from leaning on context it will not always
    /// have. Ignored when descriptors are off.
    pub descriptor_dropout: f64,
    /// Scale on the planar x/y columns before the classifier.
    pub coord_scale: f64,
    /// Seeds both the weight init and the augmentation stream.
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let core = TrainConfig::default();
        TrainSection {
            epochs: core.epochs,
            learning_rate: core.learning_rate,
            momentum: core.momentum,
            batch_frames: core.batch_frames,
            hidden: vec![48, 32],
            alpha: 0.99,
            consistency_weight: core.consistency_weight,
            descriptor_dropout: core.descriptor_dropout,
            coord_scale: core.coord_scale,
            seed: 7,
        }
    }
}

impl TrainSection {
    /// Distillation defaults: same loop, fresh seed.
    pub fn distill_default() -> Self {
        TrainSection {
            seed: 11,
            ..TrainSection::default()
        }
    }
}

/// Pseudo-label selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrbSection {
    /// `naive`, `threshold`, `class-balanced` or `crb`.
    pub strategy: String,
    /// Per-cell acceptance quantile for the balanced strategies.
    pub beta: f64,
    /// Range annuli per frame for the range-balanced strategy.
    pub annuli: usize,
    /// Confidence floor for the `threshold` strategy.
    pub tau: f64,
    /// Fixed annulus width in meters shared by all frames; unset sizes
    /// annuli per frame from each frame's own maximum range.
    pub global_width: Option<f64>,
}

impl Default for CrbSection {
    fn default() -> Self {
        CrbSection {
            strategy: "crb".into(),
            beta: 0.5,
            annuli: 10,
            tau: 0.9,
            global_width: None,
        }
    }
}

/// Synthetic dataset shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub classes: usize,
    pub points_per_frame: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub r_max: f64,
    pub scribble_fraction: f64,
    pub scribble_radius: f64,
    /// Relative class frequencies; unset uses a long-tailed default.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            classes: 19,
            points_per_frame: 2000,
            train_frames: 12,
            val_frames: 4,
            r_max: 50.0,
            scribble_fraction: 0.08,
            scribble_radius: 0.25,
            class_weights: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|source| PipelineError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Rejects values no stage could act on. Cross-checks that need the
    /// data (class counts against a checkpoint, say) happen in the stages.
    pub fn validate(&self) -> Result<()> {
        if self.train_sequence.is_empty() || self.val_sequence.is_empty() {
            return Err(bad("sequence names must be non-empty"));
        }
        if self.pls.levels.is_empty() {
            return Err(bad("pls.levels needs at least one (rings, sectors) pair"));
        }
        for &(r, p) in &self.pls.levels {
            if r == 0 || p == 0 {
                return Err(bad(format!("pls level {r}x{p} has a zero resolution")));
            }
        }
        if !(self.pls.r_max > 0.0 && self.pls.r_max.is_finite()) {
            return Err(bad(format!("pls.r_max = {} must be positive", self.pls.r_max)));
        }
        let a = &self.augment;
        if a.rotation < 0.0 || a.translation < 0.0 || a.noise_std < 0.0 {
            return Err(bad("augment magnitudes cannot be negative"));
        }
        if !(0.0..=1.0).contains(&a.flip_prob) {
            return Err(bad(format!("augment.flip_prob = {} outside [0, 1]", a.flip_prob)));
        }
        for (name, t) in [("train", &self.train), ("distill", &self.distill)] {
            if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
                return Err(bad(format!("{name}.learning_rate must be positive")));
            }
            if !(0.0..1.0).contains(&t.momentum) {
                return Err(bad(format!("{name}.momentum = {} outside [0, 1)", t.momentum)));
            }
            if t.batch_frames == 0 {
                return Err(bad(format!("{name}.batch_frames must be at least 1")));
            }
            if t.hidden.contains(&0) {
                return Err(bad(format!("{name}.hidden contains a zero width")));
            }
            if !(0.0..=1.0).contains(&t.alpha) {
                return Err(bad(format!("{name}.alpha = {} outside [0, 1]", t.alpha)));
            }
            if t.consistency_weight < 0.0 {
                return Err(bad(format!("{name}.consistency_weight cannot be negative")));
            }
            if !(0.0..1.0).contains(&t.descriptor_dropout) {
                return Err(bad(format!(
                    "{name}.descriptor_dropout = {} outside [0, 1)",
                    t.descriptor_dropout
                )));
            }
            if !(t.coord_scale > 0.0 && t.coord_scale.is_finite()) {
                return Err(bad(format!("{name}.coord_scale must be positive")));
            }
        }
        self.strategy()?;
        if !(self.crb.beta > 0.0 && self.crb.beta <= 1.0) {
            return Err(bad(format!("crb.beta = {} outside (0, 1]", self.crb.beta)));
        }
        if self.crb.annuli == 0 {
            return Err(bad("crb.annuli must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.crb.tau) {
            return Err(bad(format!("crb.tau = {} outside [0, 1)", self.crb.tau)));
        }
        if let Some(w) = self.crb.global_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(bad(format!("crb.global_width = {w} must be positive")));
            }
        }
        let s = &self.synth;
        if s.classes == 0 || s.points_per_frame == 0 || s.train_frames == 0 {
            return Err(bad("synth sizes must be positive"));
        }
        if !(s.r_max > 1.0 && s.r_max.is_finite()) {
            return Err(bad(format!("synth.r_max = {} is too small", s.r_max)));
        }
        if !(0.0..=1.0).contains(&s.scribble_fraction) {
            return Err(bad(format!(
                "synth.scribble_fraction = {} outside [0, 1]",
                s.scribble_fraction
            )));
        }
        if !(s.scribble_radius > 0.0 && s.scribble_radius.is_finite()) {
            return Err(bad("synth.scribble_radius must be positive"));
        }
        if let Some(w) = &s.class_weights {
            if w.len() != s.classes {
                return Err(bad(format!(
                    "synth.class_weights has {} entries for {} classes",
                    w.len(),
                    s.classes
                )));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(bad("synth.class_weights must all be positive"));
            }
        }
        Ok(())
    }

    pub fn class_map(&self) -> Result<ClassMap> {
        resolve_class_map(&self.class_map)
    }

    pub fn pls_config(&self, classes: usize) -> PlsConfig {
        PlsConfig::new(
            CylGridSpec::new(self.pls.levels.clone(), self.pls.r_max),
            classes,
        )
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            rotation: self.augment.rotation,
            translation: self.augment.translation,
            flip_prob: self.augment.flip_prob,
            noise_std: self.augment.noise_std,
        }
    }

    fn loop_config(section: &TrainSection) -> TrainConfig {
        TrainConfig {
            epochs: section.epochs,
            learning_rate: section.learning_rate,
            momentum: section.momentum,
            batch_frames: section.batch_frames,
            coord_scale: section.coord_scale,
            consistency_weight: section.consistency_weight,
            descriptor_dropout: section.descriptor_dropout,
            seed: section.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        PipelineConfig::loop_config(&self.train)
    }

    pub fn distill_config(&self) -> TrainConfig {
        PipelineConfig::loop_config(&self.distill)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        match self.crb.strategy.as_str() {
            "naive" => Ok(Strategy::Naive),
            "threshold" => Ok(Strategy::Threshold(self.crb.tau)),
            "class-balanced" => Ok(Strategy::ClassBalanced),
            "crb" => Ok(Strategy::Crb),
            other => Err(bad(format!(
                "crb.strategy \"{other}\" is not one of naive, threshold, class-balanced, crb"
            ))),
        }
    }

    pub fn scene_config(&self) -> SceneConfig {
        let s = &self.synth;
        SceneConfig {
            class_count: s.classes,
            class_weights: s
                .class_weights
                .clone()
                .unwrap_or_else(|| default_weights(s.classes)),
            points_per_frame: s.points_per_frame,
            r_max: s.r_max,
            scribble_fraction: s.scribble_fraction,
            scribble_radius: s.scribble_radius,
            seed: self.seed,
        }
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.out_dir.join("checkpoints").join(name)
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.out_dir.join("reports").join(name)
    }

    /// Where the pseudo-labeling stage writes merged labels for the
    /// training sequence.
    pub fn pseudo_labels_dir(&self) -> PathBuf {
        self.out_dir
            .join("pseudo")
            .join("sequences")
            .join(&self.train_sequence)
            .join("labels")
    }
}

/// External class-map file: names for train ids `1..=N` plus both
/// translation tables, keyed by decimal id strings.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassMapFile {
    names: Vec<String>,
    raw_to_train: BTreeMap<String, u16>,
    train_to_raw: BTreeMap<String, u16>,
}

/// Builds the class vocabulary named by a config string: the built-in
/// `semantic-kitti` map, `identity:<N>` for data already carrying train
/// ids, or a JSON file path.
pub fn resolve_class_map(spec: &str) -> Result<ClassMap> {
    if spec == "semantic-kitti" {
        return Ok(ClassMap::semantic_kitti());
    }
    if let Some(n) = spec.strip_prefix("identity:") {
        let classes: usize = n
            .parse()
            .map_err(|_| bad(format!("class_map \"{spec}\": \"{n}\" is not a class count")))?;
        if classes == 0 || classes > u16::MAX as usize {
            return Err(bad(format!("class_map \"{spec}\": count out of range")));
        }
        return Ok(ClassMap::identity(classes));
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let file: ClassMapFile = serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let classes = file.names.len() as u16;
    let parse_key = |k: &String| -> Result<u16> {
        k.parse()
            .map_err(|_| bad(format!("{spec}: key \"{k}\" is not a 16-bit id")))
    };
    let mut raw_to_train = BTreeMap::new();
    for (k, &t) in &file.raw_to_train {
        if t > classes {
            return Err(bad(format!(
                "{spec}: raw id {k} maps to train id {t}, beyond {classes} classes"
            )));
        }
        raw_to_train.insert(parse_key(k)?, t);
    }
    let mut train_to_raw = BTreeMap::new();
    for (k, &r) in &file.train_to_raw {
        train_to_raw.insert(parse_key(k)?, r);
    }
    for t in 0..=classes {
        if !train_to_raw.contains_key(&t) {
            return Err(bad(format!("{spec}: train id {t} has no raw id in train_to_raw")));
        }
    }
    Ok(ClassMap::new(file.names, raw_to_train, train_to_raw))
}
