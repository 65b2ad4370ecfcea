//! Stage drivers: everything the command-line verbs do, minus the printing.
//!
//! Each `run_*` function takes the parsed configuration, performs one stage
//! end to end and returns a small summary for the caller to display. Stage
//! artifacts — checkpoints, label files, reports — are deterministic: the
//! worker thread count changes wall time only, never a byte of output.
//! Per-frame work (file IO, descriptor building, network forward passes)
//! fans out over a rayon pool and is merged back in frame order.
//!
//! Inference always runs the teacher half of a checkpoint; the smoothed
//! weights are the deployment model, the student exists to be trained.
//! Feature assembly mirrors training: a checkpoint whose input width is
//! four gets raw `(x, y, z, intensity)` rows and the coordinate scale of
//! the distillation section, anything wider gets scribble-built context
//! descriptors appended and the training section's scale.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use scribbleseg_core::{
    crb, eval, pls, synth, train, ClassMap, ConfidenceStore, ConfusionMatrix, Error as CoreError,
    LabelArray, Mlp, PlsConfig, PlsMatrix, PseudoSet, SoftPrediction, Strategy, TeacherStudent,
    TrainFrame,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::PipelineConfig;
use crate::descriptors::save_descriptors;
use crate::error::{io_at, PipelineError, Result};
use crate::kitti::{
    frame_stem, read_labels, read_points, scan_sequence, sequence_dir, write_labels, write_points,
    FrameFiles, RequiredLabels,
};
use crate::report::Report;

/// File name of the first-stage checkpoint.
pub const TRAIN_CHECKPOINT: &str = "teacher_student.ckpt";
/// File name of the distilled checkpoint.
pub const DISTILL_CHECKPOINT: &str = "distilled.ckpt";

fn config_err(detail: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        detail: detail.into(),
    }
}

/// Builds the pool every stage fans out on. `threads == 0` defers to rayon.
fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_err(format!("cannot build a {threads}-thread pool: {e}")))
}

/// A frame pulled fully into memory.
struct LoadedFrame {
    files: FrameFiles,
    cloud: scribbleseg_core::PointCloud,
    scribbles: Option<LabelArray>,
    dense: Option<LabelArray>,
}

impl LoadedFrame {
    /// Ground truth for scoring: dense labels when present, else scribbles.
    fn ground_truth(&self) -> Option<&LabelArray> {
        self.dense.as_ref().or(self.scribbles.as_ref())
    }
}

/// Reads every frame of a sequence in parallel, label lengths checked
/// against their cloud.
fn load_sequence(
    cfg: &PipelineConfig,
    sequence: &str,
    require: RequiredLabels,
) -> Result<Vec<LoadedFrame>> {
    let map = cfg.class_map()?;
    let frames = scan_sequence(&cfg.data_root, sequence, require)?;
    frames
        .into_par_iter()
        .map(|files| {
            let cloud = read_points(&files.points, files.frame_id)?;
            let read_label_kind = |path: &Option<PathBuf>| -> Result<Option<LabelArray>> {
                let Some(path) = path else { return Ok(None) };
                let labels = read_labels(path, &map)?;
                if labels.len() != cloud.len() {
                    return Err(PipelineError::Decode {
                        path: path.clone(),
                        source: CoreError::LengthMismatch {
                            what: "labels",
                            got: labels.len(),
                            expected: cloud.len(),
                        },
                    });
                }
                Ok(Some(labels))
            };
            let scribbles = read_label_kind(&files.scribbles)?;
            let dense = read_label_kind(&files.dense)?;
            Ok(LoadedFrame {
                files,
                cloud,
                scribbles,
                dense,
            })
        })
        .collect()
}

/// Builds one frame's context descriptors from its own scribbles, as seen
/// at inference time.
fn frame_descriptors(frame: &LoadedFrame, plscfg: &PlsConfig) -> PlsMatrix {
    let labels = frame
        .scribbles
        .as_ref()
        .expect("descriptor stages scan with scribbles required");
    let pyramid = pls::build_histograms(&frame.cloud, labels, plscfg);
    pls::compute_pls(&frame.cloud, &pyramid, plscfg)
}

fn all_descriptors(frames: &[LoadedFrame], plscfg: &PlsConfig) -> Vec<PlsMatrix> {
    frames
        .par_iter()
        .map(|f| frame_descriptors(f, plscfg))
        .collect()
}

/// Descriptors for supervised training: each scribbled point's own vote is
/// held out, so the label cannot be read back out of the feature and the
/// annotated points see the same neighbors-only context that unannotated
/// points will.
fn all_descriptors_held_out(frames: &[LoadedFrame], plscfg: &PlsConfig) -> Vec<PlsMatrix> {
    frames
        .par_iter()
        .map(|f| {
            let labels = f
                .scribbles
                .as_ref()
                .expect("descriptor stages scan with scribbles required");
            let pyramid = pls::build_histograms(&f.cloud, labels, plscfg);
            pls::compute_pls_excluding_self(&f.cloud, labels, &pyramid, plscfg)
        })
        .collect()
}

/// How to turn a frame into classifier input for a given model.
#[derive(Debug)]
enum FeatureRecipe {
    Raw,
    WithDescriptors(PlsConfig),
}

impl FeatureRecipe {
    /// Matches a checkpoint's input width against the configured feature
    /// layouts. Width four is raw geometry; four plus the descriptor width
    /// means scribble context was appended at training time.
    fn for_input_dim(input_dim: usize, cfg: &PipelineConfig, classes: usize) -> Result<Self> {
        if input_dim == 4 {
            return Ok(FeatureRecipe::Raw);
        }
        let plscfg = cfg.pls_config(classes);
        let with = 4 + plscfg.descriptor_dim();
        if input_dim == with {
            return Ok(FeatureRecipe::WithDescriptors(plscfg));
        }
        Err(config_err(format!(
            "checkpoint expects {input_dim} input features, but this configuration produces \
             4 raw or {with} descriptor-augmented features"
        )))
    }

    fn needs_scribbles(&self) -> bool {
        matches!(self, FeatureRecipe::WithDescriptors(_))
    }

    /// The coordinate scale the matching training stage would have used.
    fn coord_scale(&self, cfg: &PipelineConfig) -> f64 {
        match self {
            FeatureRecipe::Raw => cfg.distill.coord_scale,
            FeatureRecipe::WithDescriptors(_) => cfg.train.coord_scale,
        }
    }
}

/// Teacher forward passes over whole frames, in parallel, frame order kept.
fn predict(
    model: &Mlp,
    frames: &[LoadedFrame],
    descriptors: Option<&[PlsMatrix]>,
    coord_scale: f64,
) -> Result<Vec<SoftPrediction>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let feats =
                train::assemble_features(&f.cloud, descriptors.map(|d| &d[i]), coord_scale)?;
            model.forward(&feats).map_err(PipelineError::from)
        })
        .collect()
}

/// Validation scores of a model over a labeled sequence.
struct ValScore {
    frames: usize,
    points_scored: u64,
    miou: Option<f64>,
    per_class: Vec<Option<f64>>,
}

/// Scores the teacher on a sequence, or returns `None` when the sequence
/// does not exist — training on a dataset without a held-out split is fine.
fn validate_teacher(
    cfg: &PipelineConfig,
    sequence: &str,
    model: &Mlp,
    recipe: &FeatureRecipe,
) -> Result<Option<ValScore>> {
    let require = RequiredLabels {
        scribbles: recipe.needs_scribbles(),
        dense: false,
    };
    let frames = match load_sequence(cfg, sequence, require) {
        Ok(frames) => frames,
        Err(PipelineError::MissingDirectory { .. }) | Err(PipelineError::EmptySequence { .. }) => {
            return Ok(None)
        }
        Err(e) => return Err(e),
    };
    let descriptors = match recipe {
        FeatureRecipe::Raw => None,
        FeatureRecipe::WithDescriptors(plscfg) => Some(all_descriptors(&frames, plscfg)),
    };
    let preds = predict(model, &frames, descriptors.as_deref(), recipe.coord_scale(cfg))?;

    let classes = model.classes();
    let per_frame: Vec<(ConfusionMatrix, u64)> = frames
        .par_iter()
        .zip(&preds)
        .map(|(f, pred)| {
            let mut m = ConfusionMatrix::new(classes);
            let mut scored = 0u64;
            if let Some(gt) = f.ground_truth() {
                let pred_labels = pred.argmax_labels();
                m.add_frame(gt, &pred_labels)?;
                scored = gt.labeled_count() as u64;
            }
            Ok((m, scored))
        })
        .collect::<Result<_>>()?;

    let mut confusion = ConfusionMatrix::new(classes);
    let mut points_scored = 0;
    for (m, scored) in &per_frame {
        confusion.merge(m);
        points_scored += scored;
    }
    let miou = match eval::miou(&confusion) {
        Ok(v) => Some(v),
        Err(CoreError::NoEvaluableClass) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Some(ValScore {
        frames: frames.len(),
        points_scored,
        miou,
        per_class: eval::per_class_iou(&confusion),
    }))
}

fn report_per_class(report: &mut Report, map: &ClassMap, per_class: &[Option<f64>]) {
    for (i, iou) in per_class.iter().enumerate() {
        let name = map.name(i as u16 + 1).unwrap_or("?");
        report.set_opt_f64(format!("iou.{name}"), *iou);
    }
}

fn report_val(report: &mut Report, map: &ClassMap, sequence: &str, val: &Option<ValScore>) {
    match val {
        Some(v) => {
            report.set("val_sequence", sequence);
            report.set("val_frames", v.frames);
            report.set("val_points_scored", v.points_scored);
            report.set_opt_f64("val_miou", v.miou);
            report_per_class(report, map, &v.per_class);
        }
        None => report.set("val_sequence", "absent"),
    }
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug)]
pub struct SynthSummary {
    pub train_frames: usize,
    pub val_frames: usize,
    pub total_points: u64,
    pub manifest: PathBuf,
}

/// Generates the synthetic dataset under the data root: a training split
/// with scribbles plus dense reference labels, and a held-out split.
pub fn run_synth(cfg: &PipelineConfig) -> Result<SynthSummary> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| synth_inner(cfg))
}

fn synth_inner(cfg: &PipelineConfig) -> Result<SynthSummary> {
    let map = cfg.class_map()?;
    if map.class_count() != cfg.synth.classes {
        return Err(config_err(format!(
            "class_map \"{}\" defines {} classes but synth.classes is {}",
            cfg.class_map,
            map.class_count(),
            cfg.synth.classes
        )));
    }
    let scene = cfg.scene_config();
    let mut manifest = Report::new("synthetic dataset");
    manifest.set("classes", scene.class_count);
    manifest.set("points_per_frame", scene.points_per_frame);
    manifest.set_f64("r_max", scene.r_max);
    manifest.set_f64("scribble_fraction_target", scene.scribble_fraction);
    manifest.set_f64("scribble_radius", scene.scribble_radius);
    manifest.set("seed", scene.seed);
    manifest.set("class_map", &cfg.class_map);

    let splits = [
        (&cfg.train_sequence, 0u32, cfg.synth.train_frames),
        (&cfg.val_sequence, cfg.synth.train_frames as u32, cfg.synth.val_frames),
    ];
    let mut total_points = 0u64;
    for (sequence, id_base, count) in splits {
        if count == 0 {
            continue;
        }
        let seq = sequence_dir(&cfg.data_root, sequence);
        for sub in ["velodyne", "scribbles", "labels"] {
            let dir = seq.join(sub);
            fs::create_dir_all(&dir).map_err(io_at(dir))?;
        }
        // Frame ids continue across splits so every frame draws from its
        // own random stream; file stems restart at zero per sequence.
        let frames: Vec<(u32, _, _, _)> = (0..count)
            .into_par_iter()
            .map(|local| {
                let (cloud, dense, scribbles) =
                    synth::generate_frame(&scene, id_base + local as u32)?;
                Ok((local as u32, cloud, dense, scribbles))
            })
            .collect::<Result<_>>()?;
        frames.par_iter().try_for_each(|(local, cloud, dense, scribbles)| {
            let stem = frame_stem(*local);
            write_points(&seq.join("velodyne").join(format!("{stem}.bin")), cloud)?;
            write_labels(
                &seq.join("scribbles").join(format!("{stem}.label")),
                scribbles,
                &map,
            )?;
            write_labels(&seq.join("labels").join(format!("{stem}.label")), dense, &map)
        })?;

        let mut points = 0u64;
        let mut scribbled = 0u64;
        let mut class_counts = vec![0u64; scene.class_count];
        for (_, cloud, dense, scribbles) in &frames {
            points += cloud.len() as u64;
            scribbled += scribbles.labeled_count() as u64;
            for i in 0..dense.len() {
                let l = dense.get(i);
                if l != 0 {
                    class_counts[l as usize - 1] += 1;
                }
            }
        }
        total_points += points;
        manifest.set(format!("{sequence}.frames"), count);
        manifest.set(format!("{sequence}.points"), points);
        manifest.set_f64(
            format!("{sequence}.scribble_fraction"),
            scribbled as f64 / points.max(1) as f64,
        );
        for (i, n) in class_counts.iter().enumerate() {
            let name = map.name(i as u16 + 1).unwrap_or("?");
            manifest.set(format!("{sequence}.count.{name}"), n);
        }
    }

    let manifest_path = cfg.data_root.join("manifest.txt");
    manifest.save(&manifest_path)?;
    Ok(SynthSummary {
        train_frames: cfg.synth.train_frames,
        val_frames: cfg.synth.val_frames,
        total_points,
        manifest: manifest_path,
    })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub frames: usize,
    pub steps: u64,
    pub val_miou: Option<f64>,
}

/// First stage: fits the teacher-student pair on scribbles, optionally with
/// context descriptors, and scores the teacher on the held-out split.
pub fn run_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| train_inner(cfg))
}

fn train_inner(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let map = cfg.class_map()?;
    let classes = map.class_count();
    let require = RequiredLabels {
        scribbles: true,
        dense: false,
    };
    let frames = load_sequence(cfg, &cfg.train_sequence, require)?;

    let recipe = if cfg.pls.enabled {
        FeatureRecipe::WithDescriptors(cfg.pls_config(classes))
    } else {
        FeatureRecipe::Raw
    };
    let descriptors = match &recipe {
        FeatureRecipe::Raw => None,
        FeatureRecipe::WithDescriptors(plscfg) => Some(all_descriptors_held_out(&frames, plscfg)),
    };
    let input_dim = 4 + descriptors.as_ref().map_or(0, |d| d[0].dim());

    let frame_count = frames.len();
    let total_points: u64 = frames.iter().map(|f| f.cloud.len() as u64).sum();
    let mut descriptor_iter = descriptors.map(Vec::into_iter);
    let train_frames: Vec<TrainFrame> = frames
        .into_iter()
        .map(|f| TrainFrame {
            cloud: f.cloud,
            labels: f.scribbles.expect("scan required scribbles"),
            pls: descriptor_iter
                .as_mut()
                .map(|it| it.next().expect("one descriptor matrix per frame")),
        })
        .collect();

    let student = Mlp::new(input_dim, &cfg.train.hidden, classes, cfg.train.seed);
    let ts = TeacherStudent::new(student, cfg.train.alpha);
    let ts = train::train(&train_frames, ts, &cfg.train_config(), &cfg.augment_config())?;
    drop(train_frames);

    let val = validate_teacher(cfg, &cfg.val_sequence, &ts.teacher, &recipe)?;

    let checkpoint = cfg.checkpoint_path(TRAIN_CHECKPOINT);
    save_checkpoint(&checkpoint, &ts)?;

    let mut report = Report::new("training stage");
    report.set("sequence", &cfg.train_sequence);
    report.set("frames", frame_count);
    report.set("points", total_points);
    report.set("classes", classes);
    report.set("input_dim", input_dim);
    report.set("hidden", join_dims(&cfg.train.hidden));
    report.set("epochs", cfg.train.epochs);
    report.set_f64("learning_rate", cfg.train.learning_rate);
    report.set_f64("momentum", cfg.train.momentum);
    report.set("batch_frames", cfg.train.batch_frames);
    report.set_f64("consistency_weight", cfg.train.consistency_weight);
    report.set_f64("alpha", cfg.train.alpha);
    report.set_f64("coord_scale", cfg.train.coord_scale);
    report.set("steps", ts.step);
    report_val(&mut report, &map, &cfg.val_sequence, &val);
    report.set("checkpoint", checkpoint.display());
    let report_path = cfg.report_path("train.txt");
    report.save(&report_path)?;

    Ok(TrainSummary {
        checkpoint,
        report: report_path,
        frames: frame_count,
        steps: ts.step,
        val_miou: val.and_then(|v| v.miou),
    })
}

fn join_dims(dims: &[usize]) -> String {
    if dims.is_empty() {
        "none".to_string()
    } else {
        dims.iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

// ---------------------------------------------------------------------------
// pseudolabel

#[derive(Debug)]
pub struct PseudoSummary {
    pub labels_dir: PathBuf,
    pub report: PathBuf,
    pub candidates: u64,
    pub admitted: u64,
    pub accuracy: Option<f64>,
}

/// Second stage: runs the trained teacher over the training split and turns
/// confident predictions on unlabeled points into labels, merged with the
/// scribbles into a densified label set for distillation.
pub fn run_pseudolabel(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<PseudoSummary> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| pseudolabel_inner(cfg, checkpoint))
}

fn pseudolabel_inner(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<PseudoSummary> {
    let map = cfg.class_map()?;
    let classes = map.class_count();
    let default_ckpt = cfg.checkpoint_path(TRAIN_CHECKPOINT);
    let ckpt_path = checkpoint.unwrap_or(&default_ckpt);
    if !ckpt_path.is_file() {
        return Err(PipelineError::Missing {
            path: ckpt_path.to_path_buf(),
            hint: "run the train stage first or pass --checkpoint",
        });
    }
    let ts = load_checkpoint(ckpt_path)?;
    if ts.teacher.classes() != classes {
        return Err(config_err(format!(
            "checkpoint has {} classes, class_map \"{}\" has {}",
            ts.teacher.classes(),
            cfg.class_map,
            classes
        )));
    }
    let recipe = FeatureRecipe::for_input_dim(ts.teacher.input_dim(), cfg, classes)?;

    let require = RequiredLabels {
        scribbles: true,
        dense: false,
    };
    let frames = load_sequence(cfg, &cfg.train_sequence, require)?;
    let descriptors = match &recipe {
        FeatureRecipe::Raw => None,
        FeatureRecipe::WithDescriptors(plscfg) => Some(all_descriptors(&frames, plscfg)),
    };
    let preds = predict(&ts.teacher, &frames, descriptors.as_deref(), recipe.coord_scale(cfg))?;
    let masks: Vec<Vec<bool>> = frames
        .iter()
        .map(|f| f.scribbles.as_ref().expect("scribbles required").split_supervision().1)
        .collect();
    let inputs: Vec<crb::FrameInput<'_>> = frames
        .iter()
        .zip(&preds)
        .zip(&masks)
        .map(|((f, pred), unlabeled)| crb::FrameInput {
            cloud: &f.cloud,
            pred,
            unlabeled,
        })
        .collect();
    let candidates: u64 = masks
        .iter()
        .map(|m| m.iter().filter(|&&u| u).count() as u64)
        .sum();

    let strategy = cfg.strategy()?;
    let width = cfg.crb.global_width;
    // The range-balanced strategy decomposes into per-frame collection, a
    // global cut table, then per-frame solving; the first and last parts
    // parallelize with a frame-order merge, which matches the sequential
    // result exactly. The other strategies are cheap enough to run as-is.
    let (set, table) = match strategy {
        Strategy::Crb => {
            let stores: Vec<ConfidenceStore> = inputs
                .par_iter()
                .map(|f| crb::collect_frame(f.cloud, f.pred, f.unlabeled, cfg.crb.annuli, width))
                .collect::<scribbleseg_core::Result<_>>()?;
            let mut store = ConfidenceStore::new(classes, cfg.crb.annuli);
            for part in &stores {
                store.merge(part);
            }
            let table = crb::determine_thresholds(&store, cfg.crb.beta);
            let pseudo_frames: Vec<_> = inputs
                .par_iter()
                .map(|f| crb::solve_frame(f.cloud, f.pred, f.unlabeled, &table, width))
                .collect::<scribbleseg_core::Result<_>>()?;
            (PseudoSet { frames: pseudo_frames }, Some(table))
        }
        other => (
            crb::generate(other, &inputs, cfg.crb.beta, cfg.crb.annuli, width)?,
            None,
        ),
    };
    drop(inputs);

    let admitted = set.total() as u64;
    let mut admitted_per_class = vec![0u64; classes];
    for frame in &set.frames {
        for &(_, class) in frame.entries() {
            admitted_per_class[class as usize - 1] += 1;
        }
    }

    let accuracy = if frames.iter().all(|f| f.dense.is_some()) {
        let dense: Vec<LabelArray> = frames.iter().map(|f| f.dense.clone().unwrap()).collect();
        match eval::pseudo_accuracy(&set, &dense) {
            Ok(v) => Some(v),
            Err(CoreError::EmptyPseudoSet) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };

    let labels_dir = cfg.pseudo_labels_dir();
    fs::create_dir_all(&labels_dir).map_err(io_at(&labels_dir))?;
    frames
        .par_iter()
        .zip(&set.frames)
        .try_for_each(|(f, pseudo)| {
            let scribbles = f.scribbles.as_ref().expect("scribbles required");
            let merged = crb::merge_labels(scribbles, pseudo);
            write_labels(
                &labels_dir.join(format!("{}.label", f.files.stem)),
                &merged,
                &map,
            )
        })?;

    let mut report = Report::new("pseudo-labeling stage");
    report.set("checkpoint", ckpt_path.display());
    report.set("sequence", &cfg.train_sequence);
    report.set("frames", frames.len());
    report.set("strategy", &cfg.crb.strategy);
    report.set_f64("beta", cfg.crb.beta);
    report.set("annuli", cfg.crb.annuli);
    match width {
        Some(w) => report.set_f64("annulus_width", w),
        None => report.set("annulus_width", "per-frame"),
    }
    report.set("candidates", candidates);
    report.set("admitted", admitted);
    report.set_f64(
        "admitted_fraction",
        admitted as f64 / (candidates.max(1)) as f64,
    );
    report.set_opt_f64("accuracy_vs_dense", accuracy);
    report.set("labels_dir", labels_dir.display());
    for (i, n) in admitted_per_class.iter().enumerate() {
        let name = map.name(i as u16 + 1).unwrap_or("?");
        report.set(format!("admitted.{name}"), n);
    }
    if let Some(table) = &table {
        // Cuts in negative-log form: higher means stricter; `inf` marks a
        // (class, annulus) cell that saw no candidates and admits nothing.
        for class in 1..=classes as u16 {
            let name = map.name(class).unwrap_or("?");
            for annulus in 0..cfg.crb.annuli {
                let cut = table.neg_log_cut(class, annulus);
                if cut.is_finite() {
                    report.set_f64(format!("cut.{name}.r{annulus}"), cut);
                } else {
                    report.set(format!("cut.{name}.r{annulus}"), "inf");
                }
            }
        }
    }
    let report_path = cfg.report_path("pseudolabel.txt");
    report.save(&report_path)?;

    Ok(PseudoSummary {
        labels_dir,
        report: report_path,
        candidates,
        admitted,
        accuracy,
    })
}

// ---------------------------------------------------------------------------
// distill

/// Third stage: trains a fresh pair on the merged labels from raw geometry
/// alone, so the result needs no scribbles at inference time.
pub fn run_distill(cfg: &PipelineConfig, labels_dir: Option<&Path>) -> Result<TrainSummary> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| distill_inner(cfg, labels_dir))
}

fn distill_inner(cfg: &PipelineConfig, labels_dir: Option<&Path>) -> Result<TrainSummary> {
    let map = cfg.class_map()?;
    let classes = map.class_count();
    let default_dir = cfg.pseudo_labels_dir();
    let labels_dir = labels_dir.unwrap_or(&default_dir);
    if !labels_dir.is_dir() {
        return Err(PipelineError::Missing {
            path: labels_dir.to_path_buf(),
            hint: "run the pseudolabel stage first or pass --labels",
        });
    }

    let frames = load_sequence(cfg, &cfg.train_sequence, RequiredLabels::default())?;
    let merged: Vec<LabelArray> = frames
        .par_iter()
        .map(|f| {
            let path = labels_dir.join(format!("{}.label", f.files.stem));
            if !path.is_file() {
                return Err(PipelineError::UnpairedFrame {
                    stem: f.files.stem.clone(),
                    missing: path,
                });
            }
            let labels = read_labels(&path, &map)?;
            if labels.len() != f.cloud.len() {
                return Err(PipelineError::Decode {
                    path,
                    source: CoreError::LengthMismatch {
                        what: "merged labels",
                        got: labels.len(),
                        expected: f.cloud.len(),
                    },
                });
            }
            Ok(labels)
        })
        .collect::<Result<_>>()?;

    let frame_count = frames.len();
    let total_points: u64 = frames.iter().map(|f| f.cloud.len() as u64).sum();
    let labeled: u64 = merged.iter().map(|l| l.labeled_count() as u64).sum();

    let train_frames: Vec<TrainFrame> = frames
        .into_iter()
        .zip(merged)
        .map(|(f, labels)| TrainFrame {
            cloud: f.cloud,
            labels,
            pls: None,
        })
        .collect();

    let student = Mlp::new(4, &cfg.distill.hidden, classes, cfg.distill.seed);
    // The distilled model must stand on raw geometry alone; context
    // descriptors are built from scribbles, which deployment data lacks.
    assert_eq!(
        student.input_dim(),
        4,
        "distillation input must be exactly the four raw point features"
    );
    let ts = TeacherStudent::new(student, cfg.distill.alpha);
    let ts = train::train(&train_frames, ts, &cfg.distill_config(), &cfg.augment_config())?;
    drop(train_frames);

    let val = validate_teacher(cfg, &cfg.val_sequence, &ts.teacher, &FeatureRecipe::Raw)?;

    let checkpoint = cfg.checkpoint_path(DISTILL_CHECKPOINT);
    save_checkpoint(&checkpoint, &ts)?;

    let mut report = Report::new("distillation stage");
    report.set("sequence", &cfg.train_sequence);
    report.set("labels_dir", labels_dir.display());
    report.set("frames", frame_count);
    report.set("points", total_points);
    report.set("labeled_points", labeled);
    report.set_f64("labeled_fraction", labeled as f64 / total_points.max(1) as f64);
    report.set("classes", classes);
    report.set("input_dim", 4);
    report.set("hidden", join_dims(&cfg.distill.hidden));
    report.set("epochs", cfg.distill.epochs);
    report.set_f64("learning_rate", cfg.distill.learning_rate);
    report.set_f64("momentum", cfg.distill.momentum);
    report.set("batch_frames", cfg.distill.batch_frames);
    report.set_f64("consistency_weight", cfg.distill.consistency_weight);
    report.set_f64("alpha", cfg.distill.alpha);
    report.set_f64("coord_scale", cfg.distill.coord_scale);
    report.set("steps", ts.step);
    report_val(&mut report, &map, &cfg.val_sequence, &val);
    report.set("checkpoint", checkpoint.display());
    let report_path = cfg.report_path("distill.txt");
    report.save(&report_path)?;

    Ok(TrainSummary {
        checkpoint,
        report: report_path,
        frames: frame_count,
        steps: ts.step,
        val_miou: val.and_then(|v| v.miou),
    })
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug)]
pub struct EvalOptions {
    pub checkpoint: Option<PathBuf>,
    pub sequence: Option<String>,
    /// Reference mean IoU; when given, the report carries the score as a
    /// percentage of it.
    pub baseline: Option<f64>,
}

#[derive(Debug)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub sequence: String,
    pub frames: usize,
    pub points_scored: u64,
    pub miou: f64,
    pub per_class: Vec<(String, Option<f64>)>,
    pub relative: Option<f64>,
    pub report: PathBuf,
}

/// Scores a checkpoint's teacher against a labeled sequence. Defaults to
/// the distilled checkpoint if present, else the first-stage one.
pub fn run_eval(cfg: &PipelineConfig, opts: &EvalOptions) -> Result<EvalSummary> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| eval_inner(cfg, opts))
}

fn eval_inner(cfg: &PipelineConfig, opts: &EvalOptions) -> Result<EvalSummary> {
    let map = cfg.class_map()?;
    let classes = map.class_count();
    let ckpt_path = match &opts.checkpoint {
        Some(p) => p.clone(),
        None => {
            let distilled = cfg.checkpoint_path(DISTILL_CHECKPOINT);
            let first = cfg.checkpoint_path(TRAIN_CHECKPOINT);
            if distilled.is_file() {
                distilled
            } else if first.is_file() {
                first
            } else {
                return Err(PipelineError::Missing {
                    path: distilled,
                    hint: "run the pipeline first or pass --checkpoint",
                });
            }
        }
    };
    let ts = load_checkpoint(&ckpt_path)?;
    if ts.teacher.classes() != classes {
        return Err(config_err(format!(
            "checkpoint has {} classes, class_map \"{}\" has {}",
            ts.teacher.classes(),
            cfg.class_map,
            classes
        )));
    }
    let recipe = FeatureRecipe::for_input_dim(ts.teacher.input_dim(), cfg, classes)?;
    let sequence = opts.sequence.clone().unwrap_or_else(|| cfg.val_sequence.clone());

    let val = validate_teacher(cfg, &sequence, &ts.teacher, &recipe)?.ok_or_else(|| {
        PipelineError::MissingDirectory {
            path: sequence_dir(&cfg.data_root, &sequence),
        }
    })?;
    if val.points_scored == 0 {
        return Err(config_err(format!(
            "sequence {sequence} has no ground-truth labels to score against"
        )));
    }
    let miou = val.miou.expect("scored points imply at least one evaluable class");
    let relative = match opts.baseline {
        Some(b) => Some(eval::relative_performance(miou, b)?),
        None => None,
    };

    let mut report = Report::new("evaluation");
    report.set("checkpoint", ckpt_path.display());
    report.set("sequence", &sequence);
    report.set("frames", val.frames);
    report.set("points_scored", val.points_scored);
    report.set_f64("miou", miou);
    if let Some(b) = opts.baseline {
        report.set_f64("baseline_miou", b);
        report.set_opt_f64("relative_performance", relative);
    }
    report_per_class(&mut report, &map, &val.per_class);
    let report_path = cfg.report_path(&format!("eval_{sequence}.txt"));
    report.save(&report_path)?;

    let per_class = val
        .per_class
        .iter()
        .enumerate()
        .map(|(i, iou)| (map.name(i as u16 + 1).unwrap_or("?").to_string(), *iou))
        .collect();
    Ok(EvalSummary {
        checkpoint: ckpt_path,
        sequence,
        frames: val.frames,
        points_scored: val.points_scored,
        miou,
        per_class,
        relative,
        report: report_path,
    })
}

// ---------------------------------------------------------------------------
// stats

#[derive(Debug)]
pub struct StatsSummary {
    pub report: PathBuf,
    pub frames: usize,
    pub scribble_fraction: Option<f64>,
    pub dense_fraction: Option<f64>,
}

/// Summarizes a sequence: label counts per class for each label kind, the
/// labeled fractions, and how points spread over range annuli.
pub fn run_stats(cfg: &PipelineConfig, sequence: Option<&str>) -> Result<StatsSummary> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| stats_inner(cfg, sequence))
}

fn stats_inner(cfg: &PipelineConfig, sequence: Option<&str>) -> Result<StatsSummary> {
    let map = cfg.class_map()?;
    let classes = map.class_count();
    let sequence = sequence.unwrap_or(&cfg.train_sequence);
    let frames = load_sequence(cfg, sequence, RequiredLabels::default())?;

    let mut report = Report::new("sequence statistics");
    report.set("sequence", sequence);
    report.set("frames", frames.len());
    let total: u64 = frames.iter().map(|f| f.cloud.len() as u64).sum();
    report.set("points", total);

    // Range spread over all frames; labels are irrelevant to it, so missing
    // label kinds are substituted with empty arrays.
    let placeholders: Vec<LabelArray> = frames
        .iter()
        .map(|f| match &f.scribbles {
            Some(s) => s.clone(),
            None => LabelArray::unlabeled(f.cloud.len()),
        })
        .collect();
    let pairs: Vec<(&scribbleseg_core::PointCloud, &LabelArray)> = frames
        .iter()
        .zip(&placeholders)
        .map(|(f, l)| (&f.cloud, l))
        .collect();
    let range_stats = eval::distribution(&pairs, classes, Some(cfg.crb.annuli))?;
    if let Some(counts) = &range_stats.annulus_counts {
        for (i, n) in counts.iter().enumerate() {
            report.set(format!("range.r{i}"), n);
        }
    }

    let mut fractions = [None, None];
    type LabelGetter = fn(&LoadedFrame) -> Option<&LabelArray>;
    let kinds: [(&str, LabelGetter); 2] = [
        ("scribbles", |f| f.scribbles.as_ref()),
        ("dense", |f| f.dense.as_ref()),
    ];
    for (slot, (kind, get)) in fractions.iter_mut().zip(kinds) {
        let subset: Vec<(&scribbleseg_core::PointCloud, &LabelArray)> = frames
            .iter()
            .filter_map(|f| get(f).map(|l| (&f.cloud, l)))
            .collect();
        report.set(format!("{kind}.frames"), subset.len());
        if subset.is_empty() {
            continue;
        }
        let stats = eval::distribution(&subset, classes, None)?;
        report.set(format!("{kind}.points"), stats.total);
        report.set(format!("{kind}.labeled"), stats.labeled);
        report.set_f64(format!("{kind}.fraction"), stats.labeled_fraction());
        for (i, n) in stats.class_counts.iter().enumerate() {
            let name = map.name(i as u16 + 1).unwrap_or("?");
            report.set(format!("{kind}.count.{name}"), n);
        }
        *slot = Some(stats.labeled_fraction());
    }

    let report_path = cfg.report_path(&format!("stats_{sequence}.txt"));
    report.save(&report_path)?;
    Ok(StatsSummary {
        report: report_path,
        frames: frames.len(),
        scribble_fraction: fractions[0],
        dense_fraction: fractions[1],
    })
}

// ---------------------------------------------------------------------------
// descriptors

#[derive(Debug)]
pub struct DescriptorSummary {
    pub dir: PathBuf,
    pub frames: usize,
    pub dim: usize,
}

/// Dumps per-frame context descriptor matrices for inspection or for
/// feeding the features to outside tooling.
pub fn run_descriptors(cfg: &PipelineConfig, sequence: Option<&str>) -> Result<DescriptorSummary> {
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| descriptors_inner(cfg, sequence))
}

fn descriptors_inner(cfg: &PipelineConfig, sequence: Option<&str>) -> Result<DescriptorSummary> {
    let map = cfg.class_map()?;
    let sequence = sequence.unwrap_or(&cfg.train_sequence);
    let require = RequiredLabels {
        scribbles: true,
        dense: false,
    };
    let frames = load_sequence(cfg, sequence, require)?;
    let plscfg = cfg.pls_config(map.class_count());
    let dir = cfg
        .out_dir
        .join("descriptors")
        .join("sequences")
        .join(sequence);
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    frames.par_iter().try_for_each(|f| {
        let m = frame_descriptors(f, &plscfg);
        save_descriptors(&dir.join(format!("{}.pls", f.files.stem)), &m)
    })?;
    Ok(DescriptorSummary {
        dir,
        frames: frames.len(),
        dim: plscfg.descriptor_dim(),
    })
}
