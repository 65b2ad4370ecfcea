//! Integration coverage for the pipeline as users drive it: the compiled
//! binary end to end, explicit checkpoint/label-path handoffs between
//! stages, default resolution rules, and the error story when artifacts are
//! missing or damaged.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scribbleseg::config::PipelineConfig;
use scribbleseg::descriptors::load_descriptors;
use scribbleseg::report::Report;
use scribbleseg::stages::{
    self, EvalOptions, DISTILL_CHECKPOINT, TRAIN_CHECKPOINT,
};
use scribbleseg_core::eval::relative_performance;

/// Small but complete configuration: four classes, five frames, one
/// descriptor level, a few epochs — every stage exercises its real code
/// path in well under a second.
fn tiny_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        data_root: root.join("data"),
        out_dir: root.join("out"),
        class_map: "identity:4".into(),
        seed: 5,
        threads: 1,
        ..PipelineConfig::default()
    };
    cfg.synth.classes = 4;
    cfg.synth.points_per_frame = 500;
    cfg.synth.train_frames = 3;
    cfg.synth.val_frames = 2;
    cfg.pls.levels = vec![(2, 3)];
    cfg.train.epochs = 4;
    cfg.train.hidden = vec![8, 6];
    cfg.distill.epochs = 4;
    cfg.distill.hidden = vec![8, 6];
    cfg.validate().expect("the tiny config must be valid");
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scribbleseg"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary should launch");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary should launch");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn write_config(cfg: &PipelineConfig, dir: &Path) -> PathBuf {
    let path = dir.join("pipeline.json");
    fs::write(&path, cfg.to_pretty_json()).unwrap();
    path
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("read_dir {}: {e}", dir.display()))
        .filter(|e| {
            e.as_ref().unwrap().path().extension().and_then(|x| x.to_str()) == Some(ext)
        })
        .count()
}

// ---------------------------------------------------------------------------
// the binary, end to end

#[test]
fn cli_runs_every_stage_and_leaves_the_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let config = write_config(&cfg, tmp.path());
    let with_config = |sub: &[&str]| {
        let mut c = bin();
        c.arg("--config").arg(&config).args(sub);
        c
    };

    let out = run_ok(&mut with_config(&["synth"]));
    assert!(out.contains("3 train + 2 val frames"), "stdout: {out}");
    for seq in ["00", "01"] {
        for kind in ["velodyne", "scribbles", "labels"] {
            let dir = cfg.data_root.join("sequences").join(seq).join(kind);
            let n = if seq == "00" { 3 } else { 2 };
            let ext = if kind == "velodyne" { "bin" } else { "label" };
            assert_eq!(count_files(&dir, ext), n, "{}", dir.display());
        }
    }
    assert!(cfg.data_root.join("manifest.txt").is_file());

    let out = run_ok(&mut with_config(&["train"]));
    assert!(out.contains("12 optimizer steps"), "stdout: {out}");
    assert!(cfg.checkpoint_path(TRAIN_CHECKPOINT).is_file());

    let out = run_ok(&mut with_config(&["pseudolabel"]));
    assert!(out.contains("admitted"), "stdout: {out}");
    assert_eq!(count_files(&cfg.pseudo_labels_dir(), "label"), 3);

    run_ok(&mut with_config(&["distill"]));
    assert!(cfg.checkpoint_path(DISTILL_CHECKPOINT).is_file());

    let out = run_ok(&mut with_config(&["eval", "--baseline", "0.5"]));
    assert!(out.contains("% of baseline"), "stdout: {out}");
    assert!(cfg.report_path("eval_01.txt").is_file());

    run_ok(&mut with_config(&["stats"]));
    assert!(cfg.report_path("stats_00.txt").is_file());

    let out = run_ok(&mut with_config(&["descriptors"]));
    assert!(out.contains("4 values per point"), "stdout: {out}");
    let dumps = cfg.out_dir.join("descriptors").join("sequences").join("00");
    assert_eq!(count_files(&dumps, "pls"), 3);

    for name in ["train.txt", "pseudolabel.txt", "distill.txt"] {
        assert!(cfg.report_path(name).is_file(), "missing report {name}");
    }
}

#[test]
fn cli_config_output_reloads_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let first = run_ok(bin().args(["config", "--seed", "123"]).arg("--out").arg("elsewhere"));
    serde_json::from_str::<serde_json::Value>(&first).expect("config output must be JSON");
    assert!(first.contains("\"seed\": 123"));

    let saved = tmp.path().join("echoed.json");
    fs::write(&saved, &first).unwrap();
    let second = run_ok(bin().arg("--config").arg(&saved).arg("config"));
    assert_eq!(first, second, "reloading the dump must print the same bytes");
}

#[test]
fn cli_flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.seed = 7;
    let config = write_config(&cfg, tmp.path());
    let out = run_ok(bin().arg("--config").arg(&config).args(["--seed", "11", "config"]));
    assert!(out.contains("\"seed\": 11"), "stdout: {out}");
}

#[test]
fn cli_failures_exit_nonzero_with_a_category_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_err(
        bin()
            .arg("--data-root")
            .arg(tmp.path().join("nowhere"))
            .arg("--out")
            .arg(tmp.path().join("out"))
            .arg("train"),
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error["), "stderr: {stderr}");
    assert!(stderr.contains("nowhere"), "stderr: {stderr}");
}

#[test]
fn cli_rejects_out_of_range_config_values() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.crb.beta = 1.5;
    let path = tmp.path().join("bad.json");
    fs::write(&path, cfg.to_pretty_json()).unwrap();
    let out = run_err(bin().arg("--config").arg(&path).arg("synth"));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("crb.beta"), "stderr: {stderr}");
}

// ---------------------------------------------------------------------------
// stage handoffs through explicit paths

#[test]
fn explicit_checkpoint_path_reproduces_the_default_pseudolabel_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    stages::run_train(&cfg).unwrap();
    let default_run = stages::run_pseudolabel(&cfg, None).unwrap();
    let label_bytes = |dir: &Path| -> Vec<Vec<u8>> {
        (0..3)
            .map(|i| fs::read(dir.join(format!("{i:06}.label"))).unwrap())
            .collect()
    };
    let reference = label_bytes(&default_run.labels_dir);

    let moved = tmp.path().join("elsewhere.ckpt");
    fs::copy(cfg.checkpoint_path(TRAIN_CHECKPOINT), &moved).unwrap();
    fs::remove_dir_all(&default_run.labels_dir).unwrap();
    let explicit = stages::run_pseudolabel(&cfg, Some(&moved)).unwrap();

    assert_eq!(explicit.admitted, default_run.admitted);
    assert_eq!(explicit.accuracy, default_run.accuracy);
    assert_eq!(label_bytes(&explicit.labels_dir), reference);
}

#[test]
fn distill_accepts_a_relocated_labels_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    stages::run_train(&cfg).unwrap();
    stages::run_pseudolabel(&cfg, None).unwrap();
    let default_run = stages::run_distill(&cfg, None).unwrap();
    let reference = fs::read(&default_run.checkpoint).unwrap();

    let moved = tmp.path().join("merged-labels");
    fs::rename(cfg.pseudo_labels_dir(), &moved).unwrap();
    fs::remove_file(&default_run.checkpoint).unwrap();
    let explicit = stages::run_distill(&cfg, Some(&moved)).unwrap();

    assert_eq!(explicit.val_miou, default_run.val_miou);
    assert_eq!(
        fs::read(&explicit.checkpoint).unwrap(),
        reference,
        "the relocated labels must produce the same model bit for bit"
    );
}

#[test]
fn eval_prefers_the_distilled_checkpoint_and_falls_back_to_the_teacher() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    stages::run_train(&cfg).unwrap();
    let no_ckpt = EvalOptions {
        checkpoint: None,
        sequence: None,
        baseline: None,
    };

    // Only the first-stage checkpoint exists: score that one.
    let fallback = stages::run_eval(&cfg, &no_ckpt).unwrap();
    assert_eq!(fallback.checkpoint, cfg.checkpoint_path(TRAIN_CHECKPOINT));
    assert_eq!(fallback.sequence, "01");
    assert_eq!(fallback.relative, None);

    stages::run_pseudolabel(&cfg, None).unwrap();
    stages::run_distill(&cfg, None).unwrap();
    let preferred = stages::run_eval(&cfg, &no_ckpt).unwrap();
    assert_eq!(preferred.checkpoint, cfg.checkpoint_path(DISTILL_CHECKPOINT));

    // An explicit checkpoint always wins, and a baseline turns into the
    // relative score.
    let explicit = stages::run_eval(
        &cfg,
        &EvalOptions {
            checkpoint: Some(cfg.checkpoint_path(TRAIN_CHECKPOINT)),
            sequence: Some("00".into()),
            baseline: Some(0.5),
        },
    )
    .unwrap();
    assert_eq!(explicit.checkpoint, cfg.checkpoint_path(TRAIN_CHECKPOINT));
    assert_eq!(explicit.sequence, "00");
    assert_eq!(explicit.frames, 3);
    assert_eq!(
        explicit.relative,
        Some(relative_performance(explicit.miou, 0.5).unwrap())
    );
    assert!(cfg.report_path("eval_00.txt").is_file());
}

// ---------------------------------------------------------------------------
// failure modes

#[test]
fn missing_prerequisites_point_to_the_stage_that_makes_them() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();

    let e = stages::run_pseudolabel(&cfg, None).unwrap_err();
    assert!(e.to_string().contains("train stage"), "got: {e}");
    let e = stages::run_distill(&cfg, None).unwrap_err();
    assert!(e.to_string().contains("pseudolabel stage"), "got: {e}");
    let e = stages::run_eval(
        &cfg,
        &EvalOptions {
            checkpoint: None,
            sequence: None,
            baseline: None,
        },
    )
    .unwrap_err();
    assert!(e.to_string().contains("--checkpoint"), "got: {e}");
}

#[test]
fn checkpoint_with_a_different_class_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    stages::run_train(&cfg).unwrap();

    let mut five = cfg.clone();
    five.class_map = "identity:5".into();
    let e = stages::run_pseudolabel(&five, None).unwrap_err();
    let msg = e.to_string();
    assert!(
        msg.contains("4 classes") && msg.contains("identity:5"),
        "got: {msg}"
    );
}

#[test]
fn damaged_frame_files_name_the_culprit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    let seq = cfg.data_root.join("sequences").join("00");

    // A scribble file vanishes: the scan reports the unpaired frame.
    let gone = seq.join("scribbles").join("000001.label");
    let saved = fs::read(&gone).unwrap();
    fs::remove_file(&gone).unwrap();
    let e = stages::run_train(&cfg).unwrap_err();
    assert!(e.to_string().contains("000001"), "got: {e}");
    fs::write(&gone, &saved).unwrap();

    // A label file shorter than its cloud: length mismatch with the path.
    let short = seq.join("scribbles").join("000000.label");
    let original = fs::read(&short).unwrap();
    fs::write(&short, [0u8; 8]).unwrap();
    let e = stages::run_train(&cfg).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("000000"), "got: {msg}");
    fs::write(&short, &original).unwrap();

    // A truncated point file: rejected at decode, not misparsed.
    let bin = seq.join("velodyne").join("000002.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..10]).unwrap();
    let e = stages::run_stats(&cfg, None).unwrap_err();
    assert!(e.to_string().contains("000002"), "got: {e}");
}

// ---------------------------------------------------------------------------
// reports and dumps

#[test]
fn reports_carry_the_run_parameters_in_parseable_form() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    let train = stages::run_train(&cfg).unwrap();
    let pseudo = stages::run_pseudolabel(&cfg, None).unwrap();

    let get = |path: &Path, key: &str| -> String {
        let text = fs::read_to_string(path).unwrap();
        Report::parse(&text)
            .into_iter()
            .find(|(k, _)| k == key)
            .unwrap_or_else(|| panic!("{} lacks key {key}", path.display()))
            .1
    };

    // One descriptor level over four classes on top of four raw features.
    assert_eq!(get(&train.report, "input_dim"), "8");
    assert_eq!(get(&train.report, "classes"), "4");
    assert_eq!(get(&train.report, "sequence"), "00");
    assert_eq!(get(&train.report, "epochs"), "4");

    assert_eq!(get(&pseudo.report, "beta"), "0.500000");
    let candidates: u64 = get(&pseudo.report, "candidates").parse().unwrap();
    let admitted: u64 = get(&pseudo.report, "admitted").parse().unwrap();
    assert_eq!(candidates, pseudo.candidates);
    assert_eq!(admitted, pseudo.admitted);
    assert!(admitted <= candidates);

    // Reports must be reproducible byte for byte, so nothing time-dependent
    // may sneak into them.
    let text = fs::read_to_string(&train.report).unwrap();
    for word in ["time", "date", "duration", "elapsed"] {
        assert!(
            !text.to_lowercase().contains(word),
            "report embeds a {word} value:\n{text}"
        );
    }
}

#[test]
fn descriptor_dumps_reload_with_the_declared_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    let summary = stages::run_descriptors(&cfg, None).unwrap();
    assert_eq!(summary.frames, 3);
    assert_eq!(summary.dim, 4);
    for i in 0..3 {
        let m = load_descriptors(&summary.dir.join(format!("{i:06}.pls"))).unwrap();
        assert_eq!(m.dim(), 4);
        assert_eq!(m.rows(), 500);
        assert!(
            m.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
            "descriptor values must be normalized histogram heights"
        );
    }
}

#[test]
fn stats_defaults_to_the_training_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    stages::run_synth(&cfg).unwrap();
    let implicit = stages::run_stats(&cfg, None).unwrap();
    let explicit = stages::run_stats(&cfg, Some("00")).unwrap();
    assert_eq!(implicit.report, explicit.report);
    assert_eq!(
        fs::read(&implicit.report).unwrap(),
        fs::read(&explicit.report).unwrap()
    );
    assert_eq!(implicit.frames, 3);
    assert!(implicit.scribble_fraction.unwrap() > 0.0);
    assert!(implicit.dense_fraction.unwrap() > 0.99);
}
