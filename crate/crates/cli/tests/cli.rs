use std::path::Path;
use std::process::{Command, Output};

fn rcft(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcft"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RCFT_OUTPUT_ROOT")
        .output()
        .expect("spawn rcft")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen(dir: &Path) {
    ok(&rcft(
        &["gen-data", "--n", "40", "--seed", "3", "--out", "data", "--gross-errors", "5", "--corrected", "4"],
        dir,
    ));
}

#[test]
fn gen_data_writes_a_loadable_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let data = tmp.path().join("data");
    for f in ["manifest.csv", "qc_scores.csv", "corrections.csv"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let m = rcft_core::data::load_manifest(&data.join("manifest.csv")).unwrap();
    assert_eq!(m.records.len(), 40);
    assert_eq!(std::fs::read_dir(data.join("images")).unwrap().count(), 120);
}

#[test]
fn gen_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path());
    gen(b.path());
    for f in ["manifest.csv", "qc_scores.csv", "images/S0007_imm.png"] {
        assert_eq!(
            std::fs::read(a.path().join("data").join(f)).unwrap(),
            std::fs::read(b.path().join("data").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn qc_reports_and_writes_corrected_scores() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let stdout = ok(&rcft(
        &["qc", "--scores", "data/qc_scores.csv", "--corrections", "data/corrections.csv", "--out", "qc"],
        tmp.path(),
    ));
    assert!(stdout.contains("flagged: 5"), "{stdout}");
    assert!(stdout.contains("corrections applied: 4"), "{stdout}");
    let qc = tmp.path().join("qc");
    for f in ["qc_report.txt", "qc_summary.csv", "flags.csv", "audit.csv", "corrected_scores.csv"] {
        assert!(qc.join(f).is_file(), "{f} missing");
    }
    let flags = std::fs::read_to_string(qc.join("flags.csv")).unwrap();
    assert_eq!(flags.lines().count(), 6);
}

#[test]
fn qc_rejects_unknown_correction_ids_with_data_exit() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    std::fs::write(tmp.path().join("bad.csv"), "image_id,corrected_score,note\nZ9999_copy,10,typo\n").unwrap();
    let out = rcft(&["qc", "--scores", "data/qc_scores.csv", "--corrections", "bad.csv", "--out", "qc"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Z9999_copy"));
}

#[test]
fn train_then_score_an_external_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let stdout = ok(&rcft(
        &["train", "--manifest", "data/manifest.csv", "--out", "run", "--max-epochs", "2", "--lr", "0.01"],
        tmp.path(),
    ));
    assert!(stdout.contains("test AUC"));
    let run = tmp.path().join("run");
    for f in ["model.ckpt", "history.csv", "test_predictions.csv", "test_metrics.csv", "resolved_config.toml"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let resolved = std::fs::read_to_string(run.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("max_epochs = 2"), "{resolved}");

    ok(&rcft(&["preprocess", "--manifest", "data/manifest.csv", "--out", "pre"], tmp.path()));
    let before = std::fs::read(run.join("model.ckpt")).unwrap();
    ok(&rcft(
        &["eval", "--external-manifest", "pre/manifest.csv", "--checkpoint", "run/model.ckpt", "--out", "ext"],
        tmp.path(),
    ));
    let ext = tmp.path().join("ext");
    assert!(ext.join("external_metrics.csv").is_file());
    assert!(ext.join("external_predictions.csv").is_file());
    let ckpts = std::fs::read_dir(&ext)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ckpt"))
        .count();
    assert_eq!(ckpts, 0, "external evaluation must not write checkpoints");
    assert_eq!(std::fs::read(run.join("model.ckpt")).unwrap(), before);
}

#[test]
fn eval_writes_suite_and_honours_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    let root = tmp.path().join("root");
    let manifest = tmp.path().join("data/manifest.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_rcft"))
        .args(["eval", "--manifest", manifest.to_str().unwrap(), "--out", "ev", "--max-epochs", "1", "--repeats", "2", "--baselines"])
        .env("RCFT_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert!(stdout.contains("Input modality"));
    assert!(stdout.contains("Multi-stream"));
    let ev = root.join("ev");
    for f in [
        "table.txt",
        "group_summary.txt",
        "multi_stream_repeats.csv",
        "multi_stream_summary.csv",
        "multi_stream_roc_median.csv",
        "multi_stream_median.ckpt",
        "ai_scores_repeats.csv",
        "resolved_config.toml",
    ] {
        assert!(ev.join(f).is_file(), "{f} missing");
    }
    let repeats = std::fs::read_to_string(ev.join("multi_stream_repeats.csv")).unwrap();
    assert_eq!(repeats.lines().count(), 3);
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path());
    // missing input file: data class
    let out = rcft(&["train", "--manifest", "missing.csv", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    // invalid configuration value
    let out = rcft(&["train", "--manifest", "data/manifest.csv", "--out", "x", "--lr=-1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(tmp.path().join("bad.toml"), "seed = 1\nnot_a_key = 3\n").unwrap();
    let out = rcft(&["train", "--manifest", "data/manifest.csv", "--out", "x", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    // usage error
    let out = rcft(&["train"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    // malformed manifest
    std::fs::write(tmp.path().join("broken.csv"), "subject_id,age\nS1,70\n").unwrap();
    let out = rcft(&["train", "--manifest", "broken.csv", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}
