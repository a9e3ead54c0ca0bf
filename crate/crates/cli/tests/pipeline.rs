//! End-to-end runs of the `vld` binary: the full pipeline on a tiny
//! world, exit-code conventions, and rerun determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vld() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vld"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning vld");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tiny_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let path = dir.join("run.json");
    let doc = format!(
        r#"{{
  "seed": {seed},
  "world": {{
    "classes": 4, "d_raw": 12, "d_visual": 10, "d": 8, "d_text": 10,
    "hidden": 16, "noise_sigma_image": 0.15, "noise_sigma_text": 0.15,
    "grounded_fraction": 0.5
  }},
  "corpus": {{ "n_images": 48, "n_captions": 48, "n_nlp_pool": 96, "progress_floor": 0.9 }},
  "train": {{
    "epochs": 4, "batch_image": 16, "batch_text": 16, "warmup_epochs": 1,
    "student_hidden": [24], "student_d_visual": 12, "student_d_hat": 8
  }},
  "eval": {{
    "train_per_class": 12, "test_per_class": 12, "prompts_per_class": 2,
    "image_sigma": 0.1, "prompt_sigma": 0.05,
    "l2_grid": [0.001, 0.1], "shift_sigmas": [0.0, 0.2]
  }}
}}
"#
    );
    fs::write(&path, doc).unwrap();
    path
}

#[test]
fn full_pipeline_produces_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 7);
    let world_dir = tmp.path().join("world");
    let corpus_dir = tmp.path().join("corpus");
    let run_dir = tmp.path().join("run");

    run_ok(vld().args(["gen-world", "--config"]).arg(&cfg).arg("--out").arg(&world_dir));
    for name in [
        "world.json",
        "images.json",
        "captions.json",
        "pool.json",
        "labels.json",
        "images_raw.dfem",
        "images_teacher.dfem",
        "captions_raw.dfem",
        "captions_teacher.dfem",
        "pool_raw.dfem",
        "pool_teacher.dfem",
    ] {
        assert!(world_dir.join(name).exists(), "missing {name}");
    }

    run_ok(
        vld()
            .args(["build-corpus", "--config"])
            .arg(&cfg)
            .arg("--world-dir")
            .arg(&world_dir)
            .arg("--out")
            .arg(&corpus_dir)
            .args(["--reduce-k", "24", "--task-aware"]),
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(corpus_dir.join("selected.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["kind"], "text");
    assert!(manifest["size"].as_u64().unwrap() >= 24);
    assert!(manifest["provenance"]
        .as_str()
        .unwrap()
        .contains("k-means reduced to 24"));

    run_ok(
        vld()
            .args(["distill", "--config"])
            .arg(&cfg)
            .arg("--world-dir")
            .arg(&world_dir)
            .arg("--text-corpus")
            .arg(corpus_dir.join("selected.json"))
            .arg("--out")
            .arg(&run_dir),
    );
    assert!(run_dir.join("final.dfck").exists());
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("loss_log.json")).unwrap()).unwrap();
    assert_eq!(log.as_array().unwrap().len(), 12, "4 epochs x 3 steps");

    // Teacher and student reports across all three modes.
    for (mode, with_ckpt) in [
        ("--zero-shot", false),
        ("--zero-shot", true),
        ("--linear-probe", true),
        ("--robustness", true),
    ] {
        let mut cmd = vld();
        cmd.args(["eval", "--config"])
            .arg(&cfg)
            .arg("--world-dir")
            .arg(&world_dir)
            .arg(mode);
        if with_ckpt {
            cmd.arg("--checkpoint").arg(run_dir.join("final.dfck"));
        }
        let out = run_ok(&mut cmd);
        let report: serde_json::Value =
            serde_json::from_slice(&out.stdout).expect("report is JSON");
        let acc = report["report"]["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(
            report["path"],
            if with_ckpt { "student" } else { "teacher" }
        );
    }

    // Diagnostics between the image corpus and the selected texts.
    let out = run_ok(
        vld()
            .args(["diagnose", "--mmd", "--a"])
            .arg(world_dir.join("images_teacher.dfem"))
            .arg("--b")
            .arg(corpus_dir.join("selected.dfem")),
    );
    let diag: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(diag["mmd"]["linear"].is_number());
    assert!(diag["mmd"]["rbf"].is_number());

    // Manifest arguments resolve to the same stores, so the report matches.
    let out = run_ok(
        vld()
            .args(["diagnose", "--mmd", "--a"])
            .arg(world_dir.join("images.json"))
            .arg("--b")
            .arg(corpus_dir.join("selected.json")),
    );
    let via_manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(diag, via_manifest);
}

#[test]
fn identical_seeds_reproduce_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 21);

    let mut digests = Vec::new();
    for tag in ["a", "b"] {
        let world_dir = tmp.path().join(format!("world_{tag}"));
        let run_dir = tmp.path().join(format!("run_{tag}"));
        run_ok(vld().args(["gen-world", "--config"]).arg(&cfg).arg("--out").arg(&world_dir));
        run_ok(
            vld()
                .args(["distill", "--config"])
                .arg(&cfg)
                .arg("--world-dir")
                .arg(&world_dir)
                .arg("--out")
                .arg(&run_dir),
        );
        let report = run_ok(
            vld()
                .args(["eval", "--config"])
                .arg(&cfg)
                .arg("--world-dir")
                .arg(&world_dir)
                .arg("--checkpoint")
                .arg(run_dir.join("final.dfck"))
                .arg("--zero-shot"),
        );
        digests.push((
            fs::read(world_dir.join("images_teacher.dfem")).unwrap(),
            fs::read(run_dir.join("final.dfck")).unwrap(),
            report.stdout,
        ));
    }
    assert_eq!(digests[0].0, digests[1].0, "stores differ across reruns");
    assert_eq!(digests[0].1, digests[1].1, "checkpoints differ across reruns");
    assert_eq!(digests[0].2, digests[1].2, "reports differ across reruns");
}

#[test]
fn exit_codes_follow_the_contract() {
    // Unknown subcommand: usage error, exit 2.
    let out = vld().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Help: exit 0 with usage text.
    let out = vld().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));

    // Eval without a mode flag: usage error.
    let out = vld().args(["eval", "--config", "x", "--world-dir", "y"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing store at runtime: exit 1 with a one-line diagnostic.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 3);
    let world_dir = tmp.path().join("world");
    let out = vld()
        .args(["gen-world", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&world_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = vld()
        .args(["distill", "--config"])
        .arg(&cfg)
        .arg("--world-dir")
        .arg(&world_dir)
        .arg("--text-corpus")
        .arg(world_dir.join("nonexistent.json"))
        .arg("--out")
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "stderr was: {stderr}");

    // Bad config key: runtime error, named offender.
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "unknown_section": {}}"#).unwrap();
    let out = vld()
        .args(["gen-world", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("w2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_section"));
}

#[test]
fn embed_reproduces_the_stored_teacher_embeddings() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 11);
    let world_dir = tmp.path().join("world");
    run_ok(vld().args(["gen-world", "--config"]).arg(&cfg).arg("--out").arg(&world_dir));

    // Re-embedding the raw images must reproduce the teacher store
    // byte for byte; same for the text path on the pool.
    for (raw, teacher, texts) in [
        ("images_raw.dfem", "images_teacher.dfem", false),
        ("pool_raw.dfem", "pool_teacher.dfem", true),
    ] {
        let out_path = tmp.path().join(format!("re_{teacher}"));
        let mut cmd = vld();
        cmd.args(["embed", "--world"])
            .arg(&world_dir)
            .arg("--input")
            .arg(world_dir.join(raw))
            .arg("--out")
            .arg(&out_path);
        if texts {
            cmd.arg("--texts");
        }
        run_ok(&mut cmd);
        assert_eq!(
            fs::read(&out_path).unwrap(),
            fs::read(world_dir.join(teacher)).unwrap(),
            "{teacher} not reproduced"
        );
    }
}

#[test]
fn commands_do_not_mutate_their_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 5);
    let world_dir = tmp.path().join("world");
    run_ok(vld().args(["gen-world", "--config"]).arg(&cfg).arg("--out").arg(&world_dir));

    let snapshot: Vec<(String, Vec<u8>)> = fs::read_dir(&world_dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();

    run_ok(
        vld()
            .args(["build-corpus", "--config"])
            .arg(&cfg)
            .arg("--world-dir")
            .arg(&world_dir)
            .arg("--out")
            .arg(tmp.path().join("corpus")),
    );
    run_ok(
        vld()
            .args(["distill", "--config"])
            .arg(&cfg)
            .arg("--world-dir")
            .arg(&world_dir)
            .arg("--out")
            .arg(tmp.path().join("run")),
    );

    for (path, bytes) in snapshot {
        assert_eq!(fs::read(&path).unwrap(), bytes, "{path} was mutated");
    }
}
