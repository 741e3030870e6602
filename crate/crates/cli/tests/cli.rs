//! End-to-end tests of the `semcomm` binary: exit codes, artifact files,
//! CSV schemas and determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semcomm"))
}

fn tiny_config(out_dir: &Path) -> String {
    format!(
        r#"{{
  "seed": 42,
  "model": {{
    "width": 16,
    "compressed_width": 4,
    "encoder_layers": 1,
    "fusion_layers": 2,
    "encoder_heads": 4,
    "image": {{"channels": 1, "height": 8, "width": 8}},
    "text": {{"vocab": 8, "seq_len": 4, "segments": 2}}
  }},
  "tasks": [
    {{
      "name": "img_class",
      "modalities": ["image"],
      "head": "class_vec",
      "loss": "cross_entropy",
      "metric": "accuracy",
      "classes": 4,
      "lr": 0.001,
      "dataset": {{
        "kind": "img_class", "size": 40, "seed": 11,
        "image": {{"channels": 1, "height": 8, "width": 8}},
        "text_len": 4, "vocab": 8
      }}
    }},
    {{
      "name": "mm_xor",
      "modalities": ["image", "text"],
      "head": "class_vec",
      "loss": "cross_entropy",
      "metric": "accuracy",
      "classes": 2,
      "lr": 0.001,
      "dataset": {{
        "kind": "mm_xor", "size": 40, "seed": 7,
        "image": {{"channels": 1, "height": 8, "width": 8}},
        "text_len": 4, "vocab": 8
      }}
    }}
  ],
  "train": {{"steps": 2, "batch_size": 8, "train_fraction": 0.8}},
  "eval": {{"snrs": [-6.0, 0.0, 6.0, 12.0, 18.0], "kinds": ["awgn", "rayleigh"]}},
  "out_dir": "{}"
}}"#,
        out_dir.display()
    )
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawning semcomm")
}

#[test]
fn unknown_command_is_usage_error() {
    let out = run(bin().arg("frobnicate"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn invalid_geometry_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    // Video tube extent that does not divide the video extent.
    let cfg = tiny_config(dir.path())
        .replace(r#""width": 16,"#, r#""width": 16, "video": {"frames": 8, "channels": 3, "height": 16, "width": 16, "tube_frames": 3, "tube_height": 8, "tube_width": 8},"#);
    std::fs::write(&cfg_path, cfg).unwrap();
    let out = run(bin().args(["overhead", "--config"]).arg(&cfg_path));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_cardinality_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(dir.path())).unwrap();

    let out = run(bin().args(["train", "--config"]).arg(&cfg_path));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("checkpoint.bin").exists());
    assert!(dir.path().join("train_log.csv").exists());

    // 2 tasks x 2 channels x 5 SNRs -> 20 rows + header.
    let out = run(bin().args(["eval", "--config"]).arg(&cfg_path));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv1 = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv1.lines().count(), 21);
    assert_eq!(csv1.lines().next().unwrap(), "task,channel,snr_db,metric_name,value,seed");

    // Re-running eval is byte-identical.
    run(bin().args(["eval", "--config"]).arg(&cfg_path));
    let csv2 = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv1, csv2);

    // Rows are ordered task, channel, snr ascending.
    let snrs: Vec<&str> = csv1
        .lines()
        .skip(1)
        .take(5)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(snrs, ["-6", "0", "6", "12", "18"]);
}

#[test]
fn seed_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(dir.path())).unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&cfg_path).env("SEMCOMM_SEED", "7"));
    assert!(out.status.success());
    let out = run(bin().args(["eval", "--config"]).arg(&cfg_path).env("SEMCOMM_SEED", "7"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",7"), "{csv}");
}

#[test]
fn checkpoint_config_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(dir.path())).unwrap();
    assert!(run(bin().args(["train", "--config"]).arg(&cfg_path)).status.success());

    // Same checkpoint, different compressed width -> version error, exit 1.
    let other = tiny_config(dir.path()).replace(r#""compressed_width": 4"#, r#""compressed_width": 8"#);
    let other_path = dir.path().join("other.json");
    std::fs::write(&other_path, other).unwrap();
    let out = run(bin().args(["eval", "--config"]).arg(&other_path));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn overhead_reports_exact_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(dir.path())).unwrap();
    let out = run(bin().args(["overhead", "--config"]).arg(&cfg_path));
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("overhead.csv")).unwrap();
    let xor_line = csv.lines().find(|l| l.starts_with("mm_xor")).unwrap();
    // L_image = 4 (8x8 -> 2x2 map), L_text = 4, task row -> 9 unfused rows.
    let cols: Vec<&str> = xor_line.split(',').collect();
    assert_eq!(cols[1], "1"); // fused rows
    assert_eq!(cols[2], "9"); // unfused rows
    assert_eq!(cols[5], "16"); // 1 * 4 * 32 / 8
    assert_eq!(cols[6], "144"); // 9 * 4 * 32 / 8
    assert_eq!(cols[7], "0.111111"); // 1/9
}

#[test]
fn gen_data_containers_import_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config(dir.path())).unwrap();
    let out = run(bin().args(["gen-data", "--config"]).arg(&cfg_path));
    assert!(out.status.success());
    let bytes = std::fs::read(dir.path().join("mm_xor.dataset.bin")).unwrap();
    let (kind, samples) = semcomm_core::data::import_container(&bytes).unwrap();
    assert_eq!(kind, semcomm_core::data::DatasetKind::MmXor);
    assert_eq!(samples.len(), 40);
    assert!(samples[0].image.is_some() && samples[0].tokens.is_some());
}
