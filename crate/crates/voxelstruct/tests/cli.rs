//! End-to-end behavior of the `voxelstruct` binary: file outputs, exit
//! codes, and byte-level determinism of reruns.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voxelstruct"))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn write_tiny_config(path: &Path, dim: usize, epochs: usize) {
    let config = serde_json::json!({
        "seed": 5,
        "net": { "grid_dim": dim, "latent_dim": 8,
                 "encoder_channels": [4, 8, 16],
                 "detector_channels": [4, 8, 16],
                 "detector_kernels": [5, 3, 3],
                 "detector_fc": [32, 16] },
        "train": {
            "vae": { "lr": 3e-4, "batch": 8, "epochs": epochs },
            "detector": { "lr": 1e-4, "batch": 8, "epochs": epochs },
            "stage1": { "gen_lr": 1e-3, "batch": 8, "iters": 2,
                        "finetune_lr": 1e-3, "finetune_batches": [4], "finetune_iters": 1 },
            "stage2": { "lr": 1e-4, "batch": 8, "epochs": 1 },
            "detector_collab_batch": 8
        }
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

fn gen_data(dir: &Path, count: usize, dim: usize, seed: u64, extra: &[&str]) {
    let status = bin()
        .args([
            "gen-data",
            "--out",
            dir.to_str().unwrap(),
            "--count",
            &count.to_string(),
            "--dim",
            &dim.to_string(),
            "--seed",
            &seed.to_string(),
        ])
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn gen_data_writes_dataset_and_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("a");
    let d2 = tmp.path().join("b");
    gen_data(&d1, 10, 16, 3, &[]);
    gen_data(&d2, 10, 16, 3, &[]);

    // 10 VOXB1 shapes, 10 landmark files, one manifest.
    let names: Vec<String> = dir_bytes(&d1).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".vox")).count(), 10);
    assert_eq!(
        names.iter().filter(|n| n.ends_with(".landmarks.json")).count(),
        10
    );
    assert!(names.contains(&"manifest.json".to_string()));
    let magic = std::fs::read(d1.join("sample_00000.vox")).unwrap();
    assert_eq!(&magic[..5], b"VOXB1");

    assert_eq!(dir_bytes(&d1), dir_bytes(&d2), "rerun must be byte-identical");
}

#[test]
fn gen_data_annotated_frac_zero_marks_nothing_annotated() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    gen_data(&dir, 10, 16, 1, &["--annotated-frac", "0"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let annotated = manifest["samples"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["annotated"].as_bool().unwrap())
        .count();
    assert_eq!(annotated, 0);
}

#[test]
fn train_vae_writes_checkpoint_log_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 12, 16, 2, &[]);
    let config = tmp.path().join("config.json");
    write_tiny_config(&config, 16, 2);
    let out = tmp.path().join("run");
    let output = bin()
        .args([
            "train",
            "--mode",
            "vae",
            "--data",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(out.join("model_final.ckpt").exists());
    assert!(out.join("config.json").exists());
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with(
        "step,stage,l_rec,l_kl,l_struct_c,l_struct_r,l_consist,total,grad_norm,wall_ms"
    ));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("parameters:"), "param count must be printed");
}

#[test]
fn detector_mode_without_annotations_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 10, 16, 1, &["--annotated-frac", "0"]);
    let config = tmp.path().join("config.json");
    write_tiny_config(&config, 16, 1);
    let out = bin()
        .args([
            "train",
            "--mode",
            "detector",
            "--data",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn joint_mode_without_init_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 10, 16, 1, &[]);
    let config = tmp.path().join("config.json");
    write_tiny_config(&config, 16, 1);
    let out = bin()
        .args([
            "train",
            "--mode",
            "joint",
            "--data",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 10, 16, 1, &[]);
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"seed": 1, "mystery_knob": 3}"#).unwrap();
    let out = bin()
        .args([
            "train",
            "--mode",
            "vae",
            "--data",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "train",
            "--mode",
            "vae",
            "--data",
            tmp.path().join("nowhere").to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

/// Full small pipeline: train, then run every eval protocol, checking file
/// contracts (interpolate count law, sweep rows, consistency columns) and
/// the config-hash mismatch guard.
#[test]
fn eval_protocols_and_hash_guard() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 14, 16, 4, &["--annotated-frac", "0.5"]);
    let config = tmp.path().join("config.json");
    write_tiny_config(&config, 16, 1);

    let vae = tmp.path().join("vae");
    let status = bin()
        .args([
            "train", "--mode", "vae",
            "--data", data.to_str().unwrap(),
            "--config", config.to_str().unwrap(),
            "--out", vae.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let det = tmp.path().join("det");
    let status = bin()
        .args([
            "train", "--mode", "detector",
            "--data", data.to_str().unwrap(),
            "--config", config.to_str().unwrap(),
            "--out", det.to_str().unwrap(),
            "--init", vae.join("model_final.ckpt").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let joint = tmp.path().join("joint");
    let status = bin()
        .args([
            "train", "--mode", "joint",
            "--data", data.to_str().unwrap(),
            "--config", config.to_str().unwrap(),
            "--out", joint.to_str().unwrap(),
            "--init", vae.join("model_final.ckpt").to_str().unwrap(),
            "--init", det.join("model_final.ckpt").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(joint.join("model_stage1.ckpt").exists());
    assert!(joint.join("model_final.ckpt").exists());

    // interpolate --k 4: exactly 4 grids plus 4 PGM slice triplets.
    let interp = tmp.path().join("interp");
    let status = bin()
        .args([
            "eval", "--protocol", "interpolate",
            "--models", joint.join("model_final.ckpt").to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--out", interp.to_str().unwrap(),
            "--a", "0", "--b", "1", "--k", "4",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let names: Vec<String> = dir_bytes(&interp).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".vox")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".pgm")).count(), 12);
    assert!(names.contains(&"track.json".to_string()));

    // sweep over 3 levels with two models: 3 rows + header, paired columns.
    let sweep = tmp.path().join("sweep");
    let models = format!(
        "{},{}",
        vae.join("model_final.ckpt").display(),
        joint.join("model_final.ckpt").display()
    );
    let status = bin()
        .args([
            "eval", "--protocol", "sweep",
            "--models", &models,
            "--data", data.to_str().unwrap(),
            "--out", sweep.to_str().unwrap(),
            "--levels", "0,0.5,0.75",
            "--seeds", "1,2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "header + one row per level: {csv}");
    assert_eq!(lines[0].split(',').count(), 3, "level + one column per model");

    // consistency report columns carry the ten fixed landmark names.
    let consist = tmp.path().join("consist");
    let status = bin()
        .args([
            "eval", "--protocol", "consistency",
            "--models", joint.join("model_final.ckpt").to_str().unwrap(),
            "--out", consist.to_str().unwrap(),
            "--n", "8",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(consist.join("consistency.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let expected = [
        "back-topleft", "back-topright", "leg-frontright", "leg-frontleft",
        "leg-backleft", "leg-backright", "seat-backleft", "seat-backright",
        "seat-frontleft", "seat-frontright",
    ];
    assert_eq!(&header[1..11], &expected);

    // A model trained under a different config hash is refused: exit 5.
    let other_config = tmp.path().join("other_config.json");
    write_tiny_config(&other_config, 16, 2); // different epochs -> different hash
    let other = tmp.path().join("other");
    let status = bin()
        .args([
            "train", "--mode", "vae",
            "--data", data.to_str().unwrap(),
            "--config", other_config.to_str().unwrap(),
            "--out", other.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let models = format!(
        "{},{}",
        vae.join("model_final.ckpt").display(),
        other.join("model_final.ckpt").display()
    );
    let out = bin()
        .args([
            "eval", "--protocol", "sweep",
            "--models", &models,
            "--data", data.to_str().unwrap(),
            "--out", tmp.path().join("mismatch").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_reruns_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 12, 16, 9, &[]);
    let config = tmp.path().join("config.json");
    write_tiny_config(&config, 16, 1);
    let vae = tmp.path().join("vae");
    assert!(bin()
        .args([
            "train", "--mode", "vae",
            "--data", data.to_str().unwrap(),
            "--config", config.to_str().unwrap(),
            "--out", vae.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let out = tmp.path().join("iou");
    for _ in 0..2 {
        assert!(bin()
            .args([
                "eval", "--protocol", "iou",
                "--models", vae.join("model_final.ckpt").to_str().unwrap(),
                "--data", data.to_str().unwrap(),
                "--out", out.to_str().unwrap(),
            ])
            .status()
            .unwrap()
            .success());
    }
    let first = dir_bytes(&out);
    assert!(bin()
        .args([
            "eval", "--protocol", "iou",
            "--models", vae.join("model_final.ckpt").to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    assert_eq!(first, dir_bytes(&out));
}
