#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn vqd(args: &[&str]) -> Output {
    vqd_env(args, &[])
}

pub fn vqd_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vqd"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("spawn vqd")
}

/// Runs `vqd` and panics with its stderr unless it exits 0.
pub fn ok(args: &[&str]) -> Output {
    let out = vqd(args);
    assert!(
        out.status.success(),
        "vqd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The single JSON error line a failed command prints.
pub fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {text:?}");
    serde_json::from_str(lines[0]).expect("error line is JSON")
}

/// Very small networks so that every subcommand finishes in seconds.
pub fn micro_config() -> Value {
    json!({
        "version": 1,
        "preset": "tiny",
        "seed": 5,
        "degradation_model": {
            "base_channels": 4, "embed_dim": 4, "codebook_size": 128, "res_blocks": 1, "crop_size": 16,
            "discriminator": {"base_channels": 4, "layers": 2},
            "stage1": {"steps": 3}, "stage2": {"steps": 2}
        },
        "vsr": {
            "channels": 4, "res_blocks": 1, "state_channels": 4, "crop_size": 32,
            "discriminator": {"base_channels": 4, "layers": 2},
            "stage1": {"steps": 3}, "stage2": {"steps": 2}
        },
        "dataset": {
            "synth": {"clips": 2, "size": 32, "frames_per_clip": 3},
            "synth_hr_clips": 2, "synth_test_clips": 1, "synth_hr_size": 64
        },
        "eval": {"crop_size": 16}
    })
}

pub fn write_json(path: &Path, v: &Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parses every line of a JSON-lines log.
pub fn read_log(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
