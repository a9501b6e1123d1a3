use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use qrazor::packfmt::{decode_base, decode_qrz, encode_base, encode_qrz, write_tensor_container};
use qrazor::quantizer::{calibrate_absmax, quantize_base};
use qrazor::sdr::{compress_tensor, decompress_tensor};
use qrazor::{Granularity, Role, SdrConfig, TensorF};

fn qrazor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrazor"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn json_lines(out: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn random_tensor(shape: Vec<usize>, seed: u64) -> TensorF {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    TensorF::new(
        shape,
        (0..n).map(|_| rng.random_range(-3.0f32..3.0)).collect(),
    )
    .unwrap()
}

#[test]
fn compress_and_decompress_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // 21 columns leaves a ragged tail with g = 8.
    let x = random_tensor(vec![5, 21], 1);
    std::fs::write(d.join("x.ftn"), write_tensor_container(&x).unwrap()).unwrap();

    for args in [
        vec![
            "calibrate",
            "--role",
            "weight",
            "--granularity",
            "per-channel",
            "--base-bits",
            "8",
            "--out",
            "x.meta",
            "x.ftn",
        ],
        vec!["quantize", "--scales", "x.meta", "x.ftn", "x.qbt"],
        vec![
            "compress",
            "--base-bits",
            "8",
            "--target-bits",
            "4",
            "--group-size",
            "8",
            "x.qbt",
            "x.qrz",
        ],
        vec!["decompress", "x.qrz", "back.qbt"],
    ] {
        let out = qrazor(d, &args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    let s = calibrate_absmax(
        std::slice::from_ref(&x),
        Role::Weight,
        Granularity::PerChannel { axis: 0 },
        8,
    )
    .unwrap();
    let bt = quantize_base(&x, &s).unwrap();
    let ct = compress_tensor(&bt, &SdrConfig::new(8, 4, 8).unwrap()).unwrap();
    let expected_qrz = encode_qrz(&ct, &s, Role::Weight).unwrap();
    let expected_back = encode_base(&decompress_tensor(&ct).unwrap(), &s).unwrap();

    assert_eq!(std::fs::read(d.join("x.qrz")).unwrap(), expected_qrz);
    assert_eq!(std::fs::read(d.join("back.qbt")).unwrap(), expected_back);
    let (back, _) = decode_base(&expected_back).unwrap();
    assert_eq!(back.shape(), &[5, 21]);
}

#[test]
fn check_reports_summary_and_rejects_bad_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let x = TensorF::new(vec![1, 3], vec![105.0, 22.0, -7.0]).unwrap();
    let s = calibrate_absmax(
        std::slice::from_ref(&x),
        Role::Activation,
        Granularity::PerTensor,
        8,
    )
    .unwrap();
    let ct = compress_tensor(
        &quantize_base(&x, &s).unwrap(),
        &SdrConfig::new(8, 4, 3).unwrap(),
    )
    .unwrap();
    let good = encode_qrz(&ct, &s, Role::Activation).unwrap();
    std::fs::write(d.join("good.qrz"), &good).unwrap();

    let out = qrazor(d, &["check", "good.qrz"]);
    assert!(out.status.success());
    let v = &json_lines(&out.stdout)[0];
    assert_eq!(v["ok"], true);
    assert_eq!(v["groups"], 1);
    assert_eq!(v["effective_bits"], 4.0 + 3.0 / 3.0);

    // First flag field sits right after the 2-D header with one scale.
    let flag_at = 4 + 2 + 4 + 4 + 2 + 1 + 16 + 4 + 4;
    let mut bad = good.clone();
    bad[flag_at] = (bad[flag_at] & 0x1f) | (0b101 << 5);
    std::fs::write(d.join("bad.qrz"), &bad).unwrap();
    let out = qrazor(d, &["check", "bad.qrz"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json_lines(&out.stderr)[0]["error"], "FlagOutOfRange");
    assert!(decode_qrz(&bad).is_err());
}

#[test]
fn cost_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrazor(
        dir.path(),
        &["cost", "--m", "128", "--n", "64", "--h", "8", "--g", "32"],
    );
    assert!(out.status.success());
    let v = &json_lines(&out.stdout)[0];
    assert_eq!(v["hadamard_single_flops"], 8192);
    assert_eq!(v["hadamard_heads_flops"], 65536);
    assert_eq!(v["sdr_compression_iops"], 512);
    assert_eq!(v["barrel_shifter_iops"], 256);
    assert_eq!(v["exact"], true);
}

#[test]
fn stats_emits_json_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let x = random_tensor(vec![16, 64], 2);
    std::fs::write(d.join("x.ftn"), write_tensor_container(&x).unwrap()).unwrap();
    let out = qrazor(d, &["stats", "--dmq-bits", "4", "x.ftn"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines = json_lines(&out.stdout);
    let kinds: Vec<_> = lines
        .iter()
        .map(|v| match v["method"].as_str() {
            Some(m) => format!("{}:{m}", v["report"].as_str().unwrap()),
            None => v["report"].as_str().unwrap().to_owned(),
        })
        .collect();
    assert_eq!(
        kinds,
        [
            "histogram",
            "zeros",
            "errors:sdr",
            "errors:dmq",
            "errors:per_tensor_absmax"
        ]
    );
    let hist = &lines[0];
    // One bucket per magnitude bit.
    assert_eq!(hist["counts"].as_array().unwrap().len(), 15);
    assert_eq!(hist["total_groups"], 16 * 4);
    assert!(lines[2]["mse"].as_f64().unwrap() > 0.0);
}

#[test]
fn stats_errors_on_base_tensor_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let x = random_tensor(vec![4, 16], 3);
    let s = calibrate_absmax(
        std::slice::from_ref(&x),
        Role::Activation,
        Granularity::PerTensor,
        16,
    )
    .unwrap();
    std::fs::write(
        d.join("x.qbt"),
        encode_base(&quantize_base(&x, &s).unwrap(), &s).unwrap(),
    )
    .unwrap();
    let out = qrazor(d, &["stats", "--errors", "x.qbt"]);
    assert_eq!(out.status.code(), Some(2));
    let out = qrazor(d, &["stats", "--hist", "x.qbt"]);
    assert!(out.status.success());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = qrazor(d, &["cost", "--m", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_lines(&out.stderr)[0]["error"], "Usage");
    assert_eq!(qrazor(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(qrazor(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrazor(dir.path(), &["check", "nope.qrz"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json_lines(&out.stderr)[0]["error"], "Io");
}

#[test]
fn mismatched_group_sizes_rejected_by_matmul() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let x = random_tensor(vec![2, 16], 4);
    let s = calibrate_absmax(
        std::slice::from_ref(&x),
        Role::Activation,
        Granularity::PerTensor,
        16,
    )
    .unwrap();
    let bt = quantize_base(&x, &s).unwrap();
    for (name, g) in [("a.qrz", 8), ("b.qrz", 16)] {
        let ct = compress_tensor(&bt, &SdrConfig::new(16, 4, g).unwrap()).unwrap();
        std::fs::write(d.join(name), encode_qrz(&ct, &s, Role::Activation).unwrap()).unwrap();
    }
    let out = qrazor(d, &["matmul", "a.qrz", "b.qrz", "--out", "y.ftn"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json_lines(&out.stderr)[0]["error"], "PlanInvalid");
}
