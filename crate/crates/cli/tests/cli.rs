use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn kigrasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kigrasp")).args(args).output().expect("binary runs")
}

fn fixtures() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    kigrasp::fixtures::write_all(dir.path()).unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "object = \"sphere.ply\"\ngripper = \"parallel_jaw.json\"\noutput = \"out\"\n",
    )
    .unwrap();
    dir
}

fn result_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("result.json")).unwrap()).unwrap()
}

fn trace_rows(dir: &Path) -> usize {
    csv::Reader::from_path(dir.join("trace.csv")).unwrap().records().count()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_object_is_an_io_error_naming_the_path() {
    let dir = fixtures();
    let missing = dir.path().join("no_such_object.ply");
    let out = kigrasp(&["plan", "--config", s(&dir.path().join("run.toml")), "--object", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no_such_object.ply"), "{err}");
}

#[test]
fn malformed_config_and_bad_values_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "object = \"a.ply\"\nmu = [1]\n").unwrap();
    let out = kigrasp(&["plan", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let dir = fixtures();
    let out = kigrasp(&["plan", "--config", s(&dir.path().join("run.toml")), "--mu", "-0.5"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(kigrasp(&["plan", "--no-such-flag"]).status.code(), Some(3));
}

#[test]
fn jaw_on_sphere_writes_all_outputs() {
    let dir = fixtures();
    let out_dir = dir.path().join("out");
    let out = kigrasp(&["plan", "--config", s(&dir.path().join("run.toml"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = result_json(&out_dir);
    assert_eq!(r["schema"], 1);
    assert!(r["q_inf"].as_f64().unwrap() > 0.0);
    assert_eq!(r["g"].as_array().unwrap().len(), 128);
    assert_eq!(r["theta"].as_array().unwrap().len(), 8);
    let iterations = r["iterations"].as_u64().unwrap() as usize;
    assert_eq!(trace_rows(&out_dir), iterations);
    let obj = std::fs::read_to_string(out_dir.join("pose.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("g ")).count(), 3);
}

#[test]
fn brute_force_flag_keeps_schema_and_value() {
    // full 500-iteration solves are compared in the acceptance run
    let dir = fixtures();
    let cfg = dir.path().join("run.toml");
    let (a, b) = (dir.path().join("fgt"), dir.path().join("brute"));
    for (out, extra) in [(&a, None), (&b, Some("--brute-force"))] {
        let mut args = vec!["plan", "--config", s(&cfg), "--max-iters", "100", "--output", s(out)];
        args.extend(extra);
        let o = kigrasp(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ra, rb) = (result_json(&a), result_json(&b));
    let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&ra), keys(&rb));
    assert_eq!(rb["backend"], "brute_force");
    let (qa, qb) = (ra["q_inf"].as_f64().unwrap(), rb["q_inf"].as_f64().unwrap());
    assert!((qa - qb).abs() < 1e-4 * qb.abs(), "{qa} vs {qb}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = fixtures();
    let out_dir = dir.path().join("flagged");
    let out = kigrasp(&[
        "plan",
        "--config",
        s(&dir.path().join("run.toml")),
        "--max-iters",
        "3",
        "--directions",
        "16",
        "--approach",
        "1,0,0",
        "--output",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = result_json(&out_dir);
    assert_eq!(r["g"].as_array().unwrap().len(), 16);
    assert!(r["iterations"].as_u64().unwrap() <= 3);
}

#[test]
fn batch_mode_plans_each_object() {
    let dir = fixtures();
    let out_dir = dir.path().join("batch");
    let out = kigrasp(&[
        "plan",
        "--config",
        s(&dir.path().join("run.toml")),
        "--object",
        s(&dir.path().join("box.ply")),
        "--object",
        s(&dir.path().join("torus.ply")),
        "--max-iters",
        "3",
        "--jobs",
        "2",
        "--output",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["box", "torus"] {
        assert_eq!(result_json(&out_dir.join(name))["schema"], 1);
    }
}

#[test]
fn fgt_bench_writes_the_csv() {
    let dir = fixtures();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        "object = \"sphere.ply\"\ngripper = \"parallel_jaw.json\"\ndensities = [1, 2]\npoisson_r = 0.04\n",
    )
    .unwrap();
    let csv_path = dir.path().join("bench.csv");
    let out = kigrasp(&["fgt-bench", "--config", s(&cfg), "--output", s(&csv_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["density", "N", "M", "time_fgt_ms", "time_brute_ms", "max_abs_err", "q_inf_fgt", "q_inf_brute"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let q: Vec<f64> = [6, 7].iter().map(|&i| row[i].parse().unwrap()).collect();
        assert!((q[0] - q[1]).abs() < 1e-4 * q[1].abs());
    }
}

#[test]
fn verify_passes_and_catches_injected_faults() {
    let ok = kigrasp(&["verify"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let table = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(table.lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let c = kigrasp(&["verify", "--flip-c-sign"]);
    assert_eq!(c.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&c.stderr).contains("fgt_values_and_gradients"));

    let armijo = kigrasp(&["verify", "--flip-armijo-sign"]);
    assert_eq!(armijo.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&armijo.stderr).contains("merit_decrease"));
}
