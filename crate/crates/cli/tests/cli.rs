use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use efield_cli::emit_summary;
use efield_core::{MutualMatrix, Trace, CHANNELS};

fn efield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efield"))
        .args(args)
        .output()
        .expect("spawn efield")
}

fn ok(args: &[&str]) -> String {
    let out = efield(args);
    assert!(
        out.status.success(),
        "efield {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const STEP_CFG: &str = r#"
n_steps = 600

[disturbance]
kind = "step"
amplitude = 1.0
"#;

fn read_trace(path: &Path) -> Trace {
    Trace::read_csv(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "step.toml", STEP_CFG);
    let out = dir.path().join("trace.csv");
    let stdout = ok(&["run", "-c", &cfg, "-o", out.to_str().unwrap()]);

    let trace = read_trace(&out);
    assert_eq!(trace.len(), 600);
    // The printed summary is a function of the CSV alone.
    let recomputed = emit_summary(&trace).unwrap().to_string();
    assert_eq!(stdout.trim_end(), recomputed);

    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 116);
}

#[test]
fn printed_defaults_reproduce_the_default_run() {
    let dir = tempfile::tempdir().unwrap();
    let defaults = ok(&["--print-defaults"]);
    let from_defaults = write(dir.path(), "defaults.toml", &defaults);
    let empty = write(dir.path(), "empty.toml", "");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let overrides = [
        "n_steps=300",
        "disturbance.kind=step",
        "disturbance.amplitude=0.5",
    ];
    let mut args_a = vec!["run", "-c", &from_defaults, "-o", a.to_str().unwrap()];
    args_a.extend(overrides);
    let mut args_b = vec!["run", "-c", &empty, "-o", b.to_str().unwrap()];
    args_b.extend(overrides);
    ok(&args_a);
    ok(&args_b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "noisy.toml",
        &format!("{STEP_CFG}\n[adc]\nnoise_std = 0.002\n\n[link]\ndrop_prob = 0.05\n"),
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["--seed", "5", "run", "-c", &cfg, "-o", a.to_str().unwrap()]);
    ok(&["--seed", "5", "run", "-c", &cfg, "-o", b.to_str().unwrap()]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn both_mode_writes_companion_float_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "step.toml", STEP_CFG);
    let out = dir.path().join("pair.csv");
    let stdout = ok(&["run", "-c", &cfg, "-o", out.to_str().unwrap(), "mode=both"]);
    assert!(stdout.contains("max |i_fixed - i_float|"));
    let fixed = read_trace(&out);
    let float = read_trace(&dir.path().join("pair.float.csv"));
    assert_eq!(fixed.len(), float.len());
    assert_ne!(fixed.records, float.records);
}

#[test]
fn step_response_drives_one_channel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "base.toml", "n_steps = 400\nmode = \"float\"\n");
    let out = dir.path().join("sr.csv");
    ok(&[
        "step-response",
        "-c",
        &cfg,
        "--channel",
        "4",
        "-o",
        out.to_str().unwrap(),
    ]);
    let trace = read_trace(&out);
    let peak = |c: usize| {
        trace
            .records
            .iter()
            .map(|r| r.currents[c].abs())
            .fold(0.0, f64::max)
    };
    for c in (0..CHANNELS).filter(|c| *c != 4) {
        assert!(peak(c) < peak(4));
    }
    let bad = efield(&[
        "step-response",
        "-c",
        &cfg,
        "--channel",
        "16",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn matrix_dump_matches_default_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    ok(&["matrix", "dump", "-o", out.to_str().unwrap()]);
    let m = MutualMatrix::default();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(&out)
        .unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), CHANNELS);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.as_slice(), m.row(i));
    }
}

#[test]
fn matrix_dump_honours_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.toml", "[correction]\noff1 = -8e-6\n");
    let out = dir.path().join("m.csv");
    ok(&["matrix", "dump", "-c", &cfg, "-o", out.to_str().unwrap()]);
    let text = fs::read_to_string(&out).unwrap();
    let first: Vec<f64> = text
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(first[1], -8e-6);
    assert_eq!(first[15], -8e-6);
}

#[test]
fn link_selftest_prints_frame() {
    let stdout = ok(&["link", "selftest"]);
    let mut lines = stdout.lines();
    let hex: Vec<&str> = lines.next().unwrap().split(' ').collect();
    assert_eq!(hex.len(), 36);
    assert_eq!(hex[0], "a5");
    assert_eq!(hex[1], "2a");
    assert_eq!(lines.next(), Some("selftest ok"));
}

#[test]
fn bench_reports_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", "[latency]\niterations = 2000\n");
    let stdout = ok(&["bench", "-c", &cfg]);
    assert!(stdout.contains("iterations: 2000"));
    assert!(stdout.contains("p99:"));
    assert!(stdout.contains("budget: 10.000 us"));
}

#[test]
fn bad_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let out = out.to_str().unwrap();
    let cases = [
        ("dt = 0.0\n", "dt"),
        ("bogus = 1\n", "bogus"),
        ("[pid]\nkp = \"fast\"\n", "pid.kp"),
        ("n_steps = [\n", ""),
    ];
    for (body, key) in cases {
        let cfg = write(dir.path(), "bad.toml", body);
        let res = efield(&["run", "-c", &cfg, "-o", out]);
        assert!(!res.status.success(), "{body:?} accepted");
        let stderr = String::from_utf8_lossy(&res.stderr);
        assert!(stderr.contains(key), "{body:?}: {stderr}");
    }
    let res = efield(&["run", "-c", "/nonexistent/cfg.toml", "-o", out]);
    assert!(!res.status.success());
    let cfg = write(dir.path(), "ok.toml", "");
    let res = efield(&["run", "-c", &cfg, "-o", out, "novalue"]);
    assert!(!res.status.success());
}

#[test]
fn disturbance_table_resolves_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..CHANNELS).map(|i| format!("ch{i}")))
        .collect();
    let row = |t: f64, v: f64| {
        std::iter::once(t.to_string())
            .chain((0..CHANNELS).map(|i| if i == 2 { v.to_string() } else { "0".into() }))
            .collect::<Vec<_>>()
            .join(",")
    };
    let table = format!(
        "{}\n{}\n{}\n",
        header.join(","),
        row(0.0, 0.0),
        row(1e-4, 1.0)
    );
    write(dir.path(), "dist.csv", &table);
    let cfg = write(
        dir.path(),
        "file.toml",
        "n_steps = 100\nmode = \"float\"\n[disturbance]\nkind = \"file\"\nfile = \"dist.csv\"\n",
    );
    let out = dir.path().join("f.csv");
    ok(&["run", "-c", &cfg, "-o", out.to_str().unwrap()]);
    let trace = read_trace(&out);
    assert!(trace.records[..10]
        .iter()
        .all(|r| r.currents == [0.0; CHANNELS]));
    assert!(trace.records[12].currents[2] > 0.0);
}
