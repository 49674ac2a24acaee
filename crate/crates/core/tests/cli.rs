use homsim::calibrate;
use homsim::timetag::TimeTagStream;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use tempfile::TempDir;

fn homsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homsim"))
        .args(args)
        .env_remove("HOMSIM_THREADS")
        .output()
        .expect("spawn homsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn or_json() -> Value {
    serde_json::to_value(calibrate::paper_or()).unwrap()
}

/// OR preset streams at 1e7 trials, indistinguishable and delayed.
fn or_fixtures() -> &'static (TempDir, PathBuf, PathBuf) {
    static F: OnceLock<(TempDir, PathBuf, PathBuf)> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let ind = dir.path().join("ind.tt");
        let dist = dir.path().join("dist.tt");
        let o = homsim(&["simulate", "--preset", "paper-or", "--out", s(&ind)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = homsim(&["simulate", "--preset", "paper-or", "--seed", "2", "--delay", "1500ns", "--out", s(&dist)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (dir, ind, dist)
    })
}

#[test]
fn missing_field_is_config_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let mut v = or_json();
    v["chain"].as_object_mut().unwrap().remove("spd_efficiency");
    let cfg = write_config(dir.path(), "bad.json", &v);
    let out = dir.path().join("x.tt");
    let o = homsim(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("spd_efficiency"), "{}", stderr(&o));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn invalid_value_names_the_field() {
    let dir = TempDir::new().unwrap();
    let mut v = or_json();
    v["chain"]["bs_transmittance"] = 1.5.into();
    let cfg = write_config(dir.path(), "bad.json", &v);
    let o = homsim(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x.tt"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("chain.bs_transmittance"), "{}", stderr(&o));
}

#[test]
fn zero_trials_gives_valid_empty_stream() {
    let dir = TempDir::new().unwrap();
    let mut v = or_json();
    v["n_trials"] = 0.into();
    let cfg = write_config(dir.path(), "zero.json", &v);
    let out = dir.path().join("zero.tt");
    let o = homsim(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let st = TimeTagStream::from_bytes(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(st.header.n_trials, 0);
    assert!(st.records.is_empty());

    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("zero.tt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_fingerprint"], Value::from(st.header.fingerprint_hex()));
    assert_eq!(manifest["n_trials"], Value::from(0));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&homsim(&["simulate", "--preset", "paper-or", "--out", "x.tt", "--bogus"])), 2);
    assert_eq!(code(&homsim(&["frobnicate"])), 2);
    assert_eq!(code(&homsim(&["analyze", "--ind", "a", "--dist", "b", "--window", "3 parsecs", "-o", "d"])), 2);
    assert_eq!(code(&homsim(&["--help"])), 0);
}

#[test]
fn help_lists_every_analyze_flag() {
    let o = homsim(&["analyze", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--ind", "--dist", "--window", "--center", "--policy", "--fold-delay", "--eps-det", "--fit-eta", "--bs-correct",
        "--sweep", "--bins", "--cross-trial", "--format", "--out-dir", "--threads",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn io_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let o = homsim(&["simulate", "--config", "/nonexistent/c.json", "--out", s(&dir.path().join("x.tt"))]);
    assert_eq!(code(&o), 3);

    let (_, ind, dist) = or_fixtures();
    let bytes = std::fs::read(ind).unwrap();
    let cut = dir.path().join("cut.tt");
    std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    let o = homsim(&["analyze", "--ind", s(&cut), "--dist", s(dist), "-o", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
}

#[test]
fn thread_env_controls_pool_without_changing_output() {
    let dir = TempDir::new().unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_homsim"))
            .args(["simulate", "--preset", "paper-eit", "--trials", "300000", "--out", s(&out)])
            .env("HOMSIM_THREADS", threads)
            .output()
            .unwrap();
        (code(&o), out)
    };
    let (c1, a) = run("1", "a.tt");
    let (c3, b) = run("3", "b.tt");
    assert_eq!((c1, c3), (0, 0));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(run("0", "c.tt").0, 2);
}

fn analyze(dir: &Path, format: &str, extra: &[&str]) -> PathBuf {
    let (_, ind, dist) = or_fixtures();
    let out = dir.join(format);
    let mut args = vec!["analyze", "--ind", s(ind), "--dist", s(dist), "--window", "500ns", "--format", format, "-o", s(&out)];
    args.extend_from_slice(extra);
    let o = homsim(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let mut rows = vec![header];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn analyze_or_fixtures_recovers_eta_and_formats_agree() {
    let dir = TempDir::new().unwrap();
    let extra = ["--fit-eta", "--bins", "20ns", "--sweep", "100ns,300ns,500ns", "--cross-trial", "3"];
    let csv_dir = analyze(dir.path(), "csv", &extra);
    let json_dir = analyze(dir.path(), "json", &extra);

    let fit = csv_rows(&csv_dir.join("eta_fit.csv"));
    let col = |name: &str| fit[0].iter().position(|c| c == name).unwrap();
    let eta: f64 = fit[1][col("eta_hat")].parse().unwrap();
    let sigma: f64 = fit[1][col("sigma_eta")].parse().unwrap();
    assert!((eta - 0.89).abs() <= 3.0 * sigma, "eta {eta} +- {sigma}");

    // 500 ns window in 20 ns bins
    assert_eq!(csv_rows(&csv_dir.join("time_resolved_visibility.csv")).len() - 1, 25);

    let mut tables = 0;
    for entry in std::fs::read_dir(&csv_dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            let rows = csv_rows(&p);
            let stem = p.file_stem().unwrap().to_str().unwrap();
            let j: Value = serde_json::from_str(&std::fs::read_to_string(json_dir.join(format!("{stem}.json"))).unwrap()).unwrap();
            let jrows = j["rows"].as_array().unwrap();
            assert_eq!(jrows.len(), rows.len() - 1, "{stem}");
            for (crow, jrow) in rows[1..].iter().zip(jrows) {
                for (name, cell) in rows[0].iter().zip(crow) {
                    let jv = &jrow[name.as_str()];
                    let as_text = match jv {
                        Value::Null => String::new(),
                        Value::String(t) => t.clone(),
                        other => other.to_string(),
                    };
                    assert_eq!(&as_text, cell, "{stem}.{name}");
                }
            }
            tables += 1;
        }
    }
    assert!(tables >= 8, "only {tables} tables");
    let m: Value = serde_json::from_str(&std::fs::read_to_string(csv_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["outputs"].as_array().unwrap().len(), tables);
}

#[test]
fn analysis_window_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let (_, ind, dist) = or_fixtures();
    let out = dir.path().join("o");
    // window end beyond the 5618 ns trial period
    let o = homsim(&["analyze", "--ind", s(ind), "--dist", s(dist), "--center", "5500ns", "-o", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    // fold delay shorter than the window
    let o = homsim(&["analyze", "--ind", s(ind), "--dist", s(dist), "--fold-delay", "100ns", "-o", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    // bins below the detector jitter
    let o = homsim(&["analyze", "--ind", s(ind), "--dist", s(dist), "--bins", "0.1ns", "-o", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn lineage_mismatch_warns() {
    let dir = TempDir::new().unwrap();
    let (_, ind, _) = or_fixtures();
    let eit = dir.path().join("eit.tt");
    assert_eq!(
        code(&homsim(&["simulate", "--preset", "paper-eit", "--trials", "200000", "--delay", "1500", "--out", s(&eit)])),
        0
    );
    let o = homsim(&["analyze", "--ind", s(ind), "--dist", s(&eit), "-o", s(&dir.path().join("o"))]);
    assert!(stderr(&o).contains("different source configurations"), "{}", stderr(&o));
}

#[test]
fn calibrate_regenerates_bundled_presets() {
    let dir = TempDir::new().unwrap();
    let o = homsim(&["calibrate", "--write-presets", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    for name in ["calibration.json", "paper_or.json", "paper_eit.json", "eit_series.json"] {
        let fresh: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
        let kept: Value = serde_json::from_str(&std::fs::read_to_string(bundled.join(name)).unwrap()).unwrap();
        assert!(close(&fresh, &kept), "{name} differs from the bundled copy");
    }
}

/// JSON equality with a 1e-9 relative tolerance on numbers (libm differences).
fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1e-300)
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| close(p, q)),
        (Value::Object(x), Value::Object(y)) => x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| close(v, w))),
        _ => a == b,
    }
}
