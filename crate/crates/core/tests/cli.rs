use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_spectral-frames");

fn run(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> (Output, Value) {
    let report = dir.join("report.json");
    let _ = std::fs::remove_file(&report);
    let out = Command::new(BIN).args(args).arg("--report").arg(&report).envs(envs.iter().copied()).output().unwrap();
    let value = std::fs::read_to_string(&report).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or(Value::Null);
    (out, value)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const GENUS_ONE: &str = r#"{"genus": 1, "branch_points": [[0.3, 0.0]]}"#;

#[test]
fn bubbleton_writes_mesh_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("b.obj");
    let (out, report) = run(
        dir.path(),
        &["bubbleton", "--p", "2,3", "--grid", "-1,1,-0.5,0.5,41,21", "--out", mesh.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report["exit_code"], 0);
    assert!(report["residuals"]["gauss_period"].as_f64().unwrap() < 1e-5);
    let nodes = report["diagnostics"]["nodes"][0][0].as_f64().unwrap();
    assert!((nodes - 0.14589803).abs() < 1e-8);
    let text = std::fs::read_to_string(&mesh).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 41 * 21);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "g1.json", GENUS_ONE);
    let (out, _) = run(dir.path(), &["symes", "--spec", &spec, "--grid", "1,0,0,1,5,5"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let (out, _) = run(dir.path(), &["symes", "--spec", &spec, "--tol", "nonsense=1"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let (out, _) = run(dir.path(), &["bubbleton", "--p", "2,2"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let (out, _) = run(dir.path(), &["torus", "--spec", missing.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn verify_flags_corrupted_frames() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "g1.json", GENUS_ONE);
    let frames = dir.path().join("f.json");
    let grid = "-0.05,0.05,-0.05,0.05,5,5";
    let (out, _) = run(dir.path(), &["symes", "--spec", &spec, "--grid", grid, "--frames-out", frames.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    let (out, report) = run(dir.path(), &["verify", "--frames", frames.to_str().unwrap(), "--spec", &spec], &[]);
    assert_eq!(out.status.code(), Some(0), "{report}");
    // finite-difference tolerances follow the stored grid spacing
    let h = 0.1 / 4.0;
    assert!((report["tolerances"]["flatness"].as_f64().unwrap() - 1e4 * h * h).abs() < 1e-9);

    // a tolerance below the achieved residual is a breach
    let (out, report) = run(dir.path(), &["verify", "--frames", frames.to_str().unwrap(), "--tol", "unitarity=1e-30"], &[]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(report["breaches"], serde_json::json!(["unitarity"]));

    // perturb one stored real part in the CSV next to the metadata
    let csv = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "csv"))
        .unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = lines.len() / 2;
    let mut fields: Vec<String> = lines[row].split(',').map(String::from).collect();
    // columns: point, k, re00, ...
    let v: f64 = fields[2].parse().unwrap();
    fields[2] = format!("{}", v + 1e-3);
    lines[row] = fields.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let (out, report) = run(dir.path(), &["verify", "--frames", frames.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(4), "{report}");
    assert!(report["breaches"].as_array().unwrap().iter().any(|b| b == "unitarity"));
}

#[test]
fn grassmann_writes_plucker_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "p.json", r#"{"k": 2, "n": 4, "P": [[0.3, 0.2], [-0.4, 0.1]], "E": [[0.1, -0.5]]}"#);
    let csv = dir.path().join("pl.csv");
    let (out, report) = run(
        dir.path(),
        &["grassmann", "--spec", &spec, "--direction", "1,0;0,1", "--grid", "-0.2,0.2,-0.2,0.2,9,9", "--csv", csv.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{report}");
    assert!(report["residuals"]["fiber"].as_f64().unwrap() < 1e-10);
    assert!(report["residuals"]["equivariance"].as_f64().unwrap() < 1e-10);
    assert_eq!(report["diagnostics"]["conformality_indicator"], 0.0);
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 81 + 1);
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "w.json", r#"{"genus": 2, "branch_points": [[0.1413, 0.1018], [0.1413, -0.1018]]}"#);
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let frames = dir.path().join(format!("f{threads}.json"));
        let mesh = dir.path().join(format!("m{threads}.obj"));
        let (out, _) = run(
            dir.path(),
            &["torus", "--spec", &spec, "--grid", "-0.1,0.1,-0.1,0.1,9,9", "--out", mesh.to_str().unwrap(), "--frames-out", frames.to_str().unwrap()],
            &[("RAYON_NUM_THREADS", threads)],
        );
        assert_eq!(out.status.code(), Some(0));
        let csv = std::fs::read(frames.with_extension("csv")).unwrap();
        outputs.push((csv, std::fs::read(&mesh).unwrap()));
    }
    assert!(outputs[0] == outputs[1]);
}
