use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssmreserve"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_reports_observed_counts() {
    let input = data("sample_10x10.csv");
    let o = run(&["validate", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("55 observed / 45 unobserved"));
    assert!(stdout(&o).contains("regular runoff"));
}

#[test]
fn validate_rejects_negative_cell_in_strict_mode() {
    let input = data("negative.csv");
    let o = run(&["validate", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("origin 2021 lag 1"), "{}", stderr(&o));

    let o = run(&["validate", "--lenient", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1 non-positive cell"));
}

#[test]
fn validate_rejects_ragged_file() {
    let input = data("ragged.csv");
    let o = run(&["validate", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"));
}

#[test]
fn unknown_model_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("hand_3x3.csv");
    let o = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--models",
        "Hertig,Mack",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_groups_models_by_response() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("sample_10x10.csv");
    let out = dir.path().to_str().unwrap();
    let o = run(&["fit", "--input", input.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cmp = read_json(&dir.path().join("comparison.json"));
    assert_eq!(cmp["comparison"]["groups"].as_array().unwrap().len(), 2);
    assert!(cmp["comparison"]["refusal"].is_string());
    for stem in ["hertig", "cc", "verrall", "bsm"] {
        let fit = read_json(&dir.path().join(format!("fit_{stem}.json")));
        assert_eq!(fit["config"]["seed"], 0);
        assert!(fit["recipe_version"].as_str().unwrap().starts_with(stem));
        assert!(dir.path().join(format!("predicted_{stem}.csv")).exists());
        let completed = std::fs::read_to_string(dir.path().join(format!("completed_{stem}.csv"))).unwrap();
        // every cell of the completed grid is filled
        let body: Vec<&str> = completed.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body.len(), 11);
        assert!(body[1..].iter().all(|l| l.split(',').all(|f| !f.is_empty())));
    }

    let dir2 = tempfile::tempdir().unwrap();
    let o = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--models",
        "Hertig,CC",
        "--format",
        "csv",
        "--out",
        dir2.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir2.path().join("comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("LogDevRatio,")));
    assert!(!csv.contains('#'));
}

#[test]
fn reserve_on_hand_fixture_matches_chain_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("hand_3x3.csv");
    let o = run(&[
        "reserve",
        "--input",
        input.to_str().unwrap(),
        "--models",
        "Hertig",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = read_json(&dir.path().join("reserve.json"));
    let lines = r["reserves"].as_array().unwrap();
    let cl = lines.iter().find(|l| l["method"] == "Chain-Ladder").unwrap();
    assert!((cl["reserve"].as_f64().unwrap() - 117.5).abs() < 1e-9);
    assert!((r["chain_ladder"]["CL Reserve"].as_f64().unwrap() - 117.5).abs() < 1e-9);
}

#[test]
fn zero_noise_fit_reproduces_the_deterministic_extrapolation() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("multiplicative_5x5.csv");
    let (input, out) = (input.to_str().unwrap(), dir.path().to_str().unwrap());
    let o = run(&["fit", "--input", input, "--models", "Verrall", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_json(&dir.path().join("fit_verrall.json"))["fit"]["status"], "Degenerate");
    let o = run(&["reserve", "--input", input, "--models", "Verrall", "--fits", out, "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = read_json(&dir.path().join("reserve.json"));
    let lines = r["reserves"].as_array().unwrap();
    // row factors times column pattern, summed over the unobserved cells
    let truth = 1.1 * 40.0 + 0.9 * 160.0 + 1.2 * 460.0 + 1.05 * 1060.0;
    for l in lines {
        assert!((l["reserve"].as_f64().unwrap() - truth).abs() < 1e-6 * truth, "{l}");
    }
}

#[test]
fn simulate_is_reproducible_and_reports_q3() {
    let input = data("sample_10x10.csv");
    let mut outputs = Vec::new();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let o = run(&[
            "simulate",
            "--input",
            input.to_str().unwrap(),
            "--models",
            "Hertig",
            "--draws",
            "500",
            "--seed",
            "42",
            "--true-reserve",
            "7500000",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(std::fs::read(d.path().join("draws_hertig.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let s = read_json(&dirs[0].path().join("summary_hertig.json"));
    assert_eq!(s["suggested_reserve"], s["summary"]["q3"]);
    assert_eq!(s["config"]["seed"], 42);
    let h = read_json(&dirs[0].path().join("histogram_hertig.json"));
    let labels: Vec<&str> = h["reference_lines"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["true", "CL", "CL+SE"]);
    let counts: u64 = h["histogram"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 500);
}

#[test]
fn simulate_needs_at_least_100_draws() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("sample_10x10.csv");
    let o = run(&[
        "simulate",
        "--input",
        input.to_str().unwrap(),
        "--draws",
        "99",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn quadrupling_draws_halves_the_mc_standard_error() {
    let input = data("sample_10x10.csv");
    let se = |draws: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&[
            "simulate",
            "--input",
            input.to_str().unwrap(),
            "--models",
            "Verrall",
            "--draws",
            draws,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        read_json(&dir.path().join("summary_verrall.json"))["mc_standard_error"]
            .as_f64()
            .unwrap()
    };
    let ratio = se("8000") / se("2000");
    assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn saved_fits_give_the_same_reserves_as_refitting() {
    let input = data("sample_10x10.csv");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let input = input.to_str().unwrap();
    let (a_out, b_out) = (a.path().to_str().unwrap(), b.path().to_str().unwrap());
    assert_eq!(run(&["fit", "--input", input, "--models", "CC,BSM", "--out", a_out]).status.code(), Some(0));
    let o = run(&["reserve", "--input", input, "--models", "CC,BSM", "--fits", a_out, "--out", a_out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["reserve", "--input", input, "--models", "CC,BSM", "--out", b_out]);
    assert_eq!(o.status.code(), Some(0));
    let ra = read_json(&a.path().join("reserve.json"));
    let rb = read_json(&b.path().join("reserve.json"));
    assert_eq!(ra["reserves"], rb["reserves"]);
}
