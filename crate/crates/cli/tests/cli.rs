use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hlm::data::Column;
use hlm::{simulate, SimConfig};
use serde_json::Value;
use tempfile::TempDir;

fn hlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlm")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "{}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulated(dir: &TempDir, preset: &str, seed: &str) -> PathBuf {
    let p = dir.path().join(format!("{preset}-{seed}.csv"));
    let o = hlm(&["simulate", "--preset", preset, "--seed", seed, "--out", s(&p)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    p
}

const MODEL5: &str = "outcome mat
level1 mo
level1 fa
level1 hp
level2 stueco
level2 schlo
level2 schrc
";

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = hlm(&["simulate", "--preset", "paper-model0", "--seed", "7"]);
    let b = hlm(&["simulate", "--preset", "paper-model0", "--seed", "7"]);
    let c = hlm(&["simulate", "--preset", "paper-model0", "--seed", "8"]);
    assert_eq!(code(&a), 0);
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let f = simulated(&dir, "paper-model0", "7");
    assert_eq!(fs::read(f).unwrap(), a.stdout);
}

#[test]
fn simulate_from_config_and_unknown_preset() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.sim", "groups 5\nsize 4\nintercept 10\ntau 1\nsigma2 1\nseed 3\n");
    let o = hlm(&["simulate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 21);
    let o = hlm(&["simulate", "--preset", "nope"]);
    assert_eq!(code(&o), 5);
    assert!(o.stdout.is_empty());
    assert!(stderr(&o).contains("paper-model5"));
}

#[test]
fn usage_errors_exit_5() {
    assert_eq!(code(&hlm(&["fit"])), 5);
    assert_eq!(code(&hlm(&["frobnicate"])), 5);
    assert_eq!(code(&hlm(&["simulate"])), 5);
    assert_eq!(code(&hlm(&["--help"])), 0);
}

const RAW: &str = "school,mat,mo_raw,schlo_raw
1,600,High school,High income
1,610,Primary or lower,High income
2,590,High school,Low income
2,580,The student doesn't know,Low income
";

#[test]
fn recode_happy_path() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "raw.csv", RAW);
    let cb = write(
        &dir,
        "cb",
        "map mo mo_raw \"High school\"=3 \"Primary or lower\"=1 \"The student doesn't know\"=0\n\
         location schlo schlo_raw \"High income\"=1 \"Low income\"=-1\n",
    );
    let out = dir.path().join("out.csv");
    let o = hlm(&["recode", "--data", s(&data), "--codebook", s(&cb), "--out", s(&out), "--format", "structured"]);
    let v = json(&o);
    assert_eq!(v["schema"], "hlm-report/1");
    assert_eq!(v["rows"], 4);
    assert_eq!(v["rules"][0]["recoded"], 4);
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("school,mat,mo_raw,schlo_raw,mo,schlo\n"));
    assert!(csv.contains(",3,1\n") && csv.contains(",0,-1\n"));
}

#[test]
fn recode_codebook_error_exit_2() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "raw.csv", RAW);
    let cb = write(&dir, "cb", "# ok\nmap mo mo_raw \"High school\"=3\nfrobnicate x y\n");
    let out = dir.path().join("out.csv");
    let o = hlm(&["recode", "--data", s(&data), "--codebook", s(&cb), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert!(!out.exists());
}

#[test]
fn recode_unmapped_exit_3() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "raw.csv", RAW);
    let cb = write(&dir, "cb", "map mo mo_raw \"High school\"=3 \"Primary or lower\"=1 unmapped=error\n");
    let out = dir.path().join("out.csv");
    let o = hlm(&["recode", "--data", s(&data), "--codebook", s(&cb), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("The student doesn't know"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert!(!out.exists());
}

#[test]
fn fit_unconditional_reports_icc() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "paper-model0", "1");
    let spec = write(&dir, "m0.spec", "outcome mat\n");
    let v = json(&hlm(&["fit", "--data", s(&data), "--model", s(&spec), "--format", "structured"]));
    let icc = v["clustering"]["icc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&icc));
    assert_eq!(v["fit"]["n_groups"], 140);
    assert_eq!(v["fit"]["convergence"]["converged"], true);
    let text = hlm(&["fit", "--data", s(&data), "--model", s(&spec)]);
    assert_eq!(code(&text), 0);
    assert!(String::from_utf8(text.stdout).unwrap().contains("ICC"));
}

#[test]
fn fit_six_predictor_model_structure() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "paper-model5", "2");
    let spec = write(&dir, "m5.spec", MODEL5);
    let null = write(&dir, "m0.spec", "outcome mat\n");
    let args = ["fit", "--data", s(&data), "--model", s(&spec), "--null-model", s(&null), "--format", "structured"];
    let a = hlm(&args);
    let v = json(&a);
    let names: Vec<&str> = v["fit"]["fixed"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["intercept", "mo", "fa", "hp", "stueco", "schlo", "schrc"]);
    assert_eq!(v["fit"]["vc"]["tau"].as_array().unwrap().len(), 1);
    assert!(v["fit"]["vc"]["sigma2"].as_f64().unwrap() > 0.0);
    assert!(v["variance_explained"]["r2_level2"].as_f64().unwrap() > 0.0);
    assert!(v["clustering"]["icc"].as_f64().is_some());
    // stable ordering makes byte comparison a valid regression check
    assert_eq!(a.stdout, hlm(&args).stdout);
}

#[test]
fn fit_missing_column_exit_5() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "paper-model0", "1");
    let spec = write(&dir, "m.spec", "outcome mat\nlevel1 ses\n");
    let out = dir.path().join("report.txt");
    let o = hlm(&["fit", "--data", s(&data), "--model", s(&spec), "--out", s(&out)]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("ses"));
    assert!(o.stdout.is_empty());
    assert!(!out.exists());
    let o = hlm(&["fit", "--data", "/nonexistent.csv", "--model", s(&spec)]);
    assert_eq!(code(&o), 5);
}

#[test]
fn fit_non_convergence_exit_4() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "paper-model5", "3");
    let spec = write(&dir, "m.spec", &format!("{MODEL5}maxiter 1\n"));
    let o = hlm(&["fit", "--data", s(&data), "--model", s(&spec)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn diagnose_supplied_components() {
    let o = hlm(&["diagnose", "--tau00", "2238.6", "--sigma2", "8195.38", "--nbar", "32.89", "--n-total", "4605"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let row = |key: &str| {
        text.lines()
            .find(|l| l.trim_start().starts_with(key))
            .map(|l| l.trim_start()[key.len()..].trim().to_string())
            .unwrap()
    };
    assert_eq!(row("ICC"), "0.215");
    assert_eq!(row("design effect"), "7.86");
    assert!(row("effective N").starts_with("585.9"));
}

#[test]
fn diagnose_partial_and_invalid_modes() {
    let dir = TempDir::new().unwrap();
    let data = simulated(&dir, "paper-model5", "4");
    let o = hlm(&["diagnose", "--data", s(&data), "--vars", "mat,mo,hp", "--format", "structured"]);
    let v = json(&o);
    assert_eq!(v["descriptives"].as_array().unwrap().len(), 3);
    assert!(v["clustering"].is_null());
    assert_eq!(v["correlations"]["r"][0][0], 1.0);

    let o = hlm(&["diagnose", "--data", s(&data), "--vars", ""]);
    assert_eq!(code(&o), 5);
    assert!(o.stdout.is_empty());
    assert_eq!(code(&hlm(&["diagnose"])), 5);
    assert_eq!(code(&hlm(&["diagnose", "--tau00", "1"])), 5);

    let m0 = write(&dir, "m0.spec", "outcome mat\n");
    let o = hlm(&["diagnose", "--data", s(&data), "--vars", "mat", "--model", s(&m0), "--format", "structured"]);
    let v = json(&o);
    assert_eq!(v["clustering"]["n"], 4620.0);
}

/// Simulated model-5 data with extra outcome columns derived from `mat`.
fn with_pvs(dir: &TempDir, noise_sd: f64) -> PathBuf {
    let base = simulate(&SimConfig::preset("paper-model5").unwrap().with_seed(5)).unwrap();
    let mat = base.complete("mat").unwrap();
    let mut ds = base.clone();
    for m in 0..5 {
        let noise = simulate(&SimConfig::intercept_only(140, 33, 0.0, 0.0, 1.0, 50 + m)).unwrap();
        let e = noise.complete("y").unwrap();
        let col = mat.iter().zip(&e).map(|(a, b)| Some(a + noise_sd * b)).collect();
        ds = ds.with_column(&format!("pv{}", m + 1), Column::Numeric(col)).unwrap();
    }
    let p = dir.path().join(format!("pv-{noise_sd}.csv"));
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    fs::write(&p, buf).unwrap();
    p
}

#[test]
fn pool_identical_values_match_single_fit() {
    let dir = TempDir::new().unwrap();
    let data = with_pvs(&dir, 0.0);
    let spec = write(&dir, "m5.spec", MODEL5);
    let pooled = json(&hlm(&[
        "pool", "--data", s(&data), "--model", s(&spec), "--pv", "pv1,pv2,pv3,pv4,pv5", "--format", "structured",
    ]));
    let single = json(&hlm(&["fit", "--data", s(&data), "--model", s(&spec), "--format", "structured"]));
    let fixed = pooled["result"]["fixed"].as_array().unwrap();
    assert_eq!(fixed.len(), 7);
    for (p, f) in fixed.iter().zip(single["fit"]["fixed"].as_array().unwrap()) {
        let (ps, fs_) = (p["rubin"]["se"].as_f64().unwrap(), f["se"].as_f64().unwrap());
        assert!((ps - fs_).abs() <= 1e-12 * fs_, "{ps} vs {fs_}");
        assert_eq!(p["rubin"]["estimate"], f["gamma_hat"]);
        assert_eq!(p["rubin"]["between"], 0.0);
        assert_eq!(p["p"], f["p"]);
    }
    assert_eq!(pooled["result"]["fits"].as_array().unwrap().len(), 5);
}

#[test]
fn pool_total_variance_identity() {
    let dir = TempDir::new().unwrap();
    let data = with_pvs(&dir, 20.0);
    let spec = write(&dir, "m5.spec", MODEL5);
    let pooled = json(&hlm(&[
        "pool", "--data", s(&data), "--model", s(&spec), "--pv", "pv1,pv2,pv3,pv4,pv5", "--format", "structured",
    ]));
    for e in pooled["result"]["fixed"].as_array().unwrap() {
        let r = &e["rubin"];
        let (u, b, t) = (r["within"].as_f64().unwrap(), r["between"].as_f64().unwrap(), r["total"].as_f64().unwrap());
        assert!(b > 0.0);
        assert!((t - (u + 1.2 * b)).abs() <= 1e-12 * t);
    }

    let avg = json(&hlm(&[
        "pool", "--data", s(&data), "--model", s(&spec), "--pv", "pv1,pv2,pv3,pv4,pv5", "--average-pv",
        "--format", "structured",
    ]));
    assert_eq!(avg["canonical"], false);
    assert_eq!(avg["fit"]["outcome"], "pv_mean");

    let o = hlm(&["pool", "--data", s(&data), "--model", s(&spec), "--pv", "pv1"]);
    assert_eq!(code(&o), 5);
    assert!(o.stdout.is_empty());
}

#[test]
fn tutorial_replays_models() {
    let o = hlm(&["tutorial", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    for m in 0..=5 {
        assert!(text.contains(&format!("Model {m}:")), "Model {m}");
    }
    assert!(text.contains("ICC"));
    let v = json(&hlm(&["tutorial", "--seed", "3", "--format", "structured"]));
    let models = v["models"].as_array().unwrap();
    assert_eq!(models.len(), 6);
    assert_eq!(models[5]["fit"]["fixed"].as_array().unwrap().len(), 7);
    assert_eq!(models[3]["fit"]["vc"]["names"].as_array().unwrap().len(), 4);
}
