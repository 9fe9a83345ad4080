mod common;

use std::path::Path;
use std::process::Command;

use common::{assert_schema_valid, write};
use stmle::simlab::{Assignment, ErrorRegime, EstimatorKind, ScenarioSpec};
use stmle_cli::{analyze, simulate, AnalysisConfig, Config, RunOptions, SimulateConfig};

fn smoke(n: usize, reps: usize) -> SimulateConfig {
    let mut s = ScenarioSpec::new(n, ErrorRegime::SkewMixture, Assignment::Balanced, reps, 11);
    s.splits = 3;
    SimulateConfig {
        scenarios: vec![s],
        estimators: vec![EstimatorKind::Tmle, EstimatorKind::Ols, EstimatorKind::Aipw],
    }
}

#[test]
fn simulate_writes_three_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate::run(&smoke(200, 10), &RunOptions::new(dir.path()), false).unwrap();
    assert_eq!(out.table.rows.len(), 3);
    assert!(out.budget_exceeded().is_empty());
    let mut files: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["manifest.json", "metrics.csv", "metrics.json"]);
    assert_schema_valid(&dir.path().join("metrics.json"));
    assert_schema_valid(&dir.path().join("manifest.json"));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("scenario,error_regime,assignment,n,estimator,reps,failures,bias,esd,rmse,coverage,width"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn simulate_is_byte_reproducible() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = smoke(150, 6);
    simulate::run(&cfg, &RunOptions::new(d1.path()), false).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    pool.install(|| simulate::run(&cfg, &RunOptions::new(d2.path()), false)).unwrap();
    for f in ["metrics.csv", "metrics.json"] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_override_changes_results() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = smoke(150, 4);
    let a = simulate::run(&cfg, &RunOptions::new(d1.path()), false).unwrap();
    let mut opts = RunOptions::new(d2.path());
    opts.seed = Some(99);
    let b = simulate::run(&cfg, &opts, false).unwrap();
    assert_ne!(a.table, b.table);
    assert!(b.manifest.scenarios.iter().all(|s| s.master_seed == 99));
}

fn sim_analysis(input: &Path) -> AnalysisConfig {
    let cfg = serde_json::json!({
        "analyze": {
            "input": input,
            "outcome": "Y",
            "treatment": "A",
            "covariates": ["W1", "W2", "W3", "W4"],
            "terms": [
                {"kind": "intercept"}, {"kind": "treatment"},
                {"kind": "main", "col": "W1"}, {"kind": "main", "col": "W2"},
                {"kind": "main", "col": "W3"}, {"kind": "main", "col": "W4"},
                {"kind": "interaction", "col": "W1"}, {"kind": "interaction", "col": "W3"}
            ],
            "splits": 4,
            "reruns": 3,
            "seed": 5
        }
    });
    Config::parse(&cfg.to_string(), "inline").unwrap().analyze.unwrap()
}

#[test]
fn dumped_data_round_trips_through_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let sim = smoke(800, 2);
    let out = simulate::run(&sim, &RunOptions::new(dir.path()), true).unwrap();
    let name = format!("data-{}.csv", sim.scenarios[0].label());
    assert!(out.manifest.files.contains(&name));
    let cfg = sim_analysis(&dir.path().join(&name));
    let opts = RunOptions {
        out_dir: dir.path().join("analysis"),
        seed: None,
        diagnostics: true,
    };
    let report = analyze::run(&cfg, &opts).unwrap();
    assert_eq!(report.rows_used, 800);
    let tmle = report.rows.iter().find(|r| r.estimator == EstimatorKind::Tmle).unwrap();
    assert!(tmle.ci_lo <= 0.75 && 0.75 <= tmle.ci_hi, "{tmle:?}");
    assert_eq!(tmle.reruns, 3);
    assert!(tmle.split_sd.unwrap() > 0.0);
    let ols = report.rows.iter().find(|r| r.estimator == EstimatorKind::Ols).unwrap();
    assert!(ols.split_sd.is_none());
    assert_schema_valid(&dir.path().join("analysis/comparison.json"));
    let intervals = std::fs::read_to_string(dir.path().join("analysis/intervals.csv")).unwrap();
    assert!(intervals.starts_with("estimator,estimate,lo,hi\n"));
    assert_eq!(intervals.lines().count(), 4);

    let again = dir.path().join("again");
    let opts2 = RunOptions {
        out_dir: again.clone(),
        seed: None,
        diagnostics: false,
    };
    analyze::run(&cfg, &opts2).unwrap();
    for f in ["comparison.csv", "intervals.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("analysis").join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap()
        );
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stmle"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    write(
        &bad,
        r#"{"simulate": {"scenarios": [{"n": 100, "error_regime": "laplace", "assignment": "balanced", "reps": 2, "master_seed": 1}]}}"#,
    );
    let o = bin().args(["simulate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error_regime"), "{err}");

    let o = bin().arg("simulate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    let good = dir.path().join("good.json");
    write(
        &good,
        r#"{"simulate": {"scenarios": [{"n": 120, "error_regime": "gaussian", "assignment": "imbalanced", "reps": 2, "splits": 2, "master_seed": 1}], "estimators": ["ols", "tmle"]}}"#,
    );
    let out = dir.path().join("out");
    let o = bin()
        .args(["simulate", "--threads", "2", "--config"])
        .arg(&good)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("metrics.csv").exists());

    let missing = dir.path().join("missing.json");
    write(
        &missing,
        r#"{"analyze": {"input": "nope.csv", "outcome": "y", "treatment": "t", "covariates": [], "terms": [{"kind": "treatment"}]}}"#,
    );
    let never = dir.path().join("never");
    let o = bin()
        .args(["analyze", "--config"])
        .arg(&missing)
        .arg("--out-dir")
        .arg(&never)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!never.exists());
}

#[test]
fn selftest_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().arg("selftest").arg("--out-dir").arg(dir.path()).output().unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert_schema_valid(&dir.path().join("selftest.json"));
}

/// Runs when `STMLE_NSW_CSV` points at the experimental NSW sample.
#[test]
fn nsw_pipeline_when_data_is_available() {
    let Ok(path) = std::env::var("STMLE_NSW_CSV") else {
        eprintln!("STMLE_NSW_CSV not set; skipping");
        return;
    };
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/nsw.json")).unwrap();
    let mut cfg = Config::parse(&text, "nsw.json").unwrap().analyze.unwrap();
    cfg.input = path.into();
    cfg.reruns = 2;
    let dir = tempfile::tempdir().unwrap();
    let report = analyze::run(&cfg, &RunOptions::new(dir.path())).unwrap();
    assert_eq!(report.rows_used, 445);
    assert_eq!(report.treated, 185);
    assert_schema_valid(&dir.path().join("comparison.json"));
}
