//! End-to-end command tests: the simulate → ingest → fit → att →
//! trend-test pipeline on a toy world, exit codes, reproducibility, and the
//! NA path of the trend test.

use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn msms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msms"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_json(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn toy_scenario_json(theta: f64, window_end: f64, adoption: (f64, f64)) -> serde_json::Value {
    json!({
        "seed": 5,
        "n_patients": 500,
        "window": {"start": 0.0, "end": window_end},
        "model": {
            "frailty": false,
            "draws": 1,
            "covariates": {
                "mc": "overall", "sex": true, "age": false, "age_quadratic": false,
                "cci": false
            },
            "grids": {
                "hospital_to_home": {"starts": [1.0, 3.0, 8.0], "horizon": null},
                "hospital_to_death": {"starts": [1.0], "horizon": null},
                "home_to_readmission": {"starts": [1.0, 10.0], "horizon": 30.0},
                "home_to_death": {"starts": [1.0, 90.0], "horizon": 365.0}
            }
        },
        "truth": {
            "baseline_rates": {
                "hospital_to_home": [0.09, 0.13, 0.11],
                "hospital_to_death": [0.004],
                "home_to_readmission": [0.0012, 0.0008],
                "home_to_death": [0.00025, 0.0001]
            },
            "beta": {
                "hospital_to_home": {"mc": theta, "sex": -0.02},
                "hospital_to_death": {"sex": -0.08},
                "home_to_readmission": {"mc": theta, "sex": 0.01},
                "home_to_death": {"mc": theta, "sex": -0.22}
            }
        },
        "population": {"fresh_admission_rate": 0.0005, "adoption_window": {"start": adoption.0, "end": adoption.1}},
        "covariate_timing": "exit"
    })
}

fn model_json(trends: bool) -> serde_json::Value {
    json!({
        "frailty": false,
        "draws": 1,
        "covariates": {
            "mc": "overall", "sex": true, "age": false, "age_quadratic": false,
            "cci": false, "quarterly_trends": trends
        },
        "grids": {
            "hospital_to_home": {"starts": [1.0, 3.0, 8.0], "horizon": null},
            "hospital_to_death": {"starts": [1.0], "horizon": null},
            "home_to_readmission": {"starts": [1.0, 10.0], "horizon": 30.0},
            "home_to_death": {"starts": [1.0, 90.0], "horizon": 365.0}
        }
    })
}

struct Pipeline {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

#[test]
fn simulate_ingest_fit_att_pipeline() {
    let p = Pipeline::new();
    write_json(&p.path("scenario.json"), &toy_scenario_json(-0.3, 7600.0, (1369.0, 4000.0)));
    write_json(&p.path("model.json"), &model_json(false));

    let out = msms(&["simulate", "--scenario", &p.arg("scenario.json"), "--out", &p.arg("sim")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["events.csv", "spells.csv", "truth.json", "manifest.json"] {
        assert!(p.path("sim").join(f).exists(), "{f} missing");
    }

    // Ingest reproduces the simulated spells (exit-time covariate recording).
    let out = msms(&[
        "ingest",
        "--events", &p.arg("sim/events.csv"),
        "--window-start", "0",
        "--window-end", "7600",
        "--out", &p.arg("ing"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let simulated = msms_core::spells::load_spell_csv(p.path("sim/spells.csv")).unwrap();
    let ingested = msms_core::spells::load_spell_csv(p.path("ing/spells.csv")).unwrap();
    assert_eq!(simulated, ingested);
    assert_eq!(
        std::fs::read_to_string(p.path("ing/exclusions.ndjson")).unwrap(),
        ""
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("no exclusions"), "{stdout}");

    // Fit converges with exit 0 and is seed-reproducible byte for byte.
    let fit_args = |outdir: &str| {
        vec![
            "fit".to_string(),
            "--spells".into(), p.arg("sim/spells.csv"),
            "--model".into(), p.arg("model.json"),
            "--seed".into(), "7".into(),
            "--threads".into(), "2".into(),
            "--out".into(), p.arg(outdir),
        ]
    };
    let out = msms(&fit_args("fit1").iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged"));
    let out = msms(&fit_args("fit2").iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(p.path("fit1/coefficients.csv")).unwrap(),
        std::fs::read(p.path("fit2/coefficients.csv")).unwrap()
    );
    let fit_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.path("fit1/fit.json")).unwrap()).unwrap();
    assert_eq!(fit_json["converged"], json!(true));
    assert!(p.path("fit1/cov.bin").exists());
    assert!(p.path("fit1/manifest.json").exists());

    // Iteration cap triggers the non-convergence exit code.
    let out = msms(&[
        "fit",
        "--spells", &p.arg("sim/spells.csv"),
        "--model", &p.arg("model.json"),
        "--max-iter", "1",
        "--out", &p.arg("fitcap"),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_converged"));

    // Duration effects from the converged fit.
    let out = msms(&[
        "att",
        "--fit", &p.arg("fit1"),
        "--spells", &p.arg("sim/spells.csv"),
        "--draws", "50",
        "--eps-draws", "10",
        "--out", &p.arg("att"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let att_csv = std::fs::read_to_string(p.path("att/att.csv")).unwrap();
    assert_eq!(att_csv.lines().count(), 5, "header + 4 transitions: {att_csv}");
    assert!(att_csv.starts_with("transition,group,estimate_days,std_error"));
    // The discharge hazard effect is strongly negative, so the stay length
    // effect must be positive.
    let t1 = att_csv.lines().nth(1).unwrap();
    let days: f64 = t1.split(',').nth(2).unwrap().parse().unwrap();
    assert!(days > 0.0, "{t1}");
}

#[test]
fn trend_test_reports_p_values_and_na() {
    let p = Pipeline::new();
    // Pre-reform world: window ends before any adoption.
    write_json(&p.path("scenario.json"), &toy_scenario_json(0.0, 1339.0, (1370.0, 1400.0)));
    write_json(&p.path("model.json"), &model_json(true));
    let out = msms(&["simulate", "--scenario", &p.arg("scenario.json"), "--out", &p.arg("sim")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = msms(&[
        "trend-test",
        "--spells", &p.arg("sim/spells.csv"),
        "--model", &p.arg("model.json"),
        "--cutoff", "1999-08-31",
        "--out", &p.arg("trend"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(p.path("trend/trend_test.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for line in csv.lines().skip(1) {
        let p_value = line.split(',').nth(3).unwrap();
        if p_value != "NA" {
            let v: f64 = p_value.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    // Cubic variant runs too.
    let out = msms(&[
        "trend-test",
        "--spells", &p.arg("sim/spells.csv"),
        "--model", &p.arg("model.json"),
        "--cutoff", "1339",
        "--cubic",
        "--out", &p.arg("trend3"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // NA path: ever-adopters appear only in hospital spells, so the home
    // transitions carry no information about the treated trend.
    let simulated = msms_core::spells::load_spell_csv(p.path("sim/spells.csv")).unwrap();
    let red: Vec<_> = simulated
        .iter()
        .filter(|s| {
            s.adoption_day.is_none() || s.origin == msms_core::states::State::Hospital
        })
        .cloned()
        .collect();
    msms_core::spells::write_spell_csv(&red, &p.path("reduced.csv")).unwrap();
    let out = msms(&[
        "trend-test",
        "--spells", &p.arg("reduced.csv"),
        "--model", &p.arg("model.json"),
        "--cutoff", "1339",
        "--out", &p.arg("trendna"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(p.path("trendna/trend_test.csv")).unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(csv.contains("NA"), "expected NA rows:\n{csv}\n{stdout}");
    let na_rows: Vec<&str> = csv.lines().skip(1).filter(|l| l.contains("NA")).collect();
    assert!(na_rows.iter().any(|l| l.starts_with('3') || l.starts_with('4')));
}

#[test]
fn input_errors_exit_2() {
    let p = Pipeline::new();
    // Missing file.
    let out = msms(&[
        "fit",
        "--spells", &p.arg("nope.csv"),
        "--model", &p.arg("model.json"),
        "--out", &p.arg("out"),
    ]);
    assert_eq!(code(&out), 2);

    // Unknown model key.
    write_json(&p.path("bad_model.json"), &json!({"coviarates": {}}));
    std::fs::write(p.path("spells.csv"), "").unwrap();
    let out = msms(&[
        "fit",
        "--spells", &p.arg("spells.csv"),
        "--model", &p.arg("bad_model.json"),
        "--out", &p.arg("out"),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    // Scenario validation failure.
    write_json(&p.path("bad_scenario.json"), &json!({"seed": 1}));
    let out = msms(&["simulate", "--scenario", &p.arg("bad_scenario.json"), "--out", &p.arg("o")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ingest_flags_overlapping_stays_with_exit_2() {
    let p = Pipeline::new();
    let events = "\
patient_id,kind,day,department_id,hospital_id,specialty,drg,diagnosis,region,dept_size,sex,birth_day,cci,adoption_day
ok,admit,0.0,d1,h1,surgery,g1,3,r1,5.0,1,-10000.0,0.0,
ok,discharge,6.0,,,,,,,,,,,
bad,admit,0.0,d1,h1,surgery,g1,3,r1,5.0,0,-9000.0,1.0,
bad,admit,2.0,d1,h1,surgery,g1,3,r1,5.0,0,-9000.0,1.0,
";
    std::fs::write(p.path("events.csv"), events).unwrap();
    let out = msms(&[
        "ingest",
        "--events", &p.arg("events.csv"),
        "--window-start", "1996-01-01",
        "--window-end", "1997-01-01",
        "--out", &p.arg("ing"),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(p.path("ing/exclusions.ndjson")).unwrap();
    assert!(report.contains("overlapping_stays"));
    assert!(report.contains("\"bad\""));
    // The clean patient still came through.
    let spells = msms_core::spells::load_spell_csv(p.path("ing/spells.csv")).unwrap();
    assert!(spells.iter().all(|s| s.patient_id == "ok"));
    assert!(!spells.is_empty());
}
