//! One pre-trend test replication end to end, for timing and sanity.
//! `cargo run --release -p msms-core --example trend_probe [n] [slope] [reps]`

use msms_core::design::{build_pretrend_design, McMode, ModelSpec};
use msms_core::estimate::{fit_prepared, wald_test, FitOptions};
use msms_core::simulate::{
    simulate_population, CovariateTiming, PopulationSpec, ScenarioSpec, TruthBeta, TruthSpec,
    Window,
};
use std::collections::BTreeMap;
use std::time::Instant;

fn scenario(seed: u64, n: usize, slope: f64) -> ScenarioSpec {
    let mut model = ModelSpec::default();
    model.frailty = false;
    model.covariates.mc = McMode::Overall;
    model.covariates.cci = false;
    model.covariates.age_quadratic = false;
    model.covariates.quarterly_trends = true;

    let mut rates = BTreeMap::new();
    rates.insert(
        "hospital_to_home".into(),
        vec![0.08, 0.12, 0.13, 0.13, 0.125, 0.12, 0.115, 0.105, 0.10],
    );
    rates.insert(
        "hospital_to_death".into(),
        vec![0.004, 0.0035, 0.003, 0.0028, 0.0025, 0.002],
    );
    rates.insert(
        "home_to_readmission".into(),
        vec![
            0.0012, 0.0011, 0.0010, 0.0009, 0.0008, 0.0007, 0.0006, 0.0005, 0.0004,
        ],
    );
    rates.insert(
        "home_to_death".into(),
        vec![
            0.0003, 0.0002, 0.00012, 0.0001, 0.00008, 0.00007, 0.00006, 0.00005, 0.00005,
        ],
    );
    let mut beta = TruthBeta::default();
    for m in [
        &mut beta.hospital_to_home,
        &mut beta.hospital_to_death,
        &mut beta.home_to_readmission,
        &mut beta.home_to_death,
    ] {
        m.insert("sex".into(), -0.05);
        m.insert("age".into(), 0.002);
    }
    ScenarioSpec {
        seed,
        n_patients: n,
        window: Window {
            start: 0.0,
            end: 1339.0,
        },
        model,
        truth: TruthSpec {
            baseline_rates: rates,
            beta,
            loadings: [0.0; 4],
            pretrend_per_quarter: [slope; 4],
        },
        population: PopulationSpec {
            adoption_window: Window {
                start: 1370.0,
                end: 1400.0,
            },
            ..PopulationSpec::default()
        },
        covariate_timing: CovariateTiming::Entry,
    }
}

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let slope: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let reps: u64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let fit_frailty: bool = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(false);
    let common_trends: bool = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(true);
    let mut rejections = 0usize;
    for r in 0..reps {
        let t0 = Instant::now();
        let sc = scenario(9000 + r, n, slope);
        let spells = simulate_population(&sc).unwrap().spells;
        let mut fit_model = sc.model.clone();
        fit_model.frailty = fit_frailty;
        fit_model.covariates.quarterly_trends = common_trends;
        let (design, kept) = build_pretrend_design(&spells, &fit_model, 1339.0, false).unwrap();
        let window: Vec<_> = kept.iter().map(|&i| spells[i].clone()).collect();
        let fitres = fit_prepared(
            &window,
            &design,
            &fit_model,
            &FitOptions {
                tol: 3e-6,
                ..FitOptions::default()
            },
        )
        .unwrap();
        let test = wald_test(&fitres, &["t1:pretrend_q", "t1:pretrend_q2"]).unwrap();
        let t3 = wald_test(&fitres, &["t3:pretrend_q", "t3:pretrend_q2"]).unwrap();
        let t4 = wald_test(&fitres, &["t4:pretrend_q", "t4:pretrend_q2"]).unwrap();
        if test.p_value < 0.05 {
            rejections += 1;
        }
        println!(
            "rep {r}: {} spells, converged={} iters={} p1={:.4} p3={:.4} p4={:.4} ({:?})",
            window.len(),
            fitres.converged,
            fitres.iterations,
            test.p_value,
            t3.p_value,
            t4.p_value,
            t0.elapsed()
        );
    }
    println!("rejections: {rejections}/{reps}");
}
