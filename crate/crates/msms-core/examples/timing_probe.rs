//! Rough timing of the headline estimation workload; run with
//! `cargo run --release -p msms-core --example timing_probe`.

use msms_core::design::{build_design, McMode, ModelSpec};
use msms_core::estimate::LikelihoodEngine;
use msms_core::params::ParamLayout;
use msms_core::simulate::{
    simulate_population, CovariateTiming, PopulationSpec, ScenarioSpec, TruthBeta, TruthSpec,
    Window,
};
use std::collections::BTreeMap;
use std::time::Instant;

fn main() {
    let mut model = ModelSpec::default();
    model.frailty = true;
    model.draws = 100;
    model.covariates.mc = McMode::Overall;

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
    for (tr, theta) in [
        ("hospital_to_home", -0.06),
        ("hospital_to_death", 0.0),
        ("home_to_readmission", 0.18),
        ("home_to_death", 0.06),
    ] {
        let m = match tr {
            "hospital_to_home" => &mut beta.hospital_to_home,
            "hospital_to_death" => &mut beta.hospital_to_death,
            "home_to_readmission" => &mut beta.home_to_readmission,
            _ => &mut beta.home_to_death,
        };
        m.insert("mc".into(), theta);
        m.insert("sex".into(), -0.05);
        m.insert("age".into(), 0.002);
        m.insert("age_sq".into(), 0.05);
        m.insert("cci".into(), 0.02);
    }

    let scenario = ScenarioSpec {
        seed: 1,
        n_patients: 50_000,
        window: Window {
            start: 0.0,
            end: 7600.0,
        },
        model,
        truth: TruthSpec {
            baseline_rates: rates,
            beta,
            loadings: [0.3; 4],
            pretrend_per_quarter: [0.0; 4],
        },
        population: PopulationSpec::default(),
        covariate_timing: CovariateTiming::Entry,
    };

    let t0 = Instant::now();
    let out = simulate_population(&scenario).unwrap();
    println!("simulate 50k patients: {:?}, {} spells", t0.elapsed(), out.spells.len());

    let t0 = Instant::now();
    let design = build_design(&out.spells, &scenario.model).unwrap();
    let layout = ParamLayout::build(
        scenario.model.grids.as_array(),
        design.schema.columns.clone(),
        true,
    );
    println!("design: {:?}, {} params", t0.elapsed(), layout.len());

    let t0 = Instant::now();
    let engine =
        LikelihoodEngine::new(&out.spells, design.rows.clone(), layout.clone(), 100, 1, 0)
            .unwrap();
    println!("engine build (incl. draws): {:?}", t0.elapsed());

    let start = msms_core::estimate::starting_values(&out.spells, &layout);
    let t0 = Instant::now();
    let (f, _g) = engine.loglik_grad(&start).unwrap();
    println!("one loglik+grad: {:?} (logL {f:.1})", t0.elapsed());

    let t0 = Instant::now();
    for _ in 0..5 {
        engine.loglik_grad(&start).unwrap();
    }
    println!("5 more evals: {:?}", t0.elapsed());
}
