//! End-to-end fit smoke run on a mid-size simulated dataset; prints
//! convergence diagnostics and recovery of the treatment coefficients.
//! `cargo run --release -p msms-core --example fit_probe [n_patients]`

use msms_core::design::{McMode, ModelSpec};
use msms_core::estimate::{fit, FitOptions};
use msms_core::params::ParamLayout;
use msms_core::simulate::{
    simulate_population, CovariateTiming, PopulationSpec, ScenarioSpec, TruthBeta, TruthSpec,
    Window,
};
use std::collections::BTreeMap;
use std::time::Instant;

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8000);
    let fresh_days: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1500.0);
    let m_draws: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let seed: u64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(42);
    let draw_seed: u64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let tol: f64 = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-8);
    let mut model = ModelSpec::default();
    model.frailty = true;
    model.draws = m_draws;
    model.covariates.mc = McMode::Overall;

    let mut rates = BTreeMap::new();
    rates.insert(
        "hospital_to_home".into(),
        vec![0.08, 0.12, 0.13, 0.13, 0.125, 0.12, 0.115, 0.105, 0.10],
    );
    rates.insert(
        "hospital_to_death".into(),
        vec![0.008, 0.007, 0.006, 0.0056, 0.005, 0.004],
    );
    rates.insert(
        "home_to_readmission".into(),
        vec![
            0.0036, 0.0033, 0.0030, 0.0027, 0.0024, 0.0021, 0.0018, 0.0015, 0.0012,
        ],
    );
    rates.insert(
        "home_to_death".into(),
        vec![
            0.0009, 0.0006, 0.00036, 0.0003, 0.00024, 0.00021, 0.00018, 0.00015, 0.00015,
        ],
    );
    let mut beta = TruthBeta::default();
    let thetas = [-0.06, 0.0, 0.18, 0.06];
    for (i, m) in [
        &mut beta.hospital_to_home,
        &mut beta.hospital_to_death,
        &mut beta.home_to_readmission,
        &mut beta.home_to_death,
    ]
    .into_iter()
    .enumerate()
    {
        m.insert("mc".into(), thetas[i]);
        m.insert("sex".into(), -0.05);
        m.insert("age".into(), 0.002);
        m.insert("age_sq".into(), 0.05);
        m.insert("cci".into(), 0.02);
    }

    let scenario = ScenarioSpec {
        seed,
        n_patients: n,
        window: Window {
            start: 0.0,
            end: 7600.0,
        },
        model: model.clone(),
        truth: TruthSpec {
            baseline_rates: rates,
            beta,
            loadings: [0.3; 4],
            pretrend_per_quarter: [0.0; 4],
        },
        population: PopulationSpec {
            fresh_admission_rate: 1.0 / fresh_days,
            ..PopulationSpec::default()
        },
        covariate_timing: CovariateTiming::Entry,
    };

    let out = simulate_population(&scenario).unwrap();
    println!("{} spells from {} patients", out.spells.len(), n);

    let t0 = Instant::now();
    let result = fit(
        &out.spells,
        &model,
        &FitOptions {
            seed: Some(draw_seed),
            tol,
            max_iter: 2000,
            ..FitOptions::default()
        },
    )
    .unwrap();
    println!(
        "fit: {:?}; converged={} iters={} gradnorm={:.2e} (thr {:.2e}) logL={:.2} clamps={}",
        t0.elapsed(),
        result.converged,
        result.iterations,
        result.grad_norm,
        result.grad_threshold,
        result.loglik,
        result.clamps_at_optimum,
    );
    let schema_cols = result.schema.columns.clone();
    let layout = ParamLayout::build(model.grids.as_array(), schema_cols, true);
    let truth = scenario.truth_params(&layout);
    let mut inside = 0;
    let mut total = 0;
    for (label, tv) in &truth {
        let est = result.estimate(label).unwrap();
        let se = result.std_error(label).unwrap_or(f64::NAN);
        let z = (est - tv) / se;
        total += 1;
        if z.abs() <= 3.0 {
            inside += 1;
        }
        if label.contains("mc") || label.contains("phi") || label.contains("psi") {
            println!("{label:>16}: truth {tv:+.4} est {est:+.4} (se {se:.4}, z {z:+.2})");
        }
    }
    println!("coverage at 3 SE: {inside}/{total}");
}
