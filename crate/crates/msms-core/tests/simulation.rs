//! Simulator-level checks: distributional conformance of the sampler,
//! calibration of transition shares against closed-form cumulative-incidence
//! targets, and the events→ingest round trip.

mod common;

use common::*;
use msms_core::baseline::{BaselineGrid, PiecewiseBaseline};
use msms_core::ingest::{build_spells, summarize};
use msms_core::simulate::{invert_exit, simulate_population, CovariateTiming, SpellExit};
use msms_core::spells::{load_spell_csv, write_spell_csv};
use msms_core::states::Transition;
use rand::Rng;
use std::collections::BTreeMap;

#[test]
fn sampled_durations_pass_kolmogorov_smirnov_against_the_analytic_cdf() {
    let mut rng = msms_core::rng::stream(50, "ks");
    let n = 10_000usize;
    for grid_no in 0..20 {
        let intervals = rng.gen_range(1..=6usize);
        let mut starts = vec![1.0];
        for _ in 1..intervals {
            let prev = *starts.last().unwrap();
            starts.push(prev + rng.gen_range(0.5..10.0));
        }
        let steps: Vec<f64> = (0..intervals).map(|_| rng.gen_range(0.01..0.6)).collect();
        let b = PiecewiseBaseline::new(BaselineGrid::new(starts, None).unwrap(), steps).unwrap();
        let k = rng.gen_range(0.3..2.5);

        let mut samples: Vec<f64> = (0..n)
            .map(|_| {
                let e = -(1.0f64 - rng.gen::<f64>()).ln();
                match invert_exit(&[(Transition::Discharge, &b, k)], e, 0.5) {
                    SpellExit::Event { duration, .. } => duration,
                    SpellExit::PastHorizons => unreachable!("unbounded grid"),
                }
            })
            .collect();
        samples.sort_by(|a, c| a.partial_cmp(c).unwrap());
        let cdf = |t: f64| 1.0 - (-k * b.cumulative(t)).exp();
        let mut d = 0.0f64;
        for (i, &t) in samples.iter().enumerate() {
            let f = cdf(t);
            d = d.max((f - i as f64 / n as f64).abs());
            d = d.max(((i + 1) as f64 / n as f64 - f).abs());
        }
        // Asymptotic critical value at α = 0.01.
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "grid {grid_no}: KS statistic {d} >= {critical}");
    }
}

/// Solve the constant-hazard home rates hitting the target cumulative
/// incidences by 2-D Newton on the closed forms:
/// `P3 = h3/s (1 − e^{−29 s})`,
/// `P4 = h4/s (1 − e^{−29 s}) + e^{−29 s} (1 − e^{−335 h4})`, `s = h3 + h4`.
fn solve_home_rates(p3_target: f64, p4_target: f64) -> (f64, f64) {
    let p = |h3: f64, h4: f64| -> (f64, f64) {
        let s = h3 + h4;
        let w = 1.0 - (-29.0 * s).exp();
        (
            h3 / s * w,
            h4 / s * w + (-29.0 * s).exp() * (1.0 - (-335.0 * h4).exp()),
        )
    };
    let (mut h3, mut h4) = (p3_target / 29.0, p4_target / 364.0);
    for _ in 0..200 {
        let (p3, p4) = p(h3, h4);
        let (r1, r2) = (p3 - p3_target, p4 - p4_target);
        if r1.abs() < 1e-13 && r2.abs() < 1e-13 {
            break;
        }
        let d = 1e-9;
        let (p3a, p4a) = p(h3 + d, h4);
        let (p3b, p4b) = p(h3, h4 + d);
        let j = [
            [(p3a - p3) / d, (p3b - p3) / d],
            [(p4a - p4) / d, (p4b - p4) / d],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        h3 -= (r1 * j[1][1] - r2 * j[0][1]) / det;
        h4 -= (r2 * j[0][0] - r1 * j[1][0]) / det;
    }
    (h3, h4)
}

#[test]
fn transition_shares_match_cumulative_incidence_targets() {
    // Hospital: no censoring, so shares are h2/(h1+h2); pick the total for a
    // mean stay around one week. Home targets come from the solved rates.
    let targets = (0.975f64, 0.025f64, 0.020f64, 0.031f64);
    let s_hosp = 1.0 / 7.0;
    let h1 = targets.0 * s_hosp;
    let h2 = targets.1 * s_hosp;
    let (h3, h4) = solve_home_rates(targets.2, targets.3);

    let mut scenario = toy_scenario(51, 60_000, false);
    scenario.model.grids.hospital_to_home = BaselineGrid::new(vec![1.0], None).unwrap();
    scenario.model.grids.hospital_to_death = BaselineGrid::new(vec![1.0], None).unwrap();
    scenario.model.grids.home_to_readmission =
        BaselineGrid::new(vec![1.0], Some(30.0)).unwrap();
    scenario.model.grids.home_to_death = BaselineGrid::new(vec![1.0], Some(365.0)).unwrap();
    let mut rates = BTreeMap::new();
    rates.insert("hospital_to_home".into(), vec![h1]);
    rates.insert("hospital_to_death".into(), vec![h2]);
    rates.insert("home_to_readmission".into(), vec![h3]);
    rates.insert("home_to_death".into(), vec![h4]);
    scenario.truth.baseline_rates = rates;
    scenario.truth.beta = Default::default();
    scenario.population.fresh_admission_rate = 0.0;
    scenario.window.end = 40_000.0;

    let spells = spells_of(&scenario);
    // Shares are conditional on full observation; drop spells whose risk
    // window the observation end could truncate.
    let intact: Vec<_> = spells
        .iter()
        .filter(|s| s.entry_day + 4000.0 <= scenario.window.end)
        .cloned()
        .collect();
    let summary = summarize(&intact);
    let hosp = &summary.transition_shares["hospital"];
    let home = &summary.transition_shares["home"];
    assert!((hosp["1"] - targets.0).abs() < 0.005, "P(discharge) {}", hosp["1"]);
    assert!((hosp["2"] - targets.1).abs() < 0.005, "P(hospital death) {}", hosp["2"]);
    assert!((home["3"] - targets.2).abs() < 0.005, "P(readmission) {}", home["3"]);
    assert!((home["4"] - targets.3).abs() < 0.005, "P(home death) {}", home["4"]);
    assert!(
        (home["censored"] - (1.0 - targets.2 - targets.3)).abs() < 0.005,
        "P(censored at home) {}",
        home["censored"]
    );
}

#[test]
fn summary_statistics_reproduce_generator_configuration() {
    let mut scenario = toy_scenario(52, 20_000, false);
    scenario.population.female_share = 0.57;
    scenario.population.cci_mean = 1.1;
    scenario.population.age_range = (30.0, 70.0);
    let spells = spells_of(&scenario);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spells.csv");
    write_spell_csv(&spells, &path).unwrap();
    let reloaded = load_spell_csv(&path).unwrap();
    assert_eq!(reloaded, spells);

    let summary = summarize(&reloaded);
    let discharge = &summary.groups[0];
    assert_eq!(discharge.group, "hospital_to_home");
    let n = discharge.n_stays as f64;
    let se_sex = 0.5 / n.sqrt();
    assert!((discharge.sex.mean - 0.57).abs() < 4.0 * se_sex, "sex {}", discharge.sex.mean);
    // CCI is Poisson(1.1) capped far in the tail.
    assert!((discharge.cci.mean - 1.1).abs() < 0.05, "cci {}", discharge.cci.mean);
    // Ages at entry live in the configured range plus elapsed time.
    assert!(discharge.age.min >= 29.9, "min age {}", discharge.age.min);
    assert!(discharge.duration.min >= 1.0);
}

#[test]
fn events_round_trip_reproduces_simulated_spells_exactly() {
    let mut scenario = toy_scenario(53, 3000, true);
    scenario.covariate_timing = CovariateTiming::Exit;
    let out = simulate_population(&scenario).unwrap();
    let rebuilt = build_spells(
        &out.events,
        (scenario.window.start, scenario.window.end),
    );
    assert!(rebuilt.exclusions.is_empty(), "{:?}", rebuilt.exclusions.first());
    assert_eq!(rebuilt.spells.len(), out.spells.len());
    for (a, b) in out.spells.iter().zip(&rebuilt.spells) {
        assert_eq!(a, b);
    }
}
