#![allow(dead_code)] // shared across test binaries; each uses a subset

//! Shared scenario builders and independent reference implementations for
//! integration tests. The reference likelihood here is deliberately written
//! as plain per-spell loops over dense rows, sharing nothing with the
//! engine's sufficient-statistic path.

use msms_core::baseline::BaselineGrid;
use msms_core::design::{Design, McMode, ModelSpec};
use msms_core::estimate::{FrailtyDraws, LikelihoodEngine};
use msms_core::params::ParamLayout;
use msms_core::simulate::{CovariateTiming, PopulationSpec, ScenarioSpec, TruthBeta, TruthSpec, Window};
use msms_core::spells::SpellRecord;
use msms_core::states::Transition;
use std::collections::BTreeMap;

/// Toy grids: a handful of intervals per transition, bounded home grids.
pub fn toy_grids(model: &mut ModelSpec) {
    model.grids.hospital_to_home = BaselineGrid::new(vec![1.0, 3.0, 8.0], None).unwrap();
    model.grids.hospital_to_death = BaselineGrid::new(vec![1.0, 5.0], None).unwrap();
    model.grids.home_to_readmission = BaselineGrid::new(vec![1.0, 10.0], Some(30.0)).unwrap();
    model.grids.home_to_death = BaselineGrid::new(vec![1.0, 90.0], Some(365.0)).unwrap();
}

pub fn toy_rates() -> BTreeMap<String, Vec<f64>> {
    let mut rates = BTreeMap::new();
    rates.insert("hospital_to_home".into(), vec![0.09, 0.13, 0.11]);
    rates.insert("hospital_to_death".into(), vec![0.004, 0.003]);
    rates.insert("home_to_readmission".into(), vec![0.0012, 0.0008]);
    rates.insert("home_to_death".into(), vec![0.00025, 0.0001]);
    rates
}

/// Two-covariate toy scenario (mc, sex) on the toy grids.
pub fn toy_scenario(seed: u64, n_patients: usize, frailty: bool) -> ScenarioSpec {
    let mut model = ModelSpec::default();
    model.frailty = frailty;
    model.draws = 30;
    model.seed = seed ^ 0x5eed;
    model.covariates.mc = McMode::Overall;
    model.covariates.sex = true;
    model.covariates.age = false;
    model.covariates.age_quadratic = false;
    model.covariates.cci = false;
    toy_grids(&mut model);

    let mut beta = TruthBeta::default();
    beta.hospital_to_home.insert("mc".into(), -0.06);
    beta.hospital_to_home.insert("sex".into(), -0.02);
    beta.hospital_to_death.insert("sex".into(), -0.08);
    beta.home_to_readmission.insert("mc".into(), 0.18);
    beta.home_to_readmission.insert("sex".into(), 0.01);
    beta.home_to_death.insert("mc".into(), 0.06);
    beta.home_to_death.insert("sex".into(), -0.22);

    ScenarioSpec {
        seed,
        n_patients,
        window: Window {
            start: 0.0,
            end: 7600.0,
        },
        model,
        truth: TruthSpec {
            baseline_rates: toy_rates(),
            beta,
            loadings: if frailty {
                [0.3, 0.3, 0.3, 0.3]
            } else {
                [0.0; 4]
            },
            pretrend_per_quarter: [0.0; 4],
        },
        population: PopulationSpec::default(),
        covariate_timing: CovariateTiming::Entry,
    }
}

/// Engine + design + layout for a spell set under a model spec.
pub fn prepare(
    spells: &[SpellRecord],
    spec: &ModelSpec,
    m: usize,
    seed: u64,
    threads: usize,
) -> (LikelihoodEngine, Design, ParamLayout) {
    let design = msms_core::design::build_design(spells, spec).unwrap();
    let layout = ParamLayout::build(
        spec.grids.as_array(),
        design.schema.columns.clone(),
        spec.frailty,
    );
    let engine = LikelihoodEngine::new(
        spells,
        design.rows.clone(),
        layout.clone(),
        m,
        seed,
        threads,
    )
    .unwrap();
    (engine, design, layout)
}

/// Truth vector in layout order for a scenario.
pub fn truth_vector(scenario: &ScenarioSpec, layout: &ParamLayout) -> Vec<f64> {
    scenario
        .truth_params(layout)
        .into_iter()
        .map(|(_, v)| v)
        .collect()
}

/// Headline recovery scenario: default day grids, five covariates including
/// the treatment indicator, treatment effects patterned
/// (−0.06, 0.0, +0.18, +0.06) across the four transitions, all free
/// loadings at 0.3.
pub fn recovery_scenario(seed: u64, n_patients: usize) -> ScenarioSpec {
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
        vec![0.008, 0.007, 0.006, 0.0056, 0.005, 0.004],
    );
    // Home-event rates high enough that the cross-state blocks identify the
    // free loadings well; with rare home events the loadings ride a flat
    // likelihood ridge and finite-M noise swamps the reported SEs.
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

    ScenarioSpec {
        seed,
        n_patients,
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
        population: PopulationSpec {
            // Episode frequency in the ballpark of ~2 hospital stays per
            // patient; the mixture bias of the simulated likelihood at
            // fixed M grows with the per-patient spell count.
            fresh_admission_rate: 1.0 / 6000.0,
            ..PopulationSpec::default()
        },
        covariate_timing: CovariateTiming::Entry,
    }
}

/// Pre-reform-window scenario for trend-test calibration: no treatment in
/// the window (adoption after the cutoff), optional injected treated trend.
pub fn pretrend_scenario(seed: u64, n_patients: usize, slope: f64) -> ScenarioSpec {
    let mut scenario = recovery_scenario(seed, n_patients);
    scenario.model.frailty = false;
    scenario.model.covariates.cci = false;
    scenario.model.covariates.age_quadratic = false;
    scenario.model.covariates.quarterly_trends = true;
    scenario.window = Window {
        start: 0.0,
        end: 1339.0, // 1999-08-31
    };
    scenario.population.adoption_window = Window {
        start: 1370.0,
        end: 1400.0,
    };
    for m in [
        &mut scenario.truth.beta.hospital_to_home,
        &mut scenario.truth.beta.hospital_to_death,
        &mut scenario.truth.beta.home_to_readmission,
        &mut scenario.truth.beta.home_to_death,
    ] {
        m.remove("cci");
        m.remove("age_sq");
        m.remove("mc");
    }
    scenario.truth.loadings = [0.0; 4];
    scenario.truth.pretrend_per_quarter = [slope; 4];
    scenario
}

/// Independent scalar log-likelihood: dense rows, per-spell loops, explicit
/// interval overlap sums; mixes over the supplied draws with a plain
/// log-sum-exp. `draws` empty means no heterogeneity.
pub fn reference_loglik(
    spells: &[SpellRecord],
    design: &Design,
    layout: &ParamLayout,
    params: &[f64],
    draws: Option<&FrailtyDraws>,
) -> f64 {
    let p = design.schema.columns.len();
    let dense: Vec<Vec<f64>> = design.rows.iter().map(|r| r.to_dense(p)).collect();
    let grids = layout.grids();

    // Per-patient grouping in first-appearance order (mirrors the engine's
    // documented convention, not its code).
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<usize>> = std::collections::HashMap::new();
    for (i, s) in spells.iter().enumerate() {
        groups
            .entry(s.patient_id.as_str())
            .or_insert_with(|| {
                order.push(s.patient_id.as_str());
                Vec::new()
            })
            .push(i);
    }

    let cumulative = |tr: Transition, t: f64| -> f64 {
        let grid = &grids[tr.index()];
        let mut total = 0.0;
        for k in 0..grid.n_intervals() {
            let lo = grid.starts[k];
            let hi = grid.end(k);
            let overlap = (t.min(hi) - lo).max(0.0);
            total += params[layout.log_alpha_index(tr, k)].exp() * overlap;
        }
        total
    };
    let interval_of = |tr: Transition, t: f64| -> usize {
        let grid = &grids[tr.index()];
        let mut k = grid.n_intervals() - 1;
        for i in 0..grid.n_intervals() {
            if t >= grid.starts[i] && (t < grid.end(i) || (i == grid.n_intervals() - 1)) {
                k = i;
                break;
            }
        }
        k
    };

    let spell_logf = |i: usize, eps: (f64, f64)| -> f64 {
        let s = &spells[i];
        let x = &dense[i];
        let mut logf = 0.0;
        for &tr in s.origin.transitions() {
            let beta = layout.beta_slice(tr, params);
            let mut xb: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            if layout.frailty() {
                let free = |t: Transition| params[layout.loading_index(t).unwrap()];
                let (psi, phi) = match tr {
                    Transition::Discharge | Transition::HospitalDeath => (1.0, free(tr)),
                    _ => (free(tr), 1.0),
                };
                xb += psi * eps.0 + phi * eps.1;
            }
            logf -= xb.exp() * cumulative(tr, s.duration);
            if s.event == Some(tr) {
                let k = interval_of(tr, s.duration);
                logf += params[layout.log_alpha_index(tr, k)] + xb;
            }
        }
        logf
    };

    let mut total = 0.0;
    for (pi, pid) in order.iter().enumerate() {
        let idxs = &groups[pid];
        match draws {
            None => {
                for &i in idxs {
                    total += spell_logf(i, (0.0, 0.0));
                }
            }
            Some(d) => {
                let eps = d.for_patient(pi);
                let ls: Vec<f64> = eps
                    .iter()
                    .map(|&e| idxs.iter().map(|&i| spell_logf(i, e)).sum::<f64>())
                    .collect();
                let mx = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = ls.iter().map(|l| (l - mx).exp()).sum();
                total += mx + sum.ln() - (eps.len() as f64).ln();
            }
        }
    }
    total
}

/// Random parameter vector in a sensible range around plausible values.
pub fn random_params(layout: &ParamLayout, rng: &mut impl rand::Rng) -> Vec<f64> {
    use msms_core::params::BlockKind;
    layout
        .entries()
        .iter()
        .map(|e| match e.block {
            BlockKind::LogBaseline => rng.gen_range(-7.0..-1.0),
            BlockKind::Beta => rng.gen_range(-0.4..0.4),
            BlockKind::Loading => rng.gen_range(-0.6..0.6),
        })
        .collect()
}

/// Simulate spells from a scenario (panics on invalid scenarios).
pub fn spells_of(scenario: &ScenarioSpec) -> Vec<SpellRecord> {
    msms_core::simulate::simulate_population(scenario).unwrap().spells
}

/// Share of entries within `k` reported standard errors of the truth.
pub fn coverage(estimates: &[f64], ses: &[f64], truth: &[f64], k: f64) -> (usize, usize, Vec<usize>) {
    let mut inside = 0;
    let mut misses = Vec::new();
    for i in 0..estimates.len() {
        if (estimates[i] - truth[i]).abs() <= k * ses[i] {
            inside += 1;
        } else {
            misses.push(i);
        }
    }
    (inside, estimates.len(), misses)
}
