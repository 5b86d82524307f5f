//! Synthetic trajectory generation from a fully specified model.
//!
//! The generative process is exactly the estimated model: per spell, the
//! competing transitions out of the current state have hazards
//! `k_s · λ_s0(t)` with `k_s = exp(z_s + ω_s)`, sampled by closed-form
//! inversion of the summed piecewise-constant cumulative hazard. Covariates
//! entering `z` are evaluated at the spell's entry clock time (a coherent
//! data-generating process needs the multiplier known when the spell
//! starts); `covariate_timing` controls whether the *recorded* per-spell
//! treatment indicator and age are the entry values (matching generation,
//! for estimator oracles) or the exit values (matching raw-event ingestion,
//! for round-trip checks).
//!
//! Fresh admissions (a new health episode with a different DRG) arrive as a
//! patient-level renewal process; one occurring during a home spell censors
//! it, and one occurring after the home risk window closed starts a new
//! cycle. All randomness comes from per-patient keyed substreams, so the
//! dataset is independent of generation order and bit-identical for a given
//! seed.

use crate::baseline::PiecewiseBaseline;
use crate::design::ModelSpec;
use crate::error::{Error, Result};
use crate::frailty::FrailtyLoadings;
use crate::ingest::{EventKind, RawEvent};
use crate::params::ParamLayout;
use crate::rng::{stream, unit_stream, RNG_SCHEME};
use crate::spells::{SpellRecord, HOME_DEATH_HORIZON, MIN_DURATION};
use crate::states::{State, Transition};
use crate::time::quarter_of;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Whether recorded per-spell covariates (`mc`, `age`) reflect the entry or
/// the exit clock time. Generation always uses entry values in the hazards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTiming {
    #[default]
    Entry,
    Exit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    #[serde(with = "crate::time::serde_day")]
    pub start: f64,
    #[serde(with = "crate::time::serde_day")]
    pub end: f64,
}

/// True coefficient values, keyed by design-column name per transition.
/// Recognized keys: `mc`, `mc:<specialty>`, `sex`, `age`, `age_sq`, `cci`,
/// `dept_size`, `spec:<specialty>`, `hosp:<hospital>`, `region:<region>`,
/// `diag:<group>`, `trend_q`, `trend_q2`. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthBeta {
    pub hospital_to_home: BTreeMap<String, f64>,
    pub hospital_to_death: BTreeMap<String, f64>,
    pub home_to_readmission: BTreeMap<String, f64>,
    pub home_to_death: BTreeMap<String, f64>,
}

impl TruthBeta {
    pub fn get(&self, tr: Transition) -> &BTreeMap<String, f64> {
        match tr {
            Transition::Discharge => &self.hospital_to_home,
            Transition::HospitalDeath => &self.hospital_to_death,
            Transition::Readmission => &self.home_to_readmission,
            Transition::HomeDeath => &self.home_to_death,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    /// Baseline step rates per transition, matching the model grids.
    pub baseline_rates: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub beta: TruthBeta,
    /// Free loadings (φ₁, φ₂, ψ₃, ψ₄); ignored when the model has no
    /// heterogeneity.
    #[serde(default)]
    pub loadings: [f64; 4],
    /// Per-transition slope on (ever-adopter × quarter), for trend-power
    /// scenarios; zero in calibrated worlds.
    #[serde(default)]
    pub pretrend_per_quarter: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSpec {
    pub departments: usize,
    /// Share of departments that ever adopt the new payment system.
    pub treated_share: f64,
    /// Adoption days drawn uniformly in this window.
    pub adoption_window: Window,
    pub hospitals: usize,
    pub specialties: Vec<String>,
    pub regions: usize,
    pub dept_size_range: (f64, f64),
    pub female_share: f64,
    /// Age at first admission, uniform in this range.
    pub age_range: (f64, f64),
    pub cci_mean: f64,
    pub diagnosis_groups: u8,
    pub drg_count: usize,
    /// Renewal rate (per day) of fresh admissions with a new DRG.
    pub fresh_admission_rate: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            departments: 60,
            treated_share: 0.5,
            adoption_window: Window {
                start: 1369.0,
                end: 4000.0,
            },
            hospitals: 12,
            specialties: vec![
                "surgery".into(),
                "cardiology".into(),
                "pediatrics".into(),
                "psychiatry".into(),
                "other".into(),
            ],
            regions: 5,
            dept_size_range: (2.0, 40.0),
            female_share: 0.57,
            age_range: (20.0, 90.0),
            cci_mean: 1.1,
            diagnosis_groups: 18,
            drg_count: 400,
            fresh_admission_rate: 1.0 / 1500.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_patients: usize,
    pub window: Window,
    pub model: ModelSpec,
    pub truth: TruthSpec,
    #[serde(default)]
    pub population: PopulationSpec,
    #[serde(default)]
    pub covariate_timing: CovariateTiming,
}

impl ScenarioSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let spec: ScenarioSpec = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_patients == 0 {
            return Err(Error::Scenario("no patients".into()));
        }
        if !(self.window.end > self.window.start) {
            return Err(Error::Scenario("empty observation window".into()));
        }
        let grids = self.model.grids.as_array();
        for tr in Transition::ALL {
            let rates = self
                .truth
                .baseline_rates
                .get(&tr.to_string())
                .ok_or_else(|| Error::Scenario(format!("missing baseline rates for {tr}")))?;
            PiecewiseBaseline::new(grids[tr.index()].clone(), rates.clone())?;
            for key in self.truth.beta.get(tr).keys() {
                let known = ["mc", "sex", "age", "age_sq", "cci", "dept_size", "trend_q", "trend_q2"]
                    .contains(&key.as_str())
                    || key.starts_with("mc:")
                    || key.starts_with("spec:")
                    || key.starts_with("hosp:")
                    || key.starts_with("region:")
                    || key.starts_with("diag:");
                if !known {
                    return Err(Error::Scenario(format!(
                        "unrecognized truth coefficient `{key}` for {tr}"
                    )));
                }
            }
        }
        let p = &self.population;
        if p.departments == 0 || p.hospitals == 0 || p.regions == 0 || p.specialties.is_empty() {
            return Err(Error::Scenario("empty population dimension".into()));
        }
        if p.drg_count < 2 {
            return Err(Error::Scenario(
                "at least two DRG codes are needed to draw distinct fresh admissions".into(),
            ));
        }
        if !(0.0..=1.0).contains(&p.treated_share) || !(0.0..=1.0).contains(&p.female_share) {
            return Err(Error::Scenario("shares must lie in [0,1]".into()));
        }
        if !(p.adoption_window.end >= p.adoption_window.start) {
            return Err(Error::Scenario("adoption window is inverted".into()));
        }
        Ok(())
    }

    pub fn baselines(&self) -> [PiecewiseBaseline; 4] {
        let grids = self.model.grids.as_array();
        Transition::ALL
            .map(|tr| {
                PiecewiseBaseline::new(
                    grids[tr.index()].clone(),
                    self.truth.baseline_rates[&tr.to_string()].clone(),
                )
                .expect("validated scenario")
            })
    }

    /// Truth values in the estimable flat layout (labels as in fit output).
    /// Coefficients absent from the truth map are zero.
    pub fn truth_params(&self, layout: &ParamLayout) -> Vec<(String, f64)> {
        let baselines = self.baselines();
        layout
            .entries()
            .iter()
            .map(|e| {
                let label = format!("{}:{}", e.transition.label(), e.name);
                let value = match e.block {
                    crate::params::BlockKind::LogBaseline => {
                        let grid = &layout.grids()[e.transition.index()];
                        let k = (0..grid.n_intervals())
                            .find(|&k| grid.interval_label(k) == e.name)
                            .expect("interval exists");
                        baselines[e.transition.index()].steps[k].ln()
                    }
                    crate::params::BlockKind::Beta => self
                        .truth
                        .beta
                        .get(e.transition)
                        .get(&e.name)
                        .copied()
                        .unwrap_or(0.0),
                    crate::params::BlockKind::Loading => {
                        self.truth.loadings[e.transition.index()]
                    }
                };
                (label, value)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Department {
    id: String,
    hospital: String,
    specialty: String,
    region: String,
    size: f64,
    adoption_day: Option<f64>,
}

fn build_departments(spec: &ScenarioSpec) -> Vec<Department> {
    let p = &spec.population;
    let mut rng = stream(spec.seed, "departments");
    (0..p.departments)
        .map(|i| {
            let treated = rng.gen_bool(p.treated_share);
            let adoption_day = treated.then(|| {
                rng.gen_range(p.adoption_window.start..=p.adoption_window.end)
            });
            Department {
                id: format!("d{i:04}"),
                hospital: format!("h{:03}", rng.gen_range(0..p.hospitals)),
                specialty: p.specialties[rng.gen_range(0..p.specialties.len())].clone(),
                region: format!("r{:02}", rng.gen_range(0..p.regions)),
                size: rng.gen_range(p.dept_size_range.0..=p.dept_size_range.1),
                adoption_day,
            }
        })
        .collect()
}

/// Exit of one spell sampled by inversion: latent event within the grids, or
/// survival past every (bounded) horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpellExit {
    Event { duration: f64, transition: Transition },
    /// All transitions out of the state have bounded horizons and the
    /// exponential deviate outlived them (home state only).
    PastHorizons,
}

/// Closed-form inversion of `Λ_total(t) = e` for the summed scaled step
/// hazards of the competing transitions; the realized transition at the exit
/// point is drawn with probability proportional to its hazard there.
pub fn invert_exit(
    risks: &[(Transition, &PiecewiseBaseline, f64)],
    e: f64,
    pick: f64,
) -> SpellExit {
    debug_assert!(e >= 0.0 && (0.0..1.0).contains(&pick));
    // Merged breakpoints of all risks.
    let mut cuts: Vec<f64> = risks
        .iter()
        .flat_map(|(_, b, _)| {
            b.grid
                .starts
                .iter()
                .copied()
                .chain(b.grid.horizon.into_iter())
        })
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut remaining = e;
    for (i, &a) in cuts.iter().enumerate() {
        let b = cuts.get(i + 1).copied().unwrap_or(f64::INFINITY);
        // Rates are constant on a merged segment; probe strictly inside it
        // so a horizon sitting exactly at `a` (closed-right for data
        // evaluation) contributes nothing past its end.
        let probe = a + 0.5 * (b - a).min(1.0);
        let total: f64 = risks
            .iter()
            .map(|(_, base, k)| k * base.rate_at(probe))
            .sum();
        let width = b - a;
        if total > 0.0 {
            let need = remaining / total;
            if need < width {
                let t = a + need;
                // Assign the realized transition by hazard shares at t.
                let mut u = pick * total;
                for (tr, base, k) in risks {
                    let h = k * base.rate_at(probe);
                    if u < h {
                        return SpellExit::Event {
                            duration: t,
                            transition: *tr,
                        };
                    }
                    u -= h;
                }
                return SpellExit::Event {
                    duration: t,
                    transition: risks.last().unwrap().0,
                };
            }
            remaining -= total * width;
        }
        if b.is_infinite() {
            break;
        }
    }
    SpellExit::PastHorizons
}

/// Draw one spell exit for `origin` given per-transition rate multipliers
/// `k = exp(z + ω)`.
pub fn sample_spell(
    origin: State,
    baselines: &[PiecewiseBaseline; 4],
    multipliers: &[f64; 4],
    rng: &mut ChaCha8Rng,
) -> SpellExit {
    let risks: Vec<(Transition, &PiecewiseBaseline, f64)> = origin
        .transitions()
        .iter()
        .map(|&tr| (tr, &baselines[tr.index()], multipliers[tr.index()]))
        .collect();
    let u: f64 = rng.gen();
    let e = -(1.0 - u).ln();
    let pick: f64 = rng.gen();
    invert_exit(&risks, e, pick)
}

struct PatientAttrs {
    sex: u8,
    birth_day: f64,
    cci: f64,
    department: usize,
}

struct Cycle {
    drg: String,
    diagnosis: u8,
}

pub struct SimOutput {
    pub events: Vec<RawEvent>,
    pub spells: Vec<SpellRecord>,
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    baselines: [PiecewiseBaseline; 4],
    departments: Vec<Department>,
    loadings: FrailtyLoadings,
    start_quarter: i64,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a ScenarioSpec) -> Self {
        Self {
            spec,
            baselines: spec.baselines(),
            departments: build_departments(spec),
            loadings: FrailtyLoadings::from_free(spec.truth.loadings),
            start_quarter: quarter_of(spec.model.sample_start),
        }
    }

    fn z_value(
        &self,
        tr: Transition,
        attrs: &PatientAttrs,
        cycle: &Cycle,
        day: f64,
    ) -> f64 {
        let dept = &self.departments[attrs.department];
        let mc = matches!(dept.adoption_day, Some(a) if a <= day);
        let age = (day - attrs.birth_day) / 365.25;
        let q = (quarter_of(day) - self.start_quarter) as f64;
        let mut z = 0.0;
        for (key, &v) in self.spec.truth.beta.get(tr) {
            z += v * match key.as_str() {
                "mc" => mc as u8 as f64,
                "sex" => attrs.sex as f64,
                "age" => age,
                "age_sq" => (age / 150.0) * (age / 150.0),
                "cci" => attrs.cci,
                "dept_size" => dept.size,
                "trend_q" => q,
                "trend_q2" => q * q,
                k if k.starts_with("mc:") => {
                    (mc && dept.specialty == k[3..]) as u8 as f64
                }
                k if k.starts_with("spec:") => (dept.specialty == k[5..]) as u8 as f64,
                k if k.starts_with("hosp:") => (dept.hospital == k[5..]) as u8 as f64,
                k if k.starts_with("region:") => (dept.region == k[7..]) as u8 as f64,
                k if k.starts_with("diag:") => {
                    (cycle.diagnosis.to_string() == k[5..]) as u8 as f64
                }
                _ => unreachable!("validated truth keys"),
            };
        }
        let slope = self.spec.truth.pretrend_per_quarter[tr.index()];
        if slope != 0.0 && dept.adoption_day.is_some() {
            z += slope * q;
        }
        z
    }

    fn spell_record(
        &self,
        pid: &str,
        index: u32,
        origin: State,
        entry: f64,
        duration: f64,
        event: Option<Transition>,
        attrs: &PatientAttrs,
        cycle: &Cycle,
    ) -> SpellRecord {
        let dept = &self.departments[attrs.department];
        let eval_day = match self.spec.covariate_timing {
            CovariateTiming::Entry => entry,
            CovariateTiming::Exit => entry + duration,
        };
        SpellRecord {
            patient_id: pid.to_string(),
            spell_index: index,
            origin,
            entry_day: entry,
            duration,
            event,
            department_id: dept.id.clone(),
            hospital_id: dept.hospital.clone(),
            specialty: dept.specialty.clone(),
            drg: cycle.drg.clone(),
            diagnosis: cycle.diagnosis,
            region: dept.region.clone(),
            dept_size: dept.size,
            sex: attrs.sex,
            age: (eval_day - attrs.birth_day) / 365.25,
            cci: attrs.cci,
            mc: matches!(dept.adoption_day, Some(a) if a <= eval_day) as u8,
            adoption_day: dept.adoption_day,
        }
    }

    fn admit_event(
        &self,
        pid: &str,
        day: f64,
        attrs: &PatientAttrs,
        cycle: &Cycle,
    ) -> RawEvent {
        let dept = &self.departments[attrs.department];
        RawEvent {
            patient_id: pid.to_string(),
            kind: EventKind::Admit,
            day,
            department_id: Some(dept.id.clone()),
            hospital_id: Some(dept.hospital.clone()),
            specialty: Some(dept.specialty.clone()),
            drg: Some(cycle.drg.clone()),
            diagnosis: Some(cycle.diagnosis),
            region: Some(dept.region.clone()),
            dept_size: Some(dept.size),
            sex: Some(attrs.sex),
            birth_day: Some(attrs.birth_day),
            cci: Some(attrs.cci),
            adoption_day: dept.adoption_day,
        }
    }

    fn multipliers(
        &self,
        origin: State,
        attrs: &PatientAttrs,
        cycle: &Cycle,
        day: f64,
        omega: impl Fn(Transition) -> f64,
    ) -> [f64; 4] {
        let mut k = [0.0f64; 4];
        for &tr in origin.transitions() {
            k[tr.index()] = (self.z_value(tr, attrs, cycle, day) + omega(tr)).exp();
        }
        k
    }

    fn patient(&self, pid: &str, out: &mut SimOutput) {
        let spec = self.spec;
        let p = &spec.population;
        let mut rng = unit_stream(spec.seed, "trajectory", pid);
        let attrs = PatientAttrs {
            sex: rng.gen_bool(p.female_share) as u8,
            birth_day: spec.window.start
                - rng.gen_range(p.age_range.0..=p.age_range.1) * 365.25,
            cci: Poisson::new(p.cci_mean.max(1e-9))
                .map(|d| d.sample(&mut rng).min(18.0))
                .unwrap_or(0.0),
            department: rng.gen_range(0..self.departments.len()),
        };
        let eps: (f64, f64) = if spec.model.frailty {
            let mut frng = unit_stream(spec.seed, "sim-frailty", pid);
            (
                StandardNormal.sample(&mut frng),
                StandardNormal.sample(&mut frng),
            )
        } else {
            (0.0, 0.0)
        };
        let omega = |tr: Transition| {
            if spec.model.frailty {
                self.loadings.log_frailty(tr, eps)
            } else {
                0.0
            }
        };

        let draw_drg = |rng: &mut ChaCha8Rng, not: Option<&str>| -> String {
            loop {
                let g = format!("g{:03}", rng.gen_range(0..p.drg_count));
                if not != Some(g.as_str()) {
                    return g;
                }
            }
        };

        let mut clock = spec.window.start + rng.gen::<f64>() * (spec.window.end - spec.window.start);
        let mut cycle = Cycle {
            drg: draw_drg(&mut rng, None),
            diagnosis: rng.gen_range(1..=p.diagnosis_groups),
        };
        let mut spell_index = 0u32;
        let mut emit = |record: SpellRecord| {
            out.spells.push(record);
        };

        'cycles: loop {
            // Hospital phase.
            out.events.push(self.admit_event(pid, clock, &attrs, &cycle));
            let admit_day = clock;
            let k = self.multipliers(State::Hospital, &attrs, &cycle, admit_day, &omega);
            let exit = sample_spell(State::Hospital, &self.baselines, &k, &mut rng);
            let window_left = spec.window.end - admit_day;
            // Durations are re-derived through the same day arithmetic the
            // event stream forces on ingestion, so the round trip is exact.
            let (exit_day, hosp_dur, hosp_event) = match exit {
                SpellExit::Event { duration, .. } if duration > window_left => {
                    (spec.window.end, spec.window.end - admit_day, None)
                }
                SpellExit::Event {
                    duration,
                    transition,
                } => {
                    let exit_day = admit_day + duration;
                    (exit_day, exit_day - admit_day, Some(transition))
                }
                SpellExit::PastHorizons => unreachable!("hospital grids are unbounded"),
            };
            match hosp_event {
                None => {
                    if hosp_dur >= MIN_DURATION {
                        emit(self.spell_record(
                            pid,
                            spell_index,
                            State::Hospital,
                            admit_day,
                            hosp_dur,
                            None,
                            &attrs,
                            &cycle,
                        ));
                    }
                    break 'cycles;
                }
                Some(Transition::HospitalDeath) => {
                    out.events.push(RawEvent::death(pid, exit_day));
                    emit(self.spell_record(
                        pid,
                        spell_index,
                        State::Hospital,
                        admit_day,
                        hosp_dur,
                        Some(Transition::HospitalDeath),
                        &attrs,
                        &cycle,
                    ));
                    break 'cycles;
                }
                Some(tr) => {
                    debug_assert_eq!(tr, Transition::Discharge);
                    out.events.push(RawEvent::discharge(pid, exit_day));
                    emit(self.spell_record(
                        pid,
                        spell_index,
                        State::Hospital,
                        admit_day,
                        hosp_dur,
                        Some(Transition::Discharge),
                        &attrs,
                        &cycle,
                    ));
                }
            }
            spell_index += 1;
            clock = exit_day;

            // Home phase.
            let home_entry = clock;
            let k = self.multipliers(State::Home, &attrs, &cycle, home_entry, &omega);
            let exit = sample_spell(State::Home, &self.baselines, &k, &mut rng);
            let fresh_gap = if p.fresh_admission_rate > 0.0 {
                let u: f64 = rng.gen();
                -(1.0 - u).ln() / p.fresh_admission_rate
            } else {
                f64::INFINITY
            };
            let window_left = spec.window.end - home_entry;
            let model_exit = match exit {
                SpellExit::Event {
                    duration,
                    transition,
                } => Some((duration, transition)),
                SpellExit::PastHorizons => None,
            };

            // Earliest of: model event, fresh admission, window end.
            let event_time = model_exit.map(|(d, _)| d).unwrap_or(f64::INFINITY);
            if event_time <= fresh_gap && event_time <= window_left {
                let (dur, tr) = model_exit.unwrap();
                let exit_day = home_entry + dur;
                let dur = exit_day - home_entry;
                match tr {
                    Transition::Readmission => {
                        emit(self.spell_record(
                            pid,
                            spell_index,
                            State::Home,
                            home_entry,
                            dur.max(MIN_DURATION),
                            Some(Transition::Readmission),
                            &attrs,
                            &cycle,
                        ));
                        spell_index += 1;
                        clock = exit_day;
                        // Same department and DRG: a qualifying re-admission.
                        continue 'cycles;
                    }
                    Transition::HomeDeath => {
                        out.events.push(RawEvent::death(pid, exit_day));
                        emit(self.spell_record(
                            pid,
                            spell_index,
                            State::Home,
                            home_entry,
                            dur.max(MIN_DURATION),
                            Some(Transition::HomeDeath),
                            &attrs,
                            &cycle,
                        ));
                        break 'cycles;
                    }
                    _ => unreachable!("home transitions"),
                }
            }

            // Censored home spell. Ingestion closes it at the next event day
            // (fresh admission) or the window end, capped at the death
            // horizon; mirror that arithmetic exactly.
            let fresh_day = home_entry + fresh_gap;
            let has_fresh = fresh_day <= spec.window.end;
            let until = if has_fresh { fresh_day } else { spec.window.end };
            let censor_at = (until - home_entry).min(HOME_DEATH_HORIZON);
            if censor_at >= MIN_DURATION {
                emit(self.spell_record(
                    pid,
                    spell_index,
                    State::Home,
                    home_entry,
                    censor_at,
                    None,
                    &attrs,
                    &cycle,
                ));
                spell_index += 1;
            }
            if has_fresh {
                // New episode: new DRG (and diagnosis), same department.
                clock = fresh_day;
                cycle = Cycle {
                    drg: draw_drg(&mut rng, Some(cycle.drg.as_str())),
                    diagnosis: rng.gen_range(1..=p.diagnosis_groups),
                };
            } else {
                break 'cycles;
            }
        }
    }
}

/// Generate the full population. Events and spells are emitted in patient
/// order; per-patient substreams make the output independent of that order
/// and bit-identical for a given seed.
pub fn simulate_population(spec: &ScenarioSpec) -> Result<SimOutput> {
    spec.validate()?;
    let generator = Generator::new(spec);
    let mut out = SimOutput {
        events: Vec::new(),
        spells: Vec::new(),
    };
    let width = (spec.n_patients as f64).log10().ceil().max(1.0) as usize;
    for i in 0..spec.n_patients {
        let pid = format!("p{i:0w$}", w = width);
        generator.patient(&pid, &mut out);
    }
    Ok(out)
}

/// Sidecar describing exactly how a dataset was generated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub scenario: ScenarioSpec,
    pub rng_scheme: String,
    /// Truth in the estimable layout of the scenario's own model spec,
    /// resolved against the generated spells.
    pub params: Vec<(String, f64)>,
    pub n_spells: usize,
    pub n_events: usize,
}

/// Simulate and write `events.csv`, `spells.csv` and `truth.json` to `dir`.
pub fn simulate_to_dir(spec: &ScenarioSpec, dir: impl AsRef<Path>) -> Result<TruthFile> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let out = simulate_population(spec)?;
    crate::ingest::write_event_csv(&out.events, dir.join("events.csv"))?;
    crate::spells::write_spell_csv(&out.spells, dir.join("spells.csv"))?;
    let params = match crate::design::resolve_schema(&out.spells, &spec.model) {
        Ok(schema) => {
            let layout = ParamLayout::build(
                spec.model.grids.as_array(),
                schema.columns,
                spec.model.frailty,
            );
            spec.truth_params(&layout)
        }
        Err(_) => Vec::new(),
    };
    let truth = TruthFile {
        scenario: spec.clone(),
        rng_scheme: RNG_SCHEME.to_string(),
        params,
        n_spells: out.spells.len(),
        n_events: out.events.len(),
    };
    let path = dir.join("truth.json");
    let text = serde_json::to_string_pretty(&truth)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(truth)
}
