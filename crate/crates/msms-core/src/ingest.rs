//! Raw-event ingestion: admissions, discharges and deaths into spells.
//!
//! Per patient the event stream is sorted by day with the tie rule
//! discharge < admit < death, then folded through a state machine that
//! applies the observation rules:
//!
//! * a hospital stay ends in discharge (transition 1) or in-hospital death
//!   (transition 2); a death on the discharge day counts as in-hospital
//!   death;
//! * after discharge, a re-admission to the same department with the same
//!   DRG within 30 days is transition 3; a death within 365 days is
//!   transition 4;
//! * any other following admission censors the home spell at the admission
//!   day and opens a fresh hospital stay; with no further events the home
//!   spell is censored at min(365, window end − discharge);
//! * durations are clamped to the one-day minimum for realized transitions
//!   (a same-day qualifying re-admission is a one-day home spell); censored
//!   slivers shorter than a day carry no information and are dropped.
//!
//! Treatment status and age are evaluated at the day the state is left; home
//! spells inherit the stay attributes of the previous hospital stay. A
//! patient with inconsistent events (overlapping stays, events after death,
//! events outside the window, …) is excluded entirely, with a reason code in
//! the exclusion report.

use crate::error::{Error, Result};
use crate::spells::{
    SpellRecord, HOME_DEATH_HORIZON, MIN_DURATION, READMISSION_HORIZON,
};
use crate::states::{State, Transition};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Admit,
    Discharge,
    Death,
}

impl EventKind {
    /// Within-day processing order.
    fn rank(self) -> u8 {
        match self {
            EventKind::Discharge => 0,
            EventKind::Admit => 1,
            EventKind::Death => 2,
        }
    }
}

/// One raw event row. Stay and patient attributes are carried on admit rows;
/// discharge and death rows need only the patient, kind and day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawEvent {
    pub patient_id: String,
    pub kind: EventKind,
    pub day: f64,
    pub department_id: Option<String>,
    pub hospital_id: Option<String>,
    pub specialty: Option<String>,
    pub drg: Option<String>,
    pub diagnosis: Option<u8>,
    pub region: Option<String>,
    pub dept_size: Option<f64>,
    pub sex: Option<u8>,
    pub birth_day: Option<f64>,
    pub cci: Option<f64>,
    pub adoption_day: Option<f64>,
}

impl RawEvent {
    pub fn discharge(patient_id: &str, day: f64) -> Self {
        Self::bare(patient_id, EventKind::Discharge, day)
    }

    pub fn death(patient_id: &str, day: f64) -> Self {
        Self::bare(patient_id, EventKind::Death, day)
    }

    fn bare(patient_id: &str, kind: EventKind, day: f64) -> Self {
        RawEvent {
            patient_id: patient_id.to_string(),
            kind,
            day,
            department_id: None,
            hospital_id: None,
            specialty: None,
            drg: None,
            diagnosis: None,
            region: None,
            dept_size: None,
            sex: None,
            birth_day: None,
            cci: None,
            adoption_day: None,
        }
    }
}

/// One line of the exclusion report (line-delimited JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub patient_id: String,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct IngestOutput {
    pub spells: Vec<SpellRecord>,
    pub exclusions: Vec<Exclusion>,
}

/// Attributes of one hospital stay, inherited by the following home spell.
#[derive(Debug, Clone)]
struct StayAttrs {
    department_id: String,
    hospital_id: String,
    specialty: String,
    drg: String,
    diagnosis: u8,
    region: String,
    dept_size: f64,
    cci: f64,
    adoption_day: Option<f64>,
}

impl StayAttrs {
    fn from_admit(ev: &RawEvent) -> std::result::Result<Self, String> {
        Ok(StayAttrs {
            department_id: ev.department_id.clone().ok_or("missing department_id")?,
            hospital_id: ev.hospital_id.clone().ok_or("missing hospital_id")?,
            specialty: ev.specialty.clone().ok_or("missing specialty")?,
            drg: ev.drg.clone().ok_or("missing drg")?,
            diagnosis: ev.diagnosis.ok_or("missing diagnosis")?,
            region: ev.region.clone().ok_or("missing region")?,
            dept_size: ev.dept_size.ok_or("missing dept_size")?,
            cci: ev.cci.ok_or("missing cci")?,
            adoption_day: ev.adoption_day,
        })
    }
}

struct PatientBuilder<'a> {
    patient_id: &'a str,
    sex: u8,
    birth_day: f64,
    spells: Vec<SpellRecord>,
    next_index: u32,
}

impl<'a> PatientBuilder<'a> {
    fn mc_at(attrs: &StayAttrs, day: f64) -> u8 {
        match attrs.adoption_day {
            Some(a) if a <= day => 1,
            _ => 0,
        }
    }

    fn push(
        &mut self,
        origin: State,
        entry: f64,
        duration: f64,
        event: Option<Transition>,
        attrs: &StayAttrs,
    ) {
        let exit = entry + duration;
        let spell = SpellRecord {
            patient_id: self.patient_id.to_string(),
            spell_index: self.next_index,
            origin,
            entry_day: entry,
            duration,
            event,
            department_id: attrs.department_id.clone(),
            hospital_id: attrs.hospital_id.clone(),
            specialty: attrs.specialty.clone(),
            drg: attrs.drg.clone(),
            diagnosis: attrs.diagnosis,
            region: attrs.region.clone(),
            dept_size: attrs.dept_size,
            sex: self.sex,
            age: (exit - self.birth_day) / 365.25,
            cci: attrs.cci,
            mc: Self::mc_at(attrs, exit),
            adoption_day: attrs.adoption_day,
        };
        // The 30/365-day rules are construction invariants.
        assert!(
            spell.validate().is_ok(),
            "internal censoring-rule violation: {:?}",
            spell.validate()
        );
        self.next_index += 1;
        self.spells.push(spell);
    }
}

enum PatientState {
    BeforeFirstAdmission,
    InHospital { attrs: StayAttrs, admit_day: f64 },
    AtHome { attrs: StayAttrs, discharge_day: f64 },
    Dead,
}

fn build_patient(
    patient_id: &str,
    events: &[&RawEvent],
    window: (f64, f64),
) -> std::result::Result<Vec<SpellRecord>, Exclusion> {
    let excl = |reason: &str, detail: String| Exclusion {
        patient_id: patient_id.to_string(),
        reason: reason.to_string(),
        detail,
    };
    let first_admit = events
        .iter()
        .find(|e| e.kind == EventKind::Admit)
        .ok_or_else(|| excl("no_admission", "no admit event in the window".into()))?;
    let mut builder = PatientBuilder {
        patient_id,
        sex: first_admit
            .sex
            .ok_or_else(|| excl("incomplete_admission", "missing sex".into()))?,
        birth_day: first_admit
            .birth_day
            .ok_or_else(|| excl("incomplete_admission", "missing birth_day".into()))?,
        spells: Vec::new(),
        next_index: 0,
    };
    let mut state = PatientState::BeforeFirstAdmission;

    // Close the home risk window when the next event happens after it.
    let close_home = |builder: &mut PatientBuilder,
                      attrs: &StayAttrs,
                      discharge_day: f64,
                      until: f64| {
        let dur = (until - discharge_day).min(HOME_DEATH_HORIZON);
        if dur >= MIN_DURATION {
            builder.push(State::Home, discharge_day, dur, None, attrs);
        }
    };

    for (i, ev) in events.iter().enumerate() {
        if ev.day < window.0 || ev.day > window.1 {
            return Err(excl(
                "event_outside_window",
                format!("{:?} on day {}", ev.kind, ev.day),
            ));
        }
        match ev.kind {
            EventKind::Admit => {
                let attrs = StayAttrs::from_admit(ev)
                    .map_err(|m| excl("incomplete_admission", format!("day {}: {m}", ev.day)))?;
                match state {
                    PatientState::Dead => {
                        return Err(excl("event_after_death", format!("admit on day {}", ev.day)))
                    }
                    PatientState::InHospital { admit_day, .. } => {
                        return Err(excl(
                            "overlapping_stays",
                            format!("admit on day {} during stay from day {admit_day}", ev.day),
                        ))
                    }
                    PatientState::BeforeFirstAdmission => {}
                    PatientState::AtHome {
                        attrs: ref prev,
                        discharge_day,
                    } => {
                        let gap = ev.day - discharge_day;
                        let qualifying = gap <= READMISSION_HORIZON
                            && prev.department_id == attrs.department_id
                            && prev.drg == attrs.drg;
                        if qualifying {
                            builder.push(
                                State::Home,
                                discharge_day,
                                gap.max(MIN_DURATION),
                                Some(Transition::Readmission),
                                prev,
                            );
                        } else {
                            close_home(&mut builder, prev, discharge_day, ev.day);
                        }
                    }
                }
                state = PatientState::InHospital {
                    attrs,
                    admit_day: ev.day,
                };
            }
            EventKind::Discharge => match state {
                PatientState::InHospital { attrs, admit_day } => {
                    // A death on the discharge day is an in-hospital death.
                    let dies_today = events
                        .get(i + 1)
                        .is_some_and(|n| n.kind == EventKind::Death && n.day == ev.day);
                    if dies_today {
                        state = PatientState::InHospital { attrs, admit_day };
                        continue;
                    }
                    builder.push(
                        State::Hospital,
                        admit_day,
                        (ev.day - admit_day).max(MIN_DURATION),
                        Some(Transition::Discharge),
                        &attrs,
                    );
                    state = PatientState::AtHome {
                        attrs,
                        discharge_day: ev.day,
                    };
                }
                PatientState::Dead => {
                    return Err(excl(
                        "event_after_death",
                        format!("discharge on day {}", ev.day),
                    ))
                }
                _ => {
                    return Err(excl(
                        "discharge_without_admission",
                        format!("discharge on day {}", ev.day),
                    ))
                }
            },
            EventKind::Death => match state {
                PatientState::InHospital { attrs, admit_day } => {
                    builder.push(
                        State::Hospital,
                        admit_day,
                        (ev.day - admit_day).max(MIN_DURATION),
                        Some(Transition::HospitalDeath),
                        &attrs,
                    );
                    state = PatientState::Dead;
                }
                PatientState::AtHome {
                    attrs,
                    discharge_day,
                } => {
                    let gap = ev.day - discharge_day;
                    if gap <= HOME_DEATH_HORIZON {
                        builder.push(
                            State::Home,
                            discharge_day,
                            gap.max(MIN_DURATION),
                            Some(Transition::HomeDeath),
                            &attrs,
                        );
                    } else {
                        close_home(&mut builder, &attrs, discharge_day, ev.day);
                    }
                    state = PatientState::Dead;
                }
                PatientState::Dead => {
                    return Err(excl("event_after_death", format!("death on day {}", ev.day)))
                }
                PatientState::BeforeFirstAdmission => {
                    return Err(excl(
                        "death_before_admission",
                        format!("death on day {}", ev.day),
                    ))
                }
            },
        }
    }

    match state {
        PatientState::InHospital { attrs, admit_day } => {
            let dur = window.1 - admit_day;
            if dur >= MIN_DURATION {
                builder.push(State::Hospital, admit_day, dur, None, &attrs);
            }
        }
        PatientState::AtHome {
            attrs,
            discharge_day,
        } => {
            close_home(&mut builder, &attrs, discharge_day, window.1);
        }
        _ => {}
    }
    Ok(builder.spells)
}

/// Convert raw events into spells. Events are grouped by patient (first
/// appearance order preserved) and sorted within patient by day with the
/// documented within-day tie rule, so the result does not depend on the
/// input ordering of same-day events. Inconsistent patients are excluded
/// entirely and reported.
pub fn build_spells(events: &[RawEvent], window: (f64, f64)) -> IngestOutput {
    let mut order: Vec<&str> = Vec::new();
    let mut by_patient: HashMap<&str, Vec<&RawEvent>> = HashMap::new();
    for ev in events {
        by_patient
            .entry(ev.patient_id.as_str())
            .or_insert_with(|| {
                order.push(ev.patient_id.as_str());
                Vec::new()
            })
            .push(ev);
    }
    let mut spells = Vec::new();
    let mut exclusions = Vec::new();
    for pid in order {
        let mut evs = by_patient.remove(pid).unwrap();
        evs.sort_by(|a, b| {
            a.day
                .partial_cmp(&b.day)
                .expect("finite event days")
                .then(a.kind.rank().cmp(&b.kind.rank()))
        });
        match build_patient(pid, &evs, window) {
            Ok(mut s) => spells.append(&mut s),
            Err(e) => exclusions.push(e),
        }
    }
    IngestOutput { spells, exclusions }
}

pub fn load_event_csv(path: impl AsRef<Path>) -> Result<Vec<RawEvent>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: display.clone(),
        source: e,
    })?;
    let mut events = Vec::new();
    let mut bad = 0usize;
    let mut first = String::new();
    for (i, row) in reader.deserialize::<RawEvent>().enumerate() {
        match row {
            Ok(ev) => {
                if let Some(d) = ev.diagnosis {
                    if !(1..=18).contains(&d) {
                        bad += 1;
                        if first.is_empty() {
                            first = format!("line {}: diagnosis group {d} outside 1..=18", i + 2);
                        }
                        continue;
                    }
                }
                events.push(ev);
            }
            Err(e) => {
                bad += 1;
                if first.is_empty() {
                    first = format!("line {}: {e}", i + 2);
                }
            }
        }
    }
    if bad > 0 {
        return Err(Error::CsvValidation {
            path: display,
            count: bad,
            first,
        });
    }
    Ok(events)
}

pub fn write_event_csv(events: &[RawEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: display.clone(),
        source: e,
    })?;
    for ev in events {
        writer.serialize(ev).map_err(|e| Error::Csv {
            path: display.clone(),
            source: e,
        })?;
    }
    writer.flush().map_err(|e| Error::io(display, e))?;
    Ok(())
}

pub fn write_exclusions(exclusions: &[Exclusion], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    for ex in exclusions {
        let line = serde_json::to_string(ex).map_err(|e| Error::json(display.clone(), e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(display.clone(), e))?;
    }
    Ok(())
}

/// Mean/SD/min/max of one variable.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl ColumnStats {
    fn compute(values: impl Iterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
            min = min.min(v);
            max = max.max(v);
        }
        if n == 0 {
            return ColumnStats::default();
        }
        let sd = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
        ColumnStats { mean, sd, min, max }
    }
}

/// Descriptive statistics of one spell group (a realized transition, or
/// censored-at-home).
#[derive(Debug, Clone, Serialize)]
pub struct GroupStats {
    pub group: String,
    pub n_stays: usize,
    pub n_patients: usize,
    pub duration: ColumnStats,
    pub mc: ColumnStats,
    pub sex: ColumnStats,
    pub age: ColumnStats,
    pub cci: ColumnStats,
}

/// Empirical transition table and descriptive statistics.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub n_patients: usize,
    pub n_spells: usize,
    /// Per origin state: share of spells ending in each transition id (key
    /// "1".."4") or censored (key "censored").
    pub transition_shares: HashMap<String, HashMap<String, f64>>,
    pub groups: Vec<GroupStats>,
}

fn group_stats(name: &str, spells: &[&SpellRecord]) -> GroupStats {
    let patients: std::collections::HashSet<&str> =
        spells.iter().map(|s| s.patient_id.as_str()).collect();
    GroupStats {
        group: name.to_string(),
        n_stays: spells.len(),
        n_patients: patients.len(),
        duration: ColumnStats::compute(spells.iter().map(|s| s.duration)),
        mc: ColumnStats::compute(spells.iter().map(|s| s.mc as f64)),
        sex: ColumnStats::compute(spells.iter().map(|s| s.sex as f64)),
        age: ColumnStats::compute(spells.iter().map(|s| s.age)),
        cci: ColumnStats::compute(spells.iter().map(|s| s.cci)),
    }
}

pub fn summarize(spells: &[SpellRecord]) -> Summary {
    let patients: std::collections::HashSet<&str> =
        spells.iter().map(|s| s.patient_id.as_str()).collect();
    let mut shares: HashMap<String, HashMap<String, f64>> = HashMap::new();
    for origin in [State::Hospital, State::Home] {
        let of_origin: Vec<&SpellRecord> = spells.iter().filter(|s| s.origin == origin).collect();
        let total = of_origin.len().max(1) as f64;
        let mut m: HashMap<String, f64> = HashMap::new();
        for tr in origin.transitions() {
            let count = of_origin.iter().filter(|s| s.event == Some(*tr)).count();
            m.insert(tr.id().to_string(), count as f64 / total);
        }
        let censored = of_origin.iter().filter(|s| s.event.is_none()).count();
        m.insert("censored".to_string(), censored as f64 / total);
        shares.insert(origin.to_string(), m);
    }
    let mut groups = Vec::new();
    for tr in Transition::ALL {
        let g: Vec<&SpellRecord> = spells.iter().filter(|s| s.event == Some(tr)).collect();
        groups.push(group_stats(&tr.to_string(), &g));
    }
    let censored_home: Vec<&SpellRecord> = spells
        .iter()
        .filter(|s| s.origin == State::Home && s.event.is_none())
        .collect();
    groups.push(group_stats("censored_at_home", &censored_home));
    Summary {
        n_patients: patients.len(),
        n_spells: spells.len(),
        transition_shares: shares,
        groups,
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "patients: {}   spells: {}", self.n_patients, self.n_spells)?;
        writeln!(f, "transition shares:")?;
        for origin in ["hospital", "home"] {
            if let Some(m) = self.transition_shares.get(origin) {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let parts: Vec<String> =
                    keys.iter().map(|k| format!("{k}={:.3}", m[*k])).collect();
                writeln!(f, "  {origin}: {}", parts.join("  "))?;
            }
        }
        writeln!(
            f,
            "{:<22}{:>9}{:>9}{:>10}{:>9}{:>8}{:>8}{:>8}",
            "group", "stays", "patients", "dur.mean", "dur.sd", "mc", "sex", "age"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<22}{:>9}{:>9}{:>10.2}{:>9.2}{:>8.2}{:>8.2}{:>8.1}",
                g.group, g.n_stays, g.n_patients, g.duration.mean, g.duration.sd, g.mc.mean,
                g.sex.mean, g.age.mean
            )?;
        }
        Ok(())
    }
}
