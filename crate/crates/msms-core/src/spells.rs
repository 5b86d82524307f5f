//! Spell records and the `spells.csv` schema.
//!
//! A spell is one continuous stay in a state, ended by a realized transition
//! or by censoring. Stay attributes (department, hospital, specialty, DRG,
//! diagnosis group, region, department size, co-morbidity index) belong to
//! the hospital admission; home spells inherit them from the previous
//! hospital stay. The payment-system indicator `mc` and the patient's `age`
//! are recorded per spell rather than re-derived downstream, so datasets from
//! different sources (raw-event ingestion, the simulator) state exactly which
//! covariate values apply.

use crate::error::{Error, Result};
use crate::states::{State, Transition};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Shortest spell representable in the data: one day.
pub const MIN_DURATION: f64 = 1.0;
/// A stay at home is at risk of a qualifying re-admission for 30 days.
pub const READMISSION_HORIZON: f64 = 30.0;
/// A stay at home is at risk of (attributable) death for 365 days.
pub const HOME_DEATH_HORIZON: f64 = 365.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpellRecord {
    pub patient_id: String,
    /// Position of the spell within the patient's trajectory, from 0.
    pub spell_index: u32,
    pub origin: State,
    /// Clock day of entry into the state (day 0 = 1996-01-01).
    pub entry_day: f64,
    /// Duration in days, ≥ 1; continuous.
    pub duration: f64,
    /// Realized transition, or `None` when censored in the state.
    pub event: Option<Transition>,
    pub department_id: String,
    pub hospital_id: String,
    pub specialty: String,
    pub drg: String,
    /// Diagnosis group, 1..=18.
    pub diagnosis: u8,
    pub region: String,
    /// Number of specialists in the department.
    pub dept_size: f64,
    /// 1 = female.
    pub sex: u8,
    /// Age in years at the covariate evaluation time for this spell.
    pub age: f64,
    /// Charlson co-morbidity index recorded at the admission.
    pub cci: f64,
    /// Payment system of the treating physician's department (1 = mixed
    /// compensation) as recorded for this spell.
    pub mc: u8,
    /// Department's adoption day, if it ever adopts.
    pub adoption_day: Option<f64>,
}

impl SpellRecord {
    pub fn exit_day(&self) -> f64 {
        self.entry_day + self.duration
    }

    pub fn censored(&self) -> bool {
        self.event.is_none()
    }

    /// Contract checks for a single record; returns a description of the
    /// first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.duration >= MIN_DURATION) {
            return Err(format!("duration {} below minimum {MIN_DURATION}", self.duration));
        }
        if !self.duration.is_finite() || !self.entry_day.is_finite() {
            return Err("non-finite entry or duration".into());
        }
        if self.origin == State::Death {
            return Err("spell originates in the absorbing state".into());
        }
        if let Some(ev) = self.event {
            if ev.origin() != self.origin {
                return Err(format!("event {} does not originate in {}", ev.id(), self.origin));
            }
            if ev == Transition::Readmission && self.duration > READMISSION_HORIZON {
                return Err(format!(
                    "re-admission at {} days exceeds the {READMISSION_HORIZON}-day window",
                    self.duration
                ));
            }
            if ev == Transition::HomeDeath && self.duration > HOME_DEATH_HORIZON {
                return Err(format!(
                    "home death at {} days exceeds the {HOME_DEATH_HORIZON}-day window",
                    self.duration
                ));
            }
        } else if self.origin == State::Home && self.duration > HOME_DEATH_HORIZON {
            return Err(format!(
                "censored home spell of {} days exceeds the {HOME_DEATH_HORIZON}-day window",
                self.duration
            ));
        }
        if !(1..=18).contains(&self.diagnosis) {
            return Err(format!("diagnosis group {} outside 1..=18", self.diagnosis));
        }
        if self.sex > 1 {
            return Err(format!("sex {} not in {{0,1}}", self.sex));
        }
        if self.mc > 1 {
            return Err(format!("mc {} not in {{0,1}}", self.mc));
        }
        if !(self.age >= 0.0) || !(self.cci >= 0.0) || !(self.dept_size >= 0.0) {
            return Err("negative age, cci or dept_size".into());
        }
        Ok(())
    }
}

/// Flat CSV row; `event` is 0 for censored, 1..=4 otherwise.
#[derive(Debug, Serialize, Deserialize)]
struct SpellRow {
    patient_id: String,
    spell_index: u32,
    origin: State,
    entry_day: f64,
    duration: f64,
    event: u8,
    department_id: String,
    hospital_id: String,
    specialty: String,
    drg: String,
    diagnosis: u8,
    region: String,
    dept_size: f64,
    sex: u8,
    age: f64,
    cci: f64,
    mc: u8,
    adoption_day: Option<f64>,
}

impl From<&SpellRecord> for SpellRow {
    fn from(s: &SpellRecord) -> Self {
        SpellRow {
            patient_id: s.patient_id.clone(),
            spell_index: s.spell_index,
            origin: s.origin,
            entry_day: s.entry_day,
            duration: s.duration,
            event: s.event.map_or(0, Transition::id),
            department_id: s.department_id.clone(),
            hospital_id: s.hospital_id.clone(),
            specialty: s.specialty.clone(),
            drg: s.drg.clone(),
            diagnosis: s.diagnosis,
            region: s.region.clone(),
            dept_size: s.dept_size,
            sex: s.sex,
            age: s.age,
            cci: s.cci,
            mc: s.mc,
            adoption_day: s.adoption_day,
        }
    }
}

impl SpellRow {
    fn into_record(self) -> std::result::Result<SpellRecord, String> {
        let event = match self.event {
            0 => None,
            id => Some(Transition::from_id(id).ok_or_else(|| format!("unknown event {id}"))?),
        };
        let rec = SpellRecord {
            patient_id: self.patient_id,
            spell_index: self.spell_index,
            origin: self.origin,
            entry_day: self.entry_day,
            duration: self.duration,
            event,
            department_id: self.department_id,
            hospital_id: self.hospital_id,
            specialty: self.specialty,
            drg: self.drg,
            diagnosis: self.diagnosis,
            region: self.region,
            dept_size: self.dept_size,
            sex: self.sex,
            age: self.age,
            cci: self.cci,
            mc: self.mc,
            adoption_day: self.adoption_day,
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Read and validate a spell CSV. Every row is checked; on any violation the
/// whole load fails after the full scan, reporting the count and the first
/// offending row.
pub fn load_spell_csv(path: impl AsRef<Path>) -> Result<Vec<SpellRecord>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: display.clone(),
        source: e,
    })?;
    let mut spells = Vec::new();
    let mut bad = 0usize;
    let mut first = String::new();
    for (i, row) in reader.deserialize::<SpellRow>().enumerate() {
        let line = i + 2; // header is line 1
        match row {
            Ok(r) => match r.into_record() {
                Ok(rec) => spells.push(rec),
                Err(msg) => {
                    bad += 1;
                    if first.is_empty() {
                        first = format!("line {line}: {msg}");
                    }
                }
            },
            Err(e) => {
                bad += 1;
                if first.is_empty() {
                    first = format!("line {line}: {e}");
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
    Ok(spells)
}

/// Write spells in the documented column order. Lossless: reloading and
/// rewriting reproduces the bytes.
pub fn write_spell_csv(spells: &[SpellRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: display.clone(),
        source: e,
    })?;
    for s in spells {
        writer.serialize(SpellRow::from(s)).map_err(|e| Error::Csv {
            path: display.clone(),
            source: e,
        })?;
    }
    writer.flush().map_err(|e| Error::io(display, e))?;
    Ok(())
}

/// Group spells by patient, preserving first-appearance order of patients
/// and sorting each patient's spells by `spell_index`.
pub fn group_by_patient(spells: &[SpellRecord]) -> Vec<(String, Vec<&SpellRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: std::collections::HashMap<String, Vec<&SpellRecord>> =
        std::collections::HashMap::new();
    for s in spells {
        let entry = map.entry(s.patient_id.clone()).or_insert_with(|| {
            order.push(s.patient_id.clone());
            Vec::new()
        });
        entry.push(s);
    }
    order
        .into_iter()
        .map(|id| {
            let mut v = map.remove(&id).unwrap();
            v.sort_by_key(|s| s.spell_index);
            (id, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(patient: &str, idx: u32, origin: State, dur: f64, event: Option<Transition>) -> SpellRecord {
        SpellRecord {
            patient_id: patient.into(),
            spell_index: idx,
            origin,
            entry_day: 100.0 + idx as f64 * 10.0,
            duration: dur,
            event,
            department_id: "d1".into(),
            hospital_id: "h1".into(),
            specialty: "surgery".into(),
            drg: "g42".into(),
            diagnosis: 3,
            region: "r1".into(),
            dept_size: 12.0,
            sex: 1,
            age: 61.25,
            cci: 2.0,
            mc: 0,
            adoption_day: Some(1369.0),
        }
    }

    #[test]
    fn validation_catches_contract_violations() {
        let ok = sample("p", 0, State::Hospital, 8.0, Some(Transition::Discharge));
        assert!(ok.validate().is_ok());

        let mut bad = ok.clone();
        bad.duration = 0.0;
        assert!(bad.validate().is_err());

        let mut bad = ok.clone();
        bad.event = Some(Transition::Readmission); // home transition from hospital
        assert!(bad.validate().is_err());

        let mut bad = sample("p", 1, State::Home, 31.0, Some(Transition::Readmission));
        assert!(bad.validate().is_err());
        bad.duration = 30.0;
        assert!(bad.validate().is_ok());

        let mut bad = sample("p", 1, State::Home, 366.0, Some(Transition::HomeDeath));
        assert!(bad.validate().is_err());
        bad.event = None;
        assert!(bad.validate().is_err());
        bad.duration = 365.0;
        assert!(bad.validate().is_ok());
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut spells = Vec::new();
        for i in 0..50u32 {
            let mut s = sample(&format!("p{:03}", i / 3), i % 3, State::Hospital, 1.0 + (i as f64) * 0.37, Some(Transition::Discharge));
            if i % 5 == 0 {
                s.origin = State::Home;
                s.event = None;
                s.duration = 365.0;
                s.adoption_day = None;
            }
            spells.push(s);
        }
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_spell_csv(&spells, &a).unwrap();
        let reloaded = load_spell_csv(&a).unwrap();
        assert_eq!(reloaded, spells);
        write_spell_csv(&reloaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejected_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut spells = vec![
            sample("p1", 0, State::Hospital, 5.0, Some(Transition::Discharge)),
            sample("p1", 1, State::Home, 13.0, Some(Transition::Readmission)),
        ];
        write_spell_csv(&spells, &path).unwrap();
        // Corrupt row 2 (line 3): zero duration.
        spells[1].duration = 0.0;
        let text = std::fs::read_to_string(&path).unwrap();
        let text = text.replace(",13.0,3,", ",0.0,3,");
        std::fs::write(&path, text).unwrap();
        let err = load_spell_csv(&path).unwrap_err();
        match err {
            Error::CsvValidation { count, first, .. } => {
                assert_eq!(count, 1);
                assert!(first.contains("line 3"), "{first}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn grouping_preserves_order() {
        let spells = vec![
            sample("b", 1, State::Home, 10.0, None),
            sample("a", 0, State::Hospital, 2.0, Some(Transition::Discharge)),
            sample("b", 0, State::Hospital, 3.0, Some(Transition::Discharge)),
        ];
        let grouped = group_by_patient(&spells);
        assert_eq!(grouped[0].0, "b");
        assert_eq!(grouped[0].1[0].spell_index, 0);
        assert_eq!(grouped[1].0, "a");
    }
}
