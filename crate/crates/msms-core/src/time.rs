//! Calendar handling.
//!
//! All clock times in data files and in-memory records are real-valued day
//! numbers with day 0 = 1996-01-01 (the start of the sample window the model
//! conventions are built around). Config files and CLI flags accept ISO dates
//! (`YYYY-MM-DD`) or raw day numbers; both are converted here.

use chrono::{Datelike, NaiveDate};

/// Day 0 of the day-number scale.
pub fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1996, 1, 1).expect("valid epoch")
}

/// Day number of a calendar date (midnight).
pub fn day_of(date: NaiveDate) -> f64 {
    (date - epoch()).num_days() as f64
}

/// Calendar date containing the given day number.
pub fn date_of(day: f64) -> NaiveDate {
    epoch() + chrono::Duration::days(day.floor() as i64)
}

/// Calendar year of a day number.
pub fn year_of(day: f64) -> i32 {
    date_of(day).year()
}

/// 0-based calendar quarter index since the epoch (1996Q1 = 0).
pub fn quarter_of(day: f64) -> i64 {
    let d = date_of(day);
    (d.year() as i64 - epoch().year() as i64) * 4 + (d.month0() as i64) / 3
}

/// Parse either an ISO date or a plain day number.
pub fn parse_day(s: &str) -> Result<f64, String> {
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(day_of(d));
    }
    s.parse::<f64>()
        .map_err(|_| format!("expected an ISO date (YYYY-MM-DD) or a day number, got `{s}`"))
}

/// Serde bridge for config fields declared as dates-or-day-numbers.
pub mod serde_day {
    use super::*;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(s) => parse_day(&s).map_err(D::Error::custom),
        }
    }

    pub fn serialize<S: Serializer>(day: &f64, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_f64(*day)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_numbers_and_quarters() {
        assert_eq!(day_of(epoch()), 0.0);
        let reform = NaiveDate::from_ymd_opt(1999, 10, 1).unwrap();
        assert_eq!(day_of(reform), 1369.0);
        assert_eq!(quarter_of(0.0), 0);
        assert_eq!(quarter_of(day_of(reform)), 15);
        assert_eq!(year_of(370.0), 1997);
        assert_eq!(parse_day("1999-10-01").unwrap(), 1369.0);
        assert_eq!(parse_day("12.5").unwrap(), 12.5);
        assert!(parse_day("soon").is_err());
    }
}
