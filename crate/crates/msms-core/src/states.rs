//! States and transitions of the recurrent hospital/home/death process.
//!
//! Admissions and re-admissions are collapsed into a single `Hospital` state;
//! the process therefore has four transitions: hospital→home (discharge),
//! hospital→death, home→hospital (qualifying re-admission) and home→death.
//! Death is absorbing.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A state a patient can occupy. No transition originates from `Death`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    Hospital,
    Home,
    Death,
}

impl State {
    /// Competing transitions out of this state. Empty for the absorbing state.
    pub fn transitions(self) -> &'static [Transition] {
        match self {
            State::Hospital => &[Transition::Discharge, Transition::HospitalDeath],
            State::Home => &[Transition::Readmission, Transition::HomeDeath],
            State::Death => &[],
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Hospital => write!(f, "hospital"),
            State::Home => write!(f, "home"),
            State::Death => write!(f, "death"),
        }
    }
}

/// One of the four directed transitions, numbered 1..=4 in file formats and
/// coefficient tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// 1: hospital → home.
    Discharge,
    /// 2: hospital → death.
    HospitalDeath,
    /// 3: home → hospital, same department and DRG within the re-admission window.
    Readmission,
    /// 4: home → death within the death window.
    HomeDeath,
}

impl Transition {
    pub const ALL: [Transition; 4] = [
        Transition::Discharge,
        Transition::HospitalDeath,
        Transition::Readmission,
        Transition::HomeDeath,
    ];

    /// 1-based identifier used in files and reports.
    pub fn id(self) -> u8 {
        match self {
            Transition::Discharge => 1,
            Transition::HospitalDeath => 2,
            Transition::Readmission => 3,
            Transition::HomeDeath => 4,
        }
    }

    /// 0-based index for array storage.
    pub fn index(self) -> usize {
        self.id() as usize - 1
    }

    pub fn from_id(id: u8) -> Option<Transition> {
        Transition::ALL.get(id.checked_sub(1)? as usize).copied()
    }

    pub fn origin(self) -> State {
        match self {
            Transition::Discharge | Transition::HospitalDeath => State::Hospital,
            Transition::Readmission | Transition::HomeDeath => State::Home,
        }
    }

    pub fn destination(self) -> State {
        match self {
            Transition::Discharge => State::Home,
            Transition::HospitalDeath | Transition::HomeDeath => State::Death,
            Transition::Readmission => State::Hospital,
        }
    }

    /// Short label used in coefficient tables, e.g. `t3`.
    pub fn label(self) -> &'static str {
        match self {
            Transition::Discharge => "t1",
            Transition::HospitalDeath => "t2",
            Transition::Readmission => "t3",
            Transition::HomeDeath => "t4",
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Discharge => write!(f, "hospital_to_home"),
            Transition::HospitalDeath => write!(f, "hospital_to_death"),
            Transition::Readmission => write!(f, "home_to_readmission"),
            Transition::HomeDeath => write!(f, "home_to_death"),
        }
    }
}
