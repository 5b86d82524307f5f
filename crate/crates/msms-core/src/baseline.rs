//! Piecewise-constant baseline hazards on day grids.
//!
//! Grids start at day 1: the hazard is defined as 0 on [0, 1), so survival at
//! t = 1 is exactly 1 and the minimum spell duration is one day. Intervals are
//! left-closed right-open; the last interval is either unbounded (hospital
//! origin) or ends at the transition's censoring horizon (home origin), in
//! which case a duration exactly at the horizon still falls in the last step.
//!
//! The cumulative hazard has the closed form
//! `Λ(t) = Σ_k α_k · (min(t, end_k) − start_k)⁺`, which is what everything
//! downstream (survival, densities, sampling, expected durations) relies on.

use crate::error::{Error, Result};
use crate::states::Transition;
use serde::{Deserialize, Serialize};

/// Day the grids start at; the hazard is zero before it.
pub const GRID_START: f64 = 1.0;

/// Interval structure of one transition's baseline: left endpoints plus an
/// optional right horizon for the last interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGrid {
    /// Strictly increasing left endpoints, first equal to [`GRID_START`].
    pub starts: Vec<f64>,
    /// Right end of the last interval; `None` leaves it unbounded.
    pub horizon: Option<f64>,
}

impl BaselineGrid {
    pub fn new(starts: Vec<f64>, horizon: Option<f64>) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::InvalidGrid("no intervals".into()));
        }
        if starts[0] != GRID_START {
            return Err(Error::InvalidGrid(format!(
                "grid must start at day {GRID_START}, got {}",
                starts[0]
            )));
        }
        for w in starts.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidGrid(format!(
                    "breakpoints not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(h) = horizon {
            let last = *starts.last().unwrap();
            if !(h > last) {
                return Err(Error::InvalidGrid(format!(
                    "horizon {h} does not exceed last breakpoint {last}"
                )));
            }
        }
        Ok(Self { starts, horizon })
    }

    /// Default day grids for each transition: fine early intervals where most
    /// events happen, coarser later; home-origin grids end at the 30-day
    /// re-admission and 365-day death horizons.
    pub fn default_for(transition: Transition) -> Self {
        let (starts, horizon): (Vec<f64>, Option<f64>) = match transition {
            Transition::Discharge => {
                (vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 11.0, 18.0], None)
            }
            Transition::HospitalDeath => (vec![1.0, 2.0, 5.0, 10.0, 16.0, 29.0], None),
            Transition::Readmission => (
                vec![1.0, 3.0, 6.0, 8.0, 12.0, 16.0, 19.0, 22.0, 26.0],
                Some(30.0),
            ),
            Transition::HomeDeath => (
                vec![1.0, 4.0, 16.0, 31.0, 51.0, 81.0, 121.0, 181.0, 261.0],
                Some(365.0),
            ),
        };
        Self::new(starts, horizon).expect("default grids are valid")
    }

    pub fn n_intervals(&self) -> usize {
        self.starts.len()
    }

    /// Right end of interval `k` (`+inf` only possible for the last one).
    pub fn end(&self, k: usize) -> f64 {
        if k + 1 < self.starts.len() {
            self.starts[k + 1]
        } else {
            self.horizon.unwrap_or(f64::INFINITY)
        }
    }

    /// Interval containing duration `t`, or `None` when the hazard is zero
    /// there (before day 1, or past a bounded horizon). A `t` exactly at the
    /// horizon falls in the last interval.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if t < GRID_START {
            return None;
        }
        if let Some(h) = self.horizon {
            if t > h {
                return None;
            }
            if t == h {
                return Some(self.starts.len() - 1);
            }
        }
        match self
            .starts
            .binary_search_by(|s| s.partial_cmp(&t).expect("finite breakpoints"))
        {
            Ok(k) => Some(k),
            Err(ins) => Some(ins - 1),
        }
    }

    /// Time spent in each interval by a spell of duration `t`:
    /// `(min(t, end_k) − start_k)⁺`, truncated after the last touched
    /// interval. Empty when `t ≤ 1`.
    pub fn exposures(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for (k, &start) in self.starts.iter().enumerate() {
            if t <= start {
                break;
            }
            out.push(t.min(self.end(k)) - start);
        }
        out
    }

    /// Human-readable interval label, e.g. `[1,2)` or `[18,inf)`.
    pub fn interval_label(&self, k: usize) -> String {
        let end = self.end(k);
        if end.is_finite() {
            format!("[{},{})", self.starts[k], end)
        } else {
            format!("[{},inf)", self.starts[k])
        }
    }
}

/// A baseline grid together with its step rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseBaseline {
    pub grid: BaselineGrid,
    /// One positive rate per interval.
    pub steps: Vec<f64>,
}

impl PiecewiseBaseline {
    pub fn new(grid: BaselineGrid, steps: Vec<f64>) -> Result<Self> {
        if steps.len() != grid.n_intervals() {
            return Err(Error::InvalidGrid(format!(
                "{} steps for {} intervals",
                steps.len(),
                grid.n_intervals()
            )));
        }
        if let Some(bad) = steps.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!("non-positive step rate {bad}")));
        }
        Ok(Self { grid, steps })
    }

    /// Baseline hazard value at duration `t`; 0 off the grid.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.grid.interval_of(t).map_or(0.0, |k| self.steps[k])
    }

    /// Closed-form cumulative hazard `∫₀ᵗ λ₀(τ) dτ`.
    ///
    /// Continuous and nondecreasing in `t`; exactly 0 for `t ≤ 1`; constant
    /// past a bounded horizon (the transition is no longer at risk there).
    pub fn cumulative(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0, "negative duration {t}");
        let mut total = 0.0;
        for (k, &start) in self.grid.starts.iter().enumerate() {
            if t <= start {
                break;
            }
            total += self.steps[k] * (t.min(self.grid.end(k)) - start);
        }
        total
    }
}

/// Free-function form of [`PiecewiseBaseline::cumulative`].
pub fn cumulative_baseline(baseline: &PiecewiseBaseline, t: f64) -> f64 {
    baseline.cumulative(t)
}
