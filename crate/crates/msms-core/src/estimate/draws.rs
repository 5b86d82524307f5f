//! Frozen per-patient frailty draws (common random numbers).
//!
//! Each patient gets M pairs of iid standard-normal draws keyed by
//! `(seed, patient id)`, generated once and reused across every likelihood
//! and gradient evaluation, so the simulated likelihood is a deterministic
//! function of the parameters.

use crate::rng::unit_stream;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct FrailtyDraws {
    m: usize,
    /// Patient-major: `eps[patient * m + draw]`.
    eps: Vec<(f64, f64)>,
}

impl FrailtyDraws {
    /// M pairs per patient from the `frailty` stream of `seed`.
    pub fn generate<S: AsRef<str>>(patient_ids: &[S], m: usize, seed: u64) -> Self {
        assert!(m >= 1, "at least one draw per patient");
        let mut eps = Vec::with_capacity(patient_ids.len() * m);
        for id in patient_ids {
            let mut rng = unit_stream(seed, "frailty", id.as_ref());
            for _ in 0..m {
                let e1: f64 = StandardNormal.sample(&mut rng);
                let e2: f64 = StandardNormal.sample(&mut rng);
                eps.push((e1, e2));
            }
        }
        Self { m, eps }
    }

    /// Single zero draw per patient: heterogeneity off (the mixture
    /// degenerates to the plain likelihood).
    pub fn degenerate(n_patients: usize) -> Self {
        Self {
            m: 1,
            eps: vec![(0.0, 0.0); n_patients],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_patients(&self) -> usize {
        self.eps.len() / self.m
    }

    pub fn for_patient(&self, patient: usize) -> &[(f64, f64)] {
        &self.eps[patient * self.m..(patient + 1) * self.m]
    }
}
