//! Two-factor correlated frailty.
//!
//! Unobserved patient heterogeneity enters each transition's hazard as
//! `ν_r = exp(ψ_r ε₁ + φ_r ε₂)` with ε₁, ε₂ iid standard normal. For
//! identification the loading on the first factor is fixed to 1 for the
//! hospital-origin transitions and the loading on the second factor is fixed
//! to 1 for the home-origin transitions; only the four remaining loadings are
//! estimated.

use crate::error::{Error, Result};
use crate::states::Transition;
use serde::{Deserialize, Serialize};

/// Per-transition factor loadings. Fixed entries are exactly 1 and are
/// excluded from the free-parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrailtyLoadings {
    /// Loading on ε₁ per transition (index = `Transition::index()`).
    pub psi: [f64; 4],
    /// Loading on ε₂ per transition.
    pub phi: [f64; 4],
}

impl FrailtyLoadings {
    /// Loadings with the identification constraints and the given free
    /// values `(φ₁, φ₂, ψ₃, ψ₄)`.
    pub fn from_free(free: [f64; 4]) -> Self {
        Self {
            psi: [1.0, 1.0, free[2], free[3]],
            phi: [free[0], free[1], 1.0, 1.0],
        }
    }

    /// The free values `(φ₁, φ₂, ψ₃, ψ₄)`.
    pub fn free(&self) -> [f64; 4] {
        [self.phi[0], self.phi[1], self.psi[2], self.psi[3]]
    }

    /// All loadings zero: heterogeneity switched off.
    pub fn disabled() -> Self {
        Self {
            psi: [0.0; 4],
            phi: [0.0; 4],
        }
    }

    /// Whether the loading on the first factor is a free parameter for `tr`.
    pub fn psi_is_free(tr: Transition) -> bool {
        matches!(tr, Transition::Readmission | Transition::HomeDeath)
    }

    /// Whether the loading on the second factor is a free parameter for `tr`.
    pub fn phi_is_free(tr: Transition) -> bool {
        matches!(tr, Transition::Discharge | Transition::HospitalDeath)
    }

    /// Log-frailty `ω_r = ψ_r ε₁ + φ_r ε₂`.
    #[inline]
    pub fn log_frailty(&self, tr: Transition, eps: (f64, f64)) -> f64 {
        let k = tr.index();
        self.psi[k] * eps.0 + self.phi[k] * eps.1
    }
}

/// Correlation matrix of the log-frailties across the four transitions:
/// `corr(r, s) = (ψ_r ψ_s + φ_r φ_s) / √((ψ_r² + φ_r²)(ψ_s² + φ_s²))`.
///
/// Errors when some transition has both loadings zero (correlation
/// undefined). The result is symmetric with a unit diagonal, entries in
/// [−1, 1], and positive semidefinite by construction.
pub fn frailty_correlation(loadings: &FrailtyLoadings) -> Result<[[f64; 4]; 4]> {
    let mut norms = [0.0f64; 4];
    for k in 0..4 {
        let sq = loadings.psi[k] * loadings.psi[k] + loadings.phi[k] * loadings.phi[k];
        if sq == 0.0 {
            return Err(Error::DegenerateLoadings(k as u8 + 1));
        }
        norms[k] = sq.sqrt();
    }
    let mut corr = [[0.0f64; 4]; 4];
    for r in 0..4 {
        for s in 0..4 {
            let num = loadings.psi[r] * loadings.psi[s] + loadings.phi[r] * loadings.phi[s];
            corr[r][s] = (num / (norms[r] * norms[s])).clamp(-1.0, 1.0);
        }
    }
    Ok(corr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_loading_pairs_are_perfectly_correlated() {
        let l = FrailtyLoadings {
            psi: [0.4, 0.4, 1.0, 2.0],
            phi: [-0.3, -0.3, 0.0, 0.0],
        };
        let c = frailty_correlation(&l).unwrap();
        assert!((c[0][1] - 1.0).abs() < 1e-14);
        assert!((c[2][3] - 1.0).abs() < 1e-14);
        for k in 0..4 {
            assert_eq!(c[k][k], 1.0);
        }
    }

    #[test]
    fn orthogonal_factors_are_uncorrelated() {
        let l = FrailtyLoadings {
            psi: [1.0, 0.0, 1.0, 0.0],
            phi: [0.0, 1.0, 0.0, 1.0],
        };
        let c = frailty_correlation(&l).unwrap();
        assert_eq!(c[0][1], 0.0);
        assert_eq!(c[2][3], 0.0);
    }

    #[test]
    fn degenerate_row_is_an_error() {
        let l = FrailtyLoadings {
            psi: [1.0, 0.0, 1.0, 1.0],
            phi: [0.0, 0.0, 1.0, 1.0],
        };
        assert!(matches!(
            frailty_correlation(&l),
            Err(Error::DegenerateLoadings(2))
        ));
    }

    #[test]
    fn free_roundtrip_and_constraints() {
        let l = FrailtyLoadings::from_free([0.001, -0.342, -0.199, -0.608]);
        assert_eq!(l.psi[0], 1.0);
        assert_eq!(l.psi[1], 1.0);
        assert_eq!(l.phi[2], 1.0);
        assert_eq!(l.phi[3], 1.0);
        assert_eq!(l.free(), [0.001, -0.342, -0.199, -0.608]);
        assert!(FrailtyLoadings::psi_is_free(Transition::Readmission));
        assert!(!FrailtyLoadings::psi_is_free(Transition::Discharge));
        assert!(FrailtyLoadings::phi_is_free(Transition::Discharge));
        assert!(!FrailtyLoadings::phi_is_free(Transition::HomeDeath));
    }

    proptest! {
        /// Two-factor structure forces positive semidefiniteness: smallest
        /// eigenvalue of the correlation matrix is ≥ −1e-12.
        #[test]
        fn correlation_matrix_is_psd(
            f0 in -3.0f64..3.0, f1 in -3.0f64..3.0,
            f2 in -3.0f64..3.0, f3 in -3.0f64..3.0,
        ) {
            let l = FrailtyLoadings::from_free([f0, f1, f2, f3]);
            let c = frailty_correlation(&l).unwrap();
            let m = nalgebra::DMatrix::from_fn(4, 4, |r, s| c[r][s]);
            let eig = m.symmetric_eigenvalues();
            for v in eig.iter() {
                prop_assert!(*v >= -1e-12, "eigenvalue {v}");
            }
            for r in 0..4 {
                for s in 0..4 {
                    prop_assert!((c[r][s] - c[s][r]).abs() < 1e-15);
                    prop_assert!(c[r][s] <= 1.0 && c[r][s] >= -1.0);
                }
            }
        }
    }
}
