//! Hazard, survival and spell-density kernel.
//!
//! Everything here is a pure function of a parameter view, a covariate row
//! and a frailty draw. The proportional hazard of transition r at duration t
//! is `λ_r(t) = λ_r0(t) · exp(x'β_r) · exp(ψ_r ε₁ + φ_r ε₂)`; survival in a
//! state multiplies the competing transitions' exponentials; the spell
//! density is `λ_r(t)^c · S(t)` with c = 1 for a realized transition and
//! c = 0 under censoring. Hazards are assembled in log space and
//! exponentiated once through the overflow guard.

use crate::guard::NumGuard;
use crate::params::ParamView;
use crate::states::{State, Transition};

#[inline]
fn dot(x: &[f64], beta: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), beta.len());
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

/// Kernel bound to one parameter view and one overflow guard.
#[derive(Clone, Copy)]
pub struct ModelKernel<'a> {
    pub view: &'a ParamView,
    pub guard: &'a NumGuard,
}

impl<'a> ModelKernel<'a> {
    pub fn new(view: &'a ParamView, guard: &'a NumGuard) -> Self {
        Self { view, guard }
    }

    /// `x'β_r`.
    pub fn linear_predictor(&self, tr: Transition, x: &[f64]) -> f64 {
        dot(x, &self.view.betas[tr.index()])
    }

    /// `log λ_r(t | x, ε)`; −∞ where the baseline is zero (off the grid).
    pub fn log_hazard(&self, tr: Transition, t: f64, x: &[f64], eps: (f64, f64)) -> f64 {
        let base = &self.view.baselines[tr.index()];
        match base.grid.interval_of(t) {
            None => f64::NEG_INFINITY,
            Some(k) => {
                base.steps[k].ln()
                    + self.linear_predictor(tr, x)
                    + self.view.loadings_or_disabled().log_frailty(tr, eps)
            }
        }
    }

    /// `λ_r(t | x, ε)`, strictly positive on the grid.
    pub fn hazard(&self, tr: Transition, t: f64, x: &[f64], eps: (f64, f64)) -> f64 {
        let lh = self.log_hazard(tr, t, x, eps);
        if lh == f64::NEG_INFINITY {
            0.0
        } else {
            self.guard.exp(lh)
        }
    }

    /// One transition's contribution to the log survival:
    /// `−exp(x'β_s + ω_s) · Λ_s(t)`.
    pub fn log_survival_term(&self, tr: Transition, t: f64, x: &[f64], eps: (f64, f64)) -> f64 {
        let cum = self.view.baselines[tr.index()].cumulative(t);
        if cum == 0.0 {
            return 0.0;
        }
        let eta = self.linear_predictor(tr, x)
            + self.view.loadings_or_disabled().log_frailty(tr, eps);
        -self.guard.exp(eta) * cum
    }

    /// `log S_j(t | x, ε)` for a spell in `origin`, summing the competing
    /// transitions' terms. `x[i]` is the covariate row for
    /// `origin.transitions()[i]`. Zero at `t ≤ 1`, nonincreasing in `t`.
    pub fn log_survival(&self, origin: State, t: f64, x: [&[f64]; 2], eps: (f64, f64)) -> f64 {
        let trs = origin.transitions();
        debug_assert_eq!(trs.len(), 2, "no survival in the absorbing state");
        self.log_survival_term(trs[0], t, x[0], eps) + self.log_survival_term(trs[1], t, x[1], eps)
    }

    /// `log f(t) = c · log λ_r(t) + log S_j(t)`; for a censored spell
    /// (`event = None`) this is the log survival alone.
    pub fn log_spell_density(
        &self,
        origin: State,
        t: f64,
        event: Option<Transition>,
        x: [&[f64]; 2],
        eps: (f64, f64),
    ) -> f64 {
        let mut out = self.log_survival(origin, t, x, eps);
        if let Some(ev) = event {
            let i = origin
                .transitions()
                .iter()
                .position(|&s| s == ev)
                .expect("event originates in the spell's state");
            out += self.log_hazard(ev, t, x[i], eps);
        }
        out
    }
}
