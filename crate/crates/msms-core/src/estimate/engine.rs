//! Simulated log-likelihood and its analytic gradient.
//!
//! For patient i with frozen draws ε⁽ᵐ⁾ the contribution is
//! `log( (1/M) Σ_m exp(ℓ_im) )` with
//! `ℓ_im = A_i + Σ_s [ N_is·ω_s(ε⁽ᵐ⁾) − B_is(x)·exp(ω_s(ε⁽ᵐ⁾)) ]`,
//! where `A_i` collects the draw-independent event terms
//! (log α at the event interval + x'β), `N_is` counts realized transitions
//! of type s and `B_is = Σ_spells exp(x'β_s)·Λ_s(t)` sums the scaled
//! cumulative hazards. Collapsing each patient to these sufficient
//! statistics makes the per-draw cost independent of the spell count. The
//! log-sum-exp includes the 1/M constant (it moves the level, not the
//! argmax).
//!
//! The gradient reuses the per-draw softmax weights: survival terms carry
//! `W_s = Σ_m w_m e^{ω_sm}` (and ε-weighted variants for the loadings), so
//! one pass over spells and one pass over draws per patient produce the
//! exact analytic gradient.
//!
//! Evaluations reduce over a fixed binary tree on patient indices, so
//! results are bit-identical regardless of thread count or scheduling.
//!
//! Internally the design columns are equilibrated to unit max-absolute-value
//! (coefficients scaled inversely), which keeps quasi-Newton steps
//! well-conditioned when columns mix indicators with trends; the public
//! surface (parameters, gradients) is always in the unscaled basis.

use crate::error::{Error, Result};
use crate::estimate::draws::FrailtyDraws;
use crate::guard::NumGuard;
use crate::params::ParamLayout;
use crate::spells::SpellRecord;
use crate::states::Transition;
use rayon::ThreadPool;

const LEAF_PATIENTS: usize = 64;

#[derive(Debug, Clone, Copy)]
struct RiskTerm {
    tr: u8,
    row: u32,
    lens_start: u32,
    lens_len: u16,
    /// Interval index of the realized transition, or -1.
    event_k: i16,
    spell_index: u32,
}

#[derive(Debug, Clone)]
struct PatientSpan {
    id: String,
    term_start: u32,
    term_end: u32,
}

pub struct LikelihoodEngine {
    layout: ParamLayout,
    rows: Vec<crate::design::SparseRow>,
    col_scale: Vec<f64>,
    terms: Vec<RiskTerm>,
    lens_arena: Vec<f64>,
    patients: Vec<PatientSpan>,
    draws: FrailtyDraws,
    guard: NumGuard,
    pool: Option<ThreadPool>,
}

struct Acc {
    ll: f64,
    grad: Option<Vec<f64>>,
}

impl LikelihoodEngine {
    /// Prepare the evaluation structures. `rows` is the design output,
    /// parallel to `spells`. Draws are generated from `(seed, patient id)`
    /// when the layout carries frailty loadings, with `m` draws per patient;
    /// otherwise a single zero draw is used and `m` is ignored.
    ///
    /// `threads` > 0 pins a dedicated thread pool of that size; 0 uses the
    /// process-global pool. Results do not depend on the choice.
    pub fn new(
        spells: &[SpellRecord],
        rows: Vec<crate::design::SparseRow>,
        layout: ParamLayout,
        m: usize,
        seed: u64,
        threads: usize,
    ) -> Result<Self> {
        if rows.len() != spells.len() {
            return Err(Error::Layout(format!(
                "{} design rows for {} spells",
                rows.len(),
                spells.len()
            )));
        }
        // Group spell indices by patient, preserving first appearance.
        let mut order: Vec<&str> = Vec::new();
        let mut groups: std::collections::HashMap<&str, Vec<usize>> =
            std::collections::HashMap::new();
        for (i, s) in spells.iter().enumerate() {
            groups
                .entry(s.patient_id.as_str())
                .or_insert_with(|| {
                    order.push(s.patient_id.as_str());
                    Vec::new()
                })
                .push(i);
        }

        // Column equilibration to unit max absolute value.
        let nb = layout.n_beta();
        let mut col_scale = vec![0.0f64; nb];
        for row in &rows {
            for (&c, &v) in row.idx.iter().zip(&row.val) {
                let a = v.abs();
                if a > col_scale[c as usize] {
                    col_scale[c as usize] = a;
                }
            }
        }
        for s in &mut col_scale {
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        let mut rows = rows;
        for row in &mut rows {
            for (&c, v) in row.idx.iter().zip(row.val.iter_mut()) {
                *v /= col_scale[c as usize];
            }
        }

        let grids = layout.grids().clone();
        let mut terms = Vec::with_capacity(spells.len() * 2);
        let mut lens_arena = Vec::new();
        let mut patients = Vec::with_capacity(order.len());
        for pid in order {
            let idxs = groups.remove(pid).unwrap();
            let term_start = terms.len() as u32;
            for i in idxs {
                let s = &spells[i];
                for &tr in s.origin.transitions() {
                    let grid = &grids[tr.index()];
                    let lens = grid.exposures(s.duration);
                    let event_k = if s.event == Some(tr) {
                        match grid.interval_of(s.duration) {
                            Some(k) => k as i16,
                            None => {
                                return Err(Error::Layout(format!(
                                    "patient {}, spell {}: realized {} at duration {} is off the model grid",
                                    s.patient_id, s.spell_index, tr, s.duration
                                )))
                            }
                        }
                    } else {
                        -1
                    };
                    let lens_start = lens_arena.len() as u32;
                    let lens_len = lens.len() as u16;
                    lens_arena.extend_from_slice(&lens);
                    terms.push(RiskTerm {
                        tr: tr.index() as u8,
                        row: i as u32,
                        lens_start,
                        lens_len,
                        event_k,
                        spell_index: s.spell_index,
                    });
                }
            }
            patients.push(PatientSpan {
                id: pid.to_string(),
                term_start,
                term_end: terms.len() as u32,
            });
        }

        let draws = if layout.frailty() {
            let ids: Vec<&str> = patients.iter().map(|p| p.id.as_str()).collect();
            FrailtyDraws::generate(&ids, m, seed)
        } else {
            FrailtyDraws::degenerate(patients.len())
        };

        let pool = if threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Optimizer(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };

        Ok(Self {
            layout,
            rows,
            col_scale,
            terms,
            lens_arena,
            patients,
            draws,
            guard: NumGuard::new(),
            pool,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn draws(&self) -> &FrailtyDraws {
        &self.draws
    }

    pub fn guard(&self) -> &NumGuard {
        &self.guard
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.patients.iter().map(|p| p.id.as_str())
    }

    /// Internal (column-equilibrated) coordinates from external parameters.
    pub(crate) fn to_internal(&self, x: &[f64]) -> Vec<f64> {
        let mut xi = x.to_vec();
        for tr in Transition::ALL {
            for (c, &s) in self.col_scale.iter().enumerate() {
                xi[self.layout.beta_index(tr, c)] *= s;
            }
        }
        xi
    }

    pub(crate) fn to_external(&self, xi: &[f64]) -> Vec<f64> {
        let mut x = xi.to_vec();
        for tr in Transition::ALL {
            for (c, &s) in self.col_scale.iter().enumerate() {
                x[self.layout.beta_index(tr, c)] /= s;
            }
        }
        x
    }

    /// External-basis gradient from an internal-basis one.
    pub(crate) fn grad_to_external(&self, gi: &[f64]) -> Vec<f64> {
        let mut g = gi.to_vec();
        for tr in Transition::ALL {
            for (c, &s) in self.col_scale.iter().enumerate() {
                g[self.layout.beta_index(tr, c)] *= s;
            }
        }
        g
    }

    /// Simulated log-likelihood at external parameters.
    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        let xi = self.to_internal(x);
        Ok(self.eval_internal(&xi, false)?.ll)
    }

    /// Simulated log-likelihood and its analytic gradient, both in the
    /// external basis.
    pub fn loglik_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let xi = self.to_internal(x);
        let acc = self.eval_internal(&xi, true)?;
        Ok((acc.ll, self.grad_to_external(&acc.grad.unwrap())))
    }

    pub(crate) fn loglik_grad_internal(&self, xi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let acc = self.eval_internal(xi, true)?;
        Ok((acc.ll, acc.grad.unwrap()))
    }

    /// One patient's contribution (external basis); diagnostic surface.
    pub fn patient_loglik_grad(&self, patient: usize, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let xi = self.to_internal(x);
        let alphas = self.alpha_table(&xi);
        let mut scratch = Scratch::default();
        let acc = self.eval_leaf(patient..patient + 1, &xi, &alphas, true, &mut scratch)?;
        Ok((acc.ll, self.grad_to_external(&acc.grad.unwrap())))
    }

    fn alpha_table(&self, xi: &[f64]) -> [Vec<f64>; 4] {
        let grids = self.layout.grids();
        let mut out: [Vec<f64>; 4] = Default::default();
        for tr in Transition::ALL {
            let k = tr.index();
            out[k] = (0..grids[k].n_intervals())
                .map(|i| self.guard.exp(xi[self.layout.log_alpha_index(tr, i)]))
                .collect();
        }
        out
    }

    fn eval_internal(&self, xi: &[f64], want_grad: bool) -> Result<Acc> {
        if xi.len() != self.layout.len() {
            return Err(Error::Layout(format!(
                "expected {} parameters, got {}",
                self.layout.len(),
                xi.len()
            )));
        }
        let alphas = self.alpha_table(xi);
        let run = || self.eval_tree(0, self.patients.len(), xi, &alphas, want_grad);
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }

    fn eval_tree(
        &self,
        lo: usize,
        hi: usize,
        xi: &[f64],
        alphas: &[Vec<f64>; 4],
        want_grad: bool,
    ) -> Result<Acc> {
        if hi - lo <= LEAF_PATIENTS {
            let mut scratch = Scratch::default();
            return self.eval_leaf(lo..hi, xi, alphas, want_grad, &mut scratch);
        }
        let mid = lo + (hi - lo) / 2;
        let (left, right) = rayon::join(
            || self.eval_tree(lo, mid, xi, alphas, want_grad),
            || self.eval_tree(mid, hi, xi, alphas, want_grad),
        );
        let mut left = left?;
        let right = right?;
        left.ll += right.ll;
        if let (Some(g), Some(h)) = (&mut left.grad, &right.grad) {
            for (a, b) in g.iter_mut().zip(h) {
                *a += *b;
            }
        }
        Ok(left)
    }

    fn eval_leaf(
        &self,
        range: std::ops::Range<usize>,
        xi: &[f64],
        alphas: &[Vec<f64>; 4],
        want_grad: bool,
        scratch: &mut Scratch,
    ) -> Result<Acc> {
        let frailty = self.layout.frailty();
        let (psi, phi) = if frailty {
            let o = self
                .layout
                .loading_index(Transition::Discharge)
                .expect("frailty layout");
            (
                [1.0, 1.0, xi[o + 2], xi[o + 3]],
                [xi[o], xi[o + 1], 1.0, 1.0],
            )
        } else {
            ([0.0; 4], [0.0; 4])
        };
        let m = self.draws.m();
        let ln_m = (m as f64).ln();
        let mut acc = Acc {
            ll: 0.0,
            grad: want_grad.then(|| vec![0.0; self.layout.len()]),
        };

        for p in range {
            let span = &self.patients[p];
            let terms = &self.terms[span.term_start as usize..span.term_end as usize];

            // Pass 1: draw-independent pieces.
            scratch.xb_lam.clear();
            let mut a_const = 0.0f64;
            let mut n_events = [0.0f64; 4];
            let mut b_cum = [0.0f64; 4];
            for t in terms {
                let tr = Transition::ALL[t.tr as usize];
                let beta = self.layout.beta_slice(tr, xi);
                let xb = self.rows[t.row as usize].dot(beta);
                let lens = &self.lens_arena
                    [t.lens_start as usize..t.lens_start as usize + t.lens_len as usize];
                let mut lam = 0.0;
                for (k, len) in lens.iter().enumerate() {
                    lam += alphas[t.tr as usize][k] * len;
                }
                if t.event_k >= 0 {
                    a_const += xi[self.layout.log_alpha_index(tr, t.event_k as usize)] + xb;
                    n_events[t.tr as usize] += 1.0;
                }
                b_cum[t.tr as usize] += self.guard.exp(xb) * lam;
                scratch.xb_lam.push((xb, lam));
            }

            // Pass 2: mixture over the frozen draws.
            let eps = self.draws.for_patient(p);
            scratch.lvals.clear();
            scratch.eom.clear();
            let mut max_l = f64::NEG_INFINITY;
            for &(e1, e2) in eps {
                let mut l = a_const;
                for s in 0..4 {
                    let omega = psi[s] * e1 + phi[s] * e2;
                    let eo = self.guard.exp(omega);
                    l += n_events[s] * omega - b_cum[s] * eo;
                    scratch.eom.push(eo);
                }
                if l > max_l {
                    max_l = l;
                }
                scratch.lvals.push(l);
            }
            if !max_l.is_finite() {
                return Err(self.non_finite_error(span, terms, &scratch.xb_lam));
            }
            let mut sum_exp = 0.0;
            for &l in &scratch.lvals {
                sum_exp += (l - max_l).exp();
            }
            let patient_ll = max_l + sum_exp.ln() - ln_m;
            if !patient_ll.is_finite() {
                return Err(self.non_finite_error(span, terms, &scratch.xb_lam));
            }
            acc.ll += patient_ll;

            let Some(grad) = acc.grad.as_mut() else {
                continue;
            };

            // Softmax weights and their frailty aggregates.
            let mut w_exp = [0.0f64; 4]; // Σ w·e^{ω_s}
            let mut v1 = [0.0f64; 4]; // Σ w·e^{ω_s}·ε₁
            let mut v2 = [0.0f64; 4]; // Σ w·e^{ω_s}·ε₂
            let mut e1_bar = 0.0;
            let mut e2_bar = 0.0;
            for (j, &(e1, e2)) in eps.iter().enumerate() {
                let w = (scratch.lvals[j] - max_l).exp() / sum_exp;
                e1_bar += w * e1;
                e2_bar += w * e2;
                for s in 0..4 {
                    let eo = scratch.eom[j * 4 + s];
                    w_exp[s] += w * eo;
                    v1[s] += w * eo * e1;
                    v2[s] += w * eo * e2;
                }
            }

            for (t, &(xb, lam)) in terms.iter().zip(&scratch.xb_lam) {
                let s = t.tr as usize;
                let tr = Transition::ALL[s];
                let row = &self.rows[t.row as usize];
                let beta_off = self.layout.beta_index(tr, 0);
                if t.event_k >= 0 {
                    grad[self.layout.log_alpha_index(tr, t.event_k as usize)] += 1.0;
                    for (&c, &v) in row.idx.iter().zip(&row.val) {
                        grad[beta_off + c as usize] += v;
                    }
                }
                let exb = self.guard.exp(xb);
                let scale = exb * w_exp[s];
                let lens = &self.lens_arena
                    [t.lens_start as usize..t.lens_start as usize + t.lens_len as usize];
                let alpha_off = self.layout.log_alpha_index(tr, 0);
                for (k, len) in lens.iter().enumerate() {
                    grad[alpha_off + k] -= scale * alphas[s][k] * len;
                }
                let beta_scale = exb * lam * w_exp[s];
                for (&c, &v) in row.idx.iter().zip(&row.val) {
                    grad[beta_off + c as usize] -= beta_scale * v;
                }
            }
            if frailty {
                let o = self
                    .layout
                    .loading_index(Transition::Discharge)
                    .expect("frailty layout");
                grad[o] += n_events[0] * e2_bar - b_cum[0] * v2[0];
                grad[o + 1] += n_events[1] * e2_bar - b_cum[1] * v2[1];
                grad[o + 2] += n_events[2] * e1_bar - b_cum[2] * v1[2];
                grad[o + 3] += n_events[3] * e1_bar - b_cum[3] * v1[3];
            }
        }
        Ok(acc)
    }

    fn non_finite_error(
        &self,
        span: &PatientSpan,
        terms: &[RiskTerm],
        xb_lam: &[(f64, f64)],
    ) -> Error {
        let spell = terms
            .iter()
            .zip(xb_lam)
            .find(|(_, (xb, lam))| !xb.is_finite() || !lam.is_finite())
            .map(|(t, _)| t.spell_index as usize)
            .or_else(|| terms.first().map(|t| t.spell_index as usize))
            .unwrap_or(0);
        Error::NonFiniteLikelihood {
            patient: span.id.clone(),
            spell,
        }
    }
}

#[derive(Default)]
struct Scratch {
    xb_lam: Vec<(f64, f64)>,
    lvals: Vec<f64>,
    eom: Vec<f64>,
}

/// Simulated log-likelihood of external parameters given an engine holding
/// the grouped spells and frozen draws.
pub fn simulated_loglik(engine: &LikelihoodEngine, params: &[f64]) -> Result<f64> {
    engine.loglik(params)
}

/// Analytic gradient of the simulated log-likelihood.
pub fn gradient(engine: &LikelihoodEngine, params: &[f64]) -> Result<Vec<f64>> {
    Ok(engine.loglik_grad(params)?.1)
}
