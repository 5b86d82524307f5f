//! Flat parameter vector and its named layout.
//!
//! All free parameters live in one flat vector with a deterministic order:
//! for each transition 1..4, the log baseline rates (one per grid interval)
//! followed by that transition's regression coefficients in design-column
//! order; then, when heterogeneity is on, the four free loadings
//! (φ_1, φ_2, ψ_3, ψ_4). Baseline rates are stored in logs so positivity
//! needs no constrained optimization. Fixed loadings are not part of the
//! vector.

use crate::baseline::{BaselineGrid, PiecewiseBaseline};
use crate::error::{Error, Result};
use crate::frailty::FrailtyLoadings;
use crate::states::Transition;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Which block a flat position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    LogBaseline,
    Beta,
    Loading,
}

/// One named position of the flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub index: usize,
    pub transition: Transition,
    pub block: BlockKind,
    /// Interval label for baselines, column name for betas, `phi`/`psi` for
    /// loadings.
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamLayout {
    grids: [BaselineGrid; 4],
    beta_names: Vec<String>,
    frailty: bool,
    alpha_offset: [usize; 4],
    beta_offset: [usize; 4],
    loading_offset: usize,
    len: usize,
    #[serde(skip)]
    by_key: std::sync::OnceLock<HashMap<(Transition, BlockKind, String), usize>>,
}

impl ParamLayout {
    /// Deterministic layout for the given grids, design columns and frailty
    /// switch. The beta column set is shared across transitions;
    /// coefficients are transition-specific.
    pub fn build(grids: [BaselineGrid; 4], beta_names: Vec<String>, frailty: bool) -> Self {
        let mut alpha_offset = [0usize; 4];
        let mut beta_offset = [0usize; 4];
        let mut pos = 0usize;
        for tr in Transition::ALL {
            let k = tr.index();
            alpha_offset[k] = pos;
            pos += grids[k].n_intervals();
            beta_offset[k] = pos;
            pos += beta_names.len();
        }
        let loading_offset = pos;
        if frailty {
            pos += 4;
        }
        Self {
            grids,
            beta_names,
            frailty,
            alpha_offset,
            beta_offset,
            loading_offset,
            len: pos,
            by_key: std::sync::OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn frailty(&self) -> bool {
        self.frailty
    }

    pub fn grids(&self) -> &[BaselineGrid; 4] {
        &self.grids
    }

    pub fn beta_names(&self) -> &[String] {
        &self.beta_names
    }

    pub fn n_beta(&self) -> usize {
        self.beta_names.len()
    }

    pub fn log_alpha_index(&self, tr: Transition, interval: usize) -> usize {
        debug_assert!(interval < self.grids[tr.index()].n_intervals());
        self.alpha_offset[tr.index()] + interval
    }

    pub fn beta_index(&self, tr: Transition, column: usize) -> usize {
        debug_assert!(column < self.beta_names.len());
        self.beta_offset[tr.index()] + column
    }

    /// Position of a transition's free loading (φ for hospital-origin, ψ for
    /// home-origin transitions); `None` when heterogeneity is off.
    pub fn loading_index(&self, tr: Transition) -> Option<usize> {
        self.frailty.then(|| self.loading_offset + tr.index())
    }

    /// Flat slice of the beta block of `tr` within a parameter vector.
    pub fn beta_slice<'a>(&self, tr: Transition, x: &'a [f64]) -> &'a [f64] {
        let o = self.beta_offset[tr.index()];
        &x[o..o + self.beta_names.len()]
    }

    /// All named positions in flat order.
    pub fn entries(&self) -> Vec<LayoutEntry> {
        let mut out = Vec::with_capacity(self.len);
        for tr in Transition::ALL {
            let k = tr.index();
            for i in 0..self.grids[k].n_intervals() {
                out.push(LayoutEntry {
                    index: self.alpha_offset[k] + i,
                    transition: tr,
                    block: BlockKind::LogBaseline,
                    name: self.grids[k].interval_label(i),
                });
            }
            for (c, name) in self.beta_names.iter().enumerate() {
                out.push(LayoutEntry {
                    index: self.beta_offset[k] + c,
                    transition: tr,
                    block: BlockKind::Beta,
                    name: name.clone(),
                });
            }
        }
        if self.frailty {
            for tr in Transition::ALL {
                let name = if FrailtyLoadings::phi_is_free(tr) { "phi" } else { "psi" };
                out.push(LayoutEntry {
                    index: self.loading_offset + tr.index(),
                    transition: tr,
                    block: BlockKind::Loading,
                    name: name.into(),
                });
            }
        }
        debug_assert_eq!(out.len(), self.len);
        out
    }

    /// Position of a named parameter.
    pub fn index_of(&self, tr: Transition, block: BlockKind, name: &str) -> Option<usize> {
        let map = self.by_key.get_or_init(|| {
            self.entries()
                .into_iter()
                .map(|e| ((e.transition, e.block, e.name), e.index))
                .collect()
        });
        map.get(&(tr, block, name.to_string())).copied()
    }

    /// Structured view of a flat vector.
    pub fn unpack(&self, x: &[f64]) -> Result<ParamView> {
        if x.len() != self.len {
            return Err(Error::Layout(format!(
                "expected {} parameters, got {}",
                self.len,
                x.len()
            )));
        }
        let mut baselines = Vec::with_capacity(4);
        let mut betas: [Vec<f64>; 4] = Default::default();
        for tr in Transition::ALL {
            let k = tr.index();
            let steps: Vec<f64> = (0..self.grids[k].n_intervals())
                .map(|i| x[self.alpha_offset[k] + i].exp())
                .collect();
            baselines.push(PiecewiseBaseline::new(self.grids[k].clone(), steps)?);
            betas[k] = self.beta_slice(tr, x).to_vec();
        }
        let loadings = self.frailty.then(|| {
            FrailtyLoadings::from_free([
                x[self.loading_offset],
                x[self.loading_offset + 1],
                x[self.loading_offset + 2],
                x[self.loading_offset + 3],
            ])
        });
        let baselines: [PiecewiseBaseline; 4] =
            baselines.try_into().expect("four transitions");
        Ok(ParamView {
            baselines,
            betas,
            loadings,
        })
    }

    /// Flat vector from a structured view. Inverse of [`Self::unpack`].
    pub fn pack(&self, view: &ParamView) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.len];
        for tr in Transition::ALL {
            let k = tr.index();
            let b = &view.baselines[k];
            if b.grid != self.grids[k] {
                return Err(Error::Layout(format!("grid mismatch for {tr}")));
            }
            if view.betas[k].len() != self.beta_names.len() {
                return Err(Error::Layout(format!(
                    "beta length mismatch for {tr}: {} vs {}",
                    view.betas[k].len(),
                    self.beta_names.len()
                )));
            }
            for (i, s) in b.steps.iter().enumerate() {
                x[self.alpha_offset[k] + i] = s.ln();
            }
            for (c, v) in view.betas[k].iter().enumerate() {
                x[self.beta_offset[k] + c] = *v;
            }
        }
        match (&view.loadings, self.frailty) {
            (Some(l), true) => {
                let free = l.free();
                x[self.loading_offset..self.loading_offset + 4].copy_from_slice(&free);
            }
            (None, false) => {}
            _ => return Err(Error::Layout("frailty flag mismatch".into())),
        }
        Ok(x)
    }
}

/// Structured view of the parameters for one evaluation.
#[derive(Debug, Clone)]
pub struct ParamView {
    pub baselines: [PiecewiseBaseline; 4],
    pub betas: [Vec<f64>; 4],
    /// `None` when heterogeneity is off (log-frailty identically 0).
    pub loadings: Option<FrailtyLoadings>,
}

impl ParamView {
    pub fn loadings_or_disabled(&self) -> FrailtyLoadings {
        self.loadings.unwrap_or_else(FrailtyLoadings::disabled)
    }
}
