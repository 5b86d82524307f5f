//! Simulated maximum likelihood estimation.
//!
//! `fit` assembles the design, freezes the frailty draws, maximizes the
//! simulated log-likelihood with BFGS from empirical-hazard starting values,
//! and reports information-based standard errors (inverse negative Hessian,
//! central differences of the analytic gradient). Non-convergence is
//! reported honestly in the result, never hidden.

mod draws;
mod engine;
pub mod numdiff;
pub mod optim;

pub use draws::FrailtyDraws;
pub use engine::{gradient, simulated_loglik, LikelihoodEngine};

use crate::design::{build_design, rank_report, Design, ModelSpec, ResolvedSchema};
use crate::error::{Error, Result};
use crate::frailty::{frailty_correlation, FrailtyLoadings};
use crate::params::{LayoutEntry, ParamLayout};
use crate::spells::SpellRecord;
use crate::states::Transition;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Monte Carlo draws per patient; `None` uses the model spec value.
    pub draws: Option<usize>,
    /// Seed of the frozen draws; `None` uses the model spec value.
    pub seed: Option<u64>,
    /// Convergence: gradient sup-norm ≤ tol·(1+|logL|), in the equilibrated
    /// basis the optimizer works in.
    pub tol: f64,
    pub max_iter: usize,
    /// Worker threads; 0 uses the process-global pool. Results are
    /// bit-identical either way.
    pub threads: usize,
    /// Relative step of the central-difference Hessian.
    pub hessian_step: f64,
    /// Compute the covariance (skippable for pure point estimation).
    pub covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            draws: None,
            seed: None,
            tol: 1e-8,
            max_iter: 500,
            threads: 0,
            hessian_step: 3e-5,
            covariance: true,
        }
    }
}

/// Frailty correlation matrix with delta-method standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub value: [[f64; 4]; 4],
    pub std_error: Option<[[f64; 4]; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub schema: ResolvedSchema,
    pub entries: Vec<LayoutEntry>,
    pub estimates: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
    /// Sidecar file the covariance is stored in (row-major little-endian
    /// f64), relative to the fit directory.
    pub covariance_file: Option<String>,
    pub covariance_note: Option<String>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Gradient sup-norm at the final point (equilibrated basis).
    pub grad_norm: f64,
    pub grad_threshold: f64,
    pub message: String,
    /// Log-likelihood after each accepted step, starting point included.
    pub trace: Vec<f64>,
    pub clamps_total: u64,
    pub clamps_at_optimum: u64,
    pub draws_m: usize,
    pub draws_seed: u64,
    pub frailty_correlation: Option<CorrelationEstimate>,
    pub full_rank: bool,
    pub rank_null_space: Vec<Vec<String>>,
    pub n_patients: usize,
    pub n_spells: usize,
}

impl FitResult {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::build(
            self.spec.grids.as_array(),
            self.schema.columns.clone(),
            self.spec.frailty,
        )
    }

    /// Flat label of an entry, e.g. `t3:mc` or `t1:[1,2)`.
    pub fn label(entry: &LayoutEntry) -> String {
        format!("{}:{}", entry.transition.label(), entry.name)
    }

    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| Self::label(e) == label)
            .map(|e| e.index)
    }

    pub fn estimate(&self, label: &str) -> Option<f64> {
        self.index_of_label(label).map(|i| self.estimates[i])
    }

    pub fn std_error(&self, label: &str) -> Option<f64> {
        let i = self.index_of_label(label)?;
        self.std_errors.as_ref().map(|se| se[i])
    }

    /// Write `fit.json`, the covariance sidecar and the flat coefficient
    /// table into `dir`.
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        if let Some(cov) = &self.covariance {
            let path = dir.join("cov.bin");
            let mut bytes = Vec::with_capacity(cov.len() * 8);
            for v in cov.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            std::fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
            self.covariance_file = Some("cov.bin".into());
        }
        let json_path = dir.join("fit.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(json_path.display().to_string(), e))?;
        std::fs::write(&json_path, text)
            .map_err(|e| Error::io(json_path.display().to_string(), e))?;

        let csv_path = dir.join("coefficients.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Csv {
            path: csv_path.display().to_string(),
            source: e,
        })?;
        w.write_record(["transition", "block", "name", "estimate", "std_error"])
            .map_err(|e| Error::Csv {
                path: csv_path.display().to_string(),
                source: e,
            })?;
        for e in &self.entries {
            let se = self
                .std_errors
                .as_ref()
                .map(|s| s[e.index].to_string())
                .unwrap_or_default();
            w.write_record([
                e.transition.label().to_string(),
                format!("{:?}", e.block).to_lowercase(),
                e.name.clone(),
                self.estimates[e.index].to_string(),
                se,
            ])
            .map_err(|e| Error::Csv {
                path: csv_path.display().to_string(),
                source: e,
            })?;
        }
        w.flush()
            .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
        Ok(())
    }

    /// Load a saved fit (including the covariance sidecar when present).
    pub fn load(dir: impl AsRef<Path>) -> Result<FitResult> {
        let dir = dir.as_ref();
        let json_path = dir.join("fit.json");
        let text = std::fs::read_to_string(&json_path)
            .map_err(|e| Error::io(json_path.display().to_string(), e))?;
        let mut fit: FitResult = serde_json::from_str(&text)
            .map_err(|e| Error::json(json_path.display().to_string(), e))?;
        if let Some(name) = &fit.covariance_file {
            let path = dir.join(name);
            let bytes =
                std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let n = fit.estimates.len();
            if bytes.len() != n * n * 8 {
                return Err(Error::Covariance(format!(
                    "covariance sidecar has {} bytes, expected {}",
                    bytes.len(),
                    n * n * 8
                )));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            fit.covariance = Some(DMatrix::from_iterator(n, n, values));
        }
        Ok(fit)
    }
}

/// Empirical-hazard starting values: per transition and interval, the
/// occurrence/exposure rate (smoothed), on the log scale; coefficients at
/// zero; free loadings at 0.1.
pub fn starting_values(spells: &[SpellRecord], layout: &ParamLayout) -> Vec<f64> {
    let grids = layout.grids();
    let mut x = vec![0.0; layout.len()];
    for tr in Transition::ALL {
        let grid = &grids[tr.index()];
        let mut events = vec![0.0f64; grid.n_intervals()];
        let mut exposure = vec![0.0f64; grid.n_intervals()];
        for s in spells {
            if s.origin != tr.origin() {
                continue;
            }
            for (k, len) in grid.exposures(s.duration).iter().enumerate() {
                exposure[k] += len;
            }
            if s.event == Some(tr) {
                if let Some(k) = grid.interval_of(s.duration) {
                    events[k] += 1.0;
                }
            }
        }
        for k in 0..grid.n_intervals() {
            x[layout.log_alpha_index(tr, k)] = ((events[k] + 0.5) / (exposure[k] + 1.0)).ln();
        }
        if let Some(i) = layout.loading_index(tr) {
            x[i] = 0.1;
        }
    }
    x
}

/// Fit the model to spells: build the design, then maximize.
pub fn fit(spells: &[SpellRecord], spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    let design = build_design(spells, spec)?;
    fit_prepared(spells, &design, spec, options)
}

/// Fit against an externally built design (used by the pre-trend test,
/// which restricts the spells and swaps the treatment block for trend
/// interactions).
pub fn fit_prepared(
    spells: &[SpellRecord],
    design: &Design,
    spec: &ModelSpec,
    options: &FitOptions,
) -> Result<FitResult> {
    let rank = rank_report(design);
    let layout = ParamLayout::build(
        spec.grids.as_array(),
        design.schema.columns.clone(),
        spec.frailty,
    );
    let m = options.draws.unwrap_or(spec.draws);
    let seed = options.seed.unwrap_or(spec.seed);
    let engine = LikelihoodEngine::new(
        spells,
        design.rows.clone(),
        layout.clone(),
        m,
        seed,
        options.threads,
    )?;

    let start = starting_values(spells, &layout);
    let start_internal = engine.to_internal(&start);
    engine.guard().reset();

    let objective = |xi: &[f64]| -> Option<(f64, Vec<f64>)> {
        match engine.loglik_grad_internal(xi) {
            Ok((f, mut g)) => {
                for v in &mut g {
                    *v = -*v;
                }
                Some((-f, g))
            }
            Err(_) => None,
        }
    };
    let outcome = optim::minimize(
        objective,
        &start_internal,
        &optim::BfgsOptions {
            tol: options.tol,
            max_iter: options.max_iter,
        },
    )
    .map_err(Error::Optimizer)?;
    let clamps_total = engine.guard().clamps();

    let estimates = engine.to_external(&outcome.x);
    engine.guard().reset();
    let (loglik, _) = engine.loglik_grad(&estimates)?;
    let clamps_at_optimum = engine.guard().clamps();

    let mut covariance = None;
    let mut covariance_note = None;
    let mut std_errors = None;
    if options.covariance {
        let hess = numdiff::hessian_from_grad(
            |x| engine.loglik_grad(x).map(|r| r.1),
            &estimates,
            options.hessian_step,
        )?;
        let neg_h = -hess;
        match nalgebra::Cholesky::new(neg_h) {
            Some(chol) => {
                let cov = chol.inverse();
                std_errors = Some(
                    (0..cov.nrows())
                        .map(|i| cov[(i, i)].max(0.0).sqrt())
                        .collect(),
                );
                covariance = Some(cov);
            }
            None => {
                covariance_note = Some(
                    "negative Hessian is not positive definite; covariance omitted".to_string(),
                );
            }
        }
    }

    let frailty_corr = if spec.frailty {
        let view = layout.unpack(&estimates)?;
        let loadings = view.loadings.expect("frailty layout");
        let corr = frailty_correlation(&loadings)?;
        let std_error = covariance
            .as_ref()
            .map(|cov| correlation_delta_se(&loadings, cov, &layout));
        Some(CorrelationEstimate {
            value: corr,
            std_error,
        })
    } else {
        None
    };

    let n_patients = engine.n_patients();
    Ok(FitResult {
        spec: spec.clone(),
        schema: design.schema.clone(),
        entries: layout.entries(),
        estimates,
        std_errors,
        covariance,
        covariance_file: None,
        covariance_note,
        loglik,
        converged: outcome.converged,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm(),
        grad_threshold: outcome.threshold(options.tol),
        message: outcome.message,
        trace: outcome.trace.iter().map(|f| -f).collect(),
        clamps_total,
        clamps_at_optimum,
        draws_m: if spec.frailty { m } else { 1 },
        draws_seed: seed,
        frailty_correlation: frailty_corr,
        full_rank: rank.full_rank,
        rank_null_space: rank.null_space,
        n_patients,
        n_spells: spells.len(),
    })
}

/// Delta-method standard errors of the correlation entries: numerical
/// Jacobian with respect to the four free loadings times their covariance
/// block.
fn correlation_delta_se(
    loadings: &FrailtyLoadings,
    cov: &DMatrix<f64>,
    layout: &ParamLayout,
) -> [[f64; 4]; 4] {
    let free = loadings.free();
    let idx: Vec<usize> = Transition::ALL
        .iter()
        .map(|&tr| layout.loading_index(tr).expect("frailty layout"))
        .collect();
    let sub = DMatrix::from_fn(4, 4, |i, j| cov[(idx[i], idx[j])]);

    let corr_of = |f: [f64; 4]| -> [[f64; 4]; 4] {
        frailty_correlation(&FrailtyLoadings::from_free(f))
            .unwrap_or([[f64::NAN; 4]; 4])
    };
    // Jacobian of the 16 entries in the 4 free loadings.
    let mut jac = [[[0.0f64; 4]; 4]; 4]; // [param][row][col]
    for p in 0..4 {
        let h = 1e-6 * (1.0 + free[p].abs());
        let mut fp = free;
        fp[p] += h;
        let cp = corr_of(fp);
        let mut fm = free;
        fm[p] -= h;
        let cm = corr_of(fm);
        for r in 0..4 {
            for c in 0..4 {
                jac[p][r][c] = (cp[r][c] - cm[r][c]) / (2.0 * h);
            }
        }
    }
    let mut se = [[0.0f64; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let mut var = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    var += jac[a][r][c] * sub[(a, b)] * jac[b][r][c];
                }
            }
            se[r][c] = var.max(0.0).sqrt();
        }
    }
    se
}

#[derive(Debug, Clone, Serialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Joint Wald test that the named coefficients are zero:
/// `θ' V⁻¹ θ ~ χ²(df)`. Labels are `t<r>:<name>`, e.g. `t3:pretrend_q`.
pub fn wald_test(fit: &FitResult, labels: &[&str]) -> Result<WaldTest> {
    let cov = fit
        .covariance
        .as_ref()
        .ok_or_else(|| Error::Wald("covariance unavailable".into()))?;
    let mut idx = Vec::with_capacity(labels.len());
    for l in labels {
        idx.push(
            fit.index_of_label(l)
                .ok_or_else(|| Error::Wald(format!("unknown coefficient `{l}`")))?,
        );
    }
    let k = idx.len();
    if k == 0 {
        return Err(Error::Wald("no coefficients named".into()));
    }
    let theta = nalgebra::DVector::from_iterator(k, idx.iter().map(|&i| fit.estimates[i]));
    let sub = DMatrix::from_fn(k, k, |a, b| cov[(idx[a], idx[b])]);
    let chol = nalgebra::Cholesky::new(sub)
        .ok_or_else(|| Error::Wald("singular subcovariance".into()))?;
    let statistic = theta.dot(&chol.solve(&theta));
    let dist = ChiSquared::new(k as f64)
        .map_err(|e| Error::Wald(format!("chi-square setup: {e}")))?;
    let p_value = if statistic <= 0.0 {
        1.0
    } else {
        1.0 - dist.cdf(statistic)
    };
    Ok(WaldTest {
        statistic,
        df: k,
        p_value,
    })
}
