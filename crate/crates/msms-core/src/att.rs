//! Unconditional duration effects of the treatment.
//!
//! The treatment coefficient θ_r is already the effect on the log hazard;
//! translating it to days uses the latent duration of transition r in
//! isolation. Given a rate multiplier `k = exp(θ·mc + z + ω)` the survival
//! of the piecewise-exponential is exact segment by segment, so the expected
//! duration `∫ S` has a closed form: for transitions with a censoring
//! horizon it is the restricted mean at the horizon, for unbounded
//! transitions the final interval integrates in closed form. The
//! unconditional expectation averages first over the frailty draws, then
//! over the realized no-treatment linear predictors `z` of the treated rows
//! (their empirical distribution stands in for the covariate distribution
//! under treatment), and the duration-scale effect is the difference of the
//! mc = 1 and mc = 0 expectations at the same z and ε. Standard deviations
//! come from redrawing the parameter vector from its estimated sampling
//! distribution with frozen ε (Krinsky–Robb).

use crate::baseline::{PiecewiseBaseline, GRID_START};
use crate::design::{build_rows, McMode};
use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::params::ParamLayout;
use crate::rng::stream;
use crate::spells::SpellRecord;
use crate::states::Transition;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;

/// `E[min(T, horizon)] = ∫₀^H S(t) dt` for the transition's latent duration
/// under rate multiplier `k`; `H` is the grid horizon, or ∞ for unbounded
/// grids (closed-form tail, which requires a positive final rate).
pub fn restricted_mean(baseline: &PiecewiseBaseline, k: f64) -> Result<f64> {
    let grid = &baseline.grid;
    let mut expectation = GRID_START; // survival is 1 below the grid start
    let mut log_s = 0.0f64;
    for (seg, &start) in grid.starts.iter().enumerate() {
        let rho = k * baseline.steps[seg];
        let end = grid.end(seg);
        if end.is_infinite() {
            if rho <= 0.0 {
                return Err(Error::Att(
                    "non-integrable tail: zero hazard on the unbounded final interval".into(),
                ));
            }
            expectation += log_s.exp() / rho;
            return Ok(expectation);
        }
        let width = end - start;
        if rho == 0.0 {
            expectation += log_s.exp() * width;
        } else {
            expectation += log_s.exp() * (-(-rho * width).exp_m1()) / rho;
        }
        log_s -= rho * width;
    }
    Ok(expectation)
}

/// Unconditional expected duration of transition `r` under treatment status
/// `mc`: mean over the frozen frailty draws (inner), then over the realized
/// `z` values of the treated subsample (outer). `eps` empty means no
/// heterogeneity (ω ≡ 0). `loading` is (ψ_r, φ_r).
pub fn expected_duration(
    baseline: &PiecewiseBaseline,
    theta: f64,
    z_values: &[f64],
    eps: &[(f64, f64)],
    loading: (f64, f64),
    mc: u8,
) -> Result<f64> {
    if z_values.is_empty() {
        return Err(Error::Att("empty treated subsample".into()));
    }
    let shift = theta * mc as f64;
    let per_z: Result<Vec<f64>> = z_values
        .par_iter()
        .map(|&z| -> Result<f64> {
            if eps.is_empty() {
                return restricted_mean(baseline, (shift + z).exp());
            }
            let mut acc = 0.0;
            for &(e1, e2) in eps {
                let omega = loading.0 * e1 + loading.1 * e2;
                acc += restricted_mean(baseline, (shift + z + omega).exp())?;
            }
            Ok(acc / eps.len() as f64)
        })
        .collect();
    let per_z = per_z?;
    Ok(per_z.iter().sum::<f64>() / per_z.len() as f64)
}

/// Positive-semidefinite factor `F` with `F Fᵀ = cov` (symmetric eigen with
/// small negative eigenvalues clipped); errors when the matrix is
/// indefinite beyond tolerance.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = cov.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-8 * max_ev.max(1e-300);
    let n = cov.nrows();
    let mut f = eig.eigenvectors;
    for j in 0..n {
        let ev = eig.eigenvalues[j];
        if ev < -tol {
            return Err(Error::Covariance(format!(
                "covariance is indefinite (eigenvalue {ev:.3e})"
            )));
        }
        let s = ev.max(0.0).sqrt();
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

/// Krinsky–Robb standard deviation of `functional`: redraw the parameter
/// vector from N(estimates, covariance) `n_draws` times (stream
/// `(seed, "kr")`) and return the sample standard deviation of the
/// functional values.
pub fn krinsky_robb_sd<F>(
    estimates: &[f64],
    covariance: &DMatrix<f64>,
    n_draws: usize,
    seed: u64,
    functional: F,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if n_draws < 2 {
        return Err(Error::Att("Krinsky-Robb needs at least 2 draws".into()));
    }
    let factor = psd_factor(covariance)?;
    let n = estimates.len();
    let mut rng = stream(seed, "kr");
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zv = nalgebra::DVector::from_vec(z);
        let shift = &factor * zv;
        let theta: Vec<f64> = estimates.iter().zip(shift.iter()).map(|(e, s)| e + s).collect();
        draws.push(theta);
    }
    let values: Result<Vec<f64>> = draws.par_iter().map(|d| functional(d)).collect();
    let values = values?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

/// Which treated subsample the effect is computed on.
#[derive(Debug, Clone, PartialEq)]
pub enum AttGroup {
    Overall,
    /// One row per specialty (requires a by-specialty treatment block).
    BySpecialty,
}

#[derive(Debug, Clone)]
pub struct AttOptions {
    /// Frailty draws per z row (ignored for no-heterogeneity fits).
    pub eps_draws: usize,
    /// Parameter redraws for the Krinsky–Robb standard deviation; 0 skips.
    pub param_draws: usize,
    pub seed: u64,
    /// Cap on treated rows used for the z distribution (deterministic
    /// stride subsample beyond this).
    pub max_rows: usize,
}

impl Default for AttOptions {
    fn default() -> Self {
        Self {
            eps_draws: 100,
            param_draws: 500,
            seed: 0,
            max_rows: 5000,
        }
    }
}

/// One line of the duration-effect table.
#[derive(Debug, Clone, Serialize)]
pub struct AttRow {
    pub transition: String,
    pub transition_id: u8,
    pub group: String,
    /// Treatment effect on the log hazard.
    pub theta: f64,
    pub theta_se: Option<f64>,
    /// Expected duration difference in days (mc = 1 minus mc = 0).
    pub duration_att: f64,
    /// Krinsky–Robb standard deviation.
    pub duration_se: Option<f64>,
    pub expected_mc1: f64,
    pub expected_mc0: f64,
    /// Higher hazard should mean shorter duration; recorded, not enforced.
    pub opposite_sign: bool,
    pub n_treated_rows: usize,
    pub eps_draws: usize,
    pub param_draws: usize,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttResult {
    pub rows: Vec<AttRow>,
}

struct AttPieces {
    theta_index: usize,
    z_values: Vec<f64>,
}

/// θ index and realized z^N values of the treated subsample for one
/// transition/group, at the given parameter vector.
fn att_pieces(
    fit: &FitResult,
    layout: &ParamLayout,
    params: &[f64],
    spells: &[SpellRecord],
    rows: &[crate::design::SparseRow],
    tr: Transition,
    group: Option<&str>,
    max_rows: usize,
) -> Result<AttPieces> {
    let label = match (&fit.spec.covariates.mc, group) {
        (McMode::Overall, None) => "mc".to_string(),
        (McMode::BySpecialty, Some(g)) => format!("mc:{g}"),
        (McMode::Overall, Some(_)) => {
            return Err(Error::Att(
                "fit has a single overall treatment coefficient; specialty groups unavailable"
                    .into(),
            ))
        }
        (McMode::BySpecialty, None) => {
            return Err(Error::Att(
                "fit decomposes the treatment by specialty; pass a specialty group".into(),
            ))
        }
        (m, _) => {
            return Err(Error::Att(format!(
                "duration effects are defined for overall or by-specialty treatment blocks, not {m:?}"
            )))
        }
    };
    let col = fit
        .schema
        .columns
        .iter()
        .position(|c| *c == label)
        .ok_or_else(|| Error::Att(format!("column `{label}` not in the fitted schema")))?;
    let theta_index = layout.beta_index(tr, col);

    let beta = layout.beta_slice(tr, params);
    let mut treated: Vec<usize> = spells
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            s.origin == tr.origin() && s.mc == 1 && group.is_none_or(|g| s.specialty == g)
        })
        .map(|(i, _)| i)
        .collect();
    if treated.is_empty() {
        return Err(Error::Att(format!(
            "no treated spells at risk of {tr} in group `{}`",
            group.unwrap_or("overall")
        )));
    }
    if treated.len() > max_rows {
        let stride = treated.len() as f64 / max_rows as f64;
        treated = (0..max_rows)
            .map(|i| treated[(i as f64 * stride) as usize])
            .collect();
    }
    let z_values: Vec<f64> = treated
        .iter()
        .map(|&i| rows[i].dot_excluding(beta, &fit.schema.mc_block))
        .collect();
    Ok(AttPieces {
        theta_index,
        z_values,
    })
}

fn att_for(
    fit: &FitResult,
    layout: &ParamLayout,
    spells: &[SpellRecord],
    rows: &[crate::design::SparseRow],
    tr: Transition,
    group: Option<&str>,
    eps: &[(f64, f64)],
    options: &AttOptions,
) -> Result<AttRow> {
    let k = tr.index();
    let evaluate = |params: &[f64]| -> Result<(f64, f64, f64, usize)> {
        let pieces = att_pieces(fit, layout, params, spells, rows, tr, group, options.max_rows)?;
        let view = layout.unpack(params)?;
        let loadings = view.loadings_or_disabled();
        let loading = (loadings.psi[k], loadings.phi[k]);
        let baseline = &view.baselines[k];
        let theta = params[pieces.theta_index];
        let d1 = expected_duration(baseline, theta, &pieces.z_values, eps, loading, 1)?;
        let d0 = expected_duration(baseline, theta, &pieces.z_values, eps, loading, 0)?;
        Ok((theta, d1, d0, pieces.z_values.len()))
    };

    let (theta, d1, d0, n_rows) = evaluate(&fit.estimates)?;
    let duration_att = d1 - d0;
    let duration_se = match (&fit.covariance, options.param_draws) {
        (Some(cov), draws) if draws >= 2 => Some(krinsky_robb_sd(
            &fit.estimates,
            cov,
            draws,
            options.seed,
            |params| evaluate(params).map(|(_, d1, d0, _)| d1 - d0),
        )?),
        _ => None,
    };
    let theta_index = att_pieces(
        fit,
        layout,
        &fit.estimates,
        spells,
        rows,
        tr,
        group,
        options.max_rows,
    )?
    .theta_index;
    Ok(AttRow {
        transition: tr.to_string(),
        transition_id: tr.id(),
        group: group.unwrap_or("overall").to_string(),
        theta,
        theta_se: fit.std_errors.as_ref().map(|se| se[theta_index]),
        duration_att,
        duration_se,
        expected_mc1: d1,
        expected_mc0: d0,
        opposite_sign: theta * duration_att <= 0.0,
        n_treated_rows: n_rows,
        eps_draws: if eps.is_empty() { 0 } else { eps.len() },
        param_draws: if fit.covariance.is_some() && options.param_draws >= 2 {
            options.param_draws
        } else {
            0
        },
        horizon: layout.grids()[k].horizon,
    })
}

/// Duration-scale treatment effects for the given transitions, overall or by
/// specialty, holding the realized z distribution of the treated rows fixed.
pub fn att_duration(
    fit: &FitResult,
    spells: &[SpellRecord],
    transitions: &[Transition],
    group: AttGroup,
    options: &AttOptions,
) -> Result<AttResult> {
    let layout = fit.layout();
    if fit.estimates.len() != layout.len() {
        return Err(Error::Att("fit and layout disagree on parameter count".into()));
    }
    let rows = build_rows(spells, &fit.spec, &fit.schema)?;
    let eps: Vec<(f64, f64)> = if fit.spec.frailty {
        let mut rng = stream(options.seed, "att-eps");
        (0..options.eps_draws)
            .map(|_| {
                (
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                )
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut result = AttResult { rows: Vec::new() };
    for &tr in transitions {
        match &group {
            AttGroup::Overall => {
                result
                    .rows
                    .push(att_for(fit, &layout, spells, &rows, tr, None, &eps, options)?);
            }
            AttGroup::BySpecialty => {
                for level in &fit.schema.specialty_levels {
                    match att_for(fit, &layout, spells, &rows, tr, Some(level), &eps, options) {
                        Ok(row) => result.rows.push(row),
                        // A specialty without treated spells at risk gets no
                        // row rather than failing the whole table.
                        Err(Error::Att(msg)) if msg.starts_with("no treated spells") => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    if result.rows.is_empty() {
        return Err(Error::Att("no group had treated spells at risk".into()));
    }
    Ok(result)
}

impl AttResult {
    /// Table mirroring the duration-effects layout: transition, group,
    /// estimate, standard error.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: display.clone(),
            source: e,
        })?;
        w.write_record([
            "transition",
            "group",
            "estimate_days",
            "std_error",
            "theta",
            "theta_se",
            "expected_mc1",
            "expected_mc0",
            "n_treated_rows",
        ])
        .map_err(|e| Error::Csv {
            path: display.clone(),
            source: e,
        })?;
        for r in &self.rows {
            w.write_record([
                format!("{}", r.transition_id),
                r.group.clone(),
                r.duration_att.to_string(),
                r.duration_se.map(|v| v.to_string()).unwrap_or_default(),
                r.theta.to_string(),
                r.theta_se.map(|v| v.to_string()).unwrap_or_default(),
                r.expected_mc1.to_string(),
                r.expected_mc0.to_string(),
                r.n_treated_rows.to_string(),
            ])
            .map_err(|e| Error::Csv {
                path: display.clone(),
                source: e,
            })?;
        }
        w.flush().map_err(|e| Error::io(display, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::BaselineGrid;

    fn single(h: f64, horizon: Option<f64>) -> PiecewiseBaseline {
        PiecewiseBaseline::new(BaselineGrid::new(vec![1.0], horizon).unwrap(), vec![h]).unwrap()
    }

    #[test]
    fn exponential_mean_shifted_by_grid_start() {
        // Single interval [1,∞) with hazard h: E[T] = 1 + 1/h.
        for &h in &[0.05, 0.3, 2.0] {
            let e = restricted_mean(&single(h, None), 1.0).unwrap();
            assert!((e - (1.0 + 1.0 / h)).abs() < 1e-12, "h={h}");
        }
    }

    #[test]
    fn restricted_mean_closed_form() {
        // Horizon H: E[min(T,H)] = 1 + (1 − e^{−h(H−1)})/h.
        let (h, cap) = (0.07, 30.0);
        let e = restricted_mean(&single(h, Some(cap)), 1.0).unwrap();
        let expected = 1.0 + (1.0 - (-h * (cap - 1.0)).exp()) / h;
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_tail_hazard_is_an_error() {
        // Multiplier underflows to exactly zero: non-integrable tail.
        let b = single(1.0, None);
        assert!(restricted_mean(&b, 0.0).is_err());
        assert!(restricted_mean(&single(1.0, Some(10.0)), 0.0).is_ok());
    }

    #[test]
    fn density_mass_checks_out_against_quadrature() {
        // ∫ g over [1,H] + S(H) = 1, with g evaluated pointwise and
        // integrated by Simpson on a fine grid (independent of the
        // closed-form path).
        let b = PiecewiseBaseline::new(
            BaselineGrid::new(vec![1.0, 3.0, 9.0], Some(30.0)).unwrap(),
            vec![0.11, 0.05, 0.02],
        )
        .unwrap();
        for &k in &[0.4, 1.0, 2.7] {
            let mut mass = 0.0;
            let panels = [1.0, 3.0, 9.0, 30.0];
            for w in panels.windows(2) {
                // The rate is constant inside a panel; sample it at the
                // midpoint so the jump at the right edge is not touched.
                let rate = b.rate_at(0.5 * (w[0] + w[1]));
                let g = |t: f64| k * rate * (-k * b.cumulative(t)).exp();
                let n = 4000;
                let h = (w[1] - w[0]) / n as f64;
                let mut s = g(w[0]) + g(w[1]);
                for i in 1..n {
                    let t = w[0] + i as f64 * h;
                    s += if i % 2 == 1 { 4.0 * g(t) } else { 2.0 * g(t) };
                }
                mass += s * h / 3.0;
            }
            let survival_at_horizon = (-k * b.cumulative(30.0)).exp();
            assert!(
                (mass + survival_at_horizon - 1.0).abs() < 1e-10,
                "k={k}: mass {mass} + S {survival_at_horizon}"
            );
        }
    }

    #[test]
    fn expected_duration_decreases_in_theta() {
        let b = PiecewiseBaseline::new(
            BaselineGrid::new(vec![1.0, 4.0], None).unwrap(),
            vec![0.2, 0.1],
        )
        .unwrap();
        let z = vec![-0.2, 0.1, 0.4];
        let eps = vec![(0.5, -0.3), (-1.2, 0.8), (0.0, 0.0)];
        let mut prev = f64::INFINITY;
        for &theta in &[-0.5, -0.1, 0.0, 0.2, 0.8] {
            let d = expected_duration(&b, theta, &z, &eps, (1.0, 0.3), 1).unwrap();
            assert!(d < prev, "theta={theta}: {d} !< {prev}");
            prev = d;
        }
        // mc = 0 ignores theta entirely.
        let d0a = expected_duration(&b, -0.5, &z, &eps, (1.0, 0.3), 0).unwrap();
        let d0b = expected_duration(&b, 0.8, &z, &eps, (1.0, 0.3), 0).unwrap();
        assert_eq!(d0a, d0b);
    }

    #[test]
    fn krinsky_robb_degenerate_covariance_gives_zero_sd() {
        let est = vec![0.3, -0.1];
        let cov = DMatrix::zeros(2, 2);
        let sd = krinsky_robb_sd(&est, &cov, 50, 1, |p| Ok(2.0 * p[0] - p[1])).unwrap();
        assert!(sd.abs() < 1e-12, "sd {sd}");
    }

    #[test]
    fn krinsky_robb_matches_linear_functional_se() {
        // For the linear functional θ ↦ θ_0, the KR SD estimates √cov_00.
        let est = vec![0.5, 1.0];
        let mut cov = DMatrix::zeros(2, 2);
        cov[(0, 0)] = 0.04;
        cov[(1, 1)] = 0.25;
        cov[(0, 1)] = 0.03;
        cov[(1, 0)] = 0.03;
        let sd = krinsky_robb_sd(&est, &cov, 2000, 7, |p| Ok(p[0])).unwrap();
        assert!((sd - 0.2).abs() / 0.2 < 0.05, "sd {sd}");
        // Stability across disjoint seed batches at 2000 draws.
        let sd2 = krinsky_robb_sd(&est, &cov, 2000, 8, |p| Ok(p[0])).unwrap();
        assert!((sd - sd2).abs() / sd < 0.1);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let mut cov = DMatrix::zeros(2, 2);
        cov[(0, 0)] = 1.0;
        cov[(1, 1)] = -1.0;
        assert!(psd_factor(&cov).is_err());
    }
}
