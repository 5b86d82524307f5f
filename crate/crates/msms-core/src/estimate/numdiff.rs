//! Central finite differences with per-parameter scaled steps.

use crate::error::Result;
use nalgebra::DMatrix;

/// Central-difference gradient of a scalar function,
/// `h_j = rel_step · (1 + |x_j|)`.
pub fn central_gradient<F>(f: F, x: &[f64], rel_step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut g = vec![0.0; x.len()];
    let mut xt = x.to_vec();
    for j in 0..x.len() {
        let h = rel_step * (1.0 + x[j].abs());
        xt[j] = x[j] + h;
        let fp = f(&xt)?;
        xt[j] = x[j] - h;
        let fm = f(&xt)?;
        xt[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Symmetrized central-difference Hessian from a gradient function.
pub fn hessian_from_grad<G>(grad: G, x: &[f64], rel_step: f64) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut xt = x.to_vec();
    for j in 0..n {
        let step = rel_step * (1.0 + x[j].abs());
        xt[j] = x[j] + step;
        let gp = grad(&xt)?;
        xt[j] = x[j] - step;
        let gm = grad(&xt)?;
        xt[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    // Exact Hessians are symmetric; differencing noise is not.
    let ht = h.transpose();
    Ok((h + ht) * 0.5)
}
