use ndarray::{ArrayView1, ArrayView2};

use super::LinearModel;
use crate::error::{Error, Result};
use crate::stochastics::{chol_solve, cholesky};

/// Least squares with intercept via centered normal equations.
///
/// Pivots below 1e-12·trace/p are treated as a rank failure, in which case
/// 1e-10·trace/p is added to the diagonal and the factorization retried.
pub fn fit_ols(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<LinearModel> {
    let (n, p) = x.dim();
    let nf = n as f64;
    let x_mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / nf).collect();
    let y_mean = y.sum() / nf;

    let mut xc = x.to_owned();
    for (mut col, m) in xc.columns_mut().into_iter().zip(&x_mean) {
        col -= *m;
    }
    let yc = &y - y_mean;

    let mut gram = xc.t().dot(&xc);
    let rhs = xc.t().dot(&yc).to_vec();
    let trace: f64 = (0..p).map(|j| gram[[j, j]]).sum();
    if p == 0 || !(trace > 0.0) {
        return Ok(LinearModel::intercept_only(y_mean, p));
    }
    let scale = trace / p as f64;
    let l = match cholesky(gram.view(), 1e-12 * scale) {
        Ok(l) => l,
        Err(Error::NotPositiveDefinite { .. }) => {
            for j in 0..p {
                gram[[j, j]] += 1e-10 * scale;
            }
            cholesky(gram.view(), 0.0)?
        }
        Err(e) => return Err(e),
    };
    let coef = chol_solve(&l, &rhs);
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    if !intercept.is_finite() || coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::Fit("least squares produced non-finite coefficients".into()));
    }
    Ok(LinearModel { coef, intercept })
}
