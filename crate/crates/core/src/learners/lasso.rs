//! L1-penalized least squares by cyclic coordinate descent, with a
//! cross-validated penalty chosen on a warm-started path.
//!
//! Objective on standardized data: (1/2n)‖y_c − Xβ‖² + λ‖β‖₁. The solver
//! keeps the gradient vector Xᵀr/n up to date through lazily computed Gram
//! columns, so a coordinate visit costs O(1) unless the coefficient moves.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::LinearModel;
use crate::error::{Error, Result};
use crate::stochastics::{balanced_partition, chol_delete, chol_solve, cholesky, SeededStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoParams {
    /// Explicit descending penalty grid. `None` builds a log-spaced path from
    /// λ_max down to `lambda_min_ratio · λ_max`.
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambda: usize,
    /// `None` means 1e-3 when n > p and 1e-2 otherwise.
    pub lambda_min_ratio: Option<f64>,
    pub cv_folds: usize,
    /// Convergence threshold on the largest coefficient move in a full sweep.
    pub tol: f64,
    /// Cap on coordinate sweeps per penalty value.
    pub max_iter: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            n_lambda: 100,
            lambda_min_ratio: None,
            cv_folds: 5,
            tol: 1e-7,
            max_iter: 100_000,
        }
    }
}

/// Column centering and scaling to unit variance (1/n divisor, so that
/// x_jᵀx_j/n = 1). Constant columns get scale 0 and are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            let constant = sd <= 1e-12 * m.abs().max(f64::MIN_POSITIVE);
            mean.push(m);
            scale.push(if constant { 0.0 } else { sd });
        }
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            if s == 0.0 {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        out
    }

    /// Maps standardized-scale coefficients back to the original scale.
    pub fn unscale(&self, beta: &[f64], y_mean: f64) -> LinearModel {
        let coef: Vec<f64> = beta
            .iter()
            .zip(&self.scale)
            .map(|(b, s)| if *s == 0.0 { 0.0 } else { b / s })
            .collect();
        let intercept = y_mean - coef.iter().zip(&self.mean).map(|(c, m)| c * m).sum::<f64>();
        LinearModel { coef, intercept }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdSolution {
    pub coef: Vec<f64>,
    pub sweeps: usize,
    /// Objective after every sweep.
    pub objective_trace: Vec<f64>,
    pub max_kkt_violation: f64,
}

/// Coordinate descent state for one design matrix; reusable across a
/// penalty path.
pub struct CdSolver<'a> {
    x: ArrayView2<'a, f64>,
    n: f64,
    xty: Vec<f64>,
    yy: f64,
    curvature: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
    /// Cholesky factor of the Gram block on an ordered support, reused across
    /// active-set steps, and the number of updates since it was last rebuilt.
    factor: Option<(Vec<usize>, Array2<f64>, usize)>,
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

impl<'a> CdSolver<'a> {
    pub fn new(x: ArrayView2<'a, f64>, y: ArrayView1<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let xty = x.t().dot(&y).mapv(|v| v / n).to_vec();
        let curvature = x.columns().into_iter().map(|c| c.dot(&c) / n).collect::<Vec<_>>();
        Self {
            x,
            n,
            xty,
            yy: y.dot(&y) / n,
            gram: vec![None; x.ncols()],
            factor: None,
            curvature,
        }
    }

    /// Smallest penalty at which the all-zero solution is optimal.
    pub fn lambda_max(&self) -> f64 {
        self.xty
            .iter()
            .zip(&self.curvature)
            .filter(|(_, z)| **z > 0.0)
            .map(|(g, _)| g.abs())
            .fold(0.0, f64::max)
    }

    fn gram_col(&mut self, j: usize) -> &[f64] {
        if self.gram[j].is_none() {
            let col = self.x.column(j);
            let g = self.x.t().dot(&col).mapv(|v| v / self.n).to_vec();
            self.gram[j] = Some(g);
        }
        self.gram[j].as_deref().unwrap()
    }

    fn visit(&mut self, j: usize, lambda: f64, beta: &mut [f64], grad: &mut [f64]) -> f64 {
        let z = self.curvature[j];
        let new = soft_threshold(grad[j] + z * beta[j], lambda) / z;
        let delta = new - beta[j];
        if delta != 0.0 {
            let col = self.gram_col(j);
            for (g, c) in grad.iter_mut().zip(col) {
                *g -= delta * c;
            }
            beta[j] = new;
        }
        delta.abs() * z.sqrt()
    }

    /// Active-set step: moves the support toward the stationary point of the
    /// objective restricted to the current sign pattern, stopping where a
    /// coefficient first reaches zero and dropping it, until the stationary
    /// point keeps every sign. The objective is convex along each segment, so
    /// it never increases. Returns whether the final stationary point was
    /// reached.
    fn exact_step(&mut self, lambda: f64, beta: &mut [f64], grad: &mut [f64]) -> bool {
        let before = self.objective(lambda, beta, grad);
        let start: Vec<(usize, f64)> = (0..beta.len())
            .filter(|&j| beta[j] != 0.0)
            .map(|j| (j, beta[j]))
            .collect();
        let wanted: Vec<usize> = start.iter().map(|&(j, _)| j).collect();
        let Some((mut support, mut l, mut updates, ridged)) = self.support_factor(&wanted) else {
            return false;
        };
        let reached = loop {
            let rhs: Vec<f64> = support
                .iter()
                .map(|&j| self.xty[j] - lambda * beta[j].signum())
                .collect();
            let target = chol_solve(&l, &rhs);
            // First crossing of zero along the segment toward `target`.
            let mut t = 1.0f64;
            let mut leaving = Vec::new();
            for (a, (&j, &b)) in support.iter().zip(&target).enumerate() {
                if !(b * beta[j] > 0.0) {
                    let cross = beta[j] / (beta[j] - b);
                    if cross < t {
                        t = cross;
                        leaving.clear();
                    }
                    if cross == t {
                        leaving.push(a);
                    }
                }
            }
            let step: Vec<f64> = support
                .iter()
                .zip(&target)
                .enumerate()
                .map(|(a, (&j, &b))| {
                    if leaving.contains(&a) {
                        0.0
                    } else {
                        beta[j] + t * (b - beta[j])
                    }
                })
                .collect();
            let current = support.clone();
            self.shift(&current, &step, beta, grad);
            if leaving.is_empty() {
                break true;
            }
            for &a in leaving.iter().rev() {
                l = chol_delete(&l, a);
                support.remove(a);
                updates += 1;
            }
            if support.is_empty() {
                break false;
            }
        };
        if !ridged && !support.is_empty() {
            self.factor = Some((support, l, updates));
        }
        if self.objective(lambda, beta, grad) > before {
            let (idx, vals): (Vec<usize>, Vec<f64>) = (0..beta.len())
                .map(|j| (j, start.iter().find(|&&(i, _)| i == j).map_or(0.0, |&(_, v)| v)))
                .unzip();
            self.shift(&idx, &vals, beta, grad);
            return false;
        }
        reached
    }

    /// Ordered support and lower factor of its Gram block for the support set
    /// `wanted` (ascending), plus the update count and whether a ridge was
    /// needed. The cached factor is downdated and extended when possible. A
    /// singular block (support beyond the rank of X) gets a small ridge; the
    /// active-set step then follows the near-null direction until a
    /// coefficient leaves.
    fn support_factor(&mut self, wanted: &[usize]) -> Option<(Vec<usize>, Array2<f64>, usize, bool)> {
        const MAX_UPDATES: usize = 64;
        if wanted.is_empty() {
            return None;
        }
        if let Some((mut order, mut l, mut updates)) = self.factor.take() {
            let mut member = vec![false; self.xty.len()];
            for &j in wanted {
                member[j] = true;
            }
            for a in (0..order.len()).rev() {
                if !member[order[a]] {
                    l = chol_delete(&l, a);
                    order.remove(a);
                    updates += 1;
                }
            }
            let mut present = vec![false; self.xty.len()];
            for &j in &order {
                present[j] = true;
            }
            let mut ok = true;
            for &j in wanted.iter().filter(|&&j| !present[j]) {
                match self.chol_append(&l, &order, j) {
                    Some(next) => {
                        l = next;
                        order.push(j);
                        updates += 1;
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && updates <= MAX_UPDATES {
                return Some((order, l, updates, false));
            }
        }
        let k = wanted.len();
        let mut g = Array2::zeros((k, k));
        for (a, &j) in wanted.iter().enumerate() {
            let col = self.gram_col(j);
            for (b, &i) in wanted.iter().enumerate() {
                g[[a, b]] = col[i];
            }
        }
        let scale = g.diag().sum() / k as f64;
        if let Ok(l) = cholesky(g.view(), 1e-10 * scale) {
            return Some((wanted.to_vec(), l, 0, false));
        }
        for a in 0..k {
            g[[a, a]] += 1e-9 * scale;
        }
        cholesky(g.view(), 0.0).ok().map(|l| (wanted.to_vec(), l, 0, true))
    }

    /// Extends the factor of the Gram block on `order` by column `j`; `None`
    /// when the new pivot is numerically zero.
    fn chol_append(&mut self, l: &Array2<f64>, order: &[usize], j: usize) -> Option<Array2<f64>> {
        let k = order.len();
        let col = self.gram_col(j);
        let mut w: Vec<f64> = order.iter().map(|&i| col[i]).collect();
        for a in 0..k {
            let row = l.row(a);
            let s = (0..a).fold(w[a], |s, b| s - row[b] * w[b]);
            w[a] = s / row[a];
        }
        let pivot = w.iter().fold(col[j], |s, v| s - v * v);
        if !(pivot > 1e-10 * col[j]) {
            return None;
        }
        let mut out = Array2::zeros((k + 1, k + 1));
        out.slice_mut(ndarray::s![..k, ..k]).assign(l);
        for (a, v) in w.into_iter().enumerate() {
            out[[k, a]] = v;
        }
        out[[k, k]] = pivot.sqrt();
        Some(out)
    }

    fn shift(&mut self, support: &[usize], values: &[f64], beta: &mut [f64], grad: &mut [f64]) {
        for (&j, &b) in support.iter().zip(values) {
            let delta = b - beta[j];
            if delta != 0.0 {
                let col = self.gram_col(j);
                for (g, c) in grad.iter_mut().zip(col) {
                    *g -= delta * c;
                }
                beta[j] = b;
            }
        }
    }

    fn objective(&self, lambda: f64, beta: &[f64], grad: &[f64]) -> f64 {
        // ‖r‖²/n = yᵀy/n − βᵀ(Xᵀy/n) − βᵀ(Xᵀr/n)
        let mut fit = self.yy;
        let mut l1 = 0.0;
        for (j, b) in beta.iter().enumerate().filter(|(_, b)| **b != 0.0) {
            fit -= b * (self.xty[j] + grad[j]);
            l1 += b.abs();
        }
        0.5 * fit + lambda * l1
    }

    fn kkt_violation(&self, lambda: f64, beta: &[f64], grad: &[f64]) -> f64 {
        (0..beta.len())
            .filter(|&j| self.curvature[j] > 0.0)
            .map(|j| {
                if beta[j] != 0.0 {
                    (grad[j] - lambda * beta[j].signum()).abs()
                } else {
                    (grad[j].abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Full sweeps alternate with either an exact solve on the current sign
    /// pattern or, when that is not admissible, sweeps over the current
    /// support; the run stops after a full sweep whose largest move is below
    /// `tol`.
    pub fn solve(&mut self, lambda: f64, warm: &[f64], tol: f64, max_iter: usize) -> Result<CdSolution> {
        let p = self.xty.len();
        assert_eq!(warm.len(), p, "warm start length");
        let usable: Vec<usize> = (0..p).filter(|&j| self.curvature[j] > 0.0).collect();
        let mut beta = vec![0.0; p];
        for &j in &usable {
            beta[j] = warm[j];
        }
        let mut grad = self.xty.clone();
        for j in 0..p {
            if beta[j] != 0.0 {
                let b = beta[j];
                let col = self.gram_col(j);
                for (g, c) in grad.iter_mut().zip(col) {
                    *g -= b * c;
                }
            }
        }

        let mut trace = Vec::new();
        let mut sweeps = 0;
        loop {
            let mut moved = 0.0f64;
            for &j in &usable {
                moved = moved.max(self.visit(j, lambda, &mut beta, &mut grad));
            }
            sweeps += 1;
            trace.push(self.objective(lambda, &beta, &grad));
            if moved < tol {
                break;
            }
            if self.exact_step(lambda, &mut beta, &mut grad) {
                if sweeps >= max_iter {
                    return Err(Error::Convergence {
                        sweeps,
                        max_kkt_violation: self.kkt_violation(lambda, &beta, &grad),
                        coefficients: beta,
                    });
                }
                continue;
            }
            loop {
                if sweeps >= max_iter {
                    return Err(Error::Convergence {
                        sweeps,
                        max_kkt_violation: self.kkt_violation(lambda, &beta, &grad),
                        coefficients: beta,
                    });
                }
                let support: Vec<usize> = usable.iter().copied().filter(|&j| beta[j] != 0.0).collect();
                let mut moved = 0.0f64;
                for j in support {
                    moved = moved.max(self.visit(j, lambda, &mut beta, &mut grad));
                }
                sweeps += 1;
                trace.push(self.objective(lambda, &beta, &grad));
                if moved < tol {
                    break;
                }
            }
            if sweeps >= max_iter {
                return Err(Error::Convergence {
                    sweeps,
                    max_kkt_violation: self.kkt_violation(lambda, &beta, &grad),
                    coefficients: beta,
                });
            }
        }
        Ok(CdSolution {
            max_kkt_violation: self.kkt_violation(lambda, &beta, &grad),
            coef: beta,
            sweeps,
            objective_trace: trace,
        })
    }

    /// Warm-started solutions for each penalty in `grid`, in order.
    fn path(&mut self, grid: &[f64], tol: f64, max_iter: usize) -> Result<Vec<Vec<f64>>> {
        let mut warm = vec![0.0; self.xty.len()];
        let mut out = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let sol = self.solve(lambda, &warm, tol, max_iter)?;
            warm.clone_from(&sol.coef);
            out.push(sol.coef);
        }
        Ok(out)
    }
}

/// Single-penalty coordinate descent on a standardized design and centered
/// response.
pub fn coordinate_descent(
    x_std: ArrayView2<'_, f64>,
    y_c: ArrayView1<'_, f64>,
    lambda: f64,
    warm: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CdSolution> {
    CdSolver::new(x_std, y_c).solve(lambda, warm, tol, max_iter)
}

/// `len` log-spaced penalties from `lambda_max` down to `ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len <= 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSelection {
    pub lambda: f64,
    pub index: usize,
    pub grid: Vec<f64>,
    /// Mean held-out squared error per grid value.
    pub cv_error: Vec<f64>,
}

struct Prepared {
    std: Standardizer,
    xs: Array2<f64>,
    y_mean: f64,
    yc: ndarray::Array1<f64>,
}

impl Prepared {
    fn new(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Self {
        let std = Standardizer::fit(x);
        let xs = std.transform(x);
        let y_mean = y.sum() / y.len() as f64;
        let yc = &y - y_mean;
        Self { std, xs, y_mean, yc }
    }

    fn degenerate(&self) -> bool {
        self.yc.iter().all(|v| *v == 0.0) || self.std.scale.iter().all(|s| *s == 0.0)
    }
}

fn resolve_grid(params: &LassoParams, prep: &Prepared) -> Result<Vec<f64>> {
    if let Some(grid) = &params.lambda_grid {
        if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument(
                "lambda grid must be non-empty and non-negative".into(),
            ));
        }
        if grid.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("lambda grid must be descending".into()));
        }
        return Ok(grid.clone());
    }
    let lmax = CdSolver::new(prep.xs.view(), prep.yc.view()).lambda_max();
    let (n, p) = prep.xs.dim();
    let ratio = params.lambda_min_ratio.unwrap_or(if n > p { 1e-3 } else { 1e-2 });
    Ok(lambda_grid(lmax, params.n_lambda, ratio))
}

/// Chooses the penalty minimizing mean held-out squared error over
/// `cv_folds` balanced random folds. Ties go to the larger penalty.
pub fn cv_select_lambda(
    params: &LassoParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    stream: &mut SeededStream,
) -> Result<CvSelection> {
    let prep = Prepared::new(x, y);
    let grid = resolve_grid(params, &prep)?;
    select_on_grid(params, x, y, grid, stream)
}

fn select_on_grid(
    params: &LassoParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    grid: Vec<f64>,
    stream: &mut SeededStream,
) -> Result<CvSelection> {
    let k = params.cv_folds;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("cv_folds must be >= 2, got {k}")));
    }
    let n = x.nrows();
    if n < k {
        return Err(Error::Fit(format!("{n} rows cannot be split into {k} CV folds")));
    }
    if grid.len() == 1 {
        return Ok(CvSelection {
            lambda: grid[0],
            index: 0,
            grid,
            cv_error: vec![f64::NAN],
        });
    }
    let assignment = balanced_partition(n, k, stream);
    let mut sse = vec![0.0; grid.len()];
    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
        let x_tr = x.select(Axis(0), &train);
        let y_tr = y.select(Axis(0), &train);
        let prep = Prepared::new(x_tr.view(), y_tr.view());
        let path = if prep.degenerate() {
            vec![vec![0.0; x.ncols()]; grid.len()]
        } else {
            CdSolver::new(prep.xs.view(), prep.yc.view()).path(&grid, params.tol, params.max_iter)?
        };
        for (g, beta) in path.iter().enumerate() {
            let model = prep.std.unscale(beta, prep.y_mean);
            for &i in &test {
                let resid = y[i] - model.predict_row(x.row(i));
                sse[g] += resid * resid;
            }
        }
    }
    let cv_error: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let mut index = 0;
    for (g, e) in cv_error.iter().enumerate() {
        if *e < cv_error[index] {
            index = g;
        }
    }
    Ok(CvSelection {
        lambda: grid[index],
        index,
        grid,
        cv_error,
    })
}

pub(super) fn fit_lasso(
    params: &LassoParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    stream: &mut SeededStream,
) -> Result<LinearModel> {
    let prep = Prepared::new(x, y);
    if prep.degenerate() {
        return Ok(LinearModel::intercept_only(prep.y_mean, x.ncols()));
    }
    let grid = resolve_grid(params, &prep)?;
    if grid[0] == 0.0 && params.lambda_grid.is_none() {
        return Ok(LinearModel::intercept_only(prep.y_mean, x.ncols()));
    }
    let chosen = select_on_grid(params, x, y, grid, stream)?;
    let mut solver = CdSolver::new(prep.xs.view(), prep.yc.view());
    let path = solver.path(&chosen.grid[..=chosen.index], params.tol, params.max_iter)?;
    Ok(prep.std.unscale(path.last().expect("non-empty path"), prep.y_mean))
}
