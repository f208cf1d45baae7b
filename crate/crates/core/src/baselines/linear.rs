//! Least squares and L1-regularized least squares with interaction features.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use super::Artifact;
use crate::error::{Error, Result};

/// Column means of `x`.
fn col_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

fn centered(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    c
}

/// Affine multi-output model `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `d x d_y`.
    pub coef: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// Numerical rank of the centered design.
    pub rank: usize,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.coef.nrows() {
            return Err(Error::Shape(format!("{} features, model expects {}", x.len(), self.coef.nrows())));
        }
        let xv = DVector::from_column_slice(x);
        Ok((self.coef.tr_mul(&xv) + &self.intercept).iter().copied().collect())
    }

    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.coef;
        for mut row in y.row_iter_mut() {
            row += self.intercept.transpose();
        }
        y
    }

    pub fn to_artifact(&self, method: &str) -> Artifact {
        let mut a = Artifact::new(method, json!({ "rank": self.rank }));
        a.push_matrix("coef", &self.coef);
        a.push_vector("intercept", self.intercept.as_slice());
        a
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        Ok(Self {
            coef: a.matrix("coef")?,
            intercept: a.vector("intercept")?,
            rank: a.meta["rank"].as_u64().unwrap_or(0) as usize,
        })
    }
}

/// Ordinary least squares with intercept. The centered system is solved by
/// SVD, so rank-deficient designs get the minimum-norm slopes.
pub fn fit_linear(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LinearModel> {
    let n = x.nrows();
    if n < 2 || y.nrows() != n {
        return Err(Error::Shape(format!("need n >= 2 matching rows, got {} and {}", n, y.nrows())));
    }
    let xm = col_means(x);
    let ym = col_means(y);
    let xc = centered(x, &xm);
    let yc = centered(y, &ym);
    let svd = xc.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * n.max(x.ncols()) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let coef = if rank == 0 {
        DMatrix::zeros(x.ncols(), y.ncols())
    } else {
        svd.solve(&yc, tol).map_err(|e| Error::Numeric(e.to_string()))?
    };
    if rank < x.ncols() {
        log::info!("linear fit: design rank {rank} of {}", x.ncols());
    }
    let intercept = &ym - coef.tr_mul(&xm);
    Ok(LinearModel { coef, intercept, rank })
}

/// `[1, x_1..x_d, x_i x_j for i < j]`.
pub fn poly_expand(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(1 + d + d * d.saturating_sub(1) / 2);
    out.push(1.0);
    out.extend_from_slice(x);
    for i in 0..d {
        for j in i + 1..d {
            out.push(x[i] * x[j]);
        }
    }
    out
}

pub fn poly_dim(d: usize) -> usize {
    1 + d + d * d.saturating_sub(1) / 2
}

/// Expanded design without the constant column (the intercept is fitted
/// separately).
pub fn poly_design(x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = poly_dim(x.ncols()) - 1;
    let mut out = DMatrix::zeros(x.nrows(), p);
    for r in 0..x.nrows() {
        let row: Vec<f64> = x.row(r).iter().copied().collect();
        for (j, v) in poly_expand(&row).into_iter().skip(1).enumerate() {
            out[(r, j)] = v;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LassoOptions {
    /// `None` selects lambda by 5-fold cross-validation.
    pub lambda: Option<f64>,
    /// Relative duality-gap tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoDiagnostics {
    pub lambda: f64,
    pub cv_grid: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub max_gap: f64,
    pub unconverged_outputs: usize,
}

/// Sufficient statistics of a centered design shared by every output.
struct Gram {
    g: DMatrix<f64>,
    xm: DVector<f64>,
    xc: DMatrix<f64>,
    n: f64,
}

impl Gram {
    fn new(x: &DMatrix<f64>) -> Self {
        let xm = col_means(x);
        let xc = centered(x, &xm);
        let n = x.nrows() as f64;
        let g = xc.tr_mul(&xc) / n;
        Self { g, xm, xc, n }
    }
}

fn soft(v: f64, l: f64) -> f64 {
    if v > l {
        v - l
    } else if v < -l {
        v + l
    } else {
        0.0
    }
}

/// Coordinate descent for `(1/2n)|y - Xw|^2 + lambda |w|_1` on centered data,
/// expressed through the Gram matrix. Returns the final duality gap and
/// whether it met `tol * |y|^2 / n`.
fn cd_solve(g: &DMatrix<f64>, c: &[f64], yy: f64, lambda: f64, w: &mut [f64], tol: f64, max_iter: usize) -> (f64, bool) {
    let p = c.len();
    let mut q: Vec<f64> = (0..p).map(|j| (0..p).map(|k| g[(j, k)] * w[k]).sum()).collect();
    let target = tol * yy.max(f64::MIN_POSITIVE);
    let mut gap = f64::INFINITY;
    for it in 0..max_iter {
        let mut max_step: f64 = 0.0;
        let mut max_w: f64 = 0.0;
        for j in 0..p {
            let gjj = g[(j, j)];
            if gjj <= 0.0 {
                w[j] = 0.0;
                continue;
            }
            let old = w[j];
            let rho = c[j] - q[j] + gjj * old;
            let new = soft(rho, lambda) / gjj;
            if new != old {
                let d = new - old;
                for k in 0..p {
                    q[k] += g[(k, j)] * d;
                }
                w[j] = new;
                max_step = max_step.max(d.abs());
            }
            max_w = max_w.max(new.abs());
        }
        if max_step <= 1e-12 * max_w.max(1.0) || it + 1 == max_iter || it % 10 == 0 {
            gap = duality_gap(c, &q, w, yy, lambda);
            if gap <= target {
                return (gap, true);
            }
        }
    }
    (gap, false)
}

fn duality_gap(c: &[f64], q: &[f64], w: &[f64], yy: f64, lambda: f64) -> f64 {
    // Residual statistics from the Gram form: r'r/n = y'y/n - 2 c'w + w'Gw.
    let cw: f64 = c.iter().zip(w).map(|(a, b)| a * b).sum();
    let wgw: f64 = q.iter().zip(w).map(|(a, b)| a * b).sum();
    let rr = (yy - 2.0 * cw + wgw).max(0.0);
    let ry = yy - cw;
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let dual_norm = c.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let s = if dual_norm > lambda && dual_norm > 0.0 { lambda / dual_norm } else { 1.0 };
    (0.5 * rr * (1.0 + s * s) + lambda * l1 - s * ry).max(0.0)
}

/// Per-output lasso with a shared lambda, on `x` as given (no expansion).
fn lasso_fit_design(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    warm: Option<&DMatrix<f64>>,
) -> (LinearModel, f64, usize) {
    let gram = Gram::new(x);
    let ym = col_means(y);
    let p = x.ncols();
    let mut coef = warm.cloned().unwrap_or_else(|| DMatrix::zeros(p, y.ncols()));
    let mut max_gap: f64 = 0.0;
    let mut unconverged = 0;
    for o in 0..y.ncols() {
        let yc: DVector<f64> = y.column(o).add_scalar(-ym[o]);
        let c: Vec<f64> = (gram.xc.tr_mul(&yc) / gram.n).iter().copied().collect();
        let yy = yc.norm_squared() / gram.n;
        let mut w: Vec<f64> = coef.column(o).iter().copied().collect();
        let (gap, ok) = cd_solve(&gram.g, &c, yy, lambda, &mut w, tol, max_iter);
        max_gap = max_gap.max(gap);
        if !ok {
            unconverged += 1;
        }
        coef.set_column(o, &DVector::from_vec(w));
    }
    let intercept = &ym - coef.tr_mul(&gram.xm);
    (
        LinearModel {
            coef,
            intercept,
            rank: p,
        },
        max_gap,
        unconverged,
    )
}

/// Smallest lambda that zeroes every coefficient, over all outputs.
fn lambda_max(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let gram = Gram::new(x);
    let ym = col_means(y);
    let yc = centered(y, &ym);
    let c = gram.xc.tr_mul(&yc) / gram.n;
    c.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Lasso on interaction-expanded scenario features.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoPolyModel {
    pub model: LinearModel,
    pub lambda: f64,
}

impl LassoPolyModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.model.predict(&poly_expand(x)[1..])
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut a = self.model.to_artifact("lasso");
        a.meta["lambda"] = json!(self.lambda);
        a
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        Ok(Self {
            model: LinearModel::from_artifact(a)?,
            lambda: a.meta["lambda"].as_f64().unwrap_or(0.0),
        })
    }
}

const CV_FOLDS: usize = 5;
const CV_GRID: usize = 12;

pub fn fit_lasso_poly(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &LassoOptions) -> Result<(LassoPolyModel, LassoDiagnostics)> {
    if x.nrows() != y.nrows() || x.nrows() < 2 {
        return Err(Error::Shape("lasso needs at least two matching rows".into()));
    }
    let xp = poly_design(x);
    let (lambda, grid, mse) = match opts.lambda {
        Some(l) if l >= 0.0 => (l, Vec::new(), Vec::new()),
        Some(l) => return Err(Error::Config(format!("lambda {l} must be non-negative"))),
        None => cross_validate(&xp, y, opts)?,
    };
    let (model, max_gap, unconverged) = lasso_fit_design(&xp, y, lambda, opts.tol, opts.max_iter, None);
    if unconverged > 0 {
        log::warn!("lasso: {unconverged} outputs did not converge in {} sweeps (max gap {max_gap:.3e})", opts.max_iter);
    }
    log::info!("lasso: lambda = {lambda:.4e}");
    Ok((
        LassoPolyModel { model, lambda },
        LassoDiagnostics {
            lambda,
            cv_grid: grid,
            cv_mse: mse,
            max_gap,
            unconverged_outputs: unconverged,
        },
    ))
}

/// Shared-lambda selection by K-fold CV over a log grid with warm starts.
fn cross_validate(xp: &DMatrix<f64>, y: &DMatrix<f64>, opts: &LassoOptions) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = xp.nrows();
    let folds = CV_FOLDS.min(n);
    let lmax = lambda_max(xp, y).max(1e-12);
    let grid: Vec<f64> = (0..CV_GRID)
        .map(|k| lmax * 10f64.powf(-4.0 * k as f64 / (CV_GRID - 1) as f64))
        .collect();
    let mut mse = vec![0.0; grid.len()];
    for f in 0..folds {
        let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
        let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
        if train.len() < 2 {
            continue;
        }
        let xt = xp.select_rows(&train);
        let yt = y.select_rows(&train);
        let xv = xp.select_rows(&test);
        let yv = y.select_rows(&test);
        let mut warm: Option<DMatrix<f64>> = None;
        for (k, &l) in grid.iter().enumerate() {
            let (m, _, _) = lasso_fit_design(&xt, &yt, l, opts.tol, opts.max_iter, warm.as_ref());
            let err = (m.predict_matrix(&xv) - &yv).norm_squared();
            mse[k] += err / (n * y.ncols()) as f64;
            warm = Some(m.coef);
        }
    }
    let best = mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::Numeric("empty lambda grid".into()))?;
    Ok((grid[best], grid, mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
    }

    #[test]
    fn exact_linear_recovery() {
        let x = binary(30, 5, 1);
        let w = DMatrix::from_fn(5, 3, |i, j| (i as f64 - 2.0) * (j as f64 + 1.0));
        let mut y = &x * &w;
        for mut r in y.row_iter_mut() {
            r.add_scalar_mut(0.7);
        }
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.predict_matrix(&x) - &y).amax() < 1e-8);
    }

    #[test]
    fn constant_target() {
        let x = binary(10, 3, 2);
        let y = DMatrix::from_element(10, 2, 1.5);
        let m = fit_linear(&x, &y).unwrap();
        assert!(m.coef.amax() < 1e-12);
        assert!((m.intercept[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_min_norm() {
        let mut x = binary(12, 3, 3);
        for r in 0..12 {
            x[(r, 2)] = x[(r, 1)];
        }
        let y = x.column(1).into_owned();
        let y = DMatrix::from_column_slice(12, 1, y.as_slice());
        let m = fit_linear(&x, &y).unwrap();
        assert_eq!(m.rank, 2);
        assert!((m.coef[(1, 0)] - 0.5).abs() < 1e-9);
        assert!((m.coef[(2, 0)] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn poly_features() {
        assert_eq!(poly_expand(&[2.0, 3.0, 5.0]), vec![1.0, 2.0, 3.0, 5.0, 6.0, 10.0, 15.0]);
        assert_eq!(poly_dim(17), 154);
        for d in 1..=20 {
            assert_eq!(poly_expand(&vec![1.0; d]).len(), poly_dim(d));
        }
        let z = poly_expand(&[0.0; 4]);
        assert_eq!(z[0], 1.0);
        assert!(z[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn huge_lambda_predicts_means() {
        let x = binary(20, 4, 4);
        let y = DMatrix::from_fn(20, 2, |i, j| (i * (j + 1)) as f64 * 0.1);
        let opts = LassoOptions { lambda: Some(1e6), ..Default::default() };
        let (m, _) = fit_lasso_poly(&x, &y, &opts).unwrap();
        assert!(m.model.coef.iter().all(|&v| v == 0.0));
        let p = m.predict(&[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((p[0] - y.column(0).mean()).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_matches_least_squares() {
        let x = binary(40, 4, 5);
        let xp = poly_design(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = DMatrix::from_fn(40, 2, |_, _| rng.gen_range(0.0..2.0));
        let opts = LassoOptions { lambda: Some(0.0), tol: 1e-14, max_iter: 200_000 };
        let (m, _) = fit_lasso_poly(&x, &y, &opts).unwrap();
        let ls = fit_linear(&xp, &y).unwrap();
        assert_eq!(ls.rank, xp.ncols());
        assert!((m.model.predict_matrix(&xp) - ls.predict_matrix(&xp)).amax() < 1e-6);
    }

    #[test]
    fn recovers_sparse_interactions() {
        let x = binary(60, 6, 7);
        let y = DMatrix::from_fn(60, 1, |r, _| 1.0 + 0.8 * x[(r, 0)] - 0.6 * x[(r, 1)] * x[(r, 2)]);
        let opts = LassoOptions { lambda: Some(1e-3), ..Default::default() };
        let (m, _) = fit_lasso_poly(&x, &y, &opts).unwrap();
        // Columns: x0..x5, then pairs (0,1),(0,2),...; (1,2) is index 6 + 5 = 11.
        let support: Vec<usize> = (0..m.model.coef.nrows()).filter(|&j| m.model.coef[(j, 0)].abs() > 0.05).collect();
        assert_eq!(support, vec![0, 11]);
        let (cv, diag) = fit_lasso_poly(&x, &y, &LassoOptions::default()).unwrap();
        assert_eq!(diag.cv_grid.len(), CV_GRID);
        assert!(cv.lambda > 0.0);
    }
}
