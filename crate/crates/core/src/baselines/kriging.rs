//! Universal Kriging with a linear trend and squared-exponential correlation,
//! applied independently to each principal component of the targets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::pca::{fit_pca, PcaBasis};
use super::Artifact;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingOptions {
    pub pca_threshold: f64,
    pub length_bounds: (f64, f64),
    pub starts: usize,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for KrigingOptions {
    fn default() -> Self {
        Self {
            pca_threshold: super::pca::DEFAULT_VARIANCE_THRESHOLD,
            length_bounds: (1e-2, 1e2),
            starts: 8,
            max_evals: 400,
            seed: 0,
        }
    }
}

const NUGGET_START: f64 = 1e-10;
const NUGGET_MAX: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingComponent {
    /// Intercept first, then one slope per input.
    pub trend: DVector<f64>,
    pub length_scales: Vec<f64>,
    pub variance: f64,
    pub nugget: f64,
    /// `R^-1 (t - F beta)`.
    pub gamma: DVector<f64>,
}

fn correlation(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    (-0.5 * s).exp()
}

fn trend_row(x: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(x.len() + 1);
    f.push(1.0);
    f.extend_from_slice(x);
    f
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|r| x.row(r).iter().copied().collect()).collect()
}

/// Cholesky of `R + nugget I` with escalating nugget.
fn factor(pts: &[Vec<f64>], ls: &[f64]) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = pts.len();
    let r = DMatrix::from_fn(n, n, |i, j| correlation(&pts[i], &pts[j], ls));
    let mut nugget = NUGGET_START;
    while nugget <= NUGGET_MAX * (1.0 + 1e-9) {
        let mut m = r.clone();
        for i in 0..n {
            m[(i, i)] += nugget;
        }
        if let Some(c) = Cholesky::new(m) {
            let diag_min = (0..n).map(|i| c.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
            if diag_min > 1e-7 {
                return Some((c, nugget));
            }
        }
        nugget *= 10.0;
    }
    None
}

struct Profile {
    nll: f64,
    beta: DVector<f64>,
    sigma2: f64,
}

/// Generalised least-squares trend and the concentrated negative log
/// likelihood `n ln(sigma^2) + ln det R`.
fn profile(chol: &Cholesky<f64, Dyn>, f: &DMatrix<f64>, t: &DVector<f64>) -> Option<Profile> {
    let l = chol.l_dirty();
    let n = t.len();
    let ft = l.solve_lower_triangular(f)?;
    let yt = l.solve_lower_triangular(t)?;
    let beta = ft.clone().svd(true, true).solve(&yt, 1e-12).ok()?;
    let resid = yt - &ft * &beta;
    let sigma2 = (resid.norm_squared() / n as f64).max(1e-300);
    let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    Some(Profile {
        nll: n as f64 * sigma2.ln() + logdet,
        beta,
        sigma2,
    })
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>, step: f64, lo: f64, hi: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let d = x0.len();
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(lo, hi)).collect::<Vec<_>>();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let x0 = clamp(x0);
    simplex.push((x0.clone(), f(&x0)));
    for k in 0..d {
        let mut x = x0.clone();
        x[k] = if x[k] + step <= hi { x[k] + step } else { x[k] - step };
        let x = clamp(x);
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evals = d + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        if spread.abs() < 1e-10 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|p| p.0[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| clamp(centroid.iter().zip(&simplex[d].0).map(|(c, w)| c + t * (c - w)).collect());
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = best.iter().zip(&p.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    p.1 = f(&p.0);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Fits one latent component.
fn fit_component(pts: &[Vec<f64>], f: &DMatrix<f64>, t: &DVector<f64>, opts: &KrigingOptions, seed: u64) -> Result<KrigingComponent> {
    let d = pts.first().map_or(0, |p| p.len());
    let (lo, hi) = (opts.length_bounds.0.log10(), opts.length_bounds.1.log10());
    let objective = |theta: &[f64]| -> f64 {
        let ls: Vec<f64> = theta.iter().map(|v| 10f64.powf(*v)).collect();
        factor(pts, &ls)
            .and_then(|(c, _)| profile(&c, f, t))
            .map_or(f64::INFINITY, |p| p.nll)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..opts.starts.max(1) {
        let x0: Vec<f64> = if s == 0 { vec![0.5 * (lo + hi); d] } else { (0..d).map(|_| rng.gen_range(lo..hi)).collect() };
        let cand = nelder_mead(&objective, x0, 0.5 * (hi - lo) / 2.0, lo, hi, opts.max_evals);
        if best.as_ref().map_or(true, |b| cand.1 < b.1) {
            best = Some(cand);
        }
    }
    let theta = best.map(|b| b.0).unwrap_or_default();
    let ls: Vec<f64> = theta.iter().map(|v| 10f64.powf(*v)).collect();
    let (chol, nugget) = factor(pts, &ls)
        .ok_or_else(|| Error::Numeric(format!("correlation matrix singular even with nugget {NUGGET_MAX:e}")))?;
    let p = profile(&chol, f, t).ok_or_else(|| Error::Numeric("kriging trend solve failed".into()))?;
    let resid = t - f * &p.beta;
    let mut gamma = chol.solve(&resid);
    // One step of iterative refinement keeps the interpolation residual at
    // round-off level for ill-conditioned correlations.
    let n = pts.len();
    let r = DMatrix::from_fn(n, n, |i, j| correlation(&pts[i], &pts[j], &ls) + if i == j { nugget } else { 0.0 });
    let fix = chol.solve(&(&resid - &r * &gamma));
    gamma += fix;
    Ok(KrigingComponent {
        trend: p.beta,
        length_scales: ls,
        variance: p.sigma2,
        nugget,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingPcaModel {
    pub pca: PcaBasis,
    pub train_x: DMatrix<f64>,
    pub components: Vec<KrigingComponent>,
}

impl KrigingPcaModel {
    pub fn predict_latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.train_x.ncols() {
            return Err(Error::Shape(format!("{} features, model expects {}", x.len(), self.train_x.ncols())));
        }
        let f = DVector::from_vec(trend_row(x));
        let pts = rows(&self.train_x);
        let mut out = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let r = DVector::from_iterator(
                pts.len(),
                pts.iter().map(|p| {
                    let v = correlation(p, x, &c.length_scales);
                    if p.as_slice() == x { v + c.nugget } else { v }
                }),
            );
            out.push(f.dot(&c.trend) + r.dot(&c.gamma));
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.pca.reconstruct(&self.predict_latent(x)?)
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut a = Artifact::new("kriging", json!({ "q": self.components.len() }));
        a.push_vector("pca_mean", self.pca.mean.as_slice());
        a.push_matrix("pca_components", &self.pca.components);
        a.push_vector("pca_explained", &self.pca.explained_ratio);
        a.push_matrix("train_x", &self.train_x);
        for (k, c) in self.components.iter().enumerate() {
            a.push_vector(&format!("c{k}_trend"), c.trend.as_slice());
            a.push_vector(&format!("c{k}_length"), &c.length_scales);
            a.push_vector(&format!("c{k}_scalars"), &[c.variance, c.nugget]);
            a.push_vector(&format!("c{k}_gamma"), c.gamma.as_slice());
        }
        a
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        let q = a.meta["q"].as_u64().ok_or_else(|| Error::Config("kriging artifact lacks q".into()))? as usize;
        let pca = PcaBasis {
            mean: a.vector("pca_mean")?,
            components: a.matrix("pca_components")?,
            explained_ratio: a.vector("pca_explained")?.iter().copied().collect(),
        };
        let mut components = Vec::with_capacity(q);
        for k in 0..q {
            let s = a.vector(&format!("c{k}_scalars"))?;
            components.push(KrigingComponent {
                trend: a.vector(&format!("c{k}_trend"))?,
                length_scales: a.vector(&format!("c{k}_length"))?.iter().copied().collect(),
                variance: s[0],
                nugget: s[1],
                gamma: a.vector(&format!("c{k}_gamma"))?,
            });
        }
        Ok(Self {
            pca,
            train_x: a.matrix("train_x")?,
            components,
        })
    }
}

pub fn fit_kriging_pca(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &KrigingOptions) -> Result<KrigingPcaModel> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!("{} inputs for {} targets", x.nrows(), y.nrows())));
    }
    let (lo, hi) = opts.length_bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!("length-scale bounds [{lo}, {hi}] invalid")));
    }
    if x.nrows() < x.ncols() + 2 {
        log::warn!("kriging: {} samples for {} inputs, trend is underdetermined", x.nrows(), x.ncols());
    }
    let pca = fit_pca(y, opts.pca_threshold)?;
    let latent = pca.project_matrix(y);
    let pts = rows(x);
    let f = DMatrix::from_fn(x.nrows(), x.ncols() + 1, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
    let mut components = Vec::with_capacity(pca.q());
    for k in 0..pca.q() {
        let t = latent.column(k).into_owned();
        components.push(fit_component(&pts, &f, &t, opts, opts.seed.wrapping_add(k as u64))?);
    }
    log::info!("kriging: {} latent components", components.len());
    Ok(KrigingPcaModel {
        pca,
        train_x: x.clone(),
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::fit_linear;

    fn binary(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = std::collections::BTreeSet::new();
        let mut rows = Vec::new();
        while rows.len() < n * d {
            let r: Vec<f64> = (0..d).map(|_| rng.gen_range(0..2) as f64).collect();
            if seen.insert(r.iter().map(|&v| v as u8).collect::<Vec<_>>()) {
                rows.extend(r);
            }
        }
        DMatrix::from_row_slice(n, d, &rows)
    }

    fn quick() -> KrigingOptions {
        KrigingOptions { starts: 3, max_evals: 150, ..Default::default() }
    }

    #[test]
    fn interpolates_training_points() {
        let x = binary(24, 5, 1);
        let y = DMatrix::from_fn(24, 30, |r, c| {
            let a = x[(r, c % 5)];
            let b = x[(r, (c + 2) % 5)];
            (a * b + 0.3 * a + 0.05 * c as f64).sin()
        });
        let m = fit_kriging_pca(&x, &y, &quick()).unwrap();
        let truncated = m.pca.project_matrix(&y);
        for r in 0..24 {
            let xr: Vec<f64> = x.row(r).iter().copied().collect();
            let z = m.predict_latent(&xr).unwrap();
            for (k, v) in z.iter().enumerate() {
                assert!((v - truncated[(r, k)]).abs() < 1e-6);
            }
        }
        assert!(m.components.iter().all(|c| c.length_scales.iter().all(|&l| l > 0.0)));
        assert!(m.components.iter().all(|c| c.gamma.len() == 24));
    }

    #[test]
    fn rank_one_linear_matches_regression() {
        let x = binary(20, 5, 2);
        let w = DVector::from_vec(vec![0.4, -0.2, 0.7, 0.1, -0.3]);
        let s = (&x * &w).add_scalar(1.0);
        let v: Vec<f64> = (0..12).map(|c| 0.5 + 0.1 * c as f64).collect();
        let y = DMatrix::from_fn(20, 12, |r, c| s[r] * v[c]);
        let m = fit_kriging_pca(&x, &y, &quick()).unwrap();
        assert_eq!(m.components.len(), 1);
        let lin = fit_linear(&x, &y).unwrap();
        for q in [[1.0, 1.0, 1.0, 1.0, 1.0], [0.0; 5], [1.0, 0.0, 1.0, 0.0, 1.0]] {
            let a = m.predict(&q).unwrap();
            let b = lin.predict(&q).unwrap();
            assert!(a.iter().zip(&b).all(|(p, r)| (p - r).abs() < 1e-4));
        }
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.5).powi(2);
        let (x, v) = nelder_mead(&f, vec![1.5, 1.5], 0.5, -2.0, 2.0, 1000);
        assert!(v < 1e-9);
        assert!((x[0] - 0.3).abs() < 1e-4 && (x[1] + 0.5).abs() < 1e-4);
        let (x, _) = nelder_mead(&f, vec![1.5, 1.5], 0.5, 1.0, 2.0, 1000);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }
}
