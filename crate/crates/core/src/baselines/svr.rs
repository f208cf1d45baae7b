//! Linear-kernel epsilon-insensitive support vector regression, one model per
//! output column, trained by SMO with second-order working-set selection.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use super::Artifact;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrOptions {
    pub c: f64,
    pub epsilon: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrOptions {
    fn default() -> Self {
        Self {
            c: 5.0,
            epsilon: 0.05,
            tol: 1e-4,
            max_iter: 10_000_000,
        }
    }
}

impl SvrOptions {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.epsilon >= 0.0) || !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "svr needs C > 0, epsilon >= 0, tol > 0 (got {}, {}, {})",
                self.c, self.epsilon, self.tol
            )));
        }
        Ok(())
    }
}

/// Per-output primal form `f(x) = w.x + b` recovered from the dual.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrEnsemble {
    /// `d x d_y`, one column per location.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub support_vectors: Vec<usize>,
    pub unconverged: usize,
}

impl SvrEnsemble {
    pub fn n_models(&self) -> usize {
        self.bias.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.weights.nrows() {
            return Err(Error::Shape(format!("{} features, model expects {}", x.len(), self.weights.nrows())));
        }
        let xv = DVector::from_column_slice(x);
        Ok((self.weights.tr_mul(&xv) + &self.bias).iter().copied().collect())
    }

    pub fn to_artifact(&self) -> Artifact {
        let mut a = Artifact::new("svr", json!({ "unconverged": self.unconverged }));
        a.push_matrix("weights", &self.weights);
        a.push_vector("bias", self.bias.as_slice());
        a.push_vector("support_vectors", &self.support_vectors.iter().map(|&v| v as f64).collect::<Vec<_>>());
        a
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        Ok(Self {
            weights: a.matrix("weights")?,
            bias: a.vector("bias")?,
            support_vectors: a.vector("support_vectors")?.iter().map(|&v| v as usize).collect(),
            unconverged: a.meta["unconverged"].as_u64().unwrap_or(0) as usize,
        })
    }
}

/// Fits `Y.ncols()` independent regressors sharing the kernel matrix.
pub fn fit_svr_per_location(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &SvrOptions) -> Result<SvrEnsemble> {
    opts.validate()?;
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::Shape(format!("{} inputs for {} targets", x.nrows(), y.nrows())));
    }
    let kernel = x * x.transpose();
    let mut weights = DMatrix::zeros(x.ncols(), y.ncols());
    let mut bias = DVector::zeros(y.ncols());
    let mut support = Vec::with_capacity(y.ncols());
    let mut unconverged = 0;
    for o in 0..y.ncols() {
        let z: Vec<f64> = y.column(o).iter().copied().collect();
        let sol = solve_dual(&kernel, &z, opts);
        if !sol.converged {
            unconverged += 1;
        }
        let coef = DVector::from_vec(sol.beta);
        weights.set_column(o, &x.tr_mul(&coef));
        bias[o] = -sol.rho;
        support.push(coef.iter().filter(|&&b| b != 0.0).count());
    }
    if unconverged > 0 {
        log::warn!("svr: {unconverged} of {} outputs hit the iteration cap", y.ncols());
    }
    Ok(SvrEnsemble {
        weights,
        bias,
        support_vectors: support,
        unconverged,
    })
}

struct DualSolution {
    /// `alpha+ - alpha-` per training point.
    beta: Vec<f64>,
    rho: f64,
    converged: bool,
}

const TAU: f64 = 1e-12;

/// SMO over the 2n-variable dual: index `t < n` is `alpha+_t` with label +1,
/// `t >= n` is `alpha-_{t-n}` with label -1.
fn solve_dual(kernel: &DMatrix<f64>, z: &[f64], opts: &SvrOptions) -> DualSolution {
    let n = z.len();
    let l = 2 * n;
    let c = opts.c;
    let y = |t: usize| if t < n { 1.0 } else { -1.0 };
    let k = |a: usize, b: usize| kernel[(a % n, b % n)];
    let q = |a: usize, b: usize| y(a) * y(b) * k(a, b);
    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l).map(|t| if t < n { opts.epsilon - z[t] } else { opts.epsilon + z[t - n] }).collect();
    let in_up = |t: usize, a: f64| if t < n { a < c } else { a > 0.0 };
    let in_low = |t: usize, a: f64| if t < n { a > 0.0 } else { a < c };

    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if in_up(t, alpha[t]) {
                let v = -y(t) * grad[t];
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..l {
            if !in_low(t, alpha[t]) {
                continue;
            }
            let yg = y(t) * grad[t];
            gmax2 = gmax2.max(yg);
            if i == usize::MAX {
                continue;
            }
            let b = gmax + yg;
            if b > 0.0 {
                let mut a = k(i, i) + k(t, t) - 2.0 * k(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj <= obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < opts.tol || i == usize::MAX || j == usize::MAX {
            converged = true;
            break;
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y(i) != y(j) {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..l {
        let yg = y(t) * grad[t];
        if alpha[t] >= c {
            if y(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    DualSolution {
        beta: (0..n).map(|t| alpha[t] - alpha[t + n]).collect(),
        rho,
        converged,
    }
}
