//! Per-gene lasso with an unpenalized intercept, solved by cyclic coordinate descent.
//!
//! Minimizes `0.5 ||(y - l) - X b - 1 mu||^2 + rho ||b||_1` over `(b, mu)`.

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::prox::{soft_threshold_scalar, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Convergence tolerance on coefficient change and on the KKT violation.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Record the objective after every sweep.
    pub trace: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-7,
            max_sweeps: 1000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoResult {
    pub b: DVector<f64>,
    pub mu: f64,
    /// Largest violation of the optimality conditions at the returned point.
    pub kkt_violation: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep, when requested; entry 0 is the starting point.
    pub sweep_objectives: Vec<f64>,
}

/// Genotype matrix plus cached column norms, shared across the q per-gene problems.
#[derive(Debug, Clone)]
pub struct LassoDesign<'a> {
    x: &'a RealMatrix,
    col_sq: Vec<f64>,
}

impl<'a> LassoDesign<'a> {
    pub fn new(x: &'a RealMatrix) -> Self {
        let col_sq = x.column_iter().map(|c| c.norm_squared()).collect();
        LassoDesign { x, col_sq }
    }

    fn column(&self, k: usize) -> &[f64] {
        let n = self.x.nrows();
        &self.x.as_slice()[k * n..(k + 1) * n]
    }

    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Closed-form minimizer over a single coefficient, given `x_k^T r_partial` where
/// `r_partial` excludes coefficient k, and `||x_k||^2`.
#[inline]
pub fn coordinate_minimizer(xk_dot_partial: f64, col_sq: f64, rho: f64) -> f64 {
    if col_sq == 0.0 {
        0.0
    } else {
        soft_threshold_scalar(xk_dot_partial, rho) / col_sq
    }
}

fn objective_from_residual(r: &[f64], b: &DVector<f64>, rho: f64) -> f64 {
    0.5 * dot(r, r) + rho * b.iter().map(|v| v.abs()).sum::<f64>()
}

fn kkt_violation(design: &LassoDesign<'_>, r: &[f64], b: &DVector<f64>, rho: f64) -> f64 {
    let mut worst = r.iter().sum::<f64>().abs();
    for k in 0..design.p() {
        let g = dot(design.column(k), r);
        let v = if b[k] == 0.0 {
            (g.abs() - rho).max(0.0)
        } else {
            (g - rho * b[k].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Fits one gene. `y` is the gene's expression column and `l` its hidden-factor column.
pub fn lasso_gene(
    y: &[f64],
    x: &RealMatrix,
    l: &[f64],
    rho: f64,
    opts: &LassoOptions,
    warm: Option<(&[f64], f64)>,
) -> Result<LassoResult> {
    let design = LassoDesign::new(x);
    lasso_gene_with(&design, y, l, rho, opts, warm)
}

pub fn lasso_gene_with(
    design: &LassoDesign<'_>,
    y: &[f64],
    l: &[f64],
    rho: f64,
    opts: &LassoOptions,
    warm: Option<(&[f64], f64)>,
) -> Result<LassoResult> {
    let (n, p) = (design.n(), design.p());
    if y.len() != n || l.len() != n {
        return Err(invalid(format!(
            "lasso inputs have lengths {} and {}, expected {n}",
            y.len(),
            l.len()
        )));
    }
    if !(rho > 0.0) {
        return Err(invalid(format!("rho must be positive, got {rho}")));
    }
    if !(opts.tol > 0.0) || opts.max_sweeps == 0 {
        return Err(invalid("lasso tolerance and sweep limit must be positive"));
    }

    let (mut b, mut mu) = match warm {
        Some((b0, mu0)) => {
            if b0.len() != p {
                return Err(invalid(format!(
                    "warm start has {} coefficients, expected {p}",
                    b0.len()
                )));
            }
            (DVector::from_column_slice(b0), mu0)
        }
        None => (DVector::zeros(p), 0.0),
    };

    // r = (y - l) - X b - mu
    let mut r: Vec<f64> = y.iter().zip(l).map(|(a, c)| a - c - mu).collect();
    for k in 0..p {
        if b[k] != 0.0 {
            let bk = b[k];
            for (ri, xi) in r.iter_mut().zip(design.column(k)) {
                *ri -= xi * bk;
            }
        }
    }

    let mut sweep_objectives = Vec::new();
    if opts.trace {
        sweep_objectives.push(objective_from_residual(&r, &b, rho));
    }

    let mut converged = false;
    let mut sweeps = 0;
    let mut kkt = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for k in 0..p {
            let col = design.column(k);
            let ck = design.col_sq[k];
            let old = b[k];
            let z = dot(col, &r) + ck * old;
            let new = coordinate_minimizer(z, ck, rho);
            let delta = new - old;
            if delta != 0.0 {
                for (ri, xi) in r.iter_mut().zip(col) {
                    *ri -= xi * delta;
                }
                b[k] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        let shift = r.iter().sum::<f64>() / n as f64;
        if shift != 0.0 {
            mu += shift;
            r.iter_mut().for_each(|ri| *ri -= shift);
        }
        max_change = max_change.max(shift.abs());

        if opts.trace {
            sweep_objectives.push(objective_from_residual(&r, &b, rho));
        }
        if max_change < opts.tol {
            kkt = kkt_violation(design, &r, &b, rho);
            if kkt <= opts.tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        kkt = kkt_violation(design, &r, &b, rho);
    }

    Ok(LassoResult {
        b,
        mu,
        kkt_violation: kkt,
        sweeps,
        converged,
        sweep_objectives,
    })
}

/// Objective `0.5 ||(y - l) - X b - mu||^2 + rho ||b||_1` at an arbitrary point.
pub fn lasso_objective(
    y: &[f64],
    x: &RealMatrix,
    l: &[f64],
    b: &DVector<f64>,
    mu: f64,
    rho: f64,
) -> f64 {
    let xb = x * b;
    let r: Vec<f64> = (0..y.len()).map(|i| y[i] - l[i] - xb[i] - mu).collect();
    objective_from_residual(&r, b, rho)
}
