//! Selection of `(rho, lambda)` over a log-spaced grid.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::model::{column_means, EqtlDataset, Hyperparams, ModelFit};
use crate::prox::{spectral_norm, RealMatrix};
use crate::solver::{solve, solve_from, Method, SolverOptions};

/// Smallest grid value relative to the largest.
pub const GRID_SPAN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningGrid {
    /// Descending.
    pub rho_values: Vec<f64>,
    /// Descending.
    pub lambda_values: Vec<f64>,
}

impl TuningGrid {
    pub fn new(rho_values: Vec<f64>, lambda_values: Vec<f64>) -> Result<Self> {
        let grid = TuningGrid {
            rho_values,
            lambda_values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, vals) in [("rho", &self.rho_values), ("lambda", &self.lambda_values)] {
            if vals.is_empty() {
                return Err(invalid(format!("{name} grid is empty")));
            }
            if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(invalid(format!("{name} grid must be positive and finite")));
            }
            if vals.windows(2).any(|w| w[0] <= w[1]) {
                return Err(invalid(format!("{name} grid must be strictly descending")));
            }
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.rho_values.len())
            .flat_map(|a| (0..self.lambda_values.len()).map(move |b| (a, b)))
            .collect()
    }

    fn hyperparams(&self, a: usize, b: usize) -> Hyperparams {
        Hyperparams {
            rho: self.rho_values[a],
            lambda: self.lambda_values[b],
        }
    }
}

fn log_spaced(max: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![max];
    }
    let step = GRID_SPAN.ln() / (count - 1) as f64;
    (0..count).map(|i| max * (step * i as f64).exp()).collect()
}

fn centered(m: &RealMatrix) -> RealMatrix {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Relative inflation of the top `rho`, so that rounding in the solver's residual
/// cannot push the largest correlation past the threshold.
const RHO_MAX_SLACK: f64 = 1e-10;

/// Smallest `rho` for which `B = 0` is optimal at `L = 0`:
/// `max_j ||X^T (Y_j - mean(Y_j))||_inf`.
pub fn rho_max(ds: &EqtlDataset) -> f64 {
    ds.x.tr_mul(&centered(&ds.y)).amax() * (1.0 + RHO_MAX_SLACK)
}

/// Smallest `lambda` that shrinks the centered expression matrix to zero.
pub fn lambda_max(ds: &EqtlDataset) -> Result<f64> {
    spectral_norm(&centered(&ds.y))
}

pub fn build_grid(ds: &EqtlDataset, n_rho: usize, n_lambda: usize) -> Result<TuningGrid> {
    if n_rho == 0 || n_lambda == 0 {
        return Err(invalid("grid sizes must be at least 1"));
    }
    let rho = rho_max(ds);
    let lambda = lambda_max(ds)?;
    if !(rho > 0.0 && lambda > 0.0) {
        return Err(invalid(
            "expression matrix is constant within every gene (or genotypes carry no signal); nothing to tune",
        ));
    }
    TuningGrid::new(log_spaced(rho, n_rho), log_spaced(lambda, n_lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningResult {
    pub best: Hyperparams,
    /// Validation error per `(rho index, lambda index)`.
    #[serde(skip)]
    pub cv_errors: RealMatrix,
    pub seed: u64,
}

/// Picks the minimal error; ties go to the larger `rho`, then the larger `lambda`.
fn select_best(grid: &TuningGrid, errors: &RealMatrix) -> Hyperparams {
    let mut best = (0, 0);
    for (a, b) in grid.cells() {
        if errors[(a, b)] < errors[best] {
            best = (a, b);
        }
    }
    grid.hyperparams(best.0, best.1)
}

fn check_errors(errors: &RealMatrix) -> Result<()> {
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(crate::error::LorsError::Computation(
            "validation error is not a finite nonnegative number".into(),
        ));
    }
    Ok(())
}

/// Seeded two-way partition of `0..n`; fold sizes differ by at most one.
pub fn split_folds(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let half = n.div_ceil(2);
    let mut a = order[..half].to_vec();
    let mut b = order[half..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// `||Y - X B - 1 mu^T||_F^2`; hidden factors cannot be carried to new samples.
fn out_of_sample_error(ds: &EqtlDataset, fit: &ModelFit) -> f64 {
    let mut r = ds.y.clone();
    r.gemm(-1.0, &ds.x, &fit.b, 1.0);
    for (j, mut col) in r.column_iter_mut().enumerate() {
        col.add_scalar_mut(-fit.mu[j]);
    }
    r.norm_squared()
}

pub fn two_fold_cv(
    ds: &EqtlDataset,
    grid: &TuningGrid,
    seed: u64,
    method: Method,
    opts: &SolverOptions,
) -> Result<TuningResult> {
    grid.validate()?;
    let n = ds.n_samples();
    if n < 4 {
        return Err(invalid(format!(
            "two-fold cross-validation needs at least 4 samples, got {n}"
        )));
    }
    let (fa, fb) = split_folds(n, seed);
    let part_a = ds.select_samples(&fa)?;
    let part_b = ds.select_samples(&fb)?;

    let errors: Result<Vec<f64>> = grid
        .cells()
        .into_par_iter()
        .map(|(a, b)| {
            let hp = grid.hyperparams(a, b);
            let (fit_a, _) = solve(method, &part_a, &hp, opts)?;
            let (fit_b, _) = solve(method, &part_b, &hp, opts)?;
            Ok(out_of_sample_error(&part_b, &fit_a) + out_of_sample_error(&part_a, &fit_b))
        })
        .collect();
    let errors = RealMatrix::from_row_slice(
        grid.rho_values.len(),
        grid.lambda_values.len(),
        &errors?,
    );
    check_errors(&errors)?;
    Ok(TuningResult {
        best: select_best(grid, &errors),
        cv_errors: errors,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskOptions {
    /// Fraction of expression entries hidden for validation.
    pub fraction: f64,
    /// Fill-and-refit rounds used to fit around the hidden entries.
    pub impute_rounds: usize,
}

impl Default for MaskOptions {
    fn default() -> Self {
        MaskOptions {
            fraction: 0.1,
            impute_rounds: 5,
        }
    }
}

/// Hidden-entry mask as column-major linear indices into `Y`.
fn mask_entries(ds: &EqtlDataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let total = ds.y.len();
    let count = ((fraction * total as f64).round() as usize).clamp(1, total - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, total, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

fn prediction(ds: &EqtlDataset, fit: &ModelFit) -> RealMatrix {
    let mut pred = &ds.x * &fit.b + &fit.l;
    for (j, mut col) in pred.column_iter_mut().enumerate() {
        col.add_scalar_mut(fit.mu[j]);
    }
    pred
}

/// Fits with the masked entries treated as missing (filled from the model and
/// refit, starting from column means of the observed entries) and returns the
/// squared reconstruction error on those entries.
fn masked_error(
    ds: &EqtlDataset,
    mask: &[usize],
    hp: &Hyperparams,
    method: Method,
    opts: &SolverOptions,
    rounds: usize,
) -> Result<f64> {
    let (n, q) = (ds.n_samples(), ds.n_genes());
    let mut hidden = vec![false; ds.y.len()];
    for &i in mask {
        hidden[i] = true;
    }
    let mut filled = ds.y.clone();
    for j in 0..q {
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..n {
            if !hidden[j * n + i] {
                sum += ds.y[(i, j)];
                count += 1;
            }
        }
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        for i in 0..n {
            if hidden[j * n + i] {
                filled[(i, j)] = mean;
            }
        }
    }

    let mut work = ds.clone();
    let mut fit: Option<ModelFit> = None;
    for _ in 0..rounds.max(1) {
        work.y.copy_from(&filled);
        let init = fit.take().unwrap_or_else(|| ModelFit::initial(&work));
        let (next, _) = solve_from(method, &work, hp, opts, init)?;
        let pred = prediction(&work, &next);
        for &i in mask {
            filled.as_mut_slice()[i] = pred.as_slice()[i];
        }
        fit = Some(next);
    }
    let pred = prediction(&work, fit.as_ref().expect("at least one round"));
    Ok(mask
        .iter()
        .map(|&i| (ds.y.as_slice()[i] - pred.as_slice()[i]).powi(2))
        .sum())
}

/// Tuning without sample splitting: `lambda` by hidden-entry reconstruction at the
/// median `rho`, then `rho` by the same criterion at the chosen `lambda`.
pub fn tune_no_cv(
    ds: &EqtlDataset,
    grid: &TuningGrid,
    seed: u64,
    method: Method,
    opts: &SolverOptions,
    mask_opts: &MaskOptions,
) -> Result<TuningResult> {
    grid.validate()?;
    if ds.n_samples() < 4 {
        return Err(invalid("tuning needs at least 4 samples"));
    }
    if !(mask_opts.fraction > 0.0 && mask_opts.fraction < 1.0) {
        return Err(invalid("mask fraction must be in (0, 1)"));
    }
    let (nr, nl) = (grid.rho_values.len(), grid.lambda_values.len());
    let mut errors = RealMatrix::from_element(nr, nl, f64::NAN);
    if nr == 1 && nl == 1 {
        errors[(0, 0)] = 0.0;
        return Ok(TuningResult {
            best: grid.hyperparams(0, 0),
            cv_errors: errors,
            seed,
        });
    }
    let mask = mask_entries(ds, mask_opts.fraction, seed)?;
    let eval = |a: usize, b: usize| {
        masked_error(ds, &mask, &grid.hyperparams(a, b), method, opts, mask_opts.impute_rounds)
    };

    let rho_mid = nr / 2;
    let lambda_errs: Result<Vec<f64>> = (0..nl).into_par_iter().map(|b| eval(rho_mid, b)).collect();
    let lambda_errs = lambda_errs?;
    let mut best_lambda = 0;
    for (b, &e) in lambda_errs.iter().enumerate() {
        errors[(rho_mid, b)] = e;
        if e < lambda_errs[best_lambda] {
            best_lambda = b;
        }
    }

    let rho_errs: Result<Vec<f64>> = (0..nr)
        .into_par_iter()
        .map(|a| {
            if a == rho_mid {
                Ok(lambda_errs[best_lambda])
            } else {
                eval(a, best_lambda)
            }
        })
        .collect();
    let rho_errs = rho_errs?;
    let mut best_rho = 0;
    for (a, &e) in rho_errs.iter().enumerate() {
        errors[(a, best_lambda)] = e;
        if e < rho_errs[best_rho] {
            best_rho = a;
        }
    }
    if errors.iter().any(|e| e.is_finite() && *e < 0.0) || rho_errs.iter().chain(&lambda_errs).any(|e| !e.is_finite()) {
        return Err(crate::error::LorsError::Computation(
            "masked validation error is not finite".into(),
        ));
    }
    Ok(TuningResult {
        best: grid.hyperparams(best_rho, best_lambda),
        cv_errors: errors,
        seed,
    })
}
