//! Data model, penalized objective and smooth-loss gradients.
//!
//! Expression `Y` (n x q) is modeled as `1 mu^T + X B + L + noise`, where `X`
//! (n x p) holds genotypes, `B` (p x q) is sparse and `L` (n x q) is low rank.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::prox::{ensure_finite, l1_norm, nuclear_norm, spectral_norm, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EqtlDataset {
    /// Expression, samples x genes.
    pub y: RealMatrix,
    /// Genotype dosages, samples x SNPs.
    pub x: RealMatrix,
    pub sample_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    pub snp_ids: Vec<String>,
}

impl EqtlDataset {
    pub fn new(
        y: RealMatrix,
        x: RealMatrix,
        sample_ids: Vec<String>,
        gene_ids: Vec<String>,
        snp_ids: Vec<String>,
    ) -> Result<Self> {
        ensure_finite(&y, "expression matrix")?;
        ensure_finite(&x, "genotype matrix")?;
        if y.nrows() != x.nrows() {
            return Err(invalid(format!(
                "expression has {} samples but genotypes have {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.nrows() < 2 {
            return Err(invalid("at least two samples are required"));
        }
        if sample_ids.len() != y.nrows() {
            return Err(invalid(format!(
                "{} sample labels for {} rows",
                sample_ids.len(),
                y.nrows()
            )));
        }
        if gene_ids.len() != y.ncols() {
            return Err(invalid(format!(
                "{} gene labels for {} expression columns",
                gene_ids.len(),
                y.ncols()
            )));
        }
        if snp_ids.len() != x.ncols() {
            return Err(invalid(format!(
                "{} SNP labels for {} genotype columns",
                snp_ids.len(),
                x.ncols()
            )));
        }
        Ok(EqtlDataset {
            y,
            x,
            sample_ids,
            gene_ids,
            snp_ids,
        })
    }

    /// Builds a dataset with generated labels `sample{i}` / `gene{j}` / `snp{k}`.
    pub fn unlabeled(y: RealMatrix, x: RealMatrix) -> Result<Self> {
        let sample_ids = (0..y.nrows()).map(|i| format!("sample{i}")).collect();
        let gene_ids = (0..y.ncols()).map(|j| format!("gene{j}")).collect();
        let snp_ids = (0..x.ncols()).map(|k| format!("snp{k}")).collect();
        Self::new(y, x, sample_ids, gene_ids, snp_ids)
    }

    pub fn n_samples(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_snps(&self) -> usize {
        self.x.ncols()
    }

    /// Column means of `Y`.
    pub fn expression_means(&self) -> DVector<f64> {
        column_means(&self.y)
    }

    /// Restriction to the given sample rows, in the given order.
    pub fn select_samples(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.y.select_rows(rows),
            self.x.select_rows(rows),
            rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            self.gene_ids.clone(),
            self.snp_ids.clone(),
        )
    }
}

pub(crate) fn column_means(m: &RealMatrix) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    /// SNP effects, p x q.
    pub b: RealMatrix,
    /// Hidden factors, n x q.
    pub l: RealMatrix,
    /// Per-gene intercepts, length q.
    pub mu: DVector<f64>,
}

impl ModelFit {
    pub fn zeros(n: usize, p: usize, q: usize) -> Self {
        ModelFit {
            b: RealMatrix::zeros(p, q),
            l: RealMatrix::zeros(n, q),
            mu: DVector::zeros(q),
        }
    }

    /// Starting point shared by both solvers: `B = 0`, `L = 0`, `mu` = column means of `Y`.
    pub fn initial(ds: &EqtlDataset) -> Self {
        let mut fit = Self::zeros(ds.n_samples(), ds.n_snps(), ds.n_genes());
        fit.mu = ds.expression_means();
        fit
    }

    pub fn check_shapes(&self, ds: &EqtlDataset) -> Result<()> {
        let (n, p, q) = (ds.n_samples(), ds.n_snps(), ds.n_genes());
        if self.b.shape() != (p, q) {
            return Err(invalid(format!(
                "B is {:?}, expected ({p}, {q})",
                self.b.shape()
            )));
        }
        if self.l.shape() != (n, q) {
            return Err(invalid(format!(
                "L is {:?}, expected ({n}, {q})",
                self.l.shape()
            )));
        }
        if self.mu.len() != q {
            return Err(invalid(format!(
                "mu has length {}, expected {q}",
                self.mu.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.b.iter().chain(self.l.iter()).chain(self.mu.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the l1 penalty on `B`.
    pub rho: f64,
    /// Weight of the nuclear-norm penalty on `L`.
    pub lambda: f64,
}

impl Hyperparams {
    pub fn new(rho: f64, lambda: f64) -> Result<Self> {
        let hp = Hyperparams { rho, lambda };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `Y - X B - 1 mu^T - L`.
pub fn residual(ds: &EqtlDataset, fit: &ModelFit) -> Result<RealMatrix> {
    fit.check_shapes(ds)?;
    Ok(residual_unchecked(&ds.y, &ds.x, &fit.b, &fit.mu, &fit.l))
}

pub(crate) fn residual_unchecked(
    y: &RealMatrix,
    x: &RealMatrix,
    b: &RealMatrix,
    mu: &DVector<f64>,
    l: &RealMatrix,
) -> RealMatrix {
    let mut r = y - l;
    r.gemm(-1.0, x, b, 1.0);
    for (j, mut col) in r.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    r
}

/// `0.5 ||Y - X B - 1 mu^T - L||_F^2`.
pub fn data_fit(ds: &EqtlDataset, fit: &ModelFit) -> Result<f64> {
    Ok(0.5 * residual(ds, fit)?.norm_squared())
}

/// Penalized objective `0.5 ||R||_F^2 + rho ||B||_1 + lambda ||L||_*`.
pub fn objective(ds: &EqtlDataset, fit: &ModelFit, hp: &Hyperparams) -> Result<f64> {
    hp.validate()?;
    let fit_term = data_fit(ds, fit)?;
    Ok(fit_term + hp.rho * l1_norm(&fit.b) + hp.lambda * nuclear_norm(&fit.l)?)
}

/// Gradients of the smooth term with respect to each block.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothGradients {
    pub b: RealMatrix,
    pub mu: DVector<f64>,
    pub l: RealMatrix,
}

pub fn grad_smooth(ds: &EqtlDataset, fit: &ModelFit) -> Result<SmoothGradients> {
    let r = residual(ds, fit)?;
    let b = -(ds.x.tr_mul(&r));
    let mu = -DVector::from_iterator(r.ncols(), r.column_iter().map(|c| c.sum()));
    Ok(SmoothGradients { b, mu, l: -r })
}

/// Per-block step sizes from the Lipschitz constants of the smooth term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub l: f64,
    pub b: f64,
    pub mu: f64,
    /// Largest singular value of `X`, kept so it is computed once per solve.
    pub x_spectral_norm: f64,
}

pub fn lipschitz_steps(ds: &EqtlDataset) -> Result<StepSizes> {
    let sigma = spectral_norm(&ds.x)?;
    if sigma == 0.0 {
        return Err(invalid("genotype matrix is identically zero"));
    }
    Ok(StepSizes {
        l: 1.0,
        b: 1.0 / (sigma * sigma),
        mu: 1.0 / ds.n_samples() as f64,
        x_spectral_norm: sigma,
    })
}
