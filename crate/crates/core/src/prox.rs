//! Proximal maps and penalty evaluations shared by both solvers.

use nalgebra::{DMatrix, SVD};

use crate::error::{invalid, LorsError, Result};

/// Dense real matrix. Finiteness is checked where matrices enter the library
/// (dataset construction, file ingestion), not on every operation.
pub type RealMatrix = DMatrix<f64>;

/// Shrunken singular values below this are treated as exact zeros.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-12;

pub fn ensure_finite(m: &RealMatrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(invalid(format!("{what} has an empty dimension")));
    }
    match m.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => {
            let (r, c) = (idx % m.nrows(), idx / m.nrows());
            Err(invalid(format!("{what} has a non-finite entry at ({r}, {c})")))
        }
    }
}

#[inline]
pub fn soft_threshold_scalar(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Elementwise proximal map of `tau * |.|_1`.
pub fn soft_threshold(m: &RealMatrix, tau: f64) -> Result<RealMatrix> {
    if !(tau >= 0.0) {
        return Err(invalid(format!("threshold must be nonnegative, got {tau}")));
    }
    Ok(m.map(|v| soft_threshold_scalar(v, tau)))
}

fn thin_svd(m: &RealMatrix) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LorsError::Computation(
            "SVD input contains non-finite entries".into(),
        ));
    }
    SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| LorsError::Computation("SVD did not converge".into()))
}

/// Singular value thresholding: the proximal map of `tau * ||.||_*`.
pub fn svt(m: &RealMatrix, tau: f64) -> Result<RealMatrix> {
    Ok(svt_with_rank(m, tau)?.0)
}

/// Same as [`svt`], also returning the number of singular values that survive shrinkage.
pub fn svt_with_rank(m: &RealMatrix, tau: f64) -> Result<(RealMatrix, usize)> {
    let out = svt_full(m, tau)?;
    Ok((out.matrix, out.rank))
}

/// Result of singular value thresholding together with the spectrum of the output.
#[derive(Debug, Clone)]
pub struct SvtOutput {
    pub matrix: RealMatrix,
    pub rank: usize,
    /// Sum of the shrunken singular values, i.e. the nuclear norm of `matrix`.
    pub nuclear_norm: f64,
}

pub fn svt_full(m: &RealMatrix, tau: f64) -> Result<SvtOutput> {
    if !(tau >= 0.0) {
        return Err(invalid(format!("threshold must be nonnegative, got {tau}")));
    }
    let svd = thin_svd(m)?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    let mut out = RealMatrix::zeros(m.nrows(), m.ncols());
    let mut rank = 0;
    let mut nuclear = 0.0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - tau;
        if shrunk <= SINGULAR_VALUE_FLOOR {
            continue;
        }
        rank += 1;
        nuclear += shrunk;
        // out += shrunk * u_i v_i^T
        out.ger(shrunk, &u.column(i), &v_t.row(i).transpose(), 1.0);
    }
    Ok(SvtOutput {
        matrix: out,
        rank,
        nuclear_norm: nuclear,
    })
}

pub fn singular_values(m: &RealMatrix) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LorsError::Computation(
            "SVD input contains non-finite entries".into(),
        ));
    }
    let mut s: Vec<f64> = m
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| LorsError::Computation("SVD did not converge".into()))?
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn nuclear_norm(m: &RealMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

pub fn spectral_norm(m: &RealMatrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

pub fn l1_norm(m: &RealMatrix) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Number of singular values above `tol` (absolute).
pub fn numerical_rank(m: &RealMatrix, tol: f64) -> Result<usize> {
    Ok(singular_values(m)?.iter().filter(|&&s| s > tol).count())
}
