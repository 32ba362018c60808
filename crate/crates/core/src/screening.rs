//! SNP pre-screening ahead of joint modeling.
//!
//! Two stand-ins are provided. `lors_screening` keeps, for every gene, the SNPs
//! with the largest absolute marginal correlation and returns the union.
//! `hc_screening` computes a Higher Criticism score over each SNP's spectrum of
//! gene-wise association p-values and keeps SNPs whose score beats a
//! permutation-calibrated threshold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, LorsError, Result};
use crate::model::EqtlDataset;
use crate::prox::RealMatrix;

const P_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScreeningMethod {
    #[serde(rename = "lors")]
    LorsScreening,
    #[serde(rename = "hc")]
    HcScreening,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    /// Sorted, unique column indices into `X`.
    pub kept_snp_indices: Vec<usize>,
    /// Ranking score per SNP (all p of them).
    pub scores: Vec<f64>,
    pub method: ScreeningMethod,
    /// Score cutoff used, when the method has one.
    pub threshold: Option<f64>,
}

impl ScreeningResult {
    /// Keeps every SNP.
    pub fn keep_all(p: usize) -> Self {
        ScreeningResult {
            kept_snp_indices: (0..p).collect(),
            scores: vec![0.0; p],
            method: ScreeningMethod::None,
            threshold: None,
        }
    }
}

/// Columns centered and scaled to unit Euclidean norm; constant columns become zero.
fn standardize_columns(m: &RealMatrix) -> RealMatrix {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm > 1e-12 * (1.0 + mean.abs()) {
            col /= norm;
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Pearson correlations between every SNP (rows) and every gene (columns).
pub fn marginal_correlations(ds: &EqtlDataset) -> RealMatrix {
    let xs = standardize_columns(&ds.x);
    let ys = standardize_columns(&ds.y);
    xs.tr_mul(&ys)
}

pub fn lors_screening(ds: &EqtlDataset, keep_per_gene: usize) -> Result<ScreeningResult> {
    let p = ds.n_snps();
    if keep_per_gene == 0 || keep_per_gene > p {
        return Err(invalid(format!(
            "keep_per_gene must be in 1..={p}, got {keep_per_gene}"
        )));
    }
    let corr = marginal_correlations(ds);
    let mut keep = vec![false; p];
    let mut order: Vec<usize> = Vec::with_capacity(p);
    for col in corr.column_iter() {
        order.clear();
        order.extend(0..p);
        order.sort_by(|&a, &b| col[b].abs().total_cmp(&col[a].abs()).then(a.cmp(&b)));
        for &k in &order[..keep_per_gene] {
            keep[k] = true;
        }
    }
    let scores = corr
        .row_iter()
        .map(|row| row.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    Ok(ScreeningResult {
        kept_snp_indices: (0..p).filter(|&k| keep[k]).collect(),
        scores,
        method: ScreeningMethod::LorsScreening,
        threshold: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HcOptions {
    /// Fraction of the smallest p-values searched for the HC maximum.
    pub alpha0: f64,
    pub n_permutations: usize,
    /// Quantile of the permutation max-score distribution used as the cutoff.
    pub null_quantile: f64,
    pub seed: u64,
}

impl Default for HcOptions {
    fn default() -> Self {
        HcOptions {
            alpha0: 0.1,
            n_permutations: 20,
            null_quantile: 0.95,
            seed: 1,
        }
    }
}

/// Two-sided p-values of the simple-regression slope of each gene on each SNP (p x q).
/// Monomorphic SNPs get p = 1.
pub fn slope_pvalues(corr: &RealMatrix, n: usize) -> Result<RealMatrix> {
    if n < 3 {
        return Err(invalid("slope t-tests need at least three samples"));
    }
    let df = (n - 2) as f64;
    let t_dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| LorsError::Computation(format!("t distribution: {e}")))?;
    Ok(corr.map(|r| {
        if r == 0.0 {
            return 1.0;
        }
        let r2 = r * r;
        if r2 >= 1.0 {
            return 0.0;
        }
        let t = r.abs() * (df / (1.0 - r2)).sqrt();
        (2.0 * t_dist.sf(t)).min(1.0)
    }))
}

/// Higher Criticism score of one p-value spectrum, maximized over the `alpha0`
/// smallest fraction (at least one term).
pub fn hc_score(pvalues: &mut [f64], alpha0: f64) -> f64 {
    let q = pvalues.len();
    if q == 0 {
        return f64::NEG_INFINITY;
    }
    pvalues.sort_by(f64::total_cmp);
    let qf = q as f64;
    let top = ((alpha0 * qf).floor() as usize).clamp(1, q);
    (1..=top)
        .map(|i| {
            let p = pvalues[i - 1].clamp(P_CLIP, 1.0 - P_CLIP);
            qf.sqrt() * (i as f64 / qf - p) / (p * (1.0 - p)).sqrt()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn hc_scores_for(ds_y: &RealMatrix, xs: &RealMatrix, n: usize, alpha0: f64) -> Result<Vec<f64>> {
    let corr = xs.tr_mul(&standardize_columns(ds_y));
    let pv = slope_pvalues(&corr, n)?;
    Ok(pv
        .row_iter()
        .map(|row| {
            let mut spectrum: Vec<f64> = row.iter().copied().collect();
            hc_score(&mut spectrum, alpha0)
        })
        .collect())
}

/// Nearest-rank quantile of unsorted values.
fn nearest_rank_quantile(values: &mut [f64], quantile: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = (quantile * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

pub fn hc_screening(ds: &EqtlDataset, opts: &HcOptions) -> Result<ScreeningResult> {
    let (n, q) = (ds.n_samples(), ds.n_genes());
    if q < 10 {
        return Err(invalid(format!("HC screening needs at least 10 genes, got {q}")));
    }
    if !(opts.alpha0 > 0.0 && opts.alpha0 <= 0.5) {
        return Err(invalid(format!("alpha0 must be in (0, 0.5], got {}", opts.alpha0)));
    }
    if opts.n_permutations == 0 || !(opts.null_quantile > 0.0 && opts.null_quantile < 1.0) {
        return Err(invalid("HC calibration needs permutations and a quantile in (0, 1)"));
    }
    let xs = standardize_columns(&ds.x);
    let scores = hc_scores_for(&ds.y, &xs, n, opts.alpha0)?;

    // Null: shuffle sample order of Y (one shared permutation per replicate,
    // keeping gene-gene correlation) and record the max score over SNPs.
    let null_max: Result<Vec<f64>> = (0..opts.n_permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64 + 1);
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            let permuted = ds.y.select_rows(&rows);
            let s = hc_scores_for(&permuted, &xs, n, opts.alpha0)?;
            Ok(s.into_iter().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect();
    let mut null_max = null_max?;
    let threshold = nearest_rank_quantile(&mut null_max, opts.null_quantile).max(0.0);

    Ok(ScreeningResult {
        kept_snp_indices: (0..ds.n_snps()).filter(|&k| scores[k] > threshold).collect(),
        scores,
        method: ScreeningMethod::HcScreening,
        threshold: Some(threshold),
    })
}

pub fn subset_dataset(ds: &EqtlDataset, sr: &ScreeningResult) -> Result<EqtlDataset> {
    if sr.kept_snp_indices.is_empty() {
        return Err(invalid(
            "screening kept no SNPs; lower the screening threshold or run with --screening none",
        ));
    }
    let p = ds.n_snps();
    if sr.kept_snp_indices.windows(2).any(|w| w[0] >= w[1])
        || sr.kept_snp_indices.iter().any(|&k| k >= p)
    {
        return Err(invalid("kept SNP indices must be sorted, unique and in range"));
    }
    let x = ds.x.select_columns(&sr.kept_snp_indices);
    let snp_ids = sr.kept_snp_indices.iter().map(|&k| ds.snp_ids[k].clone()).collect();
    EqtlDataset::new(
        ds.y.clone(),
        x,
        ds.sample_ids.clone(),
        ds.gene_ids.clone(),
        snp_ids,
    )
}
