//! Synthetic datasets drawn from `Y = 1 mu^T + X B + L + E` with known ground truth.
//!
//! All draws come from one ChaCha8 stream (`rand_chacha::ChaCha8Rng::seed_from_u64(seed)`)
//! in this fixed order: genotypes SNP by SNP, causal positions, causal signs, `U`, `V`,
//! `mu`, noise.

use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LorsError, Result};
use crate::model::EqtlDataset;
use crate::prox::RealMatrix;

const MAX_GENOTYPE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub rank_l: usize,
    pub n_causal: usize,
    pub effect_size: f64,
    pub noise_sd: f64,
    pub maf_range: (f64, f64),
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            n: 50,
            p: 200,
            q: 100,
            rank_l: 3,
            n_causal: 20,
            effect_size: 1.0,
            noise_sd: 0.5,
            maf_range: (0.05, 0.5),
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 || self.q == 0 {
            return Err(invalid("scenario needs n >= 2 and p, q >= 1"));
        }
        if self.rank_l > self.n.min(self.q) {
            return Err(invalid(format!(
                "rank_l = {} exceeds min(n, q) = {}",
                self.rank_l,
                self.n.min(self.q)
            )));
        }
        if self.n_causal > self.p * self.q {
            return Err(invalid("n_causal exceeds p * q"));
        }
        let (lo, hi) = self.maf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(invalid(format!(
                "maf range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 0.5"
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(invalid("noise_sd must be a nonnegative number"));
        }
        if !self.effect_size.is_finite() {
            return Err(invalid("effect_size must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub b: RealMatrix,
    pub l: RealMatrix,
    pub mu: DVector<f64>,
    /// `(snp, gene)` index pairs of the nonzero entries of `b`, in row-major order.
    pub causal_pairs: Vec<(usize, usize)>,
}

impl SimTruth {
    /// Sorted, deduplicated SNP indices that carry at least one effect.
    pub fn causal_snps(&self) -> Vec<usize> {
        let mut snps: Vec<usize> = self.causal_pairs.iter().map(|&(k, _)| k).collect();
        snps.sort_unstable();
        snps.dedup();
        snps
    }
}

fn sample_genotypes(rng: &mut ChaCha8Rng, sc: &SimScenario) -> Result<RealMatrix> {
    let mut x = RealMatrix::zeros(sc.n, sc.p);
    let (lo, hi) = sc.maf_range;
    for k in 0..sc.p {
        let mut placed = false;
        for _ in 0..MAX_GENOTYPE_ATTEMPTS {
            let maf = if lo < hi { rng.random_range(lo..hi) } else { lo };
            let mut col = x.column_mut(k);
            for i in 0..sc.n {
                let a = rng.random_bool(maf) as u8;
                let b = rng.random_bool(maf) as u8;
                col[i] = f64::from(a + b);
            }
            if col.iter().any(|&v| v != col[0]) {
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(LorsError::InvalidArgument(format!(
                "SNP {k} stayed monomorphic after {MAX_GENOTYPE_ATTEMPTS} draws; widen maf_range or raise n"
            )));
        }
    }
    Ok(x)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RealMatrix {
    // filled column by column
    RealMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn simulate_dataset(sc: &SimScenario) -> Result<(EqtlDataset, SimTruth)> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let x = sample_genotypes(&mut rng, sc)?;

    let mut flat: Vec<usize> = index::sample(&mut rng, sc.p * sc.q, sc.n_causal).into_vec();
    flat.sort_unstable();
    let mut b = RealMatrix::zeros(sc.p, sc.q);
    let mut causal_pairs = Vec::with_capacity(sc.n_causal);
    for idx in flat {
        let (k, j) = (idx / sc.q, idx % sc.q);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        b[(k, j)] = sign * sc.effect_size;
        causal_pairs.push((k, j));
    }

    let xb = &x * &b;
    let u = normal_matrix(&mut rng, sc.n, sc.rank_l);
    let v = normal_matrix(&mut rng, sc.q, sc.rank_l);
    let mut l = &u * v.transpose();
    let l_norm = l.norm();
    if l_norm > 0.0 {
        let xb_norm = xb.norm();
        // unit RMS entry when there is no SNP signal to match
        let target = if xb_norm > 0.0 {
            xb_norm
        } else {
            ((sc.n * sc.q) as f64).sqrt()
        };
        l *= target / l_norm;
    }

    let mu = DVector::from_fn(sc.q, |_, _| rng.sample::<f64, _>(StandardNormal));

    let mut y = xb + &l;
    for (j, mut col) in y.column_iter_mut().enumerate() {
        col.add_scalar_mut(mu[j]);
    }
    if sc.noise_sd > 0.0 {
        y += normal_matrix(&mut rng, sc.n, sc.q) * sc.noise_sd;
    }

    let ds = EqtlDataset::unlabeled(y, x)?;
    Ok((
        ds,
        SimTruth {
            b,
            l,
            mu,
            causal_pairs,
        },
    ))
}
