//! Reference computations used as test oracles. Plain loops over `Vec`s, no
//! shared code with the library's numerical paths.

#![allow(dead_code)]

use fastlors::RealMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn to_rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Singular values by one-sided Jacobi rotations, descending.
pub fn jacobi_singular_values(m: &RealMatrix) -> Vec<f64> {
    // work on the orientation with at least as many rows as columns
    let a = if m.nrows() >= m.ncols() {
        to_rows(m)
    } else {
        to_rows(&m.transpose())
    };
    let rows = a.len();
    let cols = a[0].len();
    let mut a = a;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..rows {
                    alpha += a[r][i] * a[r][i];
                    beta += a[r][j] * a[r][j];
                    gamma += a[r][i] * a[r][j];
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let (x, y) = (a[r][i], a[r][j]);
                    a[r][i] = c * x - s * y;
                    a[r][j] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|r| a[r][j] * a[r][j]).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Largest eigenvalue of `X^T X` by power iteration.
pub fn power_iteration_top_eigenvalue(x: &RealMatrix) -> f64 {
    let rows = to_rows(x);
    let p = x.ncols();
    let mut v: Vec<f64> = (0..p).map(|k| 1.0 + 0.01 * k as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        // w = X^T (X v)
        let xv: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let mut w = vec![0.0; p];
        for (r, s) in rows.iter().zip(&xv) {
            for k in 0..p {
                w[k] += r[k] * s;
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        let next = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = w.iter().map(|a| a / norm).collect();
        if (next - lambda).abs() <= 1e-15 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Smooth part `0.5 ||Y - X B - 1 mu^T - L||_F^2` by explicit loops.
pub fn smooth_loss(
    y: &RealMatrix,
    x: &RealMatrix,
    b: &RealMatrix,
    mu: &[f64],
    l: &RealMatrix,
) -> f64 {
    let (n, q, p) = (y.nrows(), y.ncols(), x.ncols());
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..q {
            let mut r = y[(i, j)] - mu[j] - l[(i, j)];
            for k in 0..p {
                r -= x[(i, k)] * b[(k, j)];
            }
            acc += r * r;
        }
    }
    0.5 * acc
}

/// Accelerated proximal gradient (FISTA with restart) for
/// `0.5 ||t - X b - mu||^2 + rho ||b||_1`, run until the objective stalls below `tol`.
pub fn fista_lasso(t: &[f64], x: &RealMatrix, rho: f64, tol: f64) -> (Vec<f64>, f64, f64) {
    let n = t.len();
    let p = x.ncols();
    let cols: Vec<Vec<f64>> = (0..p).map(|k| (0..n).map(|i| x[(i, k)]).collect()).collect();
    // Lipschitz constant of the joint (b, mu) gradient: top eigenvalue of [X 1]^T [X 1]
    let mut aug = RealMatrix::zeros(n, p + 1);
    for i in 0..n {
        for k in 0..p {
            aug[(i, k)] = x[(i, k)];
        }
        aug[(i, p)] = 1.0;
    }
    let lip = power_iteration_top_eigenvalue(&aug) * 1.0001;
    let step = 1.0 / lip;

    let objective = |b: &[f64], mu: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            let mut r = t[i] - mu;
            for k in 0..p {
                r -= cols[k][i] * b[k];
            }
            acc += r * r;
        }
        0.5 * acc + rho * b.iter().map(|v| v.abs()).sum::<f64>()
    };
    let residual = |b: &[f64], mu: f64| -> Vec<f64> {
        (0..n)
            .map(|i| t[i] - mu - (0..p).map(|k| cols[k][i] * b[k]).sum::<f64>())
            .collect()
    };

    let mut b = vec![0.0; p];
    let mut mu = 0.0;
    let mut zb = b.clone();
    let mut zmu = mu;
    let mut theta = 1.0f64;
    let mut f = objective(&b, mu);
    let mut stall = 0;
    for _ in 0..2_000_000 {
        let r = residual(&zb, zmu);
        let mut nb = vec![0.0; p];
        for k in 0..p {
            let g = -cols[k].iter().zip(&r).map(|(a, c)| a * c).sum::<f64>();
            let v = zb[k] - step * g;
            nb[k] = if v > step * rho {
                v - step * rho
            } else if v < -step * rho {
                v + step * rho
            } else {
                0.0
            };
        }
        let nmu = zmu + step * r.iter().sum::<f64>();
        let nf = objective(&nb, nmu);
        let next_theta = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        if nf > f {
            // restart momentum
            theta = 1.0;
            zb = b.clone();
            zmu = mu;
            continue;
        }
        let w = (theta - 1.0) / next_theta;
        zb = (0..p).map(|k| nb[k] + w * (nb[k] - b[k])).collect();
        zmu = nmu + w * (nmu - mu);
        theta = next_theta;
        let change = f - nf;
        b = nb;
        mu = nmu;
        f = nf;
        if change < tol {
            stall += 1;
            if stall > 200 {
                break;
            }
        } else {
            stall = 0;
        }
    }
    (b, mu, f)
}
