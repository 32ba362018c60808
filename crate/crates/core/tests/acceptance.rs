//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion and exits nonzero if any of them fails.

mod support;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fastlors::io::{self, center_genotypes};
use fastlors::lasso::{lasso_gene, lasso_objective, LassoOptions};
use fastlors::model::{grad_smooth, EqtlDataset, Hyperparams, ModelFit};
use fastlors::pipeline::{run_benchmark, run_pipeline, write_simulated, BenchOptions, RunConfig};
use fastlors::prox::{singular_values, svt, RealMatrix};
use fastlors::screening::{hc_screening, lors_screening, HcOptions};
use fastlors::simulate::{simulate_dataset, SimScenario};
use fastlors::solver::{
    fast_l_update, fastlors_solve, lors_solve, support_jaccard, SolverOptions, StepKind,
};
use fastlors::tuning::build_grid;
use nalgebra::DVector;
use rand::Rng;

use support::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(start: Instant, budget: Duration, detail: String) -> Outcome {
    let spent = start.elapsed();
    if spent > budget {
        Err(format!("{detail}; took {:.1}s, budget {}s", spent.as_secs_f64(), budget.as_secs()))
    } else {
        Ok(format!("{detail}; {:.1}s", spent.as_secs_f64()))
    }
}

fn random_instance(seed: u64, n: usize, p: usize, q: usize) -> (EqtlDataset, ModelFit) {
    let mut r = rng(seed);
    let y = uniform_matrix(&mut r, n, q, 2.0);
    let x = uniform_matrix(&mut r, n, p, 1.0);
    let fit = ModelFit {
        b: uniform_matrix(&mut r, p, q, 1.0),
        l: uniform_matrix(&mut r, n, q, 1.0),
        mu: DVector::from_fn(q, |_, _| r.random_range(-1.0..1.0)),
    };
    (EqtlDataset::unlabeled(y, x).unwrap(), fit)
}

fn solver_parity() -> Outcome {
    let start = Instant::now();
    let opts = SolverOptions {
        max_iter: 20_000,
        rel_tol: 1e-6,
        ..Default::default()
    };
    let mut worst_gap: f64 = 0.0;
    let mut worst_jaccard: f64 = 1.0;
    for seed in 1..=5 {
        let (raw, _) = simulate_dataset(&SimScenario {
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let (ds, _) = center_genotypes(&raw);
        let grid = build_grid(&ds, 5, 5).map_err(|e| e.to_string())?;
        let hp = Hyperparams::new(grid.rho_values[1], grid.lambda_values[1]).unwrap();
        let (ff, ft) = fastlors_solve(&ds, &hp, &opts).map_err(|e| e.to_string())?;
        let (lf, lt) = lors_solve(&ds, &hp, &opts).map_err(|e| e.to_string())?;
        let gap = (ft.final_objective() - lt.final_objective()).abs() / lt.final_objective();
        worst_gap = worst_gap.max(gap);
        worst_jaccard = worst_jaccard.min(support_jaccard(&ff.b, &lf.b));
    }
    let detail = format!("max relative gap {worst_gap:.2e}, min Jaccard {worst_jaccard:.3}");
    check(worst_gap <= 1e-3 && worst_jaccard >= 0.9, detail.clone())?;
    within_budget(start, Duration::from_secs(120), detail)
}

fn speedup_trend() -> Outcome {
    let start = Instant::now();
    let sizes = [(25, 500, 200), (50, 500, 200), (100, 500, 200)];
    let opts = BenchOptions {
        whole_solve: false,
        ..Default::default()
    };
    let rows = run_benchmark(&sizes, 1, &opts).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.bstep_ratio).collect();
    let trend = ratios.windows(2).all(|w| w[1] >= 0.8 * w[0]);
    let times: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.1}/{:.2}ms", r.lors_bstep_seconds * 1e3, r.fast_bstep_seconds * 1e3))
        .collect();
    let detail = format!(
        "B-step ratios at n=25/50/100: {:.1} / {:.1} / {:.1} (LORS/Fast-LORS {})",
        ratios[0],
        ratios[1],
        ratios[2],
        times.join(", ")
    );
    check(trend && ratios[2] > 3.0, detail.clone())?;
    within_budget(start, Duration::from_secs(300), detail)
}

fn monotonicity() -> Outcome {
    let mut checked = 0;
    for seed in 0..20u64 {
        let (raw, _) = simulate_dataset(&SimScenario {
            n: 20 + (seed as usize % 3) * 10,
            p: 40,
            q: 15,
            rank_l: 2,
            n_causal: 8,
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let grid = build_grid(&raw, 5, 5).map_err(|e| e.to_string())?;
        let cell = 1 + (seed as usize % 3);
        let hp = Hyperparams::new(grid.rho_values[cell], grid.lambda_values[cell]).unwrap();
        let (_, ft) = fastlors_solve(&raw, &hp, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let v = &ft.objective_values;
        for k in 1..v.len() {
            let held_at_stop = k == v.len() - 1 && v[k] == v[k - 1] && ft.step_kinds[k - 1] == StepKind::Fallback;
            if !(v[k] < v[k - 1] || held_at_stop) {
                return Err(format!("Fast-LORS instance {seed}: f[{k}]={} after {}", v[k], v[k - 1]));
            }
        }
        let (_, lt) = lors_solve(&raw, &hp, &SolverOptions::default()).map_err(|e| e.to_string())?;
        for (k, w) in lt.objective_values.windows(2).enumerate() {
            if w[1] > w[0] + 1e-10 {
                return Err(format!("LORS instance {seed}: f[{}]={} after {}", k + 1, w[1], w[0]));
            }
        }
        checked += 1;
    }
    Ok(format!("{checked} instances, both traces monotone"))
}

fn l_step_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (ds, fit) = random_instance(100 + seed, 8, 6, 5);
        let hp = Hyperparams::new(0.3, 0.5 + seed as f64 * 0.2).unwrap();
        let fast = fast_l_update(&ds, &fit, &hp, 1.0).map_err(|e| e.to_string())?;
        let mut target = &ds.y - &ds.x * &fit.b;
        for j in 0..target.ncols() {
            target.column_mut(j).add_scalar_mut(-fit.mu[j]);
        }
        let direct = svt(&target, hp.lambda).map_err(|e| e.to_string())?;
        worst = worst.max((fast - direct).norm());
    }
    check(worst <= 1e-12, format!("max Frobenius difference {worst:.2e}"))
}

fn gradient_correctness() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (ds, fit) = random_instance(200 + seed, 6, 4, 3);
        let g = grad_smooth(&ds, &fit).map_err(|e| e.to_string())?;
        let f = |m: &ModelFit| smooth_loss(&ds.y, &ds.x, &m.b, m.mu.as_slice(), &m.l);
        let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1.0);
        for idx in 0..fit.b.len() {
            let (mut up, mut dn) = (fit.clone(), fit.clone());
            up.b[idx] += h;
            dn.b[idx] -= h;
            worst = worst.max(rel((f(&up) - f(&dn)) / (2.0 * h), g.b[idx]));
        }
        for idx in 0..fit.l.len() {
            let (mut up, mut dn) = (fit.clone(), fit.clone());
            up.l[idx] += h;
            dn.l[idx] -= h;
            worst = worst.max(rel((f(&up) - f(&dn)) / (2.0 * h), g.l[idx]));
        }
        for idx in 0..fit.mu.len() {
            let (mut up, mut dn) = (fit.clone(), fit.clone());
            up.mu[idx] += h;
            dn.mu[idx] -= h;
            worst = worst.max(rel((f(&up) - f(&dn)) / (2.0 * h), g.mu[idx]));
        }
    }
    check(worst <= 1e-6, format!("max relative error {worst:.2e}"))
}

/// KKT residual computed from scratch: stationarity in `mu` and the
/// subgradient condition for every coefficient.
fn independent_kkt(t: &[f64], x: &RealMatrix, b: &DVector<f64>, mu: f64, rho: f64) -> f64 {
    let n = t.len();
    let r: Vec<f64> = (0..n)
        .map(|i| t[i] - mu - (0..x.ncols()).map(|k| x[(i, k)] * b[k]).sum::<f64>())
        .collect();
    let mut worst = r.iter().sum::<f64>().abs();
    for k in 0..x.ncols() {
        let g: f64 = (0..n).map(|i| x[(i, k)] * r[i]).sum();
        let v = if b[k] != 0.0 {
            (g - rho * b[k].signum()).abs()
        } else {
            (g.abs() - rho).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn lasso_optimality() -> Outcome {
    let mut worst_kkt: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = rng(300 + seed);
        let (n, p) = (10 + seed as usize % 5, 4 + seed as usize % 9);
        let x = uniform_matrix(&mut r, n, p, 1.0);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let l: Vec<f64> = (0..n).map(|_| r.random_range(-0.5..0.5)).collect();
        let rho = r.random_range(0.05..1.5);
        let res = lasso_gene(&y, &x, &l, rho, &LassoOptions::default(), None).map_err(|e| e.to_string())?;
        let t: Vec<f64> = y.iter().zip(&l).map(|(a, b)| a - b).collect();
        worst_kkt = worst_kkt
            .max(res.kkt_violation)
            .max(independent_kkt(&t, &x, &res.b, res.mu, rho));
        let (_, _, oracle) = fista_lasso(&t, &x, rho, 1e-10);
        let ours = lasso_objective(&y, &x, &l, &res.b, res.mu, rho);
        worst_gap = worst_gap.max((ours - oracle).abs());
    }
    check(
        worst_kkt <= 1e-7 && worst_gap <= 1e-8,
        format!("max KKT violation {worst_kkt:.2e}, max objective gap {worst_gap:.2e}"),
    )
}

fn svt_spectrum() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = rng(400 + seed);
        let (rows, cols) = (3 + seed as usize % 5, 2 + seed as usize % 6);
        let m = uniform_matrix(&mut r, rows, cols, 4.0);
        let sigma = jacobi_singular_values(&m);
        let tau = sigma[sigma.len() / 2];
        let shrunk = singular_values(&svt(&m, tau).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for (i, s) in sigma.iter().enumerate() {
            worst = worst.max((shrunk[i] - (s - tau).max(0.0)).abs());
        }
    }
    check(worst <= 1e-9, format!("max singular value error {worst:.2e}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fastlors"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let d = |p: &Path| p.to_str().unwrap().to_owned();
    run_cli(&["simulate", "--out", &d(&data), "--n", "40", "--p", "80", "--q", "30", "--seed", "7"])?;
    let expr = d(&data.join("expression.tsv"));
    let geno = d(&data.join("genotypes.tsv"));
    let runs = [dir.path().join("run1"), dir.path().join("run2")];
    for out in &runs {
        run_cli(&["run", "--expr", &expr, "--geno", &geno, "--out", &d(out), "--seed", "3"])?;
    }
    for name in [io::EQTLS_FILE, io::TRACE_FILE, io::B_FILE] {
        let a = std::fs::read(runs[0].join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(runs[1].join(name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok("eqtls.tsv, trace.tsv, B.tsv byte-identical across two CLI runs".into())
}

fn screening_recall() -> Outcome {
    let sc = SimScenario {
        effect_size: 1.5,
        ..Default::default()
    };
    let (ds, truth) = simulate_dataset(&sc).map_err(|e| e.to_string())?;
    let kept = lors_screening(&ds, ds.n_samples()).map_err(|e| e.to_string())?;
    let causal = truth.causal_snps();
    let hits = causal
        .iter()
        .filter(|k| kept.kept_snp_indices.binary_search(k).is_ok())
        .count();
    let recall = hits as f64 / causal.len() as f64;

    let mut worst_null: f64 = 0.0;
    for seed in 1..=5 {
        let (noise, _) = simulate_dataset(&SimScenario {
            rank_l: 0,
            n_causal: 0,
            noise_sd: 1.0,
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let hc = hc_screening(&noise, &HcOptions::default()).map_err(|e| e.to_string())?;
        worst_null = worst_null.max(hc.kept_snp_indices.len() as f64 / noise.n_snps() as f64);
    }
    check(
        recall >= 0.9 && worst_null <= 0.10,
        format!(
            "LORS-Screening recall {hits}/{} ({} of {} SNPs kept); HC null fraction at most {:.3}",
            causal.len(),
            kept.kept_snp_indices.len(),
            ds.n_snps(),
            worst_null
        ),
    )
}

fn pipeline_smoke() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (expr, geno) =
        write_simulated(&SimScenario::default(), &dir.path().join("data")).map_err(|e| e.to_string())?;
    let config = RunConfig {
        expr,
        geno,
        out: dir.path().join("out"),
        ..Default::default()
    };
    let outcome = run_pipeline(&config).map_err(|e| e.to_string())?;
    let expected = [
        io::EQTLS_FILE,
        io::B_FILE,
        io::L_FILE,
        io::MU_FILE,
        io::TRACE_FILE,
        io::REPORT_FILE,
    ];
    for name in expected {
        if !config.out.join(name).is_file() {
            return Err(format!("missing {name}"));
        }
    }
    let report: serde_json::Value = serde_json::from_slice(
        &std::fs::read(config.out.join(io::REPORT_FILE)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    for stage in ["screening_seconds", "tuning_seconds", "modeling_seconds"] {
        let v = report["timings"][stage].as_f64();
        if !matches!(v, Some(s) if s >= 0.0) {
            return Err(format!("timing {stage} missing or negative: {v:?}"));
        }
    }
    let detail = format!(
        "{} artifacts, {} eQTLs, {} iterations",
        outcome.artifacts.len(),
        outcome.report.n_eqtls,
        outcome.report.iterations
    );
    within_budget(start, Duration::from_secs(30), detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("solver parity", solver_parity),
        ("speedup trend", speedup_trend),
        ("monotonicity", monotonicity),
        ("L-step identity", l_step_identity),
        ("gradient correctness", gradient_correctness),
        ("lasso optimality", lasso_optimality),
        ("SVT spectrum", svt_spectrum),
        ("determinism", determinism),
        ("screening recall", screening_recall),
        ("pipeline smoke", pipeline_smoke),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
