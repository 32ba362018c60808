//! End-to-end run (ingest, screen, tune, solve, report) and the B-step benchmark.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LorsError, Result};
use crate::io::{self, read_dataset, Report, RunOutputs, StageTimings, RESULTS_FORMAT_VERSION};
use crate::model::{EqtlDataset, Hyperparams, ModelFit};
use crate::screening::{
    hc_screening, lors_screening, subset_dataset, HcOptions, ScreeningMethod, ScreeningResult,
};
use crate::simulate::{simulate_dataset, SimScenario};
use crate::solver::{
    detect_eqtls, lors_l_update, solve, BStepRunner, Method, SolverOptions, StepPolicy,
};
use crate::tuning::{build_grid, tune_no_cv, two_fold_cv, MaskOptions, TuningResult};

impl FromStr for Method {
    type Err = LorsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fastlors" | "fast-lors" => Ok(Method::FastLors),
            "lors" => Ok(Method::Lors),
            other => Err(invalid(format!("unknown method '{other}' (fastlors | lors)"))),
        }
    }
}

impl FromStr for ScreeningMethod {
    type Err = LorsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hc" | "hc-screening" => Ok(ScreeningMethod::HcScreening),
            "lors" | "lors-screening" => Ok(ScreeningMethod::LorsScreening),
            "none" => Ok(ScreeningMethod::None),
            other => Err(invalid(format!("unknown screening '{other}' (hc | lors | none)"))),
        }
    }
}

fn default_true() -> bool {
    true
}

/// Fully resolved settings of one run; echoed into `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub screening: ScreeningMethod,
    #[serde(default = "default_true")]
    pub cross_valid: bool,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub step_policy: StepPolicy,
    pub grid_rho: usize,
    pub grid_lambda: usize,
    pub seed: u64,
    /// Per-gene retention for LORS-Screening; `None` means the sample count.
    pub keep_per_gene: Option<usize>,
    pub hc_alpha0: f64,
    pub hc_permutations: usize,
    pub mask_fraction: f64,
    /// Center genotype columns before fitting (intercepts are reported on the raw scale).
    pub center_genotypes: bool,
    pub expr: PathBuf,
    pub geno: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::FastLors,
            screening: ScreeningMethod::None,
            cross_valid: true,
            max_iter: 100,
            rel_tol: 1e-4,
            step_policy: StepPolicy::FixedLipschitz,
            grid_rho: 5,
            grid_lambda: 5,
            seed: 1,
            keep_per_gene: None,
            hc_alpha0: 0.1,
            hc_permutations: 20,
            mask_fraction: 0.1,
            center_genotypes: true,
            expr: PathBuf::new(),
            geno: PathBuf::new(),
            out: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("expr", &self.expr), ("geno", &self.geno), ("out", &self.out)] {
            if p.as_os_str().is_empty() {
                return Err(invalid(format!("--{name} path is required")));
            }
        }
        if self.grid_rho == 0 || self.grid_lambda == 0 {
            return Err(invalid("grid sizes must be at least 1"));
        }
        if self.keep_per_gene == Some(0) {
            return Err(invalid("keep_per_gene must be at least 1"));
        }
        self.solver_options().validate()
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            step_policy: self.step_policy,
            ..Default::default()
        }
    }

    /// Reads a config from JSON: either a bare config object or a `report.json`
    /// whose `config` field holds one.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LorsError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| LorsError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let inner = match value.get("config") {
            Some(c) => c.clone(),
            None => value,
        };
        serde_json::from_value(inner)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub artifacts: Vec<PathBuf>,
    pub report: Report,
}

const LOCK_FILE: &str = ".fastlors.lock";

/// Exclusive claim on an output directory, released on drop.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| LorsError::io(out_dir, e))?;
        let path = out_dir.join(LOCK_FILE);
        let mut f: File = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    invalid(format!(
                        "{} is locked by another run (remove {} if stale)",
                        out_dir.display(),
                        path.display()
                    ))
                } else {
                    LorsError::io(&path, e)
                }
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(OutputLock { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn remove_artifacts(out_dir: &Path) {
    for name in [
        io::EQTLS_FILE,
        io::B_FILE,
        io::L_FILE,
        io::MU_FILE,
        io::TRACE_FILE,
        io::REPORT_FILE,
    ] {
        let _ = fs::remove_file(out_dir.join(name));
    }
}

fn screen(ds: &EqtlDataset, config: &RunConfig) -> Result<ScreeningResult> {
    match config.screening {
        ScreeningMethod::None => Ok(ScreeningResult::keep_all(ds.n_snps())),
        ScreeningMethod::LorsScreening => {
            let keep = config
                .keep_per_gene
                .unwrap_or(ds.n_samples())
                .min(ds.n_snps());
            lors_screening(ds, keep)
        }
        ScreeningMethod::HcScreening => hc_screening(
            ds,
            &HcOptions {
                alpha0: config.hc_alpha0,
                n_permutations: config.hc_permutations,
                seed: config.seed,
                ..Default::default()
            },
        ),
    }
}

fn tune(ds: &EqtlDataset, config: &RunConfig) -> Result<TuningResult> {
    let grid = build_grid(ds, config.grid_rho, config.grid_lambda)?;
    let opts = config.solver_options();
    if config.cross_valid {
        two_fold_cv(ds, &grid, config.seed, config.method, &opts)
    } else {
        let mask = MaskOptions {
            fraction: config.mask_fraction,
            ..Default::default()
        };
        tune_no_cv(ds, &grid, config.seed, config.method, &opts, &mask)
    }
}

/// Runs the full pipeline and writes all artifacts into `config.out`.
///
/// On failure no result files are left behind.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let _lock = OutputLock::acquire(&config.out)?;
    let result = run_stages(config);
    if result.is_err() {
        remove_artifacts(&config.out);
    }
    result
}

fn run_stages(config: &RunConfig) -> Result<PipelineOutcome> {
    let ingested = read_dataset(&config.expr, &config.geno)?;
    let full = ingested.dataset;
    info!(
        "loaded {} samples, {} genes, {} SNPs",
        full.n_samples(),
        full.n_genes(),
        full.n_snps()
    );

    let mut timings = StageTimings::default();
    let t = Instant::now();
    let screened = screen(&full, config)?;
    let ds = subset_dataset(&full, &screened)?;
    timings.screening_seconds = t.elapsed().as_secs_f64();
    info!("screening kept {} of {} SNPs", ds.n_snps(), full.n_snps());

    let (work, genotype_means) = if config.center_genotypes {
        let (c, m) = io::center_genotypes(&ds);
        (c, Some(m))
    } else {
        (ds.clone(), None)
    };

    let t = Instant::now();
    let tuned = tune(&work, config)?;
    timings.tuning_seconds = t.elapsed().as_secs_f64();
    let hp: Hyperparams = tuned.best;
    info!("selected rho = {}, lambda = {}", hp.rho, hp.lambda);

    let t = Instant::now();
    let (mut fit, trace): (ModelFit, _) = solve(config.method, &work, &hp, &config.solver_options())?;
    timings.modeling_seconds = t.elapsed().as_secs_f64();
    if !trace.converged {
        warn!("solver stopped at max_iter = {} before reaching rel_tol", config.max_iter);
    }
    if let Some(means) = &genotype_means {
        io::restore_intercept(&mut fit, means);
    }

    let calls = detect_eqtls(&fit, &ds.gene_ids, &ds.snp_ids);
    let report = Report {
        format_version: RESULTS_FORMAT_VERSION,
        iterations: trace.iterations,
        converged: trace.converged,
        final_objective: trace.final_objective(),
        n_eqtls: calls.len(),
        n_samples: ds.n_samples(),
        n_snps_input: full.n_snps(),
        n_snps_modeled: ds.n_snps(),
        n_genes: ds.n_genes(),
        rho: hp.rho,
        lambda: hp.lambda,
        timings,
        config: serde_json::to_value(config)
            .map_err(|e| LorsError::Computation(format!("config serialization: {e}")))?,
    };
    let artifacts = io::write_results(
        &config.out,
        &RunOutputs {
            dataset: &ds,
            fit: &fit,
            calls: &calls,
            trace: &trace,
            report: &report,
        },
    )?;
    Ok(PipelineOutcome { artifacts, report })
}

/// Writes a simulated scenario as an expression/genotype TSV pair plus ground truth.
pub fn write_simulated(sc: &SimScenario, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (ds, truth) = simulate_dataset(sc)?;
    fs::create_dir_all(out_dir).map_err(|e| LorsError::io(out_dir, e))?;
    let expr = out_dir.join("expression.tsv");
    let geno = out_dir.join("genotypes.tsv");
    io::write_matrix_tsv(&expr, "sample_id", &ds.sample_ids, &ds.gene_ids, &ds.y)?;
    io::write_matrix_tsv(&geno, "sample_id", &ds.sample_ids, &ds.snp_ids, &ds.x)?;
    io::write_matrix_tsv(
        &out_dir.join("true_B.tsv"),
        "snp_id",
        &ds.snp_ids,
        &ds.gene_ids,
        &truth.b,
    )?;
    let scenario = out_dir.join("scenario.json");
    let json = serde_json::to_string_pretty(sc)
        .map_err(|e| LorsError::Computation(format!("scenario serialization: {e}")))?;
    fs::write(&scenario, json + "\n").map_err(|e| LorsError::io(&scenario, e))?;
    Ok((expr, geno))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    /// Minimum timed repetitions per B-step; at least 5. The fastest is reported.
    pub reps: usize,
    /// Also time complete solves of both methods.
    pub whole_solve: bool,
    pub solver: SolverOptions,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 5,
            whole_solve: true,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub rho: f64,
    pub lambda: f64,
    pub lors_bstep_seconds: f64,
    pub fast_bstep_seconds: f64,
    pub bstep_ratio: f64,
    pub lors_iterations: Option<usize>,
    pub fast_iterations: Option<usize>,
    pub lors_solve_seconds: Option<f64>,
    pub fast_solve_seconds: Option<f64>,
    /// A timed step averaged under 1 ms, near timer resolution.
    pub timer_warning: bool,
}

/// Fastest wall time of `f` over at least `reps` calls. Fast calls are
/// repeated until about 250 ms have been spent (at most 200 calls). Machine
/// noise only ever adds time, so the minimum is the steadiest estimate.
fn min_seconds<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut best = f64::INFINITY;
    let mut calls = 0;
    let budget = Instant::now();
    while calls < reps || (calls < 200 && budget.elapsed().as_secs_f64() < 0.25) {
        let start = Instant::now();
        std::hint::black_box(f()?);
        best = best.min(start.elapsed().as_secs_f64());
        calls += 1;
    }
    Ok(best)
}

/// Times the B-step of both methods, and optionally whole solves, on simulated
/// data of each size.
///
/// Data come from the default scenario resized to `(n, p, q)` with centered
/// genotypes. Both B-steps start from the same state: `B = 0`, `mu` = column
/// means, `L` after one L-step. On a 5 x 5 grid, `rho` is the third value and
/// `lambda` the second. With equal grid positions, that first L-step absorbs
/// nearly all of `Y` and the lasso finishes in two sweeps, which says little
/// about a B-step with real work to do.
pub fn run_benchmark(
    sizes: &[(usize, usize, usize)],
    seed: u64,
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() {
        return Err(invalid("benchmark needs at least one size"));
    }
    let reps = opts.reps.max(5);
    let mut rows = Vec::with_capacity(sizes.len());
    for &(n, p, q) in sizes {
        let sc = SimScenario {
            n,
            p,
            q,
            seed,
            ..Default::default()
        };
        let (raw, _) = simulate_dataset(&sc)?;
        let (ds, _) = io::center_genotypes(&raw);
        let grid = build_grid(&ds, 5, 5)?;
        let hp = Hyperparams::new(grid.rho_values[2], grid.lambda_values[1])?;

        let runner = BStepRunner::new(&ds, &hp, &opts.solver)?;
        let mut state = ModelFit::initial(&ds);
        state.l = lors_l_update(&ds, &state, &hp)?;
        let lors_t = min_seconds(reps, || runner.lors(&state))?;
        let fast_t = min_seconds(reps, || runner.fast(&state))?;
        let timer_warning = lors_t < 1e-3 || fast_t < 1e-3;
        if timer_warning {
            warn!("B-step at n={n}, p={p}, q={q} takes under 1 ms; timings are near timer resolution");
        }

        let mut row = BenchRow {
            n,
            p,
            q,
            rho: hp.rho,
            lambda: hp.lambda,
            lors_bstep_seconds: lors_t,
            fast_bstep_seconds: fast_t,
            bstep_ratio: lors_t / fast_t,
            lors_iterations: None,
            fast_iterations: None,
            lors_solve_seconds: None,
            fast_solve_seconds: None,
            timer_warning,
        };
        if opts.whole_solve {
            let (_, lt) = solve(Method::Lors, &ds, &hp, &opts.solver)?;
            let (_, ft) = solve(Method::FastLors, &ds, &hp, &opts.solver)?;
            row.lors_iterations = Some(lt.iterations);
            row.fast_iterations = Some(ft.iterations);
            row.lors_solve_seconds = Some(lt.wall_time_seconds);
            row.fast_solve_seconds = Some(ft.wall_time_seconds);
        }
        info!(
            "n={n} p={p} q={q}: LORS B-step {lors_t:.4}s, Fast-LORS B-step {fast_t:.5}s, ratio {:.1}",
            row.bstep_ratio
        );
        rows.push(row);
    }
    Ok(rows)
}

fn opt_cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

pub fn write_bench_tsv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut out = String::from(
        "n\tp\tq\trho\tlambda\tlors_bstep_seconds\tfast_bstep_seconds\tbstep_ratio\tlors_iterations\tfast_iterations\tlors_solve_seconds\tfast_solve_seconds\ttimer_warning\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.n,
            r.p,
            r.q,
            r.rho,
            r.lambda,
            r.lors_bstep_seconds,
            r.fast_bstep_seconds,
            r.bstep_ratio,
            opt_cell(&r.lors_iterations),
            opt_cell(&r.fast_iterations),
            opt_cell(&r.lors_solve_seconds),
            opt_cell(&r.fast_solve_seconds),
            r.timer_warning,
        ));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LorsError::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| LorsError::io(path, e))
}
