use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fastlors::pipeline::{
    run_benchmark, run_pipeline, write_bench_tsv, write_simulated, BenchOptions, RunConfig,
};
use fastlors::screening::ScreeningMethod;
use fastlors::simulate::SimScenario;
use fastlors::{LorsError, Method, Result};

#[derive(Parser)]
#[command(name = "fastlors", version, about = "Joint sparse + low-rank eQTL mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, screen, tune, fit and write results.
    Run(RunArgs),
    /// Write a simulated expression/genotype TSV pair with ground truth.
    Simulate(SimArgs),
    /// Time the B-step of both solvers over a list of problem sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Start from a config JSON (a bare config or a previous report.json); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    expr: Option<PathBuf>,
    #[arg(long)]
    geno: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// fastlors | lors
    #[arg(long)]
    method: Option<Method>,
    /// hc | lors | none
    #[arg(long)]
    screening: Option<ScreeningMethod>,
    /// Tune by hidden-entry reconstruction instead of two-fold cross-validation.
    #[arg(long)]
    no_cross_valid: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_rho: Option<usize>,
    #[arg(long)]
    grid_lambda: Option<usize>,
    /// SNPs kept per gene by LORS screening (default: number of samples).
    #[arg(long)]
    keep_per_gene: Option<usize>,
    #[arg(long)]
    hc_alpha0: Option<f64>,
    #[arg(long)]
    mask_fraction: Option<f64>,
    /// Fit on raw genotypes instead of centered ones.
    #[arg(long)]
    no_center: bool,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.expr {
            cfg.expr = v;
        }
        if let Some(v) = self.geno {
            cfg.geno = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.screening {
            cfg.screening = v;
        }
        if self.no_cross_valid {
            cfg.cross_valid = false;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.rel_tol {
            cfg.rel_tol = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.grid_rho {
            cfg.grid_rho = v;
        }
        if let Some(v) = self.grid_lambda {
            cfg.grid_lambda = v;
        }
        if self.keep_per_gene.is_some() {
            cfg.keep_per_gene = self.keep_per_gene;
        }
        if let Some(v) = self.hc_alpha0 {
            cfg.hc_alpha0 = v;
        }
        if let Some(v) = self.mask_fraction {
            cfg.mask_fraction = v;
        }
        if self.no_center {
            cfg.center_genotypes = false;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    p: usize,
    #[arg(long, default_value_t = 100)]
    q: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 20)]
    n_causal: usize,
    #[arg(long, default_value_t = 1.0)]
    effect_size: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Problem sizes as n,p,q triples, e.g. `25,500,200 50,500,200`.
    #[arg(long, num_args = 1.., value_parser = parse_size, default_values = ["25,500,200", "50,500,200", "100,500,200"])]
    sizes: Vec<(usize, usize, usize)>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Skip the whole-solve timings.
    #[arg(long)]
    bstep_only: bool,
    #[arg(long, default_value = "bench.tsv")]
    out: PathBuf,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected n,p,q, got '{s}'"));
    }
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    Ok((num(parts[0])?, num(parts[1])?, num(parts[2])?))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let outcome = run_pipeline(&cfg)?;
            let r = &outcome.report;
            println!(
                "{} eQTLs; {} iterations (converged: {}); rho = {}, lambda = {}",
                r.n_eqtls, r.iterations, r.converged, r.rho, r.lambda
            );
            println!(
                "time: screening {:.3}s, tuning {:.3}s, joint modeling {:.3}s",
                r.timings.screening_seconds, r.timings.tuning_seconds, r.timings.modeling_seconds
            );
            for p in &outcome.artifacts {
                println!("wrote {}", p.display());
            }
        }
        Command::Simulate(a) => {
            let sc = SimScenario {
                n: a.n,
                p: a.p,
                q: a.q,
                rank_l: a.rank,
                n_causal: a.n_causal,
                effect_size: a.effect_size,
                noise_sd: a.noise_sd,
                seed: a.seed,
                ..Default::default()
            };
            let (e, g) = write_simulated(&sc, &a.out)?;
            println!("wrote {} and {}", e.display(), g.display());
        }
        Command::Bench(a) => {
            let opts = BenchOptions {
                reps: a.reps,
                whole_solve: !a.bstep_only,
                ..Default::default()
            };
            let rows = run_benchmark(&a.sizes, a.seed, &opts)?;
            write_bench_tsv(&a.out, &rows)?;
            for r in &rows {
                println!(
                    "n={} p={} q={}: B-step ratio {:.1} ({:.4}s / {:.5}s)",
                    r.n, r.p, r.q, r.bstep_ratio, r.lors_bstep_seconds, r.fast_bstep_seconds
                );
            }
            println!("wrote {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &LorsError) -> ExitCode {
    let cat = e.category();
    let msg = serde_json::json!({ "error": cat.as_str(), "message": e.to_string() });
    eprintln!("{msg}");
    ExitCode::from(cat.exit_code() as u8)
}
