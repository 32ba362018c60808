//! TSV ingestion of expression/genotype matrices and result writing.
//!
//! Matrix files are tab-separated with samples in rows: a header line whose first
//! cell names the row-label column, followed by one line per row starting with the
//! row label. Numbers are written with Rust's shortest round-trip formatting.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{LorsError, Result};
use crate::model::{column_means, EqtlDataset, ModelFit};
use crate::prox::RealMatrix;
use crate::solver::{EqtlCall, SolverTrace};

/// Version of the on-disk result layout written to `report.json`.
pub const RESULTS_FORMAT_VERSION: &str = "1.0";

pub const EQTLS_FILE: &str = "eqtls.tsv";
pub const B_FILE: &str = "B.tsv";
pub const L_FILE: &str = "L.tsv";
pub const MU_FILE: &str = "mu.tsv";
pub const TRACE_FILE: &str = "trace.tsv";
pub const REPORT_FILE: &str = "report.json";

/// A parsed matrix file. Missing cells are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: RealMatrix,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "NA" | "-9" | "" | "NaN" | "nan")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> LorsError {
    LorsError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a labeled TSV matrix; missing cells become NaN when `allow_missing`.
pub fn read_matrix_tsv(path: &Path, allow_missing: bool) -> Result<LabeledMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_err(path, 1, "file is empty")),
    };
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if col_labels.is_empty() {
        return Err(parse_err(path, 1, "header has no data columns"));
    }
    let width = col_labels.len();

    let mut row_labels = Vec::new();
    let mut data = Vec::new();
    for (idx, rec) in records.enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != width + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", width + 1, rec.len()),
            ));
        }
        row_labels.push(rec[0].to_owned());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let cell = cell.trim();
            let v = if is_missing(cell) {
                if !allow_missing {
                    return Err(parse_err(
                        path,
                        line,
                        format!("missing value in column '{}'", col_labels[c]),
                    ));
                }
                f64::NAN
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(parse_err(
                            path,
                            line,
                            format!("non-numeric value '{cell}' in column '{}'", col_labels[c]),
                        ))
                    }
                }
            };
            data.push(v);
        }
    }
    if row_labels.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok(LabeledMatrix {
        values: RealMatrix::from_row_slice(row_labels.len(), width, &data),
        row_labels,
        col_labels,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> LorsError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => LorsError::io(path, source),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

/// Replaces NaN entries of each column by the mean of its observed entries.
/// Returns the number of imputed cells.
pub fn impute_column_means(m: &mut RealMatrix) -> Result<usize> {
    let mut imputed = 0;
    for (k, mut col) in m.column_iter_mut().enumerate() {
        let (sum, count) = col
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if count == col.len() {
            continue;
        }
        if count == 0 {
            return Err(crate::error::invalid(format!(
                "genotype column {k} has no observed values"
            )));
        }
        let mean = sum / count as f64;
        for v in col.iter_mut().filter(|v| v.is_nan()) {
            *v = mean;
            imputed += 1;
        }
    }
    Ok(imputed)
}

fn unique_index(labels: &[String], path: &Path) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        if map.insert(label.clone(), i).is_some() {
            return Err(parse_err(path, i + 2, format!("duplicate row label '{label}'")));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: EqtlDataset,
    pub warnings: Vec<String>,
}

/// Loads expression and genotype files, aligning samples on row labels.
///
/// Samples present in both files are kept in expression-file order. Missing
/// genotypes are mean-imputed per SNP; missing expression values are an error.
pub fn read_dataset(expr_path: &Path, geno_path: &Path) -> Result<Ingested> {
    let expr = read_matrix_tsv(expr_path, false)?;
    let geno = read_matrix_tsv(geno_path, true)?;
    unique_index(&expr.row_labels, expr_path)?;
    let geno_index = unique_index(&geno.row_labels, geno_path)?;

    let mut expr_rows = Vec::new();
    let mut geno_rows = Vec::new();
    for (i, label) in expr.row_labels.iter().enumerate() {
        if let Some(&g) = geno_index.get(label) {
            expr_rows.push(i);
            geno_rows.push(g);
        }
    }
    if expr_rows.is_empty() {
        return Err(crate::error::invalid(format!(
            "no overlapping sample labels between {} and {}",
            expr_path.display(),
            geno_path.display()
        )));
    }

    let mut warnings = Vec::new();
    let dropped_expr = expr.row_labels.len() - expr_rows.len();
    let dropped_geno = geno.row_labels.len() - geno_rows.len();
    if dropped_expr > 0 || dropped_geno > 0 {
        warnings.push(format!(
            "kept {} shared samples; dropped {dropped_expr} expression-only and {dropped_geno} genotype-only samples",
            expr_rows.len()
        ));
    }

    let y = expr.values.select_rows(&expr_rows);
    let mut x = geno.values.select_rows(&geno_rows);
    let imputed = impute_column_means(&mut x)?;
    if imputed > 0 {
        warnings.push(format!("mean-imputed {imputed} missing genotype values"));
    }
    for w in &warnings {
        warn!("{w}");
    }

    let sample_ids = expr_rows.iter().map(|&i| expr.row_labels[i].clone()).collect();
    let dataset = EqtlDataset::new(y, x, sample_ids, expr.col_labels, geno.col_labels)?;
    Ok(Ingested { dataset, warnings })
}

/// Column-centered copy of the genotypes plus the removed means.
///
/// Centering only reparameterizes the intercept; see [`restore_intercept`].
pub fn center_genotypes(ds: &EqtlDataset) -> (EqtlDataset, DVector<f64>) {
    let means = column_means(&ds.x);
    let mut out = ds.clone();
    for (k, mut col) in out.x.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[k]);
    }
    (out, means)
}

/// Maps an intercept fitted on centered genotypes back to the raw genotype scale:
/// `mu_raw = mu_centered - B^T xbar`.
pub fn restore_intercept(fit: &mut ModelFit, genotype_means: &DVector<f64>) {
    fit.mu -= fit.b.tr_mul(genotype_means);
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| LorsError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| LorsError::io(path, e))
}

pub fn write_matrix_tsv(
    path: &Path,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &RealMatrix,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| LorsError::io(path, e);
    write!(w, "{corner}").map_err(io)?;
    for c in col_labels {
        write!(w, "\t{c}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (i, label) in row_labels.iter().enumerate() {
        write!(w, "{label}").map_err(io)?;
        for j in 0..m.ncols() {
            write!(w, "\t{}", m[(i, j)]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    finish(w, path)
}

pub fn write_eqtls(path: &Path, calls: &[EqtlCall]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| LorsError::io(path, e);
    writeln!(w, "snp_id\tgene_id\tcoefficient").map_err(io)?;
    for c in calls {
        writeln!(w, "{}\t{}\t{}", c.snp_id, c.gene_id, c.coefficient).map_err(io)?;
    }
    finish(w, path)
}

pub fn write_trace(path: &Path, trace: &SolverTrace) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| LorsError::io(path, e);
    writeln!(w, "iteration\tobjective\trel_change\tstep_kind").map_err(io)?;
    for (k, obj) in trace.objective_values.iter().enumerate() {
        if k == 0 {
            writeln!(w, "0\t{obj}\tNA\tinit").map_err(io)?;
        } else {
            let change = trace.rel_changes.get(k - 1).copied().unwrap_or(f64::NAN);
            let kind = trace.step_kinds.get(k - 1).map(|s| s.as_str()).unwrap_or("NA");
            writeln!(w, "{k}\t{obj}\t{change}\t{kind}").map_err(io)?;
        }
    }
    finish(w, path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct StageTimings {
    pub screening_seconds: f64,
    pub tuning_seconds: f64,
    pub modeling_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub format_version: &'static str,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub n_eqtls: usize,
    pub n_samples: usize,
    pub n_snps_input: usize,
    pub n_snps_modeled: usize,
    pub n_genes: usize,
    pub rho: f64,
    pub lambda: f64,
    pub timings: StageTimings,
    pub config: serde_json::Value,
}

/// Everything a finished run writes to its output directory.
pub struct RunOutputs<'a> {
    pub dataset: &'a EqtlDataset,
    pub fit: &'a ModelFit,
    pub calls: &'a [EqtlCall],
    pub trace: &'a SolverTrace,
    pub report: &'a Report,
}

/// Writes the five result artifacts and returns their paths.
pub fn write_results(out_dir: &Path, out: &RunOutputs<'_>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| LorsError::io(out_dir, e))?;
    let path = |name: &str| out_dir.join(name);
    let ds = out.dataset;

    let eqtls = path(EQTLS_FILE);
    write_eqtls(&eqtls, out.calls)?;

    let b = path(B_FILE);
    write_matrix_tsv(&b, "snp_id", &ds.snp_ids, &ds.gene_ids, &out.fit.b)?;
    let l = path(L_FILE);
    write_matrix_tsv(&l, "sample_id", &ds.sample_ids, &ds.gene_ids, &out.fit.l)?;
    let mu = path(MU_FILE);
    let mu_col = RealMatrix::from_column_slice(out.fit.mu.len(), 1, out.fit.mu.as_slice());
    write_matrix_tsv(&mu, "gene_id", &ds.gene_ids, &["mu".to_owned()], &mu_col)?;

    let trace = path(TRACE_FILE);
    write_trace(&trace, out.trace)?;

    let report = path(REPORT_FILE);
    let mut json = serde_json::to_string_pretty(out.report)
        .map_err(|e| LorsError::Computation(format!("report serialization: {e}")))?;
    json.push('\n');
    fs::write(&report, json).map_err(|e| LorsError::io(&report, e))?;

    Ok(vec![eqtls, b, l, mu, trace, report])
}
