//! End-to-end experiment driver: read, preprocess, build patterns, factor,
//! solve with the right-preconditioned BiCGSTAB and report metrics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{diaf_q, diaf_s, FactorPair, StabilizationPolicy};
use crate::krylov::{bicgstab, cond_estimate, factor_v, BlockShape, FactoredInverse, SolveStatus, VFactorization};
use crate::patterns::{neumann_pattern, select_v_pattern, DropRule, NeumannConfig};
use crate::preprocess::{block_pattern, preprocess, shape_part_of, BlockStructure, PatternShape, Preprocessed};
use crate::sparse::{read_matrix_market, SparseMatrix, SubspacePattern};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DiafQ,
    DiafS,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VShape {
    BlockDiag,
    BlockUpper,
}

impl VShape {
    fn pattern_shape(self) -> PatternShape<'static> {
        match self {
            VShape::BlockDiag => PatternShape::BlockDiagonal,
            VShape::BlockUpper => PatternShape::BlockUpperTriangular,
        }
    }

    fn block_shape(self) -> BlockShape {
        match self {
            VShape::BlockDiag => BlockShape::BlockDiagonal,
            VShape::BlockUpper => BlockShape::BlockUpperTriangular,
        }
    }
}

/// Whether DIAF-Q pins small diagonals of `V`. `auto` stabilizes only with
/// a block upper triangular `V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stabilize {
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{x} is not in [0, 1]"))
    }
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{x} must be positive"))
    }
}

fn nonnegative(s: &str) -> std::result::Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{x} must be nonnegative"))
    }
}

/// Parameters of one experiment. Defaults follow the published protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Args)]
pub struct ExperimentConfig {
    /// Matrix Market file (set per run by the CLI).
    #[arg(skip)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::DiafQ)]
    pub method: Method,
    #[arg(long, value_enum, default_value_t = VShape::BlockDiag)]
    pub v_shape: VShape,
    /// Largest diagonal block of V.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_block: u64,
    /// Entries kept per column of V; omitted means the shape part of A.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub kv: Option<u64>,
    /// Number of Neumann terms for the pattern of W.
    #[arg(long, default_value_t = 3)]
    pub neumann_k: usize,
    #[arg(long, default_value_t = 0.1, value_parser = unit_interval)]
    pub tau_i: f64,
    #[arg(long, default_value_t = 0)]
    pub p_i: usize,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub tau_l: f64,
    #[arg(long, default_value_t = 0)]
    pub p_l: usize,
    #[arg(long, value_enum, default_value_t = Stabilize::Auto)]
    pub stabilize: Stabilize,
    #[arg(long, default_value_t = 1e-2, value_parser = nonnegative)]
    pub stab_threshold: f64,
    #[arg(long, default_value_t = 2.0, value_parser = positive)]
    pub stab_r: f64,
    /// Ruiz equilibration sweeps.
    #[arg(long, default_value_t = 20)]
    pub equil_sweeps: usize,
    #[arg(long, default_value_t = 1e-8, value_parser = positive)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub maxit: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            matrix: PathBuf::new(),
            method: Method::DiafQ,
            v_shape: VShape::BlockDiag,
            max_block: 50,
            kv: None,
            neumann_k: 3,
            tau_i: 0.1,
            p_i: 0,
            tau_l: 0.0,
            p_l: 0,
            stabilize: Stabilize::Auto,
            stab_threshold: 1e-2,
            stab_r: 2.0,
            equil_sweeps: 20,
            tol: 1e-8,
            maxit: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_block == 0 {
            return bad("max-block must be at least 1");
        }
        if self.kv == Some(0) {
            return bad("kv must be at least 1");
        }
        if self.maxit == 0 {
            return bad("maxit must be at least 1");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol must lie in (0, 1)");
        }
        self.neumann()?;
        self.policy()?;
        Ok(())
    }

    pub fn neumann(&self) -> Result<NeumannConfig> {
        Ok(NeumannConfig {
            k: self.neumann_k,
            initial_drop: DropRule::new(self.tau_i, self.p_i)?,
            level_drop: DropRule::new(self.tau_l, self.p_l)?,
        })
    }

    pub fn policy(&self) -> Result<StabilizationPolicy> {
        let enabled = match self.stabilize {
            Stabilize::On => true,
            Stabilize::Off => false,
            Stabilize::Auto => self.v_shape == VShape::BlockUpper,
        };
        let p = StabilizationPolicy {
            enabled,
            threshold: self.stab_threshold,
            r: self.stab_r,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Outcome of a run; the solver statuses plus a pipeline failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    NoConvergence,
    Breakdown,
    Failed,
}

impl From<SolveStatus> for RunStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => RunStatus::Converged,
            SolveStatus::NoConvergence => RunStatus::NoConvergence,
            SolveStatus::Breakdown => RunStatus::Breakdown,
        }
    }
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::Failed => 1,
            RunStatus::NoConvergence => 2,
            RunStatus::Breakdown => 3,
        }
    }
}

/// One line of the results table. Times are in seconds; metrics of stages
/// that did not run are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub problem: String,
    pub n: usize,
    pub nnz: usize,
    pub max_block: usize,
    pub n_blocks: usize,
    pub rho: Option<f64>,
    pub kappa_v: Option<f64>,
    pub nrm: Option<f64>,
    pub its: usize,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub stab_count: usize,
    pub relative_residual: Option<f64>,
    pub true_relative_residual: Option<f64>,
    pub solution_error: Option<f64>,
    pub t_read: f64,
    pub t_preprocess: f64,
    pub t_patterns: f64,
    pub t_factor: f64,
    pub t_factor_v: f64,
    pub t_solve: f64,
}

impl ResultRow {
    fn empty(problem: String) -> Self {
        Self {
            problem,
            n: 0,
            nnz: 0,
            max_block: 0,
            n_blocks: 0,
            rho: None,
            kappa_v: None,
            nrm: None,
            its: 0,
            status: RunStatus::Failed,
            failed_stage: None,
            error: None,
            stab_count: 0,
            relative_residual: None,
            true_relative_residual: None,
            solution_error: None,
            t_read: 0.0,
            t_preprocess: 0.0,
            t_patterns: 0.0,
            t_factor: 0.0,
            t_factor_v: 0.0,
            t_solve: 0.0,
        }
    }

    fn fail(mut self, stage: &str, e: Error) -> Self {
        self.status = RunStatus::Failed;
        self.failed_stage = Some(stage.to_string());
        self.error = Some(e.to_string());
        self
    }
}

/// Everything the pipeline built, for inspection after a run.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub preprocessed: Preprocessed,
    pub w_pattern: SubspacePattern,
    pub v_pattern: SubspacePattern,
    pub factors: FactorPair,
    pub v_factor: VFactorization,
    /// Solution in the original coordinates.
    pub solution: Vec<f64>,
}

/// `(nz(W) + nz(L_V) + nz(U_V)) / nz(A)`.
pub fn density(a_nnz: usize, w: &SparseMatrix, vf: &VFactorization) -> f64 {
    (w.nnz() + vf.factor_nnz()) as f64 / a_nnz as f64
}

/// Patterns of `W` and `V` for a preprocessed matrix.
///
/// Without `kv`, `V` takes the structure of `A` inside the chosen block
/// shape and `W` comes from the Neumann heuristic with a diagonal `V₀`.
/// With `kv`, `V₀` is the full block shape and `V` keeps the `kv` best
/// positions per column.
pub fn build_patterns(
    b: &SparseMatrix,
    blocks: &BlockStructure,
    cfg: &ExperimentConfig,
) -> Result<(SubspacePattern, SubspacePattern)> {
    let n = b.n_cols();
    let neumann = cfg.neumann()?;
    let shape = cfg.v_shape.pattern_shape();
    match cfg.kv {
        None => {
            let w = neumann_pattern(b, &SubspacePattern::diagonal(n), &BlockStructure::singletons(n), &neumann)?;
            let v = shape_part_of(b, blocks, shape);
            Ok((w, v))
        }
        Some(kv) => {
            let v0 = block_pattern(blocks, shape);
            let w = neumann_pattern(b, &v0, blocks, &neumann)?;
            let v = select_v_pattern(b, &w, &v0, kv as usize)?;
            Ok((w, v))
        }
    }
}

fn problem_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Runs the configured matrix file through the whole pipeline.
pub fn run_experiment(cfg: &ExperimentConfig) -> ResultRow {
    let name = problem_name(&cfg.matrix);
    let t = Instant::now();
    let a = match read_matrix_market(&cfg.matrix) {
        Ok(a) => a,
        Err(e) => return ResultRow::empty(name).fail("read", e),
    };
    let t_read = t.elapsed().as_secs_f64();
    let (mut row, _) = run_on_matrix(&name, &a, cfg);
    row.t_read = t_read;
    row
}

/// Runs an in-memory matrix through the pipeline; artifacts are returned
/// when every stage succeeded.
pub fn run_on_matrix(name: &str, a: &SparseMatrix, cfg: &ExperimentConfig) -> (ResultRow, Option<Artifacts>) {
    let mut row = ResultRow::empty(name.to_string());
    row.n = a.n_cols();
    row.nnz = a.nnz();
    if let Err(e) = cfg.validate() {
        return (row.fail("config", e), None);
    }
    if !a.is_square() || a.n_cols() == 0 {
        let e = Error::DimensionMismatch(format!("matrix is {}x{}", a.n_rows(), a.n_cols()));
        return (row.fail("read", e), None);
    }

    macro_rules! stage {
        ($name:literal, $field:ident, $e:expr) => {{
            let t = Instant::now();
            let r = $e;
            row.$field = t.elapsed().as_secs_f64();
            match r {
                Ok(v) => v,
                Err(e) => return (row.fail($name, e), None),
            }
        }};
    }

    let pre = stage!("preprocess", t_preprocess, preprocess(a, cfg.max_block as usize, cfg.equil_sweeps));
    row.max_block = pre.blocks.max_block();
    row.n_blocks = pre.blocks.n_blocks();
    let b = &pre.matrix;

    let (w_pattern, v_pattern) = stage!("patterns", t_patterns, build_patterns(b, &pre.blocks, cfg));
    let factors = stage!(
        "factor",
        t_factor,
        match cfg.method {
            Method::DiafQ => cfg.policy().and_then(|p| diaf_q(b, &w_pattern, &v_pattern, &p)),
            Method::DiafS => diaf_s(b, &w_pattern, &v_pattern),
        }
    );
    row.nrm = Some(factors.nrm);
    row.stab_count = factors.stab_count;
    let v_factor = stage!("factor_v", t_factor_v, factor_v(&factors.v, &pre.blocks, cfg.v_shape.block_shape()));
    row.rho = Some(density(a.nnz(), &factors.w, &v_factor));
    row.kappa_v = Some(cond_estimate(&v_factor));

    let t = Instant::now();
    let rhs = pre.transform_rhs(&a.spmv(&vec![1.0; a.n_cols()]));
    let precond = FactoredInverse {
        w: &factors.w,
        v: &v_factor,
    };
    let (y, report) = bicgstab(b, &rhs, &precond, cfg.tol, cfg.maxit as usize);
    row.t_solve = t.elapsed().as_secs_f64();
    let solution = pre.recover_solution(&y);
    row.its = report.iterations;
    row.status = report.status.into();
    row.relative_residual = Some(report.relative_residual);
    row.true_relative_residual = Some(report.true_relative_residual);
    row.solution_error = Some(solution.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max));

    let artifacts = Artifacts {
        preprocessed: pre,
        w_pattern,
        v_pattern,
        factors,
        v_factor,
        solution,
    };
    (row, Some(artifacts))
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    config: ExperimentConfig,
    rows: Vec<ResultRow>,
}

/// Writes the rows as CSV (header plus one line per row) or as JSON with
/// the configuration echoed.
pub fn write_report(
    rows: &[ResultRow],
    config: &ExperimentConfig,
    format: ReportFormat,
    out: &mut dyn Write,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no rows to report".into()));
    }
    let err = |e: &dyn std::fmt::Display| Error::Report(e.to_string());
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r).map_err(|e| err(&e))?;
            }
            w.flush().map_err(|e| err(&e))?;
        }
        ReportFormat::Json => {
            let report = JsonReport {
                config: config.clone(),
                rows: rows.to_vec(),
            };
            serde_json::to_writer_pretty(&mut *out, &report).map_err(|e| err(&e))?;
            writeln!(out).map_err(|e| err(&e))?;
        }
    }
    Ok(())
}

/// [`write_report`] into a file.
pub fn emit_report(rows: &[ResultRow], config: &ExperimentConfig, format: ReportFormat, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write_report(rows, config, format, &mut file)?;
    file.flush().map_err(io)
}

/// Parses a JSON report back into its configuration and rows.
pub fn read_json_report(text: &str) -> Result<(ExperimentConfig, Vec<ResultRow>)> {
    let r: JsonReport = serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))?;
    Ok((r.config, r.rows))
}
