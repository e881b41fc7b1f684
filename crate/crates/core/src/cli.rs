//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification failed, 2 I/O or file-format
//! failure, 3 shape error, 4 numeric error, 5 empty candidate search,
//! 64 invalid arguments.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::complexity::{enumerate_candidates_with, flops_reduction, select_configuration, SearchBudget};
use crate::decompose::{gkpd_solve, FactorShapePair, GkpdDecomposition};
use crate::error::Error;
use crate::kronconv::{conv2d_direct, conv2d_direct_counted, kron_conv_sum_forward_counted, ConvFactorPair, ConvGeometry};
use crate::report::{Report, TensorReport};
use crate::tensor_file::{encode, read_tensor_file, Dtype, TensorFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SHAPE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_EMPTY_SEARCH: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

/// Deviation thresholds for `verify`.
pub const VERIFY_TOL_F64: f64 = 1e-9;
pub const VERIFY_TOL_F32: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "gkpd", version, about = "Kronecker product decomposition of convolution tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decompose a tensor into a sum of Kronecker products.
    Decompose(DecomposeArgs),
    /// Rebuild a tensor from Kronecker factor files.
    Reconstruct(ReconstructArgs),
    /// Enumerate factor configurations under a budget and rank them by error.
    Analyze(AnalyzeArgs),
    /// Check that the factorized convolution reproduces the dense one.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// Input tensor file.
    #[arg(long)]
    input: PathBuf,
    /// Shape of factor A, e.g. 8,4,1,1. Derived from --shape-b if omitted.
    #[arg(long, value_parser = parse_dims)]
    shape_a: Option<Dims>,
    /// Shape of factor B. Derived from --shape-a if omitted.
    #[arg(long, value_parser = parse_dims)]
    shape_b: Option<Dims>,
    /// Number of Kronecker terms.
    #[arg(long, default_value_t = 1)]
    r_hat: usize,
    /// Output directory for factor files and the report.
    #[arg(long)]
    out: PathBuf,
    /// Scalar type of the written factor files.
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    dtype: Dtype,
    /// Write the report as JSON (report.json) instead of text (report.txt).
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct FactorFiles {
    /// Directory written by `decompose` (reads a_*.tensor and b_*.tensor).
    #[arg(long, conflicts_with_all = ["factors_a", "factors_b"])]
    from: Option<PathBuf>,
    /// A factor files, one per term.
    #[arg(long, num_args = 1..)]
    factors_a: Vec<PathBuf>,
    /// B factor files, one per term, in the same order as --factors-a.
    #[arg(long, num_args = 1..)]
    factors_b: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[command(flatten)]
    factors: FactorFiles,
    /// Output tensor file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    dtype: Dtype,
    /// Name stored in the output header.
    #[arg(long, default_value = "reconstructed")]
    name: String,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Input tensor files (4-D, [F, C, Kh, Kw]); one report section each.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    /// Keep configurations with at least this FLOPs reduction.
    #[arg(long, default_value_t = 0.0)]
    target_flops_reduction: f64,
    /// Keep configurations with at least this parameter compression.
    #[arg(long, default_value_t = 0.0)]
    min_compression: f64,
    /// Largest number of Kronecker terms to consider.
    #[arg(long, default_value_t = 4)]
    r_hat_max: usize,
    /// Emit JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Dense weight tensor [F, C, Kh, Kw].
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    factors: FactorFiles,
    /// Input activation tensor [C, H, W].
    #[arg(long)]
    input: PathBuf,
    /// Stride as h,w.
    #[arg(long, default_value = "1,1", value_parser = parse_pair)]
    stride: (usize, usize),
    /// Zero padding as h,w.
    #[arg(long, default_value = "0,0", value_parser = parse_pair)]
    pad: (usize, usize),
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

/// A comma-separated shape such as `8,4,1,1`.
#[derive(Clone, Debug)]
struct Dims(Vec<usize>);

fn parse_dims(s: &str) -> Result<Dims, String> {
    parse_usize_list(s).map(Dims)
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    match *parse_usize_list(s)?.as_slice() {
        [a] => Ok((a, a)),
        [a, b] => Ok((a, b)),
        _ => Err(format!("expected h,w, got {s:?}")),
    }
}

fn parse_dtype(s: &str) -> Result<Dtype, String> {
    s.parse::<Dtype>().map_err(|e| e.to_string())
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Format(_) => EXIT_IO,
            Error::Shape { .. } => EXIT_SHAPE,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Parameter(_) => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load(path: &Path) -> Result<TensorFile, Failure> {
    read_tensor_file(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

/// Runs the CLI with explicit arguments and output streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Decompose(a) => cmd_decompose(&a, out),
        Command::Reconstruct(a) => cmd_reconstruct(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Writes every `(path, bytes)` or none: on failure, files already
/// written are removed.
fn write_all_or_nothing(files: &[(PathBuf, Vec<u8>)]) -> Result<(), Failure> {
    let mut written = Vec::new();
    for (path, bytes) in files {
        if let Err(e) = fs::write(path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(Failure {
                code: EXIT_IO,
                message: format!("{}: {e}", path.display()),
            });
        }
        written.push(path.clone());
    }
    Ok(())
}

fn factor_file_name(which: char, r: usize) -> String {
    format!("{which}_{r:03}.tensor")
}

fn cmd_decompose(args: &DecomposeArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let input = load(&args.input)?;
    let w = &input.tensor;
    let pair = match (&args.shape_a, &args.shape_b) {
        (Some(a), Some(b)) => {
            let pair = FactorShapePair::new(a.0.clone(), b.0.clone())?;
            pair.validate_for(w.shape())?;
            pair
        }
        (Some(a), None) => FactorShapePair::from_shape_a(w.shape(), &a.0)?,
        (None, Some(b)) => FactorShapePair::from_shape_b(w.shape(), &b.0)?,
        (None, None) => {
            return Err(Failure {
                code: EXIT_USAGE,
                message: "at least one of --shape-a / --shape-b is required".into(),
            })
        }
    };
    let d = gkpd_solve(w, &pair, args.r_hat)?;

    let mut files = Vec::new();
    for (r, (a, b)) in d.factors_a.iter().zip(&d.factors_b).enumerate() {
        for (which, t) in [('a', a), ('b', b)] {
            let file = TensorFile::new(format!("{}.{which}{r}", input.name), args.dtype, t.clone());
            files.push((args.out.join(factor_file_name(which, r)), encode(&file)?));
        }
    }
    let report = single_row_report(&input.name, w.norm(), &d)?;
    let (report_name, report_body) = if args.json {
        ("report.json", report.to_json())
    } else {
        ("report.txt", report.to_text())
    };
    files.push((args.out.join(report_name), report_body.clone().into_bytes()));

    let created_dir = !args.out.exists();
    fs::create_dir_all(&args.out).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", args.out.display()),
    })?;
    if let Err(f) = write_all_or_nothing(&files) {
        if created_dir {
            let _ = fs::remove_dir(&args.out);
        }
        return Err(f);
    }
    let _ = out.write_all(report_body.as_bytes());
    Ok(EXIT_OK)
}

fn single_row_report(name: &str, norm: f64, d: &GkpdDecomposition) -> Result<Report, Failure> {
    let mut c = crate::complexity::ConfigCandidate::new(&d.pair, d.r_hat)?;
    c.error = Some(d.achieved_error);
    c.relative_error = Some(if norm > 0.0 { d.achieved_error / norm } else { 0.0 });
    Ok(Report::new(vec![TensorReport::from_sorted(
        name,
        &d.target_shape,
        norm,
        0.0,
        0.0,
        &[c],
    )]))
}

fn factor_paths(f: &FactorFiles) -> Result<(Vec<PathBuf>, Vec<PathBuf>), Failure> {
    if let Some(dir) = &f.from {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for r in 0.. {
            let (pa, pb) = (dir.join(factor_file_name('a', r)), dir.join(factor_file_name('b', r)));
            if !pa.exists() && !pb.exists() {
                break;
            }
            a.push(pa);
            b.push(pb);
        }
        if a.is_empty() {
            return Err(Failure {
                code: EXIT_IO,
                message: format!("{}: no factor files found", dir.display()),
            });
        }
        return Ok((a, b));
    }
    if f.factors_a.is_empty() || f.factors_a.len() != f.factors_b.len() {
        return Err(Failure {
            code: EXIT_USAGE,
            message: format!(
                "need --from or equally many --factors-a and --factors-b (got {} and {})",
                f.factors_a.len(),
                f.factors_b.len()
            ),
        });
    }
    Ok((f.factors_a.clone(), f.factors_b.clone()))
}

/// Loads factor files; the flag is set if any of them holds f32 data.
fn load_factors(f: &FactorFiles) -> Result<(GkpdDecomposition, bool), Failure> {
    let (pa, pb) = factor_paths(f)?;
    let mut any_f32 = false;
    let mut load_all = |paths: &[PathBuf]| -> Result<Vec<_>, Failure> {
        paths
            .iter()
            .map(|p| {
                let t = load(p)?;
                any_f32 |= t.dtype == Dtype::F32;
                Ok(t.tensor)
            })
            .collect()
    };
    let a = load_all(&pa)?;
    let b = load_all(&pb)?;
    Ok((GkpdDecomposition::from_factors(a, b)?, any_f32))
}

fn cmd_reconstruct(args: &ReconstructArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (d, _) = load_factors(&args.factors)?;
    let w = d.reconstruct();
    let file = TensorFile::new(args.name.clone(), args.dtype, w);
    write_all_or_nothing(&[(args.out.clone(), encode(&file)?)])?;
    let _ = writeln!(
        out,
        "wrote {} shape={} terms={}",
        args.out.display(),
        crate::report::join(&d.target_shape),
        d.r_hat
    );
    Ok(EXIT_OK)
}

fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if args.r_hat_max == 0 {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "--r-hat-max must be at least 1".into(),
        });
    }
    let budget = SearchBudget {
        min_flops_reduction: args.target_flops_reduction,
        min_memory_reduction: args.min_compression,
        r_hat_range: 1..=args.r_hat_max,
    };
    let mut sections = Vec::new();
    for path in &args.input {
        let file = load(path)?;
        let w = &file.tensor;
        let candidates = enumerate_candidates_with(w.shape(), &budget)?;
        if candidates.is_empty() {
            return Err(Failure {
                code: EXIT_EMPTY_SEARCH,
                message: format!(
                    "{}: no configuration of shape {} reaches FLOPs reduction {} and compression {} with r_hat <= {}",
                    path.display(),
                    crate::report::join(w.shape()),
                    args.target_flops_reduction,
                    args.min_compression,
                    args.r_hat_max
                ),
            });
        }
        let selection = select_configuration(w, &candidates)?;
        sections.push(TensorReport::from_sorted(
            &file.name,
            w.shape(),
            w.norm(),
            args.target_flops_reduction,
            args.min_compression,
            &selection.candidates,
        ));
    }
    let report = Report::new(sections);
    let body = if args.json { report.to_json() } else { report.to_text() };
    let _ = out.write_all(body.as_bytes());
    Ok(EXIT_OK)
}

fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let weights = load(&args.weights)?;
    let input = load(&args.input)?;
    let (d, factors_f32) = load_factors(&args.factors)?;
    if d.target_shape.as_slice() != weights.tensor.shape() {
        return Err(Error::shape(format!(
            "factors describe shape {:?}, weights have shape {:?}",
            d.target_shape,
            weights.tensor.shape()
        ))
        .into());
    }
    let g = ConvGeometry::new(args.stride, args.pad)?;
    let pairs = ConvFactorPair::from_decomposition(&d)?;
    let (y_kron, macs_kron) = kron_conv_sum_forward_counted(&pairs, &input.tensor, &g)?;
    let (y_direct, macs_direct) = conv2d_direct_counted(&weights.tensor, &input.tensor, &g)?;
    let y_recon = conv2d_direct(&d.reconstruct(), &input.tensor, &g)?;
    let deviation = y_kron.max_abs_diff(&y_direct)?;
    let equivalence = y_kron.max_abs_diff(&y_recon)?;
    let any_f32 = factors_f32 || weights.dtype == Dtype::F32 || input.dtype == Dtype::F32;
    let tol = if any_f32 { VERIFY_TOL_F32 } else { VERIFY_TOL_F64 };
    let ok = deviation <= tol;

    let _ = writeln!(out, "terms: {}", d.r_hat);
    let _ = writeln!(out, "shape_a: {}", crate::report::join(&d.pair.shape_a));
    let _ = writeln!(out, "shape_b: {}", crate::report::join(&d.pair.shape_b));
    let _ = writeln!(out, "max_abs_deviation: {deviation:.6e}");
    let _ = writeln!(out, "reconstructed_weight_deviation: {equivalence:.6e}");
    let _ = writeln!(out, "threshold: {tol:e}");
    let _ = writeln!(out, "macs_direct: {macs_direct}");
    let _ = writeln!(out, "macs_kron: {macs_kron}");
    let _ = writeln!(out, "mac_ratio: {:.6}", macs_direct as f64 / macs_kron as f64);
    let _ = writeln!(out, "flops_reduction_formula: {:.6}", flops_reduction(&d.pair, d.r_hat)?);
    let _ = writeln!(out, "status: {}", if ok { "ok" } else { "FAILED" });
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY_FAILED })
}
