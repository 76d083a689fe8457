//! Argument handling and subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use polyrank::embedding::default_width;
use polyrank::kkt::residual;
use polyrank::rankfact::{coordinate_descent, RankFactOptions};
use polyrank::solver::{default_bounds, init_kernel_svd, init_lambda, setup, DeltaInit};
use polyrank::{
    distance_lower_bound, r_embed, solve, KernelInit, KernelShape, Method, MatrixPolynomial, NormalizationKind,
    PerturbationStructure, PolyVector, SolveOptions, SolveReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::problem_file::{
    parse_bounds, parse_kernel, parse_normalization, parse_problem, read_file, resolve_relative, FileError,
    ProblemFile, StructureChoice,
};
use crate::report::{coefficients, sig6, to_json, SolveSummary, Starts, StructureEcho};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "polyrank", version, about = "Nearby lower-rank matrix polynomials under structured perturbations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Refine a kernel guess into a nearby lower-rank matrix polynomial.
    Solve(SolveArgs),
    /// Print the lower bound on the distance to singularity.
    Bound(CommonArgs),
    /// Evaluate residuals of the DELTA and KERNEL blocks of a problem file.
    Check(CheckArgs),
    /// Penalized rank factorization of the embedding, optionally refined.
    Rankfact(RankfactArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Problem file.
    problem: PathBuf,
    /// Emit a JSON report.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// Number of kernel vectors.
    #[arg(long)]
    rank_drop: Option<usize>,
    /// degree, support, entry-degree or mask:<file>.
    #[arg(long)]
    structure: Option<String>,
    /// pivot, column or monic.
    #[arg(long)]
    normalize: Option<String>,
    /// Kernel degree bound, one value or a comma list with `-` for zero entries.
    #[arg(long)]
    kernel_degree: Option<String>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// svd or file:<path> holding a KERNEL block.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    tol_step: Option<f64>,
    #[arg(long)]
    tol_feas: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Start with the damped iteration.
    #[arg(long)]
    damped: bool,
    /// zero or min-norm.
    #[arg(long)]
    delta_init: Option<String>,
    /// bounds or support: which kernel coefficients may move.
    #[arg(long)]
    kernel_shape: Option<String>,
    /// Add random starting kernels drawn from this seed and keep the best.
    #[arg(long)]
    seed: Option<u64>,
    /// Random starts used with --seed.
    #[arg(long, default_value_t = 8)]
    starts: usize,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// file:<path> holding a KERNEL block, instead of the one in the problem file.
    #[arg(long)]
    init: Option<String>,
}

#[derive(Args, Debug)]
struct RankfactArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Inner dimension of the factorization, `M - 1` by default.
    #[arg(long)]
    rank: Option<usize>,
    /// Penalty weight, `1e3 ‖Â‖²` by default.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Refine the factorization with the kernel solver.
    #[arg(long)]
    refine: bool,
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Model(#[from] polyrank::Error),
    #[error("{0}")]
    Usage(String),
}

fn usage(message: impl Into<String>) -> AppError {
    AppError::Usage(message.into())
}

/// Parsed problem with every model choice resolved.
struct Loaded {
    file: ProblemFile,
    path: PathBuf,
    structure: PerturbationStructure,
    structure_label: String,
    rank_drop: usize,
    bounds: Vec<Option<usize>>,
    normalization: Option<NormalizationKind>,
}

fn load(path: &Path, model: &ModelArgs) -> Result<Loaded, AppError> {
    let file = parse_problem(&read_file(path)?)?;
    let a = &file.a;
    let (choice, origin) = match &model.structure {
        Some(s) => (StructureChoice::parse(s), None),
        None => (file.structure.clone().unwrap_or(StructureChoice::Degree), Some(path)),
    };
    let structure = match &choice {
        StructureChoice::Degree => PerturbationStructure::degree_preserving(a),
        StructureChoice::Support => PerturbationStructure::support_preserving(a),
        StructureChoice::EntryDegree => PerturbationStructure::entry_degree_preserving(a),
        StructureChoice::Mask(p) => {
            let mask = resolve_relative(origin, p);
            PerturbationStructure::parse_mask(a, &read_file(&mask)?)?
        }
    };
    let rank_drop = model.rank_drop.or(file.rank_drop).unwrap_or(1);
    let bounds = match &model.kernel_degree {
        Some(text) => parse_bounds(text, a.n()).ok_or_else(|| usage(format!("invalid --kernel-degree `{text}`")))?,
        None => file.options.kernel_degree.clone().unwrap_or_else(|| default_bounds(a)),
    };
    let normalization = match &model.normalize {
        Some(text) => Some(parse_normalization(text).ok_or_else(|| usage(format!("invalid --normalize `{text}`")))?),
        None => file.options.normalize,
    };
    Ok(Loaded {
        structure_label: choice.label(),
        file,
        path: path.to_path_buf(),
        structure,
        rank_drop,
        bounds,
        normalization,
    })
}

impl Loaded {
    fn echo(&self) -> StructureEcho {
        StructureEcho {
            kind: self.structure_label.clone(),
            free_count: self.structure.free_count(),
            mask: self.structure.to_mask(),
        }
    }

    /// Kernel from `--init file:<path>` or the file's KERNEL block.
    fn given_kernel(&self, init: Option<&str>) -> Result<Option<Vec<PolyVector>>, AppError> {
        match init {
            None => Ok(self.file.kernel.clone()),
            Some("svd") => Ok(None),
            Some(spec) => {
                let path = spec.strip_prefix("file:").ok_or_else(|| usage(format!("invalid --init `{spec}`")))?;
                Ok(Some(parse_kernel(&read_file(Path::new(path))?, self.file.n())?))
            }
        }
    }
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => run_solve(&a, out),
        Command::Bound(a) => run_bound(&a, out),
        Command::Check(a) => run_check(&a, out),
        Command::Rankfact(a) => run_rankfact(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "polyrank: {e}");
            EXIT_USAGE
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, value: &T, text: impl FnOnce() -> String) {
    let _ = if json { writeln!(out, "{}", to_json(value)) } else { write!(out, "{}", text()) };
}

fn solve_options(args: &SolveArgs, loaded: &Loaded) -> Result<SolveOptions, AppError> {
    let o = &loaded.file.options;
    let mut opts = SolveOptions::default();
    if let Some(v) = args.tol_step.or(o.tol_step) {
        opts.tolerances.step = v;
    }
    if let Some(v) = args.tol_feas.or(o.tol_feas) {
        opts.tolerances.feas = v;
    }
    if let Some(v) = args.max_iter.or(o.max_iter) {
        opts.max_iter = v;
    }
    if let Some(v) = loaded.normalization {
        opts.normalization = v;
    }
    if args.damped || o.damped == Some(true) {
        opts.method = Method::Damped;
    }
    let min_norm = match args.delta_init.as_deref() {
        Some("min-norm") => Some(true),
        Some("zero") => Some(false),
        Some(other) => return Err(usage(format!("invalid --delta-init `{other}`"))),
        None => o.min_norm_delta,
    };
    opts.delta_init = match (min_norm, &loaded.file.delta) {
        (Some(true), _) => DeltaInit::MinNorm,
        (Some(false), _) | (None, None) => DeltaInit::Zero,
        (None, Some(d)) => DeltaInit::Given(d.clone()),
    };
    let support = match args.kernel_shape.as_deref() {
        Some("support") => Some(true),
        Some("bounds") => Some(false),
        Some(other) => return Err(usage(format!("invalid --kernel-shape `{other}`"))),
        None => o.kernel_shape_support,
    };
    if support == Some(true) {
        opts.kernel_shape = KernelShape::Support;
    }
    Ok(opts)
}

fn random_kernel(rng: &mut ChaCha8Rng, bounds: &[Option<usize>], r: usize) -> Vec<PolyVector> {
    (0..r)
        .map(|_| {
            PolyVector::new(
                bounds
                    .iter()
                    .map(|b| b.map_or_else(Vec::new, |d| (0..=d).map(|_| StandardNormal.sample(&mut *rng)).collect()))
                    .collect(),
            )
        })
        .collect()
}

/// Runs every start on its own thread and keeps the converged report with
/// the smallest distance, or the first report when none converged.
fn multi_start(
    a: &MatrixPolynomial,
    structure: &PerturbationStructure,
    inits: &[KernelInit],
    opts: &SolveOptions,
) -> Result<(usize, Vec<SolveReport>), AppError> {
    let reports: Vec<polyrank::Result<SolveReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = inits.iter().map(|init| scope.spawn(move || solve(a, structure, init, opts))).collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(reports.len());
    for (i, r) in reports.into_iter().enumerate() {
        match r {
            Ok(rep) => out.push(rep),
            // A malformed user start is an input error; random starts only fail numerically.
            Err(e) if i == 0 => return Err(e.into()),
            Err(e) => {
                log::info!("start {i} rejected: {e}");
                out.push(failed_report(a, &e));
            }
        }
    }
    let best = out
        .iter()
        .enumerate()
        .filter(|(_, r)| r.converged)
        .min_by(|x, y| x.1.distance.total_cmp(&y.1.distance))
        .map_or(0, |(i, _)| i);
    Ok((best, out))
}

fn failed_report(a: &MatrixPolynomial, e: &polyrank::Error) -> SolveReport {
    SolveReport {
        delta_a: MatrixPolynomial::zeros(a.n(), a.degree()),
        kernel: Vec::new(),
        distance: f64::NAN,
        lower_bound: distance_lower_bound(a),
        converged: false,
        iterations: 0,
        first_order_residual: f64::NAN,
        feasibility: f64::NAN,
        normalization_residual: f64::NAN,
        second_order: None,
        failure: Some(e.to_string()),
        history: Vec::new(),
        normalization: polyrank::NormalizationSpec { kind: NormalizationKind::PivotUnit, pivots: Vec::new() },
        pivot_tie: false,
        lambda_init_residual: f64::NAN,
        multipliers: Vec::new(),
    }
}

fn run_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<i32, AppError> {
    let loaded = load(&args.common.problem, &args.model)?;
    let opts = solve_options(args, &loaded)?;
    let first = match loaded.given_kernel(args.init.as_deref())? {
        Some(k) => KernelInit::Given(k),
        None => KernelInit::Svd { rank_drop: loaded.rank_drop, bounds: loaded.bounds.clone() },
    };
    let r = first.rank_drop();
    let mut inits = vec![first];
    if let Some(seed) = args.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        inits.extend((0..args.starts).map(|_| KernelInit::Given(random_kernel(&mut rng, &loaded.bounds, r))));
    }
    let (best, reports) = multi_start(&loaded.file.a, &loaded.structure, &inits, &opts)?;
    let starts = args.seed.map(|seed| Starts {
        seed,
        count: reports.len(),
        converged: reports.iter().filter(|r| r.converged).count(),
        best,
    });
    let report = &reports[best];
    for (i, h) in report.history.iter().enumerate() {
        log::trace!("iteration {} {:?} distance {:.6e} step {:.3e}", i + 1, h.kind, h.distance, h.step_norm);
    }
    let summary = SolveSummary::new(report, loaded.echo(), starts);
    emit(out, args.common.json, &summary, || summary.text());
    Ok(if report.converged { EXIT_OK } else { EXIT_FAILED })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BoundSummary {
    command: &'static str,
    lower_bound: f64,
    sigma_min: f64,
    mu: usize,
}

fn run_bound(args: &CommonArgs, out: &mut dyn Write) -> Result<i32, AppError> {
    let file = parse_problem(&read_file(&args.problem)?)?;
    let e = r_embed(&file.a);
    let summary = BoundSummary {
        command: "bound",
        lower_bound: distance_lower_bound(&file.a),
        sigma_min: e.sigma_min(),
        mu: default_width(&file.a),
    };
    emit(out, args.json, &summary, || {
        format!(
            "{:<24}{}\n{:<24}{}\n{:<24}{}\n",
            "lower bound",
            sig6(summary.lower_bound),
            "sigma min",
            sig6(summary.sigma_min),
            "mu",
            summary.mu
        )
    });
    Ok(EXIT_OK)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CheckSummary {
    command: &'static str,
    distance: f64,
    lower_bound: f64,
    /// `‖(A + ΔA) b_j‖` with the kernel normalized.
    feasibility: f64,
    normalization_residual: f64,
    /// `‖∇_x L‖` with least-squares multipliers.
    first_order_residual: f64,
    conforms: bool,
    structure: StructureEcho,
}

fn run_check(args: &CheckArgs, out: &mut dyn Write) -> Result<i32, AppError> {
    let loaded = load(&args.common.problem, &args.model)?;
    let delta = loaded
        .file
        .delta
        .clone()
        .ok_or_else(|| usage(format!("{} has no DELTA block", loaded.path.display())))?;
    let kernel = loaded
        .given_kernel(args.init.as_deref())?
        .ok_or_else(|| usage(format!("{} has no KERNEL block", loaded.path.display())))?;
    let opts = SolveOptions {
        normalization: loaded.normalization.unwrap_or(NormalizationKind::ColumnUnitNorm),
        delta_init: DeltaInit::Given(delta.clone()),
        ..Default::default()
    };
    let s = setup(&loaded.file.a, &loaded.structure, &KernelInit::Given(kernel), &opts)?;
    let res = residual(&s.x0, &s.problem)?;
    let (_, first_order) = init_lambda(&s.x0, &s.problem)?;
    let summary = CheckSummary {
        command: "check",
        distance: delta.frobenius_norm(),
        lower_bound: distance_lower_bound(&loaded.file.a),
        feasibility: res.kernel_norm(),
        normalization_residual: res.normalization_max(),
        first_order_residual: first_order,
        conforms: loaded.structure.conforms(&delta, 0.0),
        structure: loaded.echo(),
    };
    emit(out, args.common.json, &summary, || {
        let mut t = String::new();
        for (k, v) in [
            ("distance", sig6(summary.distance)),
            ("lower bound", sig6(summary.lower_bound)),
            ("feasibility", sig6(summary.feasibility)),
            ("normalization residual", sig6(summary.normalization_residual)),
            ("first-order residual", sig6(summary.first_order_residual)),
            ("conforms", summary.conforms.to_string()),
            ("structure", summary.structure.kind.clone()),
        ] {
            t.push_str(&format!("{k:<24}{v}\n"));
        }
        t
    });
    Ok(EXIT_OK)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RankfactSummary {
    command: &'static str,
    phi: f64,
    iterations: usize,
    rank: usize,
    rho: f64,
    /// `‖Â − UV‖_F`.
    fit: f64,
    orthogonality_error: f64,
    /// `‖ΔA‖_F` of the structured perturbation read off `UV`.
    distance: f64,
    history: Vec<f64>,
    delta_a: Vec<Vec<Vec<f64>>>,
    refined: Option<SolveSummary>,
}

fn run_rankfact(args: &RankfactArgs, out: &mut dyn Write) -> Result<i32, AppError> {
    let loaded = load(&args.common.problem, &args.model)?;
    let a = &loaded.file.a;
    let opts = RankFactOptions { rank: args.rank, rho: args.rho, max_iter: args.max_iter, ..Default::default() };
    let fit = coordinate_descent(&r_embed(a), &loaded.structure, &opts)?;
    let refined = if args.refine {
        let kernel = init_kernel_svd(&a.add(&fit.delta_a)?, loaded.rank_drop, &loaded.bounds)?;
        let o = SolveOptions {
            normalization: loaded.normalization.unwrap_or(NormalizationKind::PivotUnit),
            delta_init: DeltaInit::Given(fit.delta_a.clone()),
            ..Default::default()
        };
        let r = solve(a, &loaded.structure, &KernelInit::Given(kernel), &o)?;
        Some(SolveSummary::new(&r, loaded.echo(), None))
    } else {
        None
    };
    let summary = RankfactSummary {
        command: "rankfact",
        phi: fit.phi(),
        iterations: fit.iterations(),
        rank: fit.rank,
        rho: fit.rho,
        fit: fit.residual.norm(),
        orthogonality_error: fit.orthogonality_error(),
        distance: fit.delta_a.frobenius_norm(),
        history: fit.history.clone(),
        delta_a: coefficients(&fit.delta_a),
        refined,
    };
    emit(out, args.common.json, &summary, || {
        let mut t = String::new();
        for (k, v) in [
            ("phi", sig6(summary.phi)),
            ("iterations", summary.iterations.to_string()),
            ("rank", summary.rank.to_string()),
            ("rho", sig6(summary.rho)),
            ("fit", sig6(summary.fit)),
            ("orthogonality error", sig6(summary.orthogonality_error)),
            ("distance", sig6(summary.distance)),
        ] {
            t.push_str(&format!("{k:<24}{v}\n"));
        }
        if let Some(r) = &summary.refined {
            t.push_str("refined:\n");
            t.push_str(&r.text());
        }
        t
    });
    Ok(match &summary.refined {
        Some(r) if !r.converged => EXIT_FAILED,
        _ => EXIT_OK,
    })
}
