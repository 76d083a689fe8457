//! Kernel post-refinement driver.
//!
//! The pipeline builds a starting kernel (SVD or user supplied), normalizes
//! it, lays out the unknowns, estimates multipliers by least squares and then
//! iterates Newton-type steps on the first-order conditions of
//! `min ‖ΔA‖_F²` subject to `(A + ΔA) b_j = 0` and one normalization per column.

mod init;
mod steps;

pub use init::{
    cref_reduce, default_bounds, init_kernel_svd, init_lambda, make_primitive, min_norm_delta, sylvester_sigma_min,
    KernelSpec,
};
pub use steps::{
    damped_step, merit, newton_step, regularized_step, Damping, IterationRecord, SolverState, StepKind,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::embedding::{distance_lower_bound, KernelPattern};
use crate::error::{Error, Result};
use crate::kkt::{check_second_order, grad_lagrangian, residual, Problem, SecondOrderReport, SecondOrderStatus};
use crate::polycore::{MatrixPolynomial, PolyVector};
use crate::structure::{select_pivots, NormalizationKind, NormalizationSpec, PerturbationStructure, Pivot};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Stop once `‖(Δx, Δλ)‖_2` falls to this size.
    pub step: f64,
    /// Required `‖(A + ΔA) b_j‖` and normalization accuracy.
    pub feas: f64,
    /// Required `‖∇L‖_∞`.
    pub kkt: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            step: 1e-12,
            feas: 1e-10,
            kkt: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Plain Newton for a single kernel vector, regularized Newton otherwise.
    Auto,
    Newton,
    Regularized,
    /// Damped phase until steps are small, then `Auto`.
    Damped,
}

/// Starting perturbation.
#[derive(Clone, Debug, PartialEq)]
pub enum DeltaInit {
    Zero,
    /// Smallest structured perturbation that makes the starting kernel exact.
    MinNorm,
    Given(MatrixPolynomial),
}

/// Which kernel coefficients the iteration may move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// Every coefficient up to each entry's degree bound.
    #[default]
    Bounds,
    /// Only coefficients that are nonzero in the starting kernel.
    Support,
}

/// Starting kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelInit {
    /// SVD of the embedding restricted to the given per-entry degree bounds.
    Svd { rank_drop: usize, bounds: Vec<Option<usize>> },
    /// Kernel vectors whose stored shapes are the degree bounds.
    Given(Vec<PolyVector>),
}

impl KernelInit {
    pub fn rank_drop(&self) -> usize {
        match self {
            Self::Svd { rank_drop, .. } => *rank_drop,
            Self::Given(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tolerances: Tolerances,
    pub max_iter: usize,
    /// Consecutive step-norm increases tolerated before declaring divergence.
    pub patience: usize,
    pub method: Method,
    pub delta_init: DeltaInit,
    pub normalization: NormalizationKind,
    /// Pivots per column; chosen automatically when absent.
    pub pivots: Option<Vec<Pivot>>,
    /// Least-squares residual of the multiplier estimate above which a warning is logged.
    pub lambda_warn: f64,
    pub damping: Damping,
    pub kernel_shape: KernelShape,
    /// Relative tolerance of the approximate GCD that removes kernel content.
    pub primitive_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            max_iter: 100,
            patience: 5,
            method: Method::Auto,
            delta_init: DeltaInit::Zero,
            normalization: NormalizationKind::PivotUnit,
            pivots: None,
            lambda_warn: 1e-2,
            damping: Damping::default(),
            kernel_shape: KernelShape::Bounds,
            primitive_tol: 1e-8,
        }
    }
}

/// Outcome of [`solve`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub delta_a: MatrixPolynomial,
    pub kernel: Vec<PolyVector>,
    pub distance: f64,
    pub lower_bound: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `‖∇L‖_∞` at the final iterate.
    pub first_order_residual: f64,
    /// Largest `‖(A + ΔA) b_j‖_2` over the kernel columns.
    pub feasibility: f64,
    /// Largest normalization residual.
    pub normalization_residual: f64,
    pub second_order: Option<SecondOrderReport>,
    pub failure: Option<String>,
    pub history: Vec<IterationRecord>,
    pub normalization: NormalizationSpec,
    pub pivot_tie: bool,
    /// Residual of the initial multiplier least-squares problem.
    pub lambda_init_residual: f64,
    pub multipliers: Vec<f64>,
}

impl SolveReport {
    /// Norms of the accepted steps, in order.
    pub fn step_norms(&self) -> Vec<f64> {
        self.history
            .iter()
            .filter(|h| h.kind != StepKind::Rejected)
            .map(|h| h.step_norm)
            .collect()
    }
}

fn normalize_columns(columns: &mut [PolyVector], spec: &NormalizationSpec) -> Result<()> {
    for (c, b) in columns.iter_mut().enumerate() {
        let scale = match spec.kind {
            NormalizationKind::ColumnUnitNorm => b.norm(),
            NormalizationKind::PivotUnit => {
                let p = spec.pivots[c];
                b.entry(p.entry).get(p.coeff).copied().unwrap_or(0.0)
            }
            NormalizationKind::MonicPivot => {
                let p = spec.pivots[c];
                b.entry(p.entry).last().copied().unwrap_or(0.0)
            }
        };
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::InvalidPivot(format!("normalizing coefficient of column {c} is zero")));
        }
        *b = b.scale(1.0 / scale);
    }
    Ok(())
}

fn choose_normalization(columns: &[PolyVector], options: &SolveOptions) -> Result<(NormalizationSpec, bool)> {
    if let Some(p) = &options.pivots {
        if p.len() != columns.len() {
            return Err(Error::InvalidPivot(format!("{} pivots for {} columns", p.len(), columns.len())));
        }
        return Ok((
            NormalizationSpec {
                kind: options.normalization,
                pivots: p.clone(),
            },
            false,
        ));
    }
    let candidates: Vec<Vec<Vec<f64>>> = match options.normalization {
        NormalizationKind::MonicPivot => columns
            .iter()
            .map(|b| {
                // Only leading coefficients can be made monic.
                b.entries()
                    .iter()
                    .map(|e| {
                        let mut v = vec![0.0; e.len()];
                        if let Some(&last) = e.last() {
                            *v.last_mut().expect("nonempty") = last;
                        }
                        v
                    })
                    .collect()
            })
            .collect(),
        _ => columns.iter().map(|b| b.entries().to_vec()).collect(),
    };
    let choice = select_pivots(&candidates)?;
    Ok((
        NormalizationSpec {
            kind: options.normalization,
            pivots: choice.pivots,
        },
        choice.tie_broken,
    ))
}

/// Problem, normalized starting point and the normalization actually used.
pub struct Setup {
    pub problem: Problem,
    pub x0: DVector<f64>,
    pub pivot_tie: bool,
}

/// Builds the problem layout and starting point without iterating.
pub fn setup(
    a: &MatrixPolynomial,
    structure: &PerturbationStructure,
    init: &KernelInit,
    options: &SolveOptions,
) -> Result<Setup> {
    if structure.free_count() == 0 {
        return Err(Error::RigidStructure);
    }
    let mut columns = match init {
        KernelInit::Svd { rank_drop, bounds } => {
            let raw = init_kernel_svd(a, *rank_drop, bounds)?;
            if raw.len() == 1 {
                vec![make_primitive(&raw[0], options.primitive_tol)?]
            } else {
                cref_reduce(&raw)?.columns
            }
        }
        KernelInit::Given(v) => v.clone(),
    };
    if columns.is_empty() {
        return Err(Error::KernelDimension { requested: 0, width: a.n() });
    }
    let (spec, pivot_tie) = choose_normalization(&columns, options)?;
    normalize_columns(&mut columns, &spec)?;
    let patterns: Vec<KernelPattern> = match options.kernel_shape {
        KernelShape::Bounds => columns.iter().map(KernelPattern::of_vector).collect(),
        KernelShape::Support => columns.iter().map(KernelPattern::of_support).collect(),
    };
    let problem = Problem::new(a.clone(), structure.clone(), &patterns, spec)?;
    let delta = match &options.delta_init {
        DeltaInit::Zero => structure.scatter(&vec![0.0; structure.free_count()]),
        DeltaInit::MinNorm => min_norm_delta(&problem, &columns)?,
        DeltaInit::Given(d) => d.clone(),
    };
    let x0 = problem.pack(&delta, &columns)?;
    Ok(Setup { problem, x0, pivot_tie })
}

/// Refines a kernel guess into a nearby lower-rank matrix polynomial.
///
/// Errors are returned for invalid input; numerical failure (divergence,
/// iteration cap, singular systems) is reported through
/// [`SolveReport::failure`] with `converged == false`.
pub fn solve(
    a: &MatrixPolynomial,
    structure: &PerturbationStructure,
    init: &KernelInit,
    options: &SolveOptions,
) -> Result<SolveReport> {
    let report = solve_once(a, structure, init, options)?;
    if !report.converged || report.kernel.len() != 1 {
        return Ok(report);
    }
    if report.second_order.as_ref().is_none_or(|s| s.full_row_rank) {
        return Ok(report);
    }
    // A kernel with a common factor leaves the solution non-isolated. At a
    // converged point the factor is exact, so divide it out and polish.
    let b = &report.kernel[0];
    let reduced = make_primitive(b, options.primitive_tol)?;
    let size = |v: &PolyVector| v.degree_bounds().iter().map(|d| d.map_or(0, |d| d + 1)).sum::<usize>();
    if size(&reduced) >= size(b) {
        return Ok(report);
    }
    log::info!("kernel vector was not primitive; refining with reduced degree bounds");
    let polish = SolveOptions {
        delta_init: DeltaInit::Given(report.delta_a.clone()),
        method: Method::Auto,
        pivots: None,
        ..options.clone()
    };
    let mut second = solve_once(a, structure, &KernelInit::Given(vec![reduced]), &polish)?;
    let saddle = second
        .second_order
        .as_ref()
        .is_some_and(|s| s.full_row_rank && s.status == SecondOrderStatus::Indefinite);
    if !second.converged && !saddle {
        return Ok(report);
    }
    let mut history = report.history;
    history.append(&mut second.history);
    second.history = history;
    second.iterations += report.iterations;
    Ok(second)
}

fn solve_once(
    a: &MatrixPolynomial,
    structure: &PerturbationStructure,
    init: &KernelInit,
    options: &SolveOptions,
) -> Result<SolveReport> {
    let Setup { problem, x0, pivot_tie } = setup(a, structure, init, options)?;
    let (lambda0, lambda_res) = init_lambda(&x0, &problem)?;
    if lambda_res > options.lambda_warn {
        log::warn!("multiplier least-squares residual {lambda_res:.3e} suggests a poor starting point");
    }
    let mut state = SolverState::new(x0, lambda0);
    let failure = iterate(&mut state, &problem, options).err();
    if let Some(f) = &failure {
        log::info!("refinement failed: {f}");
    }
    finish(&problem, state, failure, pivot_tie, lambda_res, options)
}

fn log_step(state: &SolverState) {
    if let Some(h) = state.history.last() {
        log::trace!(
            "iter {:3} {:?} dist {:.12e} |M| {:.3e} |gradL| {:.3e} step {:.3e} mu {:.3e} tau {:?}",
            state.iter,
            h.kind,
            h.distance,
            h.residual_norm,
            h.grad_norm,
            h.step_norm,
            h.mu_k,
            h.tau
        );
    }
}

/// Runs the configured iteration on `state` until the step tolerance is met.
pub fn iterate(state: &mut SolverState, problem: &Problem, options: &SolveOptions) -> std::result::Result<(), String> {
    if options.method == Method::Damped {
        let mut damping = options.damping.clone();
        let mut trials = 0usize;
        loop {
            if trials >= damping.max_iter {
                return Err(format!("damped phase exceeded {} iterations", damping.max_iter));
            }
            trials += 1;
            *state = damped_step(state, problem, &mut damping).map_err(|e| e.to_string())?;
            log_step(state);
            let last = state.history.last().expect("step recorded");
            if last.kind == StepKind::Damped && last.step_norm <= damping.switch_tol {
                break;
            }
        }
    }
    let base = match options.method {
        Method::Damped | Method::Auto => {
            if problem.rank_drop() == 1 {
                Method::Newton
            } else {
                Method::Regularized
            }
        }
        m => m,
    };
    let start = state.iter;
    let mut growth = 0usize;
    let mut previous = f64::INFINITY;
    loop {
        if state.iter - start >= options.max_iter {
            return Err(format!("iteration cap of {} reached", options.max_iter));
        }
        // Already stationary to roundoff: with a rank-deficient Jacobian a
        // further step only moves the multipliers along the null space of J^T.
        let g = grad_lagrangian(&state.x, &state.lambda, problem).map_err(|e| e.to_string())?;
        if state.iter > start && g.amax() <= options.tolerances.step {
            return Ok(());
        }
        let next = match base {
            Method::Newton => match newton_step(state, problem) {
                Err(Error::Singular) => {
                    log::info!("bordered matrix singular, taking a regularized step");
                    regularized_step(state, problem)
                }
                other => other,
            },
            _ => regularized_step(state, problem),
        };
        *state = next.map_err(|e| e.to_string())?;
        log_step(state);
        let s = state.step_norm;
        if !s.is_finite() || !state.x.iter().all(|v| v.is_finite()) {
            return Err("non-finite iterate".into());
        }
        if s <= options.tolerances.step {
            return Ok(());
        }
        if s > previous {
            growth += 1;
            if growth >= options.patience {
                return Err(format!("step norm grew for {growth} consecutive iterations"));
            }
        } else {
            growth = 0;
        }
        previous = s;
    }
}

fn finish(
    problem: &Problem,
    state: SolverState,
    failure: Option<String>,
    pivot_tie: bool,
    lambda_init_residual: f64,
    options: &SolveOptions,
) -> Result<SolveReport> {
    let res = residual(&state.x, problem)?;
    let feasibility = res
        .blocks
        .iter()
        .map(|r| res.residual.rows(r.start, r.len()).norm())
        .fold(0.0, f64::max);
    let normalization_residual = res.normalization_max();
    let grad = grad_lagrangian(&state.x, &state.lambda, problem)?;
    let first_order_residual = grad.amax();
    let second_order = check_second_order(&state.x, &state.lambda, problem).ok();
    let tol = &options.tolerances;
    let mut failure = failure;
    if failure.is_none() {
        if feasibility > tol.feas || normalization_residual > tol.feas {
            failure = Some(format!(
                "final iterate infeasible: kernel residual {feasibility:.3e}, normalization {normalization_residual:.3e}"
            ));
        } else if first_order_residual > tol.kkt {
            failure = Some(format!("first-order residual {first_order_residual:.3e} above tolerance"));
        } else if let Some(so) = second_order.as_ref().filter(|s| s.full_row_rank) {
            // Multipliers are unique here, so an indefinite reduced Hessian
            // means a saddle rather than a minimizer.
            if so.status == SecondOrderStatus::Indefinite {
                failure = Some(format!(
                    "first-order point is a saddle: reduced Hessian eigenvalue {:.3e}",
                    so.min_eigenvalue
                ));
            }
        }
    }
    let delta_a = problem.delta(&state.x);
    Ok(SolveReport {
        distance: delta_a.frobenius_norm(),
        delta_a,
        kernel: problem.kernel(&state.x),
        lower_bound: distance_lower_bound(&problem.a),
        converged: failure.is_none(),
        iterations: state.iter,
        first_order_residual,
        feasibility,
        normalization_residual,
        second_order,
        failure,
        history: state.history,
        normalization: problem.normalization.clone(),
        pivot_tie,
        lambda_init_residual,
        multipliers: state.lambda.iter().copied().collect(),
    })
}
