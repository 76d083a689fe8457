//! Single iterations: plain Newton, regularized Newton and the damped
//! globalization phase.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kkt::{jacobian, kkt_matrices, residual, Problem};

/// How an iteration computed its step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Newton,
    Regularized,
    Damped,
    /// Damped trial step that failed the merit test.
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub kind: StepKind,
    /// `‖ΔA‖_F` after the step.
    pub distance: f64,
    /// `‖M‖_2` before the step.
    pub residual_norm: f64,
    /// `‖∇L‖_2` before the step.
    pub grad_norm: f64,
    /// `‖(Δx, Δλ)‖_2`.
    pub step_norm: f64,
    /// `‖Δx‖_2`, the primal part of the step.
    pub primal_step_norm: f64,
    pub mu_k: f64,
    pub tau: Option<f64>,
}

/// Iterate of the refinement.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu_k: f64,
    pub iter: usize,
    pub step_norm: f64,
    pub history: Vec<IterationRecord>,
}

impl SolverState {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self {
            x,
            lambda,
            mu_k: 0.0,
            iter: 0,
            step_norm: f64::INFINITY,
            history: Vec::new(),
        }
    }
}

/// LU solve. With `strict`, matrices whose pivots span more than the working
/// precision are refused as singular.
pub(crate) fn solve_dense(k: DMatrix<f64>, rhs: &DVector<f64>, strict: bool) -> Result<DVector<f64>> {
    let size = k.nrows();
    let lu = k.lu();
    if strict {
        let u = lu.u();
        let (lo, hi) = u
            .diagonal()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if !(lo > size as f64 * f64::EPSILON * hi) {
            return Err(Error::Singular);
        }
    }
    let sol = lu.solve(rhs).ok_or(Error::Singular)?;
    if sol.iter().all(|v| v.is_finite()) {
        Ok(sol)
    } else {
        Err(Error::Singular)
    }
}

fn bordered_step(state: &SolverState, problem: &Problem, kind: StepKind, reg: f64) -> Result<SolverState> {
    let m = kkt_matrices(&state.x, &state.lambda, problem, reg)?;
    let nx = problem.n_unknowns();
    let step = solve_dense(m.k, &(-&m.grad), kind == StepKind::Newton)?;
    let mut next = state.clone();
    next.x += step.rows(0, nx);
    next.lambda += step.rows(nx, step.len() - nx);
    next.mu_k = reg;
    next.iter += 1;
    next.step_norm = step.norm();
    next.history.push(IterationRecord {
        kind,
        distance: problem.distance(&next.x),
        residual_norm: m.residual.norm(),
        grad_norm: m.grad.norm(),
        step_norm: next.step_norm,
        primal_step_norm: step.rows(0, nx).norm(),
        mu_k: reg,
        tau: None,
    });
    Ok(next)
}

/// Newton step on `∇L = 0` with the bordered matrix `[[H, J^T], [J, 0]]`.
/// Fails with [`Error::Singular`] when that matrix is singular to working
/// precision.
pub fn newton_step(state: &SolverState, problem: &Problem) -> Result<SolverState> {
    bordered_step(state, problem, StepKind::Newton, 0.0)
}

/// Newton step with `-μ_k I` in the lower-right block, `μ_k = ‖∇L‖_1`.
pub fn regularized_step(state: &SolverState, problem: &Problem) -> Result<SolverState> {
    let g = crate::kkt::grad_lagrangian(&state.x, &state.lambda, problem)?;
    let mu = g.lp_norm(1);
    bordered_step(state, problem, StepKind::Regularized, mu)
}

/// Parameters of the damped phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Damping {
    /// Current diagonal shift.
    pub tau: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Weight of `‖M‖_2` in the merit function.
    pub merit_weight: f64,
    /// Accepted step size at which the damped phase hands over to Newton.
    pub switch_tol: f64,
    pub max_iter: usize,
}

impl Default for Damping {
    fn default() -> Self {
        Self {
            tau: 1e-2,
            tau_min: 1e-10,
            tau_max: 1e12,
            merit_weight: 10.0,
            switch_tol: 1e-3,
            max_iter: 2000,
        }
    }
}

/// Merit `‖ΔA‖_F² + w ‖M‖_2` used by the damped phase.
pub fn merit(x: &DVector<f64>, problem: &Problem, weight: f64) -> Result<f64> {
    let m = residual(x, problem)?.residual;
    Ok(problem.distance(x).powi(2) + weight * m.norm())
}

/// One damped iteration.
///
/// Solves the equality-constrained quadratic model whose Hessian keeps only
/// the objective curvature (`2I` on `ΔA`) plus a shift `τI`:
/// `[[G + τI, J^T], [J, 0]] (Δx, λ⁺) = -(∇f, M)`. The step is accepted when the
/// merit decreases, after which `τ` shrinks; a rejected step grows `τ`.
/// Multipliers are replaced by the model's `λ⁺` on acceptance.
pub fn damped_step(state: &SolverState, problem: &Problem, damping: &mut Damping) -> Result<SolverState> {
    let nx = problem.n_unknowns();
    let nd = problem.n_delta();
    let j = jacobian(&state.x, problem)?;
    let m = residual(&state.x, problem)?.residual;
    let nm = m.len();
    let mut k = DMatrix::zeros(nx + nm, nx + nm);
    for p in 0..nx {
        k[(p, p)] = damping.tau + if p < nd { 2.0 } else { 0.0 };
    }
    k.view_mut((0, nx), (nx, nm)).copy_from(&j.transpose());
    k.view_mut((nx, 0), (nm, nx)).copy_from(&j);
    let mut rhs = DVector::zeros(nx + nm);
    for p in 0..nd {
        rhs[p] = -2.0 * state.x[p];
    }
    rhs.rows_mut(nx, nm).copy_from(&(-&m));
    let grad = {
        let mut g = -rhs.clone();
        let jl = j.tr_mul(&state.lambda);
        for p in 0..nx {
            g[p] += jl[p];
        }
        g
    };

    let sol = solve_dense(k, &rhs, false)?;
    let dx = sol.rows(0, nx).clone_owned();
    let trial = &state.x + &dx;
    let before = merit(&state.x, problem, damping.merit_weight)?;
    let after = merit(&trial, problem, damping.merit_weight)?;

    let mut next = state.clone();
    next.iter += 1;
    next.step_norm = dx.norm();
    let accepted = after < before;
    if accepted {
        next.x = trial;
        next.lambda = sol.rows(nx, nm).clone_owned();
        damping.tau = (damping.tau / 3.0).max(damping.tau_min);
    } else {
        damping.tau *= 4.0;
        if damping.tau > damping.tau_max {
            return Err(Error::Diverged(format!("damping parameter exceeded {:e}", damping.tau_max)));
        }
    }
    next.history.push(IterationRecord {
        kind: if accepted { StepKind::Damped } else { StepKind::Rejected },
        distance: problem.distance(&next.x),
        residual_norm: m.norm(),
        grad_norm: grad.norm(),
        step_norm: next.step_norm,
        primal_step_norm: next.step_norm,
        mu_k: 0.0,
        tau: Some(damping.tau),
    });
    Ok(next)
}
