//! Constraint residual, Lagrangian derivatives and second-order checks.
//!
//! Unknowns are stacked as `x = (free ΔA coefficients in vec order, b̂_1, ..., b̂_r)`
//! where each `b̂_c` lists the free coefficients of kernel column `c` in the
//! order of its [`MinimalEmbedding`]. The residual stacks the reduced kernel
//! equations of every column followed by one normalization row per column.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{minimal_embed, psi, KernelPattern, MinimalEmbedding};
use crate::error::{Error, Result};
use crate::polycore::{MatrixPolynomial, PolyVector};
use crate::structure::{normalization_row, NormalizationSpec, PerturbationStructure};

/// A structured lower-rank approximation problem with a fixed unknown layout.
#[derive(Clone, Debug)]
pub struct Problem {
    pub a: MatrixPolynomial,
    pub structure: PerturbationStructure,
    pub layouts: Vec<MinimalEmbedding>,
    pub normalization: NormalizationSpec,
    free: Vec<usize>,
    delta_pos: Vec<Option<usize>>,
    b_start: Vec<usize>,
    row_start: Vec<usize>,
    pinned: Vec<Option<usize>>,
}

impl Problem {
    pub fn new(
        a: MatrixPolynomial,
        structure: PerturbationStructure,
        patterns: &[KernelPattern],
        normalization: NormalizationSpec,
    ) -> Result<Self> {
        if structure.n() != a.n() || structure.degree() != a.degree() {
            return Err(Error::Shape("structure does not match the matrix polynomial".into()));
        }
        if structure.free_count() == 0 {
            return Err(Error::RigidStructure);
        }
        if patterns.is_empty() {
            return Err(Error::KernelDimension { requested: 0, width: a.n() });
        }
        let layouts = patterns
            .iter()
            .map(|p| minimal_embed(&a, p, &structure))
            .collect::<Result<Vec<_>>>()?;
        let pinned = layouts
            .iter()
            .enumerate()
            .map(|(c, l)| normalization.pinned_coordinate(c, l))
            .collect::<Result<Vec<_>>>()?;
        let free = structure.free_indices();
        let mut delta_pos = vec![None; a.n() * a.n() * (a.degree() + 1)];
        for (p, &idx) in free.iter().enumerate() {
            delta_pos[idx] = Some(p);
        }
        let mut b_start = Vec::with_capacity(layouts.len());
        let mut row_start = Vec::with_capacity(layouts.len());
        let (mut bx, mut rx) = (free.len(), 0);
        for l in &layouts {
            b_start.push(bx);
            row_start.push(rx);
            bx += l.cols();
            rx += l.rows();
        }
        Ok(Self {
            a,
            structure,
            layouts,
            normalization,
            free,
            delta_pos,
            b_start,
            row_start,
            pinned,
        })
    }

    pub fn rank_drop(&self) -> usize {
        self.layouts.len()
    }

    /// Number of free `ΔA` coefficients.
    pub fn n_delta(&self) -> usize {
        self.free.len()
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_delta() + self.layouts.iter().map(MinimalEmbedding::cols).sum::<usize>()
    }

    /// Kernel equations over all columns, excluding normalization rows.
    pub fn n_kernel_rows(&self) -> usize {
        self.layouts.iter().map(MinimalEmbedding::rows).sum()
    }

    pub fn n_residuals(&self) -> usize {
        self.n_kernel_rows() + self.rank_drop()
    }

    /// Positions of kernel column `c` inside `x`.
    pub fn kernel_range(&self, c: usize) -> Range<usize> {
        self.b_start[c]..self.b_start[c] + self.layouts[c].cols()
    }

    /// Positions of the kernel equations of column `c` inside the residual.
    pub fn row_range(&self, c: usize) -> Range<usize> {
        self.row_start[c]..self.row_start[c] + self.layouts[c].rows()
    }

    /// Residual position of the normalization row of column `c`.
    pub fn normalization_index(&self, c: usize) -> usize {
        self.n_kernel_rows() + c
    }

    /// Position of coefficient `(i, j, k)` of `ΔA` inside `x`, if free.
    pub fn delta_position(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        if k > self.a.degree() {
            return None;
        }
        self.delta_pos[crate::polycore::vec_index(self.a.n(), self.a.degree(), i, j, k)]
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_unknowns() {
            return Err(Error::Shape(format!(
                "unknown vector has length {}, layout expects {}",
                x.len(),
                self.n_unknowns()
            )));
        }
        Ok(())
    }

    /// Perturbation described by `x`, including fixed offsets.
    pub fn delta(&self, x: &DVector<f64>) -> MatrixPolynomial {
        self.structure.scatter(&x.as_slice()[..self.n_delta()])
    }

    /// `A + ΔA` for the perturbation described by `x`.
    pub fn perturbed(&self, x: &DVector<f64>) -> MatrixPolynomial {
        self.a.add(&self.delta(x)).expect("shapes agree")
    }

    pub fn kernel_block<'a>(&self, x: &'a DVector<f64>, c: usize) -> &'a [f64] {
        &x.as_slice()[self.kernel_range(c)]
    }

    /// Kernel vectors described by `x`.
    pub fn kernel(&self, x: &DVector<f64>) -> Vec<PolyVector> {
        (0..self.rank_drop())
            .map(|c| self.layouts[c].unpack(self.kernel_block(x, c)))
            .collect()
    }

    /// Stacks a perturbation and kernel vectors into `x`.
    pub fn pack(&self, delta: &MatrixPolynomial, kernel: &[PolyVector]) -> Result<DVector<f64>> {
        if kernel.len() != self.rank_drop() {
            return Err(Error::Shape(format!(
                "{} kernel vectors given, problem has {}",
                kernel.len(),
                self.rank_drop()
            )));
        }
        let mut x = DVector::zeros(self.n_unknowns());
        for (p, v) in self.structure.gather(delta).into_iter().enumerate() {
            x[p] = v;
        }
        for (c, b) in kernel.iter().enumerate() {
            if b.len() != self.a.n() {
                return Err(Error::Shape("kernel vector length differs from n".into()));
            }
            let packed = self.layouts[c].pack(b);
            x.rows_mut(self.b_start[c], packed.len()).copy_from(&packed);
        }
        Ok(x)
    }

    /// `‖ΔA‖_F` for the perturbation described by `x`.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        self.delta(x).frobenius_norm()
    }

    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n_unknowns());
        for p in 0..self.n_delta() {
            g[p] = 2.0 * x[p];
        }
        g
    }
}

/// Stacked constraint residual.
#[derive(Clone, Debug)]
pub struct ResidualSystem {
    pub residual: DVector<f64>,
    /// Kernel equation ranges per column; normalization rows follow the last one.
    pub blocks: Vec<Range<usize>>,
}

impl ResidualSystem {
    /// Euclidean norm of the kernel equations of all columns.
    pub fn kernel_norm(&self) -> f64 {
        let end = self.blocks.last().map_or(0, |b| b.end);
        self.residual.rows(0, end).norm()
    }

    /// Largest absolute normalization residual.
    pub fn normalization_max(&self) -> f64 {
        let end = self.blocks.last().map_or(0, |b| b.end);
        self.residual.rows(end, self.residual.len() - end).amax()
    }
}

pub fn residual(x: &DVector<f64>, problem: &Problem) -> Result<ResidualSystem> {
    problem.check_len(x)?;
    let c_poly = problem.perturbed(x);
    let mut out = DVector::zeros(problem.n_residuals());
    let mut blocks = Vec::with_capacity(problem.rank_drop());
    for (c, layout) in problem.layouts.iter().enumerate() {
        let b = DVector::from_column_slice(problem.kernel_block(x, c));
        let rows = problem.row_range(c);
        out.rows_mut(rows.start, rows.len()).copy_from(&(layout.assemble(&c_poly) * &b));
        blocks.push(rows);
        let n_row = normalization_row(&problem.normalization, c, layout, b.as_slice())?;
        out[problem.normalization_index(c)] = n_row.dot(&b) - 1.0;
    }
    Ok(ResidualSystem { residual: out, blocks })
}

/// Jacobian of the residual with respect to `x`.
pub fn jacobian(x: &DVector<f64>, problem: &Problem) -> Result<DMatrix<f64>> {
    problem.check_len(x)?;
    let c_poly = problem.perturbed(x);
    let mut j = DMatrix::zeros(problem.n_residuals(), problem.n_unknowns());
    for (c, layout) in problem.layouts.iter().enumerate() {
        let bhat = problem.kernel_block(x, c);
        let rows = problem.row_range(c);
        let full = psi(bhat, layout);
        for (p, &idx) in problem.free.iter().enumerate() {
            j.view_mut((rows.start, p), (rows.len(), 1)).copy_from(&full.column(idx));
        }
        let cols = problem.kernel_range(c);
        j.view_mut((rows.start, cols.start), (rows.len(), cols.len()))
            .copy_from(&layout.assemble(&c_poly));
        let r = problem.normalization_index(c);
        match problem.pinned[c] {
            Some(q) => j[(r, cols.start + q)] = 1.0,
            None => {
                for (q, &bv) in bhat.iter().enumerate() {
                    j[(r, cols.start + q)] = 2.0 * bv;
                }
            }
        }
    }
    Ok(j)
}

/// Hessian of `L = ‖ΔA‖² + λ^T M` with respect to `x`.
pub fn hessian_lagrangian(x: &DVector<f64>, lambda: &DVector<f64>, problem: &Problem) -> Result<DMatrix<f64>> {
    problem.check_len(x)?;
    if lambda.len() != problem.n_residuals() {
        return Err(Error::Shape(format!(
            "multiplier vector has length {}, expected {}",
            lambda.len(),
            problem.n_residuals()
        )));
    }
    let nx = problem.n_unknowns();
    let d = problem.a.degree();
    let mut h = DMatrix::zeros(nx, nx);
    for p in 0..problem.n_delta() {
        h[(p, p)] = 2.0;
    }
    for (c, layout) in problem.layouts.iter().enumerate() {
        let row0 = problem.row_start[c];
        let b0 = problem.b_start[c];
        for (r, &(i, k)) in layout.row_map.iter().enumerate() {
            let lam = lambda[row0 + r];
            if lam == 0.0 {
                continue;
            }
            for (q, &(j, m)) in layout.col_map.iter().enumerate() {
                if k < m || k - m > d {
                    continue;
                }
                if let Some(p) = problem.delta_position(i, j, k - m) {
                    h[(p, b0 + q)] += lam;
                    h[(b0 + q, p)] += lam;
                }
            }
        }
        if problem.pinned[c].is_none() {
            let lam = lambda[problem.normalization_index(c)];
            for q in problem.kernel_range(c) {
                h[(q, q)] += 2.0 * lam;
            }
        }
    }
    Ok(h)
}

/// Stacked `(∇_x L, M(x))`.
pub fn grad_lagrangian(x: &DVector<f64>, lambda: &DVector<f64>, problem: &Problem) -> Result<DVector<f64>> {
    let j = jacobian(x, problem)?;
    let m = residual(x, problem)?.residual;
    Ok(stack_gradient(&j, &m, x, lambda, problem))
}

fn stack_gradient(
    j: &DMatrix<f64>,
    m: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    problem: &Problem,
) -> DVector<f64> {
    let gx = problem.objective_gradient(x) + j.tr_mul(lambda);
    let mut g = DVector::zeros(gx.len() + m.len());
    g.rows_mut(0, gx.len()).copy_from(&gx);
    g.rows_mut(gx.len(), m.len()).copy_from(m);
    g
}

/// Value of the Lagrangian `‖ΔA‖_F² + λ^T M(x)`.
pub fn lagrangian(x: &DVector<f64>, lambda: &DVector<f64>, problem: &Problem) -> Result<f64> {
    let m = residual(x, problem)?.residual;
    Ok(problem.distance(x).powi(2) + lambda.dot(&m))
}

/// Derivative data at one iterate.
#[derive(Clone, Debug)]
pub struct KKTMatrices {
    pub j: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Bordered matrix `[[H, J^T], [J, -reg I]]`.
    pub k: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub residual: DVector<f64>,
}

/// Assembles the bordered system with `reg` on the lower-right diagonal
/// (zero gives the plain Newton matrix).
pub fn kkt_matrices(x: &DVector<f64>, lambda: &DVector<f64>, problem: &Problem, reg: f64) -> Result<KKTMatrices> {
    let j = jacobian(x, problem)?;
    let h = hessian_lagrangian(x, lambda, problem)?;
    let m = residual(x, problem)?.residual;
    let grad = stack_gradient(&j, &m, x, lambda, problem);
    let (nx, nm) = (j.ncols(), j.nrows());
    let mut k = DMatrix::zeros(nx + nm, nx + nm);
    k.view_mut((0, 0), (nx, nx)).copy_from(&h);
    k.view_mut((0, nx), (nx, nm)).copy_from(&j.transpose());
    k.view_mut((nx, 0), (nm, nx)).copy_from(&j);
    for r in 0..nm {
        k[(nx + r, nx + r)] = -reg;
    }
    Ok(KKTMatrices { j, h, k, grad, residual: m })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondOrderStatus {
    /// Reduced Hessian positive definite.
    Sufficient,
    /// Reduced Hessian positive semidefinite with a zero eigenvalue.
    Necessary,
    Indefinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderReport {
    pub status: SecondOrderStatus,
    /// Smallest eigenvalue of `Z^T H Z` (infinite when `ker J` is trivial).
    pub min_eigenvalue: f64,
    pub jacobian_rank: usize,
    /// Smallest of the first `rows` singular values, zero when `J` has more
    /// rows than columns.
    pub jacobian_sigma_min: f64,
    pub full_row_rank: bool,
    pub kernel_dimension: usize,
}

/// Orthonormal basis of `ker J` and the numerical rank of `J`.
pub fn kernel_basis(j: &DMatrix<f64>) -> (DMatrix<f64>, usize, Vec<f64>) {
    let (m, nx) = j.shape();
    let size = m.max(nx);
    let mut padded = DMatrix::zeros(size, nx);
    padded.view_mut((0, 0), (m, nx)).copy_from(j);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = (size as f64 * f64::EPSILON).max(1e-10) * smax.max(1.0);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let mut basis = DMatrix::zeros(nx, nx - rank);
    let mut col = 0;
    for (idx, &s) in sv.iter().enumerate() {
        if s <= tol {
            basis.set_column(col, &v_t.row(idx).transpose());
            col += 1;
        }
    }
    let mut sorted = sv;
    sorted.sort_by(|a, b| b.total_cmp(a));
    (basis, rank, sorted)
}

pub fn check_second_order(x: &DVector<f64>, lambda: &DVector<f64>, problem: &Problem) -> Result<SecondOrderReport> {
    let j = jacobian(x, problem)?;
    let h = hessian_lagrangian(x, lambda, problem)?;
    let (z, rank, sv) = kernel_basis(&j);
    let m = j.nrows();
    let jacobian_sigma_min = if m <= j.ncols() { sv[m - 1] } else { 0.0 };
    let min_eigenvalue = if z.ncols() == 0 {
        f64::INFINITY
    } else {
        let reduced = z.transpose() * &h * &z;
        let sym = (&reduced + reduced.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    };
    let tol = 1e-10 * h.amax().max(1.0);
    let status = if min_eigenvalue > tol {
        SecondOrderStatus::Sufficient
    } else if min_eigenvalue >= -tol {
        SecondOrderStatus::Necessary
    } else {
        SecondOrderStatus::Indefinite
    };
    Ok(SecondOrderReport {
        status,
        min_eigenvalue,
        jacobian_rank: rank,
        jacobian_sigma_min,
        full_row_rank: rank == m,
        kernel_dimension: z.ncols(),
    })
}
