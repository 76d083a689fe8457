//! Starting points: SVD kernel guesses, content removal, column echelon
//! reduction of kernel bases and least-squares multipliers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{default_width, phi, psi, r_embed, sigma_min};
use crate::error::{Error, Result};
use crate::kkt::{jacobian, Problem};
use crate::polycore::{MatrixPolynomial, PolyVector};
use crate::structure::Pivot;

/// Right singular vectors for the `r` smallest singular values of `Â`,
/// restricted to the kernel coefficients allowed by `bounds`.
///
/// With every bound at `n d` this is the plain SVD of the full embedding.
pub fn init_kernel_svd(a: &MatrixPolynomial, r: usize, bounds: &[Option<usize>]) -> Result<Vec<PolyVector>> {
    let n = a.n();
    if bounds.len() != n {
        return Err(Error::Shape(format!("{} degree bounds for {n} entries", bounds.len())));
    }
    let ahat = r_embed(a);
    let mu = ahat.mu;
    let mut cols = Vec::new();
    for (j, b) in bounds.iter().enumerate() {
        if let Some(deg) = *b {
            if deg >= mu {
                return Err(Error::DegreeOverflow { entry: j, degree: deg, width: mu });
            }
            cols.extend((0..=deg).map(|m| (j, m)));
        }
    }
    if r == 0 || r >= cols.len() {
        return Err(Error::KernelDimension { requested: r, width: cols.len() });
    }
    let mut restricted = DMatrix::zeros(ahat.matrix.nrows(), cols.len());
    for (c, &(j, m)) in cols.iter().enumerate() {
        restricted.set_column(c, &ahat.matrix.column(j * mu + m));
    }
    let svd = restricted.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
    Ok(order
        .into_iter()
        .take(r)
        .map(|row| {
            let mut b = PolyVector::zeros(bounds);
            for (c, &(j, m)) in cols.iter().enumerate() {
                b.entry_mut(j)[m] = v_t[(row, c)];
            }
            b
        })
        .collect())
}

fn trimmed(e: &[f64], tol: f64) -> &[f64] {
    let end = e.iter().rposition(|c| c.abs() > tol).map_or(0, |p| p + 1);
    &e[..end]
}

/// Sylvester-type matrix whose kernel holds cofactors `(v, u)` with
/// `p v = q u`, `deg v = deg q - k`, `deg u = deg p - k`.
fn cofactor_matrix(p: &[f64], q: &[f64], k: usize) -> DMatrix<f64> {
    let (dp, dq) = (p.len() - 1, q.len() - 1);
    let left = phi(p, dq - k + 1);
    let right = phi(q, dp - k + 1);
    let mut m = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    m.view_mut((0, 0), left.shape()).copy_from(&left);
    m.view_mut((0, left.ncols()), right.shape()).copy_from(&(-right));
    m
}

fn smallest_right_vector(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let rows = m.nrows().max(m.ncols());
    let mut padded = DMatrix::zeros(rows, m.ncols());
    padded.view_mut((0, 0), m.shape()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let idx = svd.singular_values.imin();
    (svd.singular_values[idx], v_t.row(idx).transpose())
}

/// Least-squares quotient `b / g` with `deg b - deg g + 1` coefficients and
/// its residual norm.
fn divide(b: &[f64], g: &[f64]) -> (Vec<f64>, f64) {
    let qlen = b.len() + 1 - g.len();
    let m = phi(g, qlen);
    let rhs = DVector::from_column_slice(b);
    let q = m
        .clone()
        .svd(true, true)
        .solve(&rhs, f64::EPSILON)
        .expect("requested singular vectors");
    let res = (&m * &q - rhs).norm();
    (q.iter().copied().collect(), res)
}

/// Removes an approximate common factor of the entries of `b`.
///
/// The candidate factor degree comes from the numerical nullity of the
/// Sylvester matrix of the two largest entries; the factor itself is
/// recovered from their cofactors and divided out of every entry by least
/// squares. Candidates whose division residual exceeds `tol` are rejected.
pub fn make_primitive(b: &PolyVector, tol: f64) -> Result<PolyVector> {
    let norm = b.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let coef_tol = f64::EPSILON * norm;
    let entries: Vec<&[f64]> = b.entries().iter().map(|e| trimmed(e, coef_tol)).collect();
    let mut ranked: Vec<usize> = (0..entries.len()).filter(|&i| !entries[i].is_empty()).collect();
    ranked.sort_by(|&p, &q| {
        let np: f64 = entries[p].iter().map(|v| v * v).sum();
        let nq: f64 = entries[q].iter().map(|v| v * v).sum();
        nq.total_cmp(&np)
    });
    if ranked.len() < 2 {
        // A single nonzero entry is its own content.
        let mut out = PolyVector::zeros(&vec![None; b.len()]);
        if let Some(&i) = ranked.first() {
            *out.entry_mut(i) = vec![1.0];
        }
        return Ok(out);
    }
    let (p, q) = (entries[ranked[0]], entries[ranked[1]]);
    let (dp, dq) = (p.len() - 1, q.len() - 1);
    let max_k = dp.min(dq);
    for k in (1..=max_k).rev() {
        let cof = cofactor_matrix(p, q, k);
        let (s, v) = smallest_right_vector(&cof);
        if s > tol * cof.norm().max(1.0) {
            continue;
        }
        let u: Vec<f64> = v.rows(dq - k + 1, dp - k + 1).iter().copied().collect();
        if u.iter().all(|&c| c == 0.0) {
            continue;
        }
        let (g, _) = divide(p, &u);
        let mut quotients = Vec::with_capacity(b.len());
        let mut ok = true;
        for e in &entries {
            if e.is_empty() {
                quotients.push(Vec::new());
                continue;
            }
            if e.len() < g.len() {
                ok = false;
                break;
            }
            let (quot, res) = divide(e, &g);
            if res > tol * norm {
                ok = false;
                break;
            }
            quotients.push(quot);
        }
        if ok {
            log::info!("removed approximate content of degree {k}");
            let out = PolyVector::new(quotients);
            let scale = out.norm();
            return Ok(out.scale(1.0 / scale));
        }
    }
    Ok(b.clone())
}

/// Kernel basis in column echelon form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub columns: Vec<PolyVector>,
    /// Last nonzero coefficient of each embedded column, scaled to one.
    pub pivots: Vec<Pivot>,
    /// Whether the input already had distinct pivots and only scaling was applied.
    pub unchanged: bool,
}

fn stacked(columns: &[PolyVector], width: usize) -> DMatrix<f64> {
    let n = columns[0].len();
    let mut m = DMatrix::zeros(n * width, columns.len());
    for (c, b) in columns.iter().enumerate() {
        for (i, e) in b.entries().iter().enumerate() {
            for (k, &v) in e.iter().enumerate() {
                m[(i * width + k, c)] = v;
            }
        }
    }
    m
}

/// Brings kernel columns into column echelon form with pivots at the last
/// nonzero coefficient of the embedded vectors.
///
/// Columns whose pivots are already distinct are only scaled. Otherwise
/// Gaussian column elimination from the bottom row upward with partial
/// pivoting produces distinct pivots; the stored shape of each entry becomes
/// the union of the input shapes.
pub fn cref_reduce(vectors: &[PolyVector]) -> Result<KernelSpec> {
    let first = vectors.first().ok_or(Error::KernelDimension { requested: 0, width: 0 })?;
    let n = first.len();
    if vectors.iter().any(|b| b.len() != n) {
        return Err(Error::Shape("kernel columns differ in length".into()));
    }
    let width = vectors.iter().filter_map(PolyVector::degree_bound).max().unwrap_or(0) + 1;
    let mut m = stacked(vectors, width);
    let scale = m.amax();
    if scale == 0.0 {
        return Err(Error::ZeroVector);
    }
    let tol = 1e-10 * scale;
    let last_nonzero = |col: nalgebra::DVectorView<f64>| col.iter().rposition(|v| v.abs() > tol);

    let pivots_in: Vec<Option<usize>> = (0..m.ncols()).map(|c| last_nonzero(m.column(c))).collect();
    let mut distinct: Vec<usize> = pivots_in.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    let unchanged = distinct.len() == vectors.len() && pivots_in.iter().all(Option::is_some);

    let mut pivot_rows = vec![0usize; m.ncols()];
    if unchanged {
        for (c, p) in pivots_in.into_iter().enumerate() {
            pivot_rows[c] = p.expect("checked above");
        }
    } else {
        let mut remaining: Vec<usize> = (0..m.ncols()).collect();
        while !remaining.is_empty() {
            let row = remaining
                .iter()
                .filter_map(|&c| last_nonzero(m.column(c)))
                .max()
                .ok_or(Error::DependentColumns)?;
            let best = *remaining
                .iter()
                .max_by(|&&p, &&q| m[(row, p)].abs().total_cmp(&m[(row, q)].abs()))
                .expect("remaining is not empty");
            let pv = m[(row, best)];
            for &c in &remaining {
                if c != best {
                    let f = m[(row, c)] / pv;
                    let pcol = m.column(best).clone_owned();
                    m.column_mut(c).axpy(-f, &pcol, 1.0);
                    m[(row, c)] = 0.0;
                }
            }
            pivot_rows[best] = row;
            remaining.retain(|&c| c != best);
        }
    }

    let mut shape = vec![0usize; n];
    for b in vectors {
        for (i, e) in b.entries().iter().enumerate() {
            shape[i] = shape[i].max(e.len());
        }
    }
    let mut columns = Vec::with_capacity(vectors.len());
    let mut pivots = Vec::with_capacity(vectors.len());
    for (c, &row) in pivot_rows.iter().enumerate() {
        let pv = m[(row, c)];
        let entries = (0..n)
            .map(|i| {
                let len = if unchanged { vectors[c].entry(i).len() } else { shape[i] };
                (0..len).map(|k| m[(i * width + k, c)] / pv).collect()
            })
            .collect();
        columns.push(PolyVector::new(entries));
        pivots.push(Pivot { entry: row / width, coeff: row % width });
    }
    Ok(KernelSpec { columns, pivots, unchanged })
}

/// Least-squares multipliers for `J^T λ = -∇f` and the residual norm of
/// that system.
pub fn init_lambda(x: &DVector<f64>, problem: &Problem) -> Result<(DVector<f64>, f64)> {
    let j = jacobian(x, problem)?;
    let mut g = DVector::zeros(problem.n_unknowns());
    for p in 0..problem.n_delta() {
        g[p] = -2.0 * x[p];
    }
    let jt = j.transpose();
    let lambda = jt
        .clone()
        .svd(true, true)
        .solve(&g, 1e-14 * jt.amax().max(1.0))
        .map_err(|_| Error::Singular)?;
    let res = (&jt * &lambda - g).norm();
    Ok((lambda, res))
}

/// Minimum-norm free perturbation making the kernel equations exact for the
/// given kernel vectors.
pub fn min_norm_delta(problem: &Problem, kernel: &[PolyVector]) -> Result<MatrixPolynomial> {
    let base = problem.perturbed(&problem.pack(&MatrixPolynomial::zeros(problem.a.n(), problem.a.degree()), kernel)?);
    let free = problem.structure.free_indices();
    let rows = problem.n_kernel_rows();
    let mut psi_free = DMatrix::zeros(rows, free.len());
    let mut rhs = DVector::zeros(rows);
    for (c, layout) in problem.layouts.iter().enumerate() {
        let bhat = layout.pack(&kernel[c]);
        let full = psi(bhat.as_slice(), layout);
        let range = problem.row_range(c);
        for (p, &idx) in free.iter().enumerate() {
            psi_free.view_mut((range.start, p), (range.len(), 1)).copy_from(&full.column(idx));
        }
        rhs.rows_mut(range.start, range.len())
            .copy_from(&(-(layout.assemble(&base) * bhat)));
    }
    let sol = psi_free
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|_| Error::Singular)?;
    Ok(problem.structure.scatter(sol.as_slice()))
}

/// Smallest singular value of the Sylvester matrix of two polynomials.
pub fn sylvester_sigma_min(p: &[f64], q: &[f64]) -> f64 {
    if p.len() < 2 || q.len() < 2 {
        return f64::INFINITY;
    }
    sigma_min(&cofactor_matrix(p, q, 1))
}

/// Width used for kernel degree bounds when none are given.
pub fn default_bounds(a: &MatrixPolynomial) -> Vec<Option<usize>> {
    vec![Some(default_width(a) - 1); a.n()]
}
