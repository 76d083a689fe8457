//! Real block-Toeplitz embeddings of matrix polynomials.
//!
//! Multiplication `A(t) b(t)` becomes the real matrix-vector product
//! `Â b̂`, where `Â` is the `n x n` grid of convolution matrices of the
//! entries of `A` and `b̂` stacks the coefficients of `b` entry by entry.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polycore::{vec_index, MatrixPolynomial, PolyVector};
use crate::structure::PerturbationStructure;

/// Convolution matrix of `a` acting on polynomials with `mu` coefficients.
///
/// The result has `mu + deg a` rows, where `deg a` is the stored degree bound
/// `a.len() - 1`; column `k` holds the coefficients of `a` shifted down `k` rows.
pub fn phi(a: &[f64], mu: usize) -> DMatrix<f64> {
    let deg = a.len().saturating_sub(1);
    let mut t = DMatrix::zeros(mu + deg, mu);
    for k in 0..mu {
        for (l, &v) in a.iter().enumerate() {
            t[(k + l, k)] = v;
        }
    }
    t
}

/// Block-Toeplitz embedding of a matrix polynomial.
#[derive(Clone, Debug)]
pub struct REmbedding {
    pub matrix: DMatrix<f64>,
    pub n: usize,
    pub d: usize,
    pub mu: usize,
}

impl REmbedding {
    /// Rows per block, `mu + d`.
    pub fn block_rows(&self) -> usize {
        self.mu + self.d
    }

    /// Smallest singular value.
    pub fn sigma_min(&self) -> f64 {
        sigma_min(&self.matrix)
    }
}

/// Kernel degree budget `n d + 1`.
pub fn default_width(a: &MatrixPolynomial) -> usize {
    a.n() * a.degree() + 1
}

/// Embedding with the default width `mu = n d + 1`.
pub fn r_embed(a: &MatrixPolynomial) -> REmbedding {
    r_embed_with_width(a, default_width(a))
}

pub fn r_embed_with_width(a: &MatrixPolynomial, mu: usize) -> REmbedding {
    let (n, d) = (a.n(), a.degree());
    let rows = mu + d;
    let mut m = DMatrix::zeros(n * rows, n * mu);
    for i in 0..n {
        for j in 0..n {
            let block = phi(&a.entry(i, j), mu);
            m.view_mut((i * rows, j * mu), (rows, mu)).copy_from(&block);
        }
    }
    REmbedding { matrix: m, n, d, mu }
}

/// Stacks `b` into a vector of length `n mu`, zero-filling each entry.
pub fn r_embed_vector(b: &PolyVector, mu: usize) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(b.len() * mu);
    for (i, e) in b.entries().iter().enumerate() {
        if let Some(deg) = e.iter().rposition(|&c| c != 0.0) {
            if deg >= mu {
                return Err(Error::DegreeOverflow {
                    entry: i,
                    degree: deg,
                    width: mu,
                });
            }
        }
        for (k, &c) in e.iter().take(mu).enumerate() {
            v[i * mu + k] = c;
        }
    }
    Ok(v)
}

/// Inverse of [`r_embed_vector`]; every entry gets `mu` coefficients.
pub fn unembed_vector(v: &DVector<f64>, mu: usize) -> Result<PolyVector> {
    if mu == 0 || !v.len().is_multiple_of(mu) {
        return Err(Error::Shape(format!(
            "vector of length {} is not a stack of width {mu}",
            v.len()
        )));
    }
    Ok(PolyVector::new(
        v.as_slice().chunks(mu).map(<[f64]>::to_vec).collect(),
    ))
}

/// Which coefficients of a kernel vector are unknowns.
///
/// Entry `i` may use coefficients `0..=bound_i`; `None` fixes the entry to zero.
/// Individual coefficients inside the bound can additionally be fixed to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelPattern {
    free: Vec<Vec<bool>>,
}

impl KernelPattern {
    pub fn from_bounds(bounds: &[Option<usize>]) -> Self {
        Self {
            free: bounds
                .iter()
                .map(|b| b.map_or_else(Vec::new, |d| vec![true; d + 1]))
                .collect(),
        }
    }

    pub fn uniform(n: usize, bound: usize) -> Self {
        Self::from_bounds(&vec![Some(bound); n])
    }

    /// Pattern matching the stored shape of `b`.
    pub fn of_vector(b: &PolyVector) -> Self {
        Self::from_bounds(&b.degree_bounds())
    }

    /// Pattern of the stored shape of `b` with its exactly-zero coefficients
    /// held fixed.
    pub fn of_support(b: &PolyVector) -> Self {
        let mut p = Self::of_vector(b);
        for (i, e) in b.entries().iter().enumerate() {
            for (k, &c) in e.iter().enumerate() {
                if c == 0.0 {
                    p.fix_zero(i, k);
                }
            }
        }
        p
    }

    pub fn fix_zero(&mut self, entry: usize, coeff: usize) {
        if let Some(slot) = self.free[entry].get_mut(coeff) {
            *slot = false;
        }
    }

    pub fn n(&self) -> usize {
        self.free.len()
    }

    pub fn bounds(&self) -> Vec<Option<usize>> {
        self.free.iter().map(|e| e.len().checked_sub(1)).collect()
    }

    pub fn max_bound(&self) -> Option<usize> {
        self.free.iter().filter_map(|e| e.len().checked_sub(1)).max()
    }

    pub fn is_free(&self, entry: usize, coeff: usize) -> bool {
        self.free
            .get(entry)
            .and_then(|e| e.get(coeff))
            .copied()
            .unwrap_or(false)
    }

    /// Free coefficients in entry-major order.
    pub fn free_coefficients(&self) -> Vec<(usize, usize)> {
        self.free
            .iter()
            .enumerate()
            .flat_map(|(i, e)| {
                e.iter()
                    .enumerate()
                    .filter(|(_, &f)| f)
                    .map(move |(k, _)| (i, k))
            })
            .collect()
    }
}

/// Reduced embedding for one kernel column.
#[derive(Clone, Debug)]
pub struct MinimalEmbedding {
    /// Reduced matrix of the unperturbed polynomial.
    pub matrix: DMatrix<f64>,
    /// Retained equations as `(row entry i, coefficient k)` of the product.
    pub row_map: Vec<(usize, usize)>,
    /// Free kernel coefficients as `(entry j, coefficient m)`.
    pub col_map: Vec<(usize, usize)>,
    pub kernel_degrees: Vec<Option<usize>>,
    pub n: usize,
    pub d: usize,
    row_lookup: Vec<Vec<Option<usize>>>,
    col_lookup: Vec<Vec<Option<usize>>>,
}

impl MinimalEmbedding {
    pub fn rows(&self) -> usize {
        self.row_map.len()
    }

    pub fn cols(&self) -> usize {
        self.col_map.len()
    }

    /// Reduced position of product coefficient `(i, k)`, if retained.
    pub fn row_index(&self, i: usize, k: usize) -> Option<usize> {
        self.row_lookup.get(i).and_then(|r| r.get(k)).copied().flatten()
    }

    /// Reduced position of kernel coefficient `(j, m)`, if free.
    pub fn col_index(&self, j: usize, m: usize) -> Option<usize> {
        self.col_lookup.get(j).and_then(|c| c.get(m)).copied().flatten()
    }

    /// Row index in the full embedding of width `mu`.
    pub fn full_row(&self, r: usize, mu: usize) -> usize {
        let (i, k) = self.row_map[r];
        i * (mu + self.d) + k
    }

    /// Column index in the full embedding of width `mu`.
    pub fn full_col(&self, c: usize, mu: usize) -> usize {
        let (j, m) = self.col_map[c];
        j * mu + m
    }

    /// Reduced matrix of an arbitrary polynomial of the same shape.
    pub fn assemble(&self, c: &MatrixPolynomial) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols());
        for (r, &(i, k)) in self.row_map.iter().enumerate() {
            for (col, &(j, mm)) in self.col_map.iter().enumerate() {
                if k >= mm && k - mm <= self.d {
                    m[(r, col)] = c.get(i, j, k - mm);
                }
            }
        }
        m
    }

    /// Free coefficients of `b` in column order.
    pub fn pack(&self, b: &PolyVector) -> DVector<f64> {
        DVector::from_iterator(
            self.cols(),
            self.col_map
                .iter()
                .map(|&(j, m)| b.entry(j).get(m).copied().unwrap_or(0.0)),
        )
    }

    /// Kernel vector with the given free coefficients.
    pub fn unpack(&self, bhat: &[f64]) -> PolyVector {
        let mut b = PolyVector::zeros(&self.kernel_degrees);
        for (&v, &(j, m)) in bhat.iter().zip(&self.col_map) {
            b.entry_mut(j)[m] = v;
        }
        b
    }
}

/// Drops kernel coefficients outside `pattern` and product equations that are
/// structurally `0 = 0` for every admissible perturbation.
///
/// A product coefficient `(i, k)` is retained when some term `C[i][j][l] b_j[m]`
/// with `l + m = k` has a free kernel coefficient and a coefficient of `A + ΔA`
/// that is either free or fixed to a nonzero value.
pub fn minimal_embed(
    a: &MatrixPolynomial,
    pattern: &KernelPattern,
    structure: &PerturbationStructure,
) -> Result<MinimalEmbedding> {
    let (n, d) = (a.n(), a.degree());
    if pattern.n() != n {
        return Err(Error::Shape(format!(
            "kernel pattern has {} entries, matrix polynomial has {n}",
            pattern.n()
        )));
    }
    let mu = default_width(a);
    for (entry, bound) in pattern.bounds().into_iter().enumerate() {
        if let Some(degree) = bound.filter(|&b| b >= mu) {
            return Err(Error::DegreeOverflow { entry, degree, width: mu });
        }
    }
    let col_map = pattern.free_coefficients();
    if col_map.is_empty() {
        return Err(Error::EmptyKernel);
    }
    let max_bound = pattern.max_bound().unwrap_or(0);
    let width = d + max_bound + 1;

    let structurally_nonzero =
        |i: usize, j: usize, l: usize| structure.is_free(i, j, l) || structure.fixed_value(a, i, j, l) != 0.0;

    let mut row_map = Vec::new();
    let mut row_lookup = vec![vec![None; width]; n];
    for i in 0..n {
        for k in 0..width {
            let live = col_map
                .iter()
                .any(|&(j, m)| k >= m && k - m <= d && structurally_nonzero(i, j, k - m));
            if live {
                row_lookup[i][k] = Some(row_map.len());
                row_map.push((i, k));
            }
        }
    }
    let mut col_lookup = vec![vec![None; max_bound + 1]; n];
    for (c, &(j, m)) in col_map.iter().enumerate() {
        col_lookup[j][m] = Some(c);
    }

    let mut emb = MinimalEmbedding {
        matrix: DMatrix::zeros(0, 0),
        row_map,
        col_map,
        kernel_degrees: pattern.bounds(),
        n,
        d,
        row_lookup,
        col_lookup,
    };
    emb.matrix = emb.assemble(a);
    Ok(emb)
}

/// Matrix `ψ(b̂)` with one row per retained equation and one column per
/// coefficient of `vec(C)`, so that `ψ(b̂) vec(C)` equals the reduced
/// embedding of `C` applied to `b̂`.
pub fn psi(bhat: &[f64], layout: &MinimalEmbedding) -> DMatrix<f64> {
    let (n, d) = (layout.n, layout.d);
    let mut m = DMatrix::zeros(layout.rows(), n * n * (d + 1));
    for (r, &(i, k)) in layout.row_map.iter().enumerate() {
        for (&bv, &(j, mm)) in bhat.iter().zip(&layout.col_map) {
            if k >= mm && k - mm <= d {
                m[(r, vec_index(n, d, i, j, k - mm))] += bv;
            }
        }
    }
    m
}

/// Smallest singular value of a dense matrix (zero for empty input).
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Certified lower bound `σ_min(Â) / sqrt(mu)` on the distance to singularity.
pub fn distance_lower_bound(a: &MatrixPolynomial) -> f64 {
    let e = r_embed(a);
    e.sigma_min() / (e.mu as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_small_cases() {
        let t = phi(&[1.0, 2.0], 2);
        assert_eq!(t, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 2.0]));
        assert_eq!(phi(&[1.0], 3), DMatrix::identity(3, 3));
    }

    #[test]
    fn scalar_embedding_is_phi() {
        let a = MatrixPolynomial::new(vec![
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
        ])
        .unwrap();
        let e = r_embed(&a);
        assert_eq!(e.mu, 2);
        assert_eq!(e.matrix, phi(&[0.0, 1.0], 2));
    }

    #[test]
    fn vector_embedding() {
        let b = PolyVector::new(vec![vec![1.0], vec![0.0]]);
        assert_eq!(r_embed_vector(&b, 2).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let back = unembed_vector(&r_embed_vector(&b, 2).unwrap(), 2).unwrap();
        assert_eq!(back.entry(0), &[1.0, 0.0]);
        let long = PolyVector::new(vec![vec![0.0, 0.0, 1.0]]);
        assert!(matches!(
            r_embed_vector(&long, 2),
            Err(Error::DegreeOverflow { .. })
        ));
    }

    #[test]
    fn identity_reduction_for_full_bounds() {
        let a = MatrixPolynomial::new(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 1.5]),
        ])
        .unwrap();
        let mu = default_width(&a);
        let s = PerturbationStructure::degree_preserving(&a);
        let m = minimal_embed(&a, &KernelPattern::uniform(2, mu - 1), &s).unwrap();
        assert_eq!(m.matrix, r_embed(&a).matrix);
    }

    #[test]
    fn fixed_zero_entry_drops_columns() {
        let a = MatrixPolynomial::new(vec![DMatrix::identity(3, 3), DMatrix::identity(3, 3)]).unwrap();
        let s = PerturbationStructure::degree_preserving(&a);
        let m = minimal_embed(&a, &KernelPattern::from_bounds(&[Some(2), None, Some(1)]), &s).unwrap();
        assert_eq!(m.cols(), 5);
        assert!(m.col_map.iter().all(|&(j, _)| j != 1));
        assert!(matches!(
            minimal_embed(&a, &KernelPattern::from_bounds(&[None, None, None]), &s),
            Err(Error::EmptyKernel)
        ));
    }
}
