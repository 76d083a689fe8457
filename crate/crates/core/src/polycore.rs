//! Matrix polynomials with real coefficients and polynomial vectors.
//!
//! A [`MatrixPolynomial`] stores `A(t) = A_0 + A_1 t + ... + A_d t^d` as a dense
//! list of `n x n` coefficient matrices. The stored degree is a bound: it is
//! never tightened by trimming trailing zero coefficients, because iterates of
//! the solver routinely pass through tiny leading coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square real matrix polynomial with an explicit degree bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixPolynomial {
    n: usize,
    coeffs: Vec<DMatrix<f64>>,
}

impl MatrixPolynomial {
    /// Builds a matrix polynomial from its coefficients `A_0, ..., A_d`.
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::Shape("matrix polynomial needs at least one coefficient".into()))?;
        let n = first.nrows();
        for (k, c) in coeffs.iter().enumerate() {
            if c.nrows() != n || c.ncols() != n {
                return Err(Error::Shape(format!(
                    "coefficient {k} is {}x{}, expected {n}x{n}",
                    c.nrows(),
                    c.ncols()
                )));
            }
        }
        Ok(Self { n, coeffs })
    }

    /// Zero-pads rectangular `m x p` coefficients to a square `max(m, p)` polynomial.
    pub fn from_rectangular(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::Shape("matrix polynomial needs at least one coefficient".into()))?;
        let (m, p) = first.shape();
        if coeffs.iter().any(|c| c.shape() != (m, p)) {
            return Err(Error::Shape("coefficient matrices differ in shape".into()));
        }
        let n = m.max(p);
        let padded = coeffs
            .into_iter()
            .map(|c| {
                let mut s = DMatrix::zeros(n, n);
                s.view_mut((0, 0), (m, p)).copy_from(&c);
                s
            })
            .collect();
        Self::new(padded)
    }

    pub fn zeros(n: usize, degree: usize) -> Self {
        Self {
            n,
            coeffs: vec![DMatrix::zeros(n, n); degree + 1],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            coeffs: vec![DMatrix::identity(n, n)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The stored degree bound `d`.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> &DMatrix<f64> {
        &self.coeffs[k]
    }

    /// Coefficient `k` of entry `(i, j)`; zero beyond the degree bound.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coeffs.get(k).map_or(0.0, |c| c[(i, j)])
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.coeffs[k][(i, j)] = value;
    }

    /// Coefficient list of entry `(i, j)`, length `d + 1`.
    pub fn entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.coeffs.iter().map(|c| c[(i, j)]).collect()
    }

    /// Actual degree of entry `(i, j)`, `None` for the zero polynomial.
    pub fn entry_degree(&self, i: usize, j: usize) -> Option<usize> {
        (0..self.coeffs.len()).rev().find(|&k| self.coeffs[k][(i, j)] != 0.0)
    }

    /// Square root of the sum of squares of every scalar coefficient.
    pub fn frobenius_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Polynomial matrix-vector product `A(t) b(t)`.
    pub fn apply(&self, b: &PolyVector) -> Result<PolyVector> {
        if b.len() != self.n {
            return Err(Error::Shape(format!(
                "vector of length {} applied to {}x{} matrix polynomial",
                b.len(),
                self.n,
                self.n
            )));
        }
        let width = self.degree() + b.max_len().max(1);
        let mut out = vec![vec![0.0; width]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for j in 0..self.n {
                for (m, &bv) in b.entry(j).iter().enumerate() {
                    if bv == 0.0 {
                        continue;
                    }
                    for (l, c) in self.coeffs.iter().enumerate() {
                        row[l + m] += c[(i, j)] * bv;
                    }
                }
            }
        }
        Ok(PolyVector::new(out))
    }

    /// Stacks the coefficient vectors of every entry, column-major over entries
    /// with the coefficient index innermost.
    pub fn vectorize(&self) -> Vec<f64> {
        let d1 = self.coeffs.len();
        let mut v = Vec::with_capacity(self.n * self.n * d1);
        for j in 0..self.n {
            for i in 0..self.n {
                v.extend(self.coeffs.iter().map(|c| c[(i, j)]));
            }
        }
        debug_assert_eq!(v.len(), self.n * self.n * d1);
        v
    }

    /// Inverse of [`vectorize`](Self::vectorize).
    pub fn unvectorize(n: usize, degree: usize, v: &[f64]) -> Result<Self> {
        let d1 = degree + 1;
        if v.len() != n * n * d1 {
            return Err(Error::Shape(format!(
                "vector of length {} does not describe a {n}x{n} degree {degree} polynomial",
                v.len()
            )));
        }
        let mut a = Self::zeros(n, degree);
        for (idx, &val) in v.iter().enumerate() {
            let (i, j, k) = vec_coordinate(n, degree, idx);
            a.coeffs[k][(i, j)] = val;
        }
        Ok(a)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Entrywise sum; the result carries the larger degree bound.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Shape("matrix polynomials differ in size".into()));
        }
        let d = self.degree().max(other.degree());
        let coeffs = (0..=d)
            .map(|k| {
                let mut c = DMatrix::zeros(self.n, self.n);
                if let Some(a) = self.coeffs.get(k) {
                    c += a;
                }
                if let Some(b) = other.coeffs.get(k) {
                    c += b;
                }
                c
            })
            .collect();
        Ok(Self { n: self.n, coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }
}

/// Position of `(i, j, k)` in the vectorized ordering.
pub fn vec_index(n: usize, degree: usize, i: usize, j: usize, k: usize) -> usize {
    (j * n + i) * (degree + 1) + k
}

/// Inverse of [`vec_index`].
pub fn vec_coordinate(n: usize, degree: usize, idx: usize) -> (usize, usize, usize) {
    let d1 = degree + 1;
    let k = idx % d1;
    let e = idx / d1;
    (e % n, e / n, k)
}

/// Vector of univariate polynomials with per-entry coefficient lists.
///
/// Entry `i` stores exactly `delta_i + 1` coefficients (ascending powers). An
/// empty list is an entry fixed to the zero polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyVector {
    entries: Vec<Vec<f64>>,
}

impl PolyVector {
    pub fn new(entries: Vec<Vec<f64>>) -> Self {
        Self { entries }
    }

    pub fn zeros(bounds: &[Option<usize>]) -> Self {
        Self {
            entries: bounds
                .iter()
                .map(|b| b.map_or_else(Vec::new, |d| vec![0.0; d + 1]))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.entries[i]
    }

    /// Per-entry degree bounds implied by the stored lengths.
    pub fn degree_bounds(&self) -> Vec<Option<usize>> {
        self.entries
            .iter()
            .map(|e| e.len().checked_sub(1))
            .collect()
    }

    fn max_len(&self) -> usize {
        self.entries.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Largest stored degree bound, `None` if every entry is fixed to zero.
    pub fn degree_bound(&self) -> Option<usize> {
        self.max_len().checked_sub(1)
    }

    /// Degree of the highest nonzero coefficient over all entries.
    pub fn degree(&self) -> Option<usize> {
        self.entries
            .iter()
            .filter_map(|e| e.iter().rposition(|&c| c != 0.0))
            .max()
    }

    /// Euclidean norm of all coefficients.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.iter())
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| e.iter().map(|c| c * s).collect())
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.iter().all(|&c| c == 0.0))
    }

    /// Copy with every entry padded (or truncated) to `len` coefficients.
    pub fn resized(&self, len: usize) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.resize(len, 0.0);
                    e
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pencil_a() -> MatrixPolynomial {
        let a0 = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 0.04, 0.89, 0.15, -0.02, 0.0, 0.92, 0.11, 0.066],
        );
        let a1 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        MatrixPolynomial::new(vec![a0, a1]).unwrap()
    }

    #[test]
    fn identity_norm_is_sqrt_n() {
        for n in 1..6 {
            let norm = MatrixPolynomial::identity(n).frobenius_norm();
            assert!((norm - (n as f64).sqrt()).abs() < 1e-15);
        }
        assert_eq!(MatrixPolynomial::zeros(3, 2).frobenius_norm(), 0.0);
    }

    #[test]
    fn example_norm_is_direct_sum_of_squares() {
        let printed = [0.04, 0.89, 0.15, -0.02, 0.92, 0.11, 0.066, 1.0, 1.0];
        let expected = printed.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        assert!((pencil_a().frobenius_norm() - expected).abs() < 1e-15);
    }

    #[test]
    fn vectorize_orders_columns_then_coefficients() {
        let a = MatrixPolynomial::new(vec![
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 2.0),
        ])
        .unwrap();
        assert_eq!(a.vectorize(), vec![3.0, 2.0]);

        let b = MatrixPolynomial::new(vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])])
            .unwrap();
        assert_eq!(b.vectorize(), vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn vec_index_roundtrip() {
        let (n, d) = (3, 2);
        for idx in 0..n * n * (d + 1) {
            let (i, j, k) = vec_coordinate(n, d, idx);
            assert_eq!(vec_index(n, d, i, j, k), idx);
        }
    }

    #[test]
    fn apply_identity_and_zero() {
        let b = PolyVector::new(vec![vec![1.0, 2.0], vec![0.5, -1.0, 3.0]]);
        let ib = MatrixPolynomial::identity(2).apply(&b).unwrap();
        assert_eq!(ib.entry(0), &[1.0, 2.0, 0.0]);
        assert_eq!(ib.entry(1), &[0.5, -1.0, 3.0]);

        let z = PolyVector::zeros(&[Some(1), Some(2)]);
        assert!(pencil_a_sub(2).apply(&z).unwrap().is_zero());
    }

    fn pencil_a_sub(n: usize) -> MatrixPolynomial {
        let full = pencil_a();
        let coeffs = full
            .coeffs()
            .iter()
            .map(|c| c.view((0, 0), (n, n)).into_owned())
            .collect();
        MatrixPolynomial::new(coeffs).unwrap()
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let b = PolyVector::new(vec![vec![1.0]; 2]);
        assert!(matches!(pencil_a().apply(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn rectangular_input_is_zero_padded() {
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = MatrixPolynomial::from_rectangular(vec![c]).unwrap();
        assert_eq!(a.n(), 3);
        assert_eq!(a.get(1, 2, 0), 6.0);
        assert_eq!(a.get(2, 0, 0), 0.0);
        assert_eq!(a.get(2, 2, 0), 0.0);
    }

    #[test]
    fn entry_degree_ignores_stored_bound() {
        let a = pencil_a();
        assert_eq!(a.degree(), 1);
        assert_eq!(a.entry_degree(0, 0), None);
        assert_eq!(a.entry_degree(0, 1), Some(0));
        assert_eq!(a.entry_degree(1, 2), Some(1));
    }
}
