//! Perturbation structures, structural enforcement and kernel normalization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{MinimalEmbedding, REmbedding};
use crate::error::{Error, Result};
use crate::polycore::{vec_coordinate, vec_index, MatrixPolynomial};

/// Affine mask over the coefficients of `ΔA`.
///
/// Fixed coefficients of `ΔA` equal their offset (zero for linear structures);
/// free coefficients are unknowns of the solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStructure {
    n: usize,
    d: usize,
    free: Vec<bool>,
    offset: Vec<f64>,
}

impl PerturbationStructure {
    fn from_predicate(a: &MatrixPolynomial, pred: impl Fn(usize, usize, usize) -> bool) -> Self {
        let (n, d) = (a.n(), a.degree());
        let len = n * n * (d + 1);
        let free = (0..len)
            .map(|idx| {
                let (i, j, k) = vec_coordinate(n, d, idx);
                pred(i, j, k)
            })
            .collect();
        Self {
            n,
            d,
            free,
            offset: vec![0.0; len],
        }
    }

    /// Every coefficient up to the matrix degree is free.
    pub fn degree_preserving(a: &MatrixPolynomial) -> Self {
        Self::from_predicate(a, |_, _, _| true)
    }

    /// A coefficient is free iff it is nonzero in `a`.
    pub fn support_preserving(a: &MatrixPolynomial) -> Self {
        Self::from_predicate(a, |i, j, k| a.get(i, j, k) != 0.0)
    }

    /// Coefficient `k` of entry `(i, j)` is free iff `k <= deg a_ij`; zero
    /// entries stay zero.
    pub fn entry_degree_preserving(a: &MatrixPolynomial) -> Self {
        Self::from_predicate(a, |i, j, k| a.entry_degree(i, j).is_some_and(|e| k <= e))
    }

    /// No free coefficients.
    pub fn rigid(a: &MatrixPolynomial) -> Self {
        Self::from_predicate(a, |_, _, _| false)
    }

    /// Parses a mask file: lines `i j k FREE|FIXED [value]` with 1-based `i, j`
    /// and 0-based `k`. Unlisted coefficients follow the degree-preserving rule.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse_mask(a: &MatrixPolynomial, text: &str) -> Result<Self> {
        let mut s = Self::degree_preserving(a);
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line, message };
            let tok: Vec<&str> = body.split_whitespace().collect();
            if tok.len() < 4 || tok.len() > 5 {
                return Err(err(format!("expected `i j k FREE|FIXED [value]`, got `{body}`")));
            }
            let index = |t: &str, what: &str| {
                t.parse::<usize>()
                    .map_err(|_| err(format!("invalid {what} index `{t}`")))
            };
            let (i, j, k) = (index(tok[0], "row")?, index(tok[1], "column")?, index(tok[2], "degree")?);
            if i == 0 || j == 0 || i > s.n || j > s.n || k > s.d {
                return Err(err(format!("coefficient ({i}, {j}, {k}) outside the matrix polynomial")));
            }
            match tok[3].to_ascii_uppercase().as_str() {
                "FREE" if tok.len() == 4 => s.set_free(i - 1, j - 1, k),
                "FIXED" => {
                    let value = match tok.get(4) {
                        Some(v) => v.parse::<f64>().map_err(|_| err(format!("invalid value `{v}`")))?,
                        None => 0.0,
                    };
                    s.set_fixed(i - 1, j - 1, k, value);
                }
                other => return Err(err(format!("unexpected flag `{other}`"))),
            }
        }
        Ok(s)
    }

    /// Mask file text that parses back to this structure.
    pub fn to_mask(&self) -> String {
        let mut out = String::new();
        for idx in 0..self.free.len() {
            let (i, j, k) = vec_coordinate(self.n, self.d, idx);
            if self.free[idx] {
                out.push_str(&format!("{} {} {} FREE\n", i + 1, j + 1, k));
            } else {
                out.push_str(&format!("{} {} {} FIXED {:e}\n", i + 1, j + 1, k, self.offset[idx]));
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.d
    }

    pub fn is_free(&self, i: usize, j: usize, k: usize) -> bool {
        k <= self.d && self.free[vec_index(self.n, self.d, i, j, k)]
    }

    /// Offset of `ΔA` at a fixed coefficient.
    pub fn offset(&self, i: usize, j: usize, k: usize) -> f64 {
        if k > self.d {
            return 0.0;
        }
        self.offset[vec_index(self.n, self.d, i, j, k)]
    }

    /// Value of `A + ΔA` at a fixed coefficient.
    pub fn fixed_value(&self, a: &MatrixPolynomial, i: usize, j: usize, k: usize) -> f64 {
        a.get(i, j, k) + self.offset(i, j, k)
    }

    pub fn set_free(&mut self, i: usize, j: usize, k: usize) {
        let idx = vec_index(self.n, self.d, i, j, k);
        self.free[idx] = true;
        self.offset[idx] = 0.0;
    }

    pub fn set_fixed(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = vec_index(self.n, self.d, i, j, k);
        self.free[idx] = false;
        self.offset[idx] = value;
    }

    /// Fixes every coefficient of degree `k`.
    pub fn fix_degree(&mut self, k: usize) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.set_fixed(i, j, k, 0.0);
            }
        }
    }

    /// Fixes rows `>= m` and columns `>= p` that came from zero padding.
    pub fn fix_padding(&mut self, m: usize, p: usize) {
        for idx in 0..self.free.len() {
            let (i, j, _) = vec_coordinate(self.n, self.d, idx);
            if i >= m || j >= p {
                self.free[idx] = false;
                self.offset[idx] = 0.0;
            }
        }
    }

    /// Free coefficients common to both structures.
    pub fn intersect(&self, other: &Self) -> Self {
        let mut s = self.clone();
        for (f, &g) in s.free.iter_mut().zip(&other.free) {
            *f = *f && g;
        }
        s
    }

    /// Positions of the free coefficients in `vec` ordering.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.free.len()).filter(|&i| self.free[i]).collect()
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn is_linear(&self) -> bool {
        self.offset.iter().all(|&v| v == 0.0)
    }

    /// Perturbation with the given free values and fixed offsets elsewhere.
    pub fn scatter(&self, free_values: &[f64]) -> MatrixPolynomial {
        let mut v = self.offset.clone();
        for (&idx, &x) in self.free_indices().iter().zip(free_values) {
            v[idx] = x;
        }
        MatrixPolynomial::unvectorize(self.n, self.d, &v).expect("structure shape is consistent")
    }

    /// Free coefficients of `delta` in `vec` ordering.
    pub fn gather(&self, delta: &MatrixPolynomial) -> Vec<f64> {
        let v = delta.vectorize();
        self.free_indices().into_iter().map(|i| v[i]).collect()
    }

    /// Whether `delta` conforms to the structure.
    pub fn conforms(&self, delta: &MatrixPolynomial, tol: f64) -> bool {
        delta
            .vectorize()
            .iter()
            .zip(&self.free)
            .zip(&self.offset)
            .all(|((&v, &f), &o)| f || (v - o).abs() <= tol)
    }
}

/// Nearest block-Toeplitz matrix to `x` whose blocks embed a perturbation
/// conforming to `structure`.
///
/// Free coefficients become the mean of their `mu` repeated copies, fixed
/// coefficients their offset, and entries off the Toeplitz bands zero.
pub fn project_embedding(
    x: &DMatrix<f64>,
    structure: &PerturbationStructure,
    shape: &REmbedding,
) -> (DMatrix<f64>, MatrixPolynomial) {
    let (n, d, mu) = (shape.n, shape.d, shape.mu);
    let rows = mu + d;
    let mut coeffs = MatrixPolynomial::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            for k in 0..=d {
                let value = if structure.is_free(i, j, k) {
                    (0..mu).map(|c| x[(i * rows + k + c, j * mu + c)]).sum::<f64>() / mu as f64
                } else {
                    structure.offset(i, j, k)
                };
                coeffs.set(i, j, k, value);
            }
        }
    }
    let proj = crate::embedding::r_embed_with_width(&coeffs, mu).matrix;
    (proj, coeffs)
}

/// Squared Frobenius distance of the perturbation `UV - Â` to the embeddings
/// of structure-conforming perturbations.
pub fn gamma(uv: &DMatrix<f64>, structure: &PerturbationStructure, ahat: &REmbedding) -> f64 {
    let delta = uv - &ahat.matrix;
    let (proj, _) = project_embedding(&delta, structure, ahat);
    (delta - proj).norm_squared()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    /// A chosen kernel coefficient equals one.
    PivotUnit,
    /// Each kernel column has unit Euclidean norm.
    ColumnUnitNorm,
    /// The leading free coefficient of a chosen entry equals one.
    MonicPivot,
}

/// Kernel coefficient `(entry, coeff)` used as a pivot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pivot {
    pub entry: usize,
    pub coeff: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub kind: NormalizationKind,
    /// One pivot per kernel column; ignored by `ColumnUnitNorm`.
    pub pivots: Vec<Pivot>,
}

impl NormalizationSpec {
    /// Reduced coordinate that is pinned to one, if any.
    pub fn pinned_coordinate(&self, column: usize, layout: &MinimalEmbedding) -> Result<Option<usize>> {
        let pivot = match self.kind {
            NormalizationKind::ColumnUnitNorm => return Ok(None),
            _ => self
                .pivots
                .get(column)
                .ok_or_else(|| Error::InvalidPivot(format!("no pivot for kernel column {column}")))?,
        };
        let coeff = match self.kind {
            NormalizationKind::MonicPivot => layout
                .col_map
                .iter()
                .filter(|&&(j, _)| j == pivot.entry)
                .map(|&(_, m)| m)
                .max()
                .ok_or_else(|| Error::InvalidPivot(format!("entry {} is fixed to zero", pivot.entry)))?,
            _ => pivot.coeff,
        };
        layout
            .col_index(pivot.entry, coeff)
            .map(Some)
            .ok_or_else(|| Error::InvalidPivot(format!("coefficient ({}, {coeff}) is not free", pivot.entry)))
    }
}

/// Row `N` of the normalization constraint `N^T b̂ = 1` for one kernel column.
///
/// For unit-norm columns this is the current `b̂` itself.
pub fn normalization_row(
    spec: &NormalizationSpec,
    column: usize,
    layout: &MinimalEmbedding,
    bhat: &[f64],
) -> Result<DVector<f64>> {
    match spec.pinned_coordinate(column, layout)? {
        Some(q) => {
            let mut row = DVector::zeros(layout.cols());
            row[q] = 1.0;
            Ok(row)
        }
        None => Ok(DVector::from_column_slice(bhat)),
    }
}

/// Outcome of automatic pivot selection.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotChoice {
    pub pivots: Vec<Pivot>,
    /// Set when a column lost its preferred entry to an earlier column.
    pub tie_broken: bool,
}

/// Chooses the largest-magnitude coefficient of each column, never reusing an
/// entry already claimed by an earlier column.
pub fn select_pivots(columns: &[Vec<Vec<f64>>]) -> Result<PivotChoice> {
    let mut used: Vec<usize> = Vec::new();
    let mut pivots = Vec::with_capacity(columns.len());
    let mut tie_broken = false;
    for col in columns {
        let mut ranked: Vec<(f64, Pivot)> = col
            .iter()
            .enumerate()
            .flat_map(|(entry, e)| {
                e.iter()
                    .enumerate()
                    .map(move |(coeff, &v)| (v.abs(), Pivot { entry, coeff }))
            })
            .filter(|(v, _)| *v > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let best = ranked.first().ok_or(Error::ZeroVector)?.1;
        let chosen = ranked
            .iter()
            .find(|(_, p)| !used.contains(&p.entry))
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::InvalidPivot("no distinct pivot entry left".into()))?;
        if chosen.entry != best.entry {
            tie_broken = true;
            log::info!("pivot entry {} already taken, using entry {}", best.entry, chosen.entry);
        }
        used.push(chosen.entry);
        pivots.push(chosen);
    }
    Ok(PivotChoice { pivots, tie_broken })
}
