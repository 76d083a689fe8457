//! Rank-factorization formulation.
//!
//! A rank-deficient approximation of the embedding `Â` is written as `UV` with
//! `U` of size `N×R` and `V` of size `R×M`, `R < M`. Structure and
//! orthonormality of `U` are enforced by quadratic penalties:
//!
//! `Φ(U, V) = ‖Â − UV‖_F² + ρ ‖Γ‖_F² + ρ ‖UᵀU − I‖_F²`
//!
//! where `Γ` is the part of the perturbation `UV − Â` that no
//! structure-conforming embedding can explain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embedding::REmbedding;
use crate::error::{Error, Result};
use crate::polycore::MatrixPolynomial;
use crate::structure::{gamma, project_embedding, PerturbationStructure};

fn orthogonality_defect(u: &DMatrix<f64>) -> f64 {
    let g = u.tr_mul(u);
    (g - DMatrix::identity(u.ncols(), u.ncols())).norm_squared()
}

fn check_shapes(u: &DMatrix<f64>, v: &DMatrix<f64>, ahat: &REmbedding) -> Result<()> {
    let (rows, cols) = ahat.matrix.shape();
    if u.nrows() != rows || v.ncols() != cols || u.ncols() != v.nrows() {
        return Err(Error::Shape(format!(
            "factors {}x{} and {}x{} do not match a {rows}x{cols} embedding",
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    Ok(())
}

/// Evaluates `Φ(U, V)`. `rho` must be positive.
pub fn penalty_objective(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    ahat: &REmbedding,
    structure: &PerturbationStructure,
    rho: f64,
) -> Result<f64> {
    check_shapes(u, v, ahat)?;
    if !(rho > 0.0) {
        return Err(Error::Shape(format!("penalty weight must be positive, got {rho}")));
    }
    let uv = u * v;
    let fit = (&ahat.matrix - &uv).norm_squared();
    Ok(fit + rho * gamma(&uv, structure, ahat) + rho * orthogonality_defect(u))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankFactOptions {
    /// Inner dimension; `M − 1` when absent.
    pub rank: Option<usize>,
    /// Penalty weight; `1e3 ‖Â‖_F²` when absent.
    pub rho: Option<f64>,
    pub max_iter: usize,
    /// Stop once a sweep lowers `Φ` by less than this fraction.
    pub rel_tol: f64,
    /// Relative residual at which the inner conjugate-gradient solve stops.
    pub cg_tol: f64,
}

impl Default for RankFactOptions {
    fn default() -> Self {
        Self {
            rank: None,
            rho: None,
            max_iter: 500,
            rel_tol: 1e-14,
            cg_tol: 1e-13,
        }
    }
}

/// Result of [`coordinate_descent`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankFactorization {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub rank: usize,
    pub rho: f64,
    /// `Φ` at the start and after every sweep.
    pub history: Vec<f64>,
    /// `Â − UV`.
    pub residual: DMatrix<f64>,
    /// Structure-conforming perturbation nearest to `UV − Â`, as coefficients.
    pub delta_a: MatrixPolynomial,
}

impl RankFactorization {
    pub fn phi(&self) -> f64 {
        *self.history.last().expect("history holds the starting value")
    }

    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }

    /// `‖UᵀU − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_defect(&self.u).sqrt()
    }
}

/// Splits the structure projection into its linear part and the constant
/// embedding of the fixed offsets.
struct Projector<'a> {
    structure: &'a PerturbationStructure,
    ahat: &'a REmbedding,
    offsets: DMatrix<f64>,
}

impl<'a> Projector<'a> {
    fn new(structure: &'a PerturbationStructure, ahat: &'a REmbedding) -> Self {
        let zero = DMatrix::zeros(ahat.matrix.nrows(), ahat.matrix.ncols());
        let (offsets, _) = project_embedding(&zero, structure, ahat);
        Self { structure, ahat, offsets }
    }

    /// `X − L(X)` with `L` the linear part of the projection.
    fn complement(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (p, _) = project_embedding(x, self.structure, self.ahat);
        x - (p - &self.offsets)
    }
}

/// Minimizes `Φ` over `V` for fixed `U` by conjugate gradients on
/// `UᵀUV + ρ UᵀQ(UV) = UᵀÂ + ρ UᵀQ(Â + E)`, warm-started at `v0`.
fn v_step(u: &DMatrix<f64>, v0: &DMatrix<f64>, proj: &Projector, rho: f64, tol: f64) -> DMatrix<f64> {
    let ahat = &proj.ahat.matrix;
    let utu = u.tr_mul(u);
    let apply = |v: &DMatrix<f64>| &utu * v + u.tr_mul(&proj.complement(&(u * v))) * rho;
    let rhs = u.tr_mul(ahat) + u.tr_mul(&proj.complement(&(ahat + &proj.offsets))) * rho;
    let scale = rhs.norm().max(f64::MIN_POSITIVE);

    let mut v = v0.clone();
    let mut r = &rhs - apply(&v);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let cap = 4 * v.len().max(10);
    for _ in 0..cap {
        if rr.sqrt() <= tol * scale {
            break;
        }
        let ap = apply(&p);
        let curv = p.dot(&ap);
        if !(curv > 0.0) {
            break;
        }
        let alpha = rr / curv;
        v += &p * alpha;
        r -= &ap * alpha;
        let next = r.norm_squared();
        p = &r + &p * (next / rr);
        rr = next;
    }
    v
}

/// Orthonormal polar factor of `w`.
fn polar(w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = w.clone().svd(true, true);
    Some(svd.u? * svd.v_t?)
}

/// Block coordinate descent on `Φ` from the truncated SVD of `Â`.
pub fn coordinate_descent(
    ahat: &REmbedding,
    structure: &PerturbationStructure,
    options: &RankFactOptions,
) -> Result<RankFactorization> {
    let m = ahat.matrix.ncols();
    let rank = options.rank.unwrap_or(m.saturating_sub(1));
    if rank == 0 || rank >= m {
        return Err(Error::KernelDimension {
            requested: rank,
            width: m,
        });
    }
    let svd = ahat.matrix.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let full_u = svd.u.expect("requested left singular vectors");
    let full_vt = svd.v_t.expect("requested right singular vectors");
    let mut u = DMatrix::zeros(ahat.matrix.nrows(), rank);
    let mut v = DMatrix::zeros(rank, m);
    for (c, &k) in order.iter().take(rank).enumerate() {
        u.set_column(c, &full_u.column(k));
        v.set_row(c, &(full_vt.row(k) * svd.singular_values[k]));
    }
    coordinate_descent_from(ahat, structure, u, v, options)
}

/// Block coordinate descent on `Φ` from a given factorization.
///
/// Each sweep minimizes exactly over `V`, then replaces `U` by the better of
/// two polar factors: that of `ÂVᵀ` and that of `(Â + P(UV − Â))Vᵀ`, where `P`
/// projects onto conforming perturbations. Neither update is kept if it
/// raises `Φ`, so the recorded sequence never increases.
pub fn coordinate_descent_from(
    ahat: &REmbedding,
    structure: &PerturbationStructure,
    u0: DMatrix<f64>,
    v0: DMatrix<f64>,
    options: &RankFactOptions,
) -> Result<RankFactorization> {
    check_shapes(&u0, &v0, ahat)?;
    if structure.n() != ahat.n || structure.degree() != ahat.d {
        return Err(Error::Shape("structure does not match the embedding".into()));
    }
    let rho = options.rho.unwrap_or_else(|| {
        let r = 1e3 * ahat.matrix.norm_squared();
        if r > 0.0 {
            r
        } else {
            1e3
        }
    });
    let proj = Projector::new(structure, ahat);
    let objective = |u: &DMatrix<f64>, v: &DMatrix<f64>| penalty_objective(u, v, ahat, structure, rho);

    let (mut u, mut v) = (u0, v0);
    let mut phi = objective(&u, &v)?;
    let mut history = vec![phi];
    for _ in 0..options.max_iter {
        let start = phi;

        let v_new = v_step(&u, &v, &proj, rho, options.cg_tol);
        let phi_v = objective(&u, &v_new)?;
        if phi_v <= phi {
            v = v_new;
            phi = phi_v;
        }

        let uv = &u * &v;
        let (projected, _) = project_embedding(&(&uv - &ahat.matrix), structure, ahat);
        let targets = [ahat.matrix.clone(), &ahat.matrix + projected];
        for t in &targets {
            if let Some(u_new) = polar(&(t * v.transpose())) {
                let phi_u = objective(&u_new, &v)?;
                if phi_u <= phi {
                    u = u_new;
                    phi = phi_u;
                }
            }
        }

        history.push(phi);
        log::trace!("rankfact sweep {} phi {:.6e}", history.len() - 1, phi);
        if start - phi <= options.rel_tol * start.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let uv = &u * &v;
    let (_, delta_a) = project_embedding(&(&uv - &ahat.matrix), structure, ahat);
    Ok(RankFactorization {
        residual: &ahat.matrix - uv,
        rank: u.ncols(),
        u,
        v,
        rho,
        history,
        delta_a,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationTolerances {
    /// Solutions closer than this are the same solution.
    pub same_class: f64,
    /// Allowed shortfall below `σ_min(Â)`.
    pub slack: f64,
}

impl Default for SeparationTolerances {
    fn default() -> Self {
        Self {
            same_class: 1e-6,
            slack: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub first: usize,
    pub second: usize,
    /// Spectral norm of the difference of the two embedded perturbations.
    pub distance: f64,
    pub same_class: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// `σ_min(Â)`.
    pub threshold: f64,
    pub pairs: Vec<PairDistance>,
    /// Distinct pairs closer than `threshold − slack`.
    pub violations: Vec<PairDistance>,
}

impl SeparationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Pairwise spectral distances between embedded perturbations `ΔÂ`, checked
/// against `σ_min(Â)`. Pairs within `same_class` of each other count as one
/// solution and are not tested.
pub fn separation_check(
    deltas: &[DMatrix<f64>],
    ahat: &REmbedding,
    tol: &SeparationTolerances,
) -> Result<SeparationReport> {
    for d in deltas {
        if d.shape() != ahat.matrix.shape() {
            return Err(Error::Shape(format!(
                "perturbation is {}x{}, embedding is {}x{}",
                d.nrows(),
                d.ncols(),
                ahat.matrix.nrows(),
                ahat.matrix.ncols()
            )));
        }
    }
    let threshold = ahat.sigma_min();
    let mut pairs = Vec::new();
    for i in 0..deltas.len() {
        for j in i + 1..deltas.len() {
            let distance = spectral_norm(&(&deltas[i] - &deltas[j]));
            pairs.push(PairDistance {
                first: i,
                second: j,
                distance,
                same_class: distance <= tol.same_class,
            });
        }
    }
    let violations = pairs
        .iter()
        .filter(|p| !p.same_class && p.distance < threshold - tol.slack)
        .cloned()
        .collect();
    Ok(SeparationReport {
        threshold,
        pairs,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{r_embed, r_embed_with_width};

    fn singular_pencil() -> MatrixPolynomial {
        // Second column is t times the first, so (t, -1) spans a kernel.
        MatrixPolynomial::new(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 2.0]),
        ])
        .unwrap()
    }

    #[test]
    fn exact_factorization_leaves_only_orthogonality() {
        let a = singular_pencil();
        let ahat = r_embed(&a);
        let s = PerturbationStructure::degree_preserving(&a);
        // UV = Â with a deliberately non-orthonormal U.
        let svd = ahat.matrix.clone().svd(true, true);
        let u = svd.u.unwrap() * 2.0;
        let v = DMatrix::from_diagonal(&svd.singular_values) * svd.v_t.unwrap() * 0.5;
        let phi = penalty_objective(&u, &v, &ahat, &s, 3.0).unwrap();
        let expected = 3.0 * (u.tr_mul(&u) - DMatrix::identity(u.ncols(), u.ncols())).norm_squared();
        assert!((phi - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn rejects_nonpositive_weight() {
        let a = singular_pencil();
        let ahat = r_embed(&a);
        let s = PerturbationStructure::degree_preserving(&a);
        let u = DMatrix::zeros(ahat.matrix.nrows(), 2);
        let v = DMatrix::zeros(2, ahat.matrix.ncols());
        assert!(penalty_objective(&u, &v, &ahat, &s, 0.0).is_err());
    }

    #[test]
    fn planted_singular_reaches_zero() {
        let a = singular_pencil();
        let ahat = r_embed(&a);
        let s = PerturbationStructure::degree_preserving(&a);
        let f = coordinate_descent(&ahat, &s, &RankFactOptions::default()).unwrap();
        assert!(f.phi() <= 1e-8, "phi {}", f.phi());
        assert!(f.orthogonality_error() <= 1e-12);
        assert!(f.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rank_must_drop() {
        let a = singular_pencil();
        let ahat = r_embed(&a);
        let s = PerturbationStructure::degree_preserving(&a);
        let opts = RankFactOptions {
            rank: Some(ahat.matrix.ncols()),
            ..Default::default()
        };
        assert!(coordinate_descent(&ahat, &s, &opts).is_err());
    }

    #[test]
    fn separation_cases() {
        let a = singular_pencil();
        let ahat = r_embed_with_width(&a, 3);
        let zero = DMatrix::zeros(ahat.matrix.nrows(), ahat.matrix.ncols());
        let tol = SeparationTolerances::default();
        assert!(separation_check(std::slice::from_ref(&zero), &ahat, &tol).unwrap().passed());
        let dup = separation_check(&[zero.clone(), zero.clone()], &ahat, &tol).unwrap();
        assert!(dup.pairs[0].same_class && dup.passed());
        let mut near = zero.clone();
        near[(0, 0)] = 1e-3;
        let sep = separation_check(&[zero, near], &ahat, &tol).unwrap();
        // σ_min of a singular embedding is zero, so any distinct pair is far enough.
        assert!(sep.passed());
    }
}
