//! Published numbers for the worked instances.

mod common;

use common::*;
use polyrank::rankfact::{coordinate_descent, RankFactOptions};
use polyrank::solver::{cref_reduce, default_bounds, init_kernel_svd, DeltaInit};
use polyrank::{
    r_embed, solve, KernelInit, Method, MatrixPolynomial, PerturbationStructure, Pivot, PolyVector, SolveOptions,
    SolveReport,
};

/// Largest coefficient difference between `got` and `want` after fixing the
/// sign, over the coefficients present in `want` only.
fn printed_gap(got: &PolyVector, want: &PolyVector) -> f64 {
    let gap = |sign: f64| {
        want.entries()
            .iter()
            .enumerate()
            .flat_map(|(i, e)| e.iter().enumerate().map(move |(k, &w)| (i, k, w)))
            .map(|(i, k, w)| (sign * got.entry(i).get(k).copied().unwrap_or(0.0) - w).abs())
            .fold(0.0, f64::max)
    };
    gap(1.0).min(gap(-1.0))
}

/// Same as [`printed_gap`] but also requires every unprinted coefficient of
/// `got` to be below `tol`.
fn kernel_gap(got: &PolyVector, want: &PolyVector, tol: f64) -> f64 {
    let unit = got.scale(1.0 / got.norm());
    for (i, e) in unit.entries().iter().enumerate() {
        for (k, &v) in e.iter().enumerate().skip(want.entry(i).len()) {
            assert!(v.abs() < tol, "unprinted coefficient {i},{k} is {v}");
        }
    }
    printed_gap(&unit, want)
}

fn coeff_gap(got: &MatrixPolynomial, k: usize, want: &nalgebra::DMatrix<f64>) -> f64 {
    (got.coeff(k) - want).amax()
}

fn svd(bounds: Vec<Option<usize>>) -> KernelInit {
    KernelInit::Svd { rank_drop: 1, bounds }
}

fn converged(report: SolveReport) -> SolveReport {
    assert!(report.converged, "solver failed: {:?}", report.failure);
    report
}

#[test]
fn svd_start_matches_reference_vector() {
    let a = pencil_a();
    let b = init_kernel_svd(&a, 1, &default_bounds(&a)).unwrap().remove(0);
    assert!(printed_gap(&b, &pencil_a_b_init()) < 1e-5);

    let a = pencil_b();
    let b = init_kernel_svd(&a, 1, &default_bounds(&a)).unwrap().remove(0);
    assert!(printed_gap(&b, &pencil_b_b_init()) < 1e-5);
}

#[test]
fn fixed_zero_solution_matches_reference_perturbation() {
    let a = pencil_a();
    let r = converged(solve(&a, &affine_fixed_zeros(&a), &svd(pencil_a_bounds()), &SolveOptions::default()).unwrap());
    let (delta0, b) = pencil_a_fixed_zeros_solution();
    assert!(coeff_gap(&r.delta_a, 0, &delta0) < 1e-4);
    assert_eq!(r.delta_a.coeff(1).amax(), 0.0);
    assert_eq!(r.delta_a.get(0, 0, 0), 0.0);
    assert_eq!(r.delta_a.get(1, 2, 0), 0.0);
    assert!(kernel_gap(&r.kernel[0], &b, 1e-12) < 1e-4);
}

#[test]
fn free_zero_solution_matches_reference_perturbation() {
    let a = pencil_a();
    let r = converged(solve(&a, &affine_free_zeros(&a), &svd(pencil_a_bounds()), &SolveOptions::default()).unwrap());
    let delta0 = mat(3, &[0.0, -0.094179, -0.0057705, -0.093280, 0.026786, 0.0016412, 0.0057154, -0.0016412, -0.00010056]);
    assert!(coeff_gap(&r.delta_a, 0, &delta0) < 1e-4);
    let b = poly(&[&[0.082131, 0.73073], &[-0.67644], &[-0.041447]]);
    assert!(kernel_gap(&r.kernel[0], &b, 1e-12) < 1e-4);
}

#[test]
fn degree_preserving_solution_matches_reference_perturbation() {
    let a = pencil_a();
    let s = PerturbationStructure::degree_preserving(&a);
    let r = converged(solve(&a, &s, &svd(pencil_a_bounds()), &SolveOptions::default()).unwrap());
    let d0 = mat(3, &[0.0036502, -0.066405, -0.0020069, -0.066897, 0.029807, 0.00090082, 0.0059893, -0.0024133, -0.000072934]);
    let d1 = mat(3, &[0.0, 0.0039174, 0.00011839, 0.0, 0.058993, 0.0017829, 0.0, -0.0053098, -0.00016047]);
    assert!(coeff_gap(&r.delta_a, 0, &d0) < 1e-4);
    assert!(coeff_gap(&r.delta_a, 1, &d1) < 1e-4);
    let b = poly(&[&[-0.080355, -0.72941], &[0.67903], &[0.020522]]);
    assert!(kernel_gap(&r.kernel[0], &b, 1e-12) < 1e-4);
}

#[test]
fn support_preserving_solution_matches_reference_perturbation() {
    let a = pencil_a();
    let s = PerturbationStructure::support_preserving(&a);
    let r = converged(solve(&a, &s, &svd(pencil_a_bounds()), &SolveOptions::default()).unwrap());
    let d0 = mat(3, &[0.0, -0.094311, -0.0057928, -0.092552, 0.026973, 0.0, 0.0057434, -0.0016739, -0.00010281]);
    let d1 = mat(3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0051028, 0.0, -0.0051554, 0.0]);
    assert!(coeff_gap(&r.delta_a, 0, &d0) < 1e-4);
    assert!(coeff_gap(&r.delta_a, 1, &d1) < 1e-4);
    let b = poly(&[&[-0.082339, -0.72895], &[0.67832], &[0.041664]]);
    assert!(kernel_gap(&r.kernel[0], &b, 1e-12) < 1e-4);
}

#[test]
fn damped_run_matches_reference_perturbation() {
    let a = pencil_b();
    let s = PerturbationStructure::degree_preserving(&a);
    let o = SolveOptions { method: Method::Damped, ..Default::default() };
    let r = converged(solve(&a, &s, &svd(vec![Some(1); 3]), &o).unwrap());
    let d0 = mat(3, &[0.17772, 0.12420, -0.068210, 0.078872, 0.41583, -0.094081, -0.15413, 0.12940, 0.017208]);
    let d1 = mat(3, &[0.047498, 0.44989, -0.091945, 0.20979, -0.094205, -0.037916, 0.082862, -0.58334, 0.081637]);
    assert!(coeff_gap(&r.delta_a, 0, &d0) < 1e-3);
    assert!(coeff_gap(&r.delta_a, 1, &d1) < 1e-3);
    let b = poly(&[&[-0.21491, -0.29258], &[-0.90281, 0.044825], &[0.21562, 0.068189]]);
    assert!(kernel_gap(&r.kernel[0], &b, 1e-12) < 1e-3);
}

#[test]
fn given_kernel_run_matches_reference_perturbation() {
    let a = pencil_b();
    let s = PerturbationStructure::degree_preserving(&a);
    let o = SolveOptions { delta_init: DeltaInit::MinNorm, ..Default::default() };
    let r = converged(solve(&a, &s, &KernelInit::Given(vec![pencil_b_given_kernel()]), &o).unwrap());
    let d0 = mat(3, &[0.17257, 0.25225, 0.087147, 0.21449, 0.31353, 0.10832, -0.055963, -0.081803, -0.028261]);
    let d1 = mat(3, &[0.0, 0.12237, -0.46902, 0.0, 0.15210, -0.58296, 0.0, -0.039685, 0.15210]);
    assert!(coeff_gap(&r.delta_a, 0, &d0) < 1e-4);
    assert!(coeff_gap(&r.delta_a, 1, &d1) < 1e-4);
    let b = poly(&[&[0.14667, 0.29750, 0.18971], &[0.66186, 0.27896], &[-0.0079694, -0.58143]]);
    assert!(kernel_gap(&r.kernel[0], &b, 1e-8) < 1e-4);
}

#[test]
fn quartic_kernels_are_already_reduced() {
    let mixed = cref_reduce(&quartic_kernel_mixed()).unwrap();
    assert!(mixed.unchanged);
    let echelon = cref_reduce(&quartic_kernel_echelon()).unwrap();
    assert!(echelon.unchanged);
    assert_eq!(echelon.pivots, vec![Pivot { entry: 3, coeff: 1 }, Pivot { entry: 2, coeff: 1 }]);
}

#[test]
fn factorization_warm_start_reaches_fixed_zero_solution() {
    let a = pencil_a();
    let s = affine_fixed_zeros(&a);
    let fit = coordinate_descent(&r_embed(&a), &s, &RankFactOptions::default()).unwrap();
    assert!(s.conforms(&fit.delta_a, 0.0));
    let perturbed = a.add(&fit.delta_a).unwrap();
    let kernel = init_kernel_svd(&perturbed, 1, &pencil_a_bounds()).unwrap();
    let o = SolveOptions { delta_init: DeltaInit::Given(fit.delta_a.clone()), ..Default::default() };
    let r = converged(solve(&a, &s, &KernelInit::Given(kernel), &o).unwrap());
    assert!((r.distance - 0.135507).abs() < 5e-5);
}
