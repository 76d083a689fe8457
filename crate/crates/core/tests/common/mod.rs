//! Published instances and helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use polyrank::{MatrixPolynomial, PerturbationStructure, PolyVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, v)
}

pub fn poly(entries: &[&[f64]]) -> PolyVector {
    PolyVector::new(entries.iter().map(|e| e.to_vec()).collect())
}

fn swap_pencil_lead() -> DMatrix<f64> {
    mat(3, &[0., 0., 0., 0., 0., 1., 0., 1., 0.])
}

/// 3×3 pencil used for the affine, degree and support runs.
pub fn pencil_a() -> MatrixPolynomial {
    MatrixPolynomial::new(vec![
        mat(3, &[0., 0.04, 0.89, 0.15, -0.02, 0., 0.92, 0.11, 0.066]),
        swap_pencil_lead(),
    ])
    .unwrap()
}

/// 3×3 pencil far from singular, solved with damping.
pub fn pencil_b() -> MatrixPolynomial {
    MatrixPolynomial::new(vec![
        mat(3, &[-1.79, 0.10, -0.6, 0.84, -0.54, 0.49, -0.89, 0.3, 0.74]),
        swap_pencil_lead(),
    ])
    .unwrap()
}

/// Leading coefficient fixed, zero coefficients of `A_0` kept.
pub fn affine_fixed_zeros(a: &MatrixPolynomial) -> PerturbationStructure {
    let mut s = PerturbationStructure::support_preserving(a);
    s.fix_degree(1);
    s
}

/// Leading coefficient fixed, every coefficient of `A_0` free.
pub fn affine_free_zeros(a: &MatrixPolynomial) -> PerturbationStructure {
    let mut s = PerturbationStructure::degree_preserving(a);
    s.fix_degree(1);
    s
}

/// Degree bounds of the reference kernel vector of `pencil_a`.
pub fn pencil_a_bounds() -> Vec<Option<usize>> {
    vec![Some(1), Some(0), Some(0)]
}

/// Published SVD starting vector for `pencil_a`.
pub fn pencil_a_b_init() -> PolyVector {
    poly(&[
        &[-0.035720, -0.26916, 0.50576, -0.41067],
        &[0.30674, -0.51139, 0.38025],
        &[0.010715, -0.028083, 0.027012],
    ])
}

/// Published SVD starting vector for `pencil_b`.
pub fn pencil_b_b_init() -> PolyVector {
    poly(&[
        &[0.11409, 0.15811, -0.10520, -0.16001],
        &[0.54098, -0.18616, -0.51289, 0.14980],
        &[-0.027979, -0.44619, 0.26337, 0.20801],
    ])
}

/// Published `ΔA_0` and kernel for `pencil_a` with fixed zeros.
pub fn pencil_a_fixed_zeros_solution() -> (DMatrix<f64>, PolyVector) {
    (
        mat(3, &[0.0, -0.094149, -0.0057655, -0.093311, 0.026883, 0.0, 0.0057142, -0.0016462, -0.00010081]),
        poly(&[&[0.082126, 0.73073], &[-0.67644], &[-0.041424]]),
    )
}

/// Degree-two kernel guess for `pencil_b` taken from a comparison method.
pub fn pencil_b_given_kernel() -> PolyVector {
    poly(&[
        &[0.12362, 0.25146, 0.16409],
        &[0.55516, 0.23740, -4.5353e-14],
        &[-0.0060443, -0.48688, 1.2457e-13],
    ])
}

pub fn quartic() -> MatrixPolynomial {
    MatrixPolynomial::new(vec![
        mat(4, &[
            0.09108776, -0.05442464, 0.3645006, 0.01821543, -0.1456436, 0.03647524, -0.07277662, 0.07305016,
            0.05478714, -0.05444916, 0.4373220, 0.05478385, -0.1274211, 0.09124859, -0.6556615, -0.05446850,
        ]),
        mat(4, &[
            0.09116729, 0.00001797690, 0.2550857, 0.05475106, 0.0001156514, 0.00001659159, 0.09108906, -0.05447104,
            0.05470823, 0.03662426, 0.1276959, 0.03650378, 0.05472202, -0.1091389, 0.1458359, -0.09090507,
        ]),
        mat(4, &[
            0.01833149, 0.03661770, 0.01824331, 0.03660918, 0.01837542, -0.05442525, 0.0, 0.01832234, 0.01841784,
            0.00003900436, 0.0, 0.01836515, 0.01840752, 0.00001508311, 0.01839699, 0.03659170,
        ]),
        mat(4, &[
            0.0, 0.01837967, 0.0, 0.0, 0.0, 0.01843603, 0.0, 0.0, 0.0, 0.01829203, 0.0, 0.0, 0.0, 0.01842778, 0.0, 0.0,
        ]),
    ])
    .unwrap()
}

/// Two-column kernel guess for `quartic`, not in echelon form.
pub fn quartic_kernel_mixed() -> Vec<PolyVector> {
    vec![
        poly(&[
            &[0.0, 0.0, 0.1954059],
            &[-0.7681472, -0.2526800],
            &[-0.1280246, -0.01010720, -0.05727413],
            &[0.2560491, 0.4683004, 0.05727413],
        ]),
        poly(&[
            &[],
            &[0.7357675, -0.1839419, -0.06131396],
            &[0.1226279, -0.06131396, 0.0, -0.06131396],
            &[-0.2452558, -0.3065698, 0.4905117, 0.06131396],
        ]),
    ]
}

/// Equivalent kernel guess for `quartic` already in echelon form.
pub fn quartic_kernel_echelon() -> Vec<PolyVector> {
    vec![
        poly(&[
            &[-0.3162278, 0.1581139, 0.0, 0.1581139],
            &[-0.6324556, -0.4743417, -0.1581139],
            &[],
            &[-0.3162278, 0.3162278],
        ]),
        poly(&[
            &[-0.1586103, -0.1982629, 0.3172206, 0.03965258],
            &[-0.7930516, -0.4361784, -0.03965258],
            &[-0.07930516, 0.07930516],
            &[],
        ]),
    ]
}

pub fn random_poly<R: Rng>(rng: &mut R, n: usize, d: usize) -> MatrixPolynomial {
    let coeffs = (0..=d)
        .map(|_| DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut *rng)))
        .collect();
    MatrixPolynomial::new(coeffs).unwrap()
}

pub fn random_vector<R: Rng>(rng: &mut R, bounds: &[Option<usize>]) -> PolyVector {
    PolyVector::new(
        bounds
            .iter()
            .map(|b| b.map_or_else(Vec::new, |d| (0..=d).map(|_| StandardNormal.sample(&mut *rng)).collect()))
            .collect(),
    )
}

/// Random `A` whose first two columns coincide, so `(1, -1, 0, ...)` is an
/// exact constant kernel vector.
pub fn planted_singular<R: Rng>(rng: &mut R, n: usize, d: usize) -> MatrixPolynomial {
    let mut a = random_poly(rng, n, d);
    for k in 0..=d {
        for i in 0..n {
            let v = a.get(i, 1, k);
            a.set(i, 0, k, v);
        }
    }
    a
}
