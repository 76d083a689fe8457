//! Lower-rank approximation of real matrix polynomials.
//!
//! Given `A(t)` and a perturbation structure, the solver looks for a nearby
//! `A + ΔA` with `r` independent polynomial kernel vectors by refining an SVD
//! kernel guess with a constrained Newton iteration on the bilinear system
//! `(A + ΔA) b_j = 0`.

pub mod embedding;
pub mod error;
pub mod kkt;
pub mod polycore;
pub mod rankfact;
pub mod solver;
pub mod structure;

pub use embedding::{distance_lower_bound, r_embed, KernelPattern, MinimalEmbedding, REmbedding};
pub use error::{Error, Result};
pub use kkt::{Problem, SecondOrderReport, SecondOrderStatus};
pub use polycore::{MatrixPolynomial, PolyVector};
pub use solver::{solve, KernelInit, KernelShape, Method, SolveOptions, SolveReport};
pub use structure::{NormalizationKind, NormalizationSpec, PerturbationStructure, Pivot};
