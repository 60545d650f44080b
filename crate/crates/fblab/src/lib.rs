//! fblab: a numerical laboratory for variable-coefficient Bernoulli-type
//! free-boundary energies.
//!
//! The crate discretizes the two-phase functional
//! `J(u) = ∫ <A∇u, ∇u> + q₊² χ{u>0} + q₋² χ{u<0}` and its one-phase variant
//! on uniform grids, constructs minimizers and measured almost-minimizers,
//! and computes the quantitative diagnostics attached to them: ellipsoid
//! frames, energy densities, boundary means, nondegeneracy-class tests,
//! Alt-Caffarelli-Friedman products, and continuity/Lipschitz moduli.
//!
//! All kernels are generic over the floating-point scalar via [`num::Scalar`];
//! the concrete `f64` aliases below are what the CLI and the test suites use.

pub mod checkpoint;
pub mod diagnostics;
pub mod elliptic;
pub mod energy;
pub mod error;
pub mod field;
pub mod frames;
pub mod grid;
pub mod linalg;
pub mod minimize;
pub mod num;
pub mod parallel;
pub mod quad;

pub use diagnostics::{AcfSweep, DiagnosticsRow, GClassParams, GClassResult, HolderReport, ProbeBall};
pub use error::{Error, Result};
pub use elliptic::{DirichletProblem, Operator, OrthogonalityResidual, TraceSource};
pub use energy::{GapReport, LocalEnergyBreakdown, MinimalityCertificate};
pub use frames::{AffineFrame, Ellipsoid, TransformedFrame};
pub use field::{CoefficientField, PhaseWeights, ScalarField};
pub use grid::Grid;
pub use minimize::{CertifyParams, SeedKind, SeedSpec, SolverParams, StepRule};
pub use linalg::{Matrix, Point};

/// Double-precision aliases used by the CLI and the acceptance suite.
pub type Grid64 = Grid<f64>;
pub type ScalarField64 = ScalarField<f64>;
pub type CoefficientField64 = CoefficientField<f64>;
pub type PhaseWeights64 = PhaseWeights<f64>;
pub type Point64 = Point<f64>;
pub type Matrix64 = Matrix<f64>;
