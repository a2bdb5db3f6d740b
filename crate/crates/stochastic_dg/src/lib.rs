//! Adaptive stochastic discontinuous Galerkin solver for 2D
//! convection-diffusion problems with random coefficients.
//!
//! The solver expands random diffusion/convection fields in a truncated
//! Karhunen-Loeve series (exponential covariance on a square), discretizes
//! in space with symmetric interior penalty DG (P1, upwinded convection) and
//! in the parameters with an orthonormal Legendre chaos on an adaptively
//! grown multi-index set. The coupled system is solved matrix-free in
//! Kronecker form by preconditioned GMRES. A residual error estimator splits
//! the error into spatial, data, parametric, and truncation parts and drives
//! a refine-or-enrich loop with bulk marking in both domains.
//!
//! Capability map:
//! - [`mesh`]: conforming triangle meshes, uniform refinement, longest-edge
//!   bisection of marked elements.
//! - [`random_field`]: 1D/2D eigenpairs of the exponential kernel, truncated
//!   KL fields, spectral tail bookkeeping.
//! - [`pc_basis`]: multi-indices, graded-lex index sets, detail sets,
//!   orthonormal Legendre triple products, sparse coupling matrices.
//! - [`assembly`]: SIPG + upwind local assembly of per-mode stiffness blocks
//!   and load vectors, data projections.
//! - [`tensor`]: Kronecker-sum operator, mean-based preconditioner,
//!   restarted GMRES.
//! - [`estimator`]: residual error indicators (spatial / data / parametric /
//!   truncation), energy norms, effectivity.
//! - [`adapt`]: bulk marking and the adaptive solve-estimate-mark-refine
//!   loop, uniform-refinement baseline, reference solutions.
//! - [`problems`]: the four built-in benchmark problems.
//! - [`io`]: config files, history CSV, legacy VTK output.
//! - [`verify`]: fast self-checks wired to the `verify` CLI subcommand.
//!
//! The `examples/` directory demonstrates each capability end to end; the
//! `sdg` binary exposes `run`, `sweep`, and `verify` subcommands.

pub mod adapt;
pub mod assembly;
pub mod error;
pub mod estimator;
pub mod io;
pub mod mesh;
pub mod pc_basis;
pub mod problems;
pub mod quadrature;
pub mod random_field;
pub mod sparse;
pub mod tensor;
pub mod verify;

pub use adapt::{Action, AdaptiveConfig, IterationRecord, Reference, RunOutput};
pub use assembly::{ProblemData, ProjectedData, SpatialBlocks};
pub use error::{Error, Result};
pub use estimator::EstimateReport;
pub use mesh::TriangleMesh;
pub use pc_basis::{IndexSet, MultiIndex};
pub use random_field::{CovarianceSpec, KLField, PiecewiseConst};
pub use sparse::{ColMat, CsrMatrix};
pub use tensor::{GmresOptions, GmresReport, MeanSolver};
