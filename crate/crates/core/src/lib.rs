//! Entanglement of bipartite subspaces.
//!
//! States and directions are `n x m` complex matrices with unit Frobenius
//! norm. The crate computes the entropy of entanglement, its exact first and
//! second directional derivatives (including the rank-deficient case), and
//! searches subspaces for local minima of the entropy.

pub mod divided_diff;
pub mod entanglement;
pub mod matrix;
pub mod optimizer;
pub mod par;
pub mod random;
pub mod subspace;

pub use divided_diff::{NegEntropy, ScalarFunction};
pub use entanglement::{DerivativeReport, SecondDerivative, StateMatrix};
pub use matrix::{CMatrix, C64};
pub use optimizer::{Classification, MinimizationResult, MinimizeOptions};
pub use par::Execution;
pub use subspace::Subspace;
