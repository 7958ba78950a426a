//! Direct approximate factoring of the inverse for preconditioning sparse
//! linear systems.
//!
//! Given a sparse nonsingular `A`, the factorization routines compute sparse
//! `W` and `V` with `A⁻¹ ≈ W V⁻¹`, where `W` and `V` are constrained to
//! prescribed sparsity patterns and `V` is cheap to invert (block diagonal or
//! block upper triangular). Both factors are built column by column, each
//! column independently, by minimizing `‖A W − V‖_F`:
//!
//! * [`factor::diaf_q`] fixes the column norms of `V`, picks each `v_j` from a
//!   small SVD and then solves a least squares problem for `w_j`;
//! * [`factor::diaf_s`] fixes the column norms of `W`, takes `w_j` as the
//!   smallest right singular vector of a row-reduced column block, and
//!   projects `A W` onto the pattern of `V`.
//!
//! The [`patterns`] module builds the pattern of `W` (sparsified Neumann
//! powers, adjoint structure) and selects the pattern of `V`; [`preprocess`]
//! reorders and scales `A` and derives block structure; [`krylov`] applies the
//! preconditioner inside right-preconditioned BiCGSTAB; [`bench`] ties it all
//! together into a reproducible experiment driver.

pub mod bench;
pub mod dense;
pub mod error;
pub mod factor;
pub mod krylov;
pub mod patterns;
pub mod preprocess;
pub mod sparse;

pub use error::{Error, Result};
pub use factor::{diaf_q, diaf_s, FactorPair, StabilizationPolicy};
pub use krylov::{bicgstab, SolveReport, SolveStatus, VFactorization};
pub use sparse::{SparseMatrix, SparseVec, SubspacePattern};
