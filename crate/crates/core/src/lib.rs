//! jetlaw: a symbolic toolkit for perturbed PDE systems E0 + eps*E1 = 0.
//!
//! The crate builds adjoint systems through formal Lagrangians, decides
//! (approximate) nonlinear self-adjointness, constructs exact and
//! first-order approximate conserved vectors, and verifies their
//! divergence on the solution manifold — exactly, over the rationals.
//! A small text DSL and a finite-difference order check round it out.

pub mod error;
pub mod symbol;
pub mod expr;
pub mod eps;
pub mod eval;
pub mod system;
pub mod jet;
pub mod variational;
pub mod selfadjoint;
pub mod dsl;

pub use error::{Error, Result};
pub use symbol::{JetVar, MultiIndex, Symbol, SymbolKind, DEFAULT_JET_CAP};
pub use expr::{Builtin, DiffTarget, Expr, FuncApp, Rat};
pub use eps::EpsSeries;
pub use system::{FuncSig, Generator, MultiplierSet, PdeEquation, PdeSystem, SubstitutionAnsatz};
