//! Exact computation of quadratic and top-slot Killing tensor spaces on model
//! Riemannian symmetric spaces.
//!
//! The pipeline: a symmetric space is described by its curvature tensor and
//! isotropy algebra at a base point ([`space_catalog`]). The integrability
//! conditions for a constant top-slot tensor to define a Killing tensor field
//! are assembled as an integer linear system over a symmetry-class basis
//! ([`tensor_core`], [`killing_system`]), solved exactly over the rationals by
//! multi-modular elimination with certified nullspaces ([`linalg`]), and the
//! resulting invariants are cross-checked by conservation along numerically
//! integrated geodesics ([`taylor_flow`], [`albert`]).

pub mod albert;
pub mod cli;
pub mod hpm_constructions;
pub mod killing_system;
pub mod linalg;
pub mod ratio;
pub mod space_catalog;
pub mod taylor_flow;
pub mod tensor_core;

pub use space_catalog::SymmetricSpaceModel;
