//! Finite-element solver and variable-exponent toolkit for the Dirichlet
//! problem
//!
//! ```text
//! -div(α(x, u) ⟨A∇u, ∇u⟩^{(p(x)-2)/2} A∇u) = f   in Ω,   u = 0 on ∂Ω
//! ```
//!
//! on 2D triangulations with P1 elements. The nonlinear problem is solved by
//! a relaxed fixed-point iteration `v ↦ T(v)`, where `T(v)` minimizes the
//! convex energy obtained by freezing `α(x, v(x))`.

pub mod assembly;
pub mod check;
pub mod cli_io;
pub mod coefficients;
pub mod exec;
pub mod expr;
pub mod geometry;
pub mod inner_solver;
pub mod linalg;
pub mod mms;
pub mod outer_solver;
pub mod varexp;
