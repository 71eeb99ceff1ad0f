//! Adaptive finite elements on 2D simplicial meshes.
//!
//! The crate implements the full solve → estimate → mark → refine loop for
//! second-order elliptic problems: linear symmetric/nonsymmetric equations,
//! a semilinear equation solved by Newton's method, and the smallest
//! eigenpair of a Schrödinger-type operator. Meshes refine by newest-vertex
//! bisection with conforming completion, error control uses residual-type
//! indicators with Dörfler marking, and the driver records per-iteration
//! telemetry suitable for convergence-rate and contraction studies.

pub mod driver;
pub mod estimator;
pub mod fem;
pub mod marking;
pub mod mesh;
pub mod problems;
pub mod solver;
