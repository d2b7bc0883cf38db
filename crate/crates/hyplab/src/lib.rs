//! Desk-scale numerics for the entropy-rigidity toolbox on hyperbolic manifolds.
//!
//! The crate is organized around the computable objects of that machinery:
//!
//! - [`geom`]: exact-formula geometry of the hyperboloid model of H^n
//! - [`lattice`]: finitely generated discrete isometry groups, orbit balls,
//!   Dirichlet fundamental domains, quotient distances
//! - [`entropy`]: orbit/loop-counting volume entropy and a graph surrogate
//!   for conformally perturbed metrics
//! - [`barycenter`]: the weighted geometric median ("barycenter map") on H^n,
//!   its numerical differential and Jacobian bounds
//! - [`embedding`]: the truncated spherical embedding x ↦ (cell integrals of
//!   e^{-c·dist})^{1/2}, with energy and pullback-volume estimators
//! - [`equidist`]: geodesic-sphere equidistribution statistics in the unit
//!   tangent bundle of a quotient surface
//! - [`mms`]: finite metric measure spaces and Gromov-Prokhorov style
//!   comparison (Prokhorov by max-flow, distribution lower bounds, coupling
//!   upper bounds)
//! - [`experiment`]: the experiment harness behind the `hyplab` CLI
//!
//! All core types are immutable values; every operation is pure and safe to
//! call concurrently.

pub mod barycenter;
pub mod embedding;
pub mod entropy;
pub mod equidist;
pub mod experiment;
pub mod geom;
pub mod lattice;
pub mod mms;
pub mod report;
pub mod rng;

pub use geom::{HIsometry, HPoint, HTangent};
