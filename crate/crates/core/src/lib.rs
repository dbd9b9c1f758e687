//! Numerical toolkit for pairs of vector fields on the solid torus: flows and
//! their derivatives, holonomy and return maps of a disc fibration, topological
//! degrees and Poincaré–Hopf indices, and linking numbers of the normal
//! component.

pub mod error;
pub mod field;
pub mod flow;
pub mod section;
pub mod degree;
pub mod index;
pub mod dynamics;

pub use error::{Error, Result};
