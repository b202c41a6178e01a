//! Numerical certification of GMRES convergence bounds for compactly
//! perturbed operators `A = B + C`.

pub mod cert;
pub mod cli;
pub mod error;
pub mod fov;
pub mod gmres;
pub mod linop;
pub mod mb;
pub mod par;
pub mod probgen;
pub mod report;
pub mod suite;

pub use error::{Error, Result};
