//! Numerical toolkit for stochastic Volterra equations driven by singular
//! kernels, with fractional Brownian motion as the main example.

mod error;
pub mod fraccalc;
pub mod grid;
pub mod kernel;
pub mod malliavin;
pub mod quadrature;
pub mod simulate;
pub mod solver;
pub mod specialfn;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
pub use kernel::{KernelMatrix, KernelSpec, LowerTriangular, Mode};
