//! Constant mean curvature surfaces from loop group factorizations.
//!
//! Loops in a matrix group are represented either by finitely many Laurent coefficients
//! ([`loops::LaurentMatrixLoop`]) or by samples on a circle ([`loops::CircleLoopSamples`]).
//! [`iwasawa`] splits loops into unitary and holomorphic factors, [`spectral`] builds potentials
//! from spectral curve data, [`frames`] evaluates extended frames on a grid of the domain and
//! [`surfaces`] turns frames into immersions. [`grassmann`] constructs harmonic maps into
//! Grassmannians from spectral data over a rational curve.

pub mod error;
pub mod linalg;
pub mod loops;
pub mod iwasawa;
pub mod spectral;
pub mod frames;
pub mod surfaces;
pub mod grassmann;
pub mod cli;

pub use error::{Error, Result};
pub use num_complex::Complex64;
