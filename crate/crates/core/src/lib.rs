//! Potential theory of one-dimensional regular diffusions and their
//! additive functionals: boundary classification, integral equations for
//! fundamental subharmonic solutions, Choquet decompositions, measure
//! changes and Monte Carlo verification.

pub mod boundary;
pub mod catalog;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod expr;
pub mod grid;
pub mod ito_watanabe;
pub mod measure;
pub mod montecarlo;
pub mod quadrature;
pub mod scale;
pub mod subharmonic;
pub mod transform;

pub use error::{Error, Result};
