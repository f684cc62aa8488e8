//! Lowers constant-coefficient stencils onto 2:4 structured-sparse matrix
//! multiplication and checks the result on a software model of sparse
//! tensor-core fragments.

pub mod codegen;
pub mod convert;
pub mod emu;
pub mod error;
pub mod matrix;
pub mod morph;
pub mod perf;
pub mod pipeline;
pub mod stencil;

pub use error::{Error, Result};
pub use matrix::Matrix;
