//! Matrix-free hybrid solvers for dynamic linear inverse problems.

pub mod error;
pub mod gengk;
pub mod decoupled;
pub mod hybrid;
pub mod linop;
pub mod priorcov;
pub mod problems;
pub mod uq;
pub mod oracle;
mod densela;
mod vecops;

pub use error::{Error, Result};
pub use linop::{LinearOperator, OpRef, OperatorShape};
