//! Dense `f64` matrices, a reverse-mode gradient tape, and a
//! finite-difference gradient checker.

mod graph;
pub mod gradcheck;
mod matrix;
mod params;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, ParamCheck};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use matrix::{logsumexp, sigmoid, Matrix};
pub use params::{ParamId, ParamStore, Parameter};
