//! LMI modeling and a small dense semidefinite solver.
//!
//! Problems are declared with [`LmiBuilder`]: variables hand out affine
//! [`MatExpr`]s, constraints compare square expressions against zero, and
//! [`LmiBuilder::build`] compiles everything to the block conic form solved
//! by the interior-point method in [`hsd`]. Log-determinant maximization is
//! layered on top in [`maxdet`].

mod cone;
mod expr;
pub mod hsd;
pub mod maxdet;
mod problem;

use thiserror::Error;

pub use expr::MatExpr;
pub use hsd::{SolverOptions, Status};
pub use maxdet::{FwSegment, MaxDetOptions};
pub use problem::{
    Constraint, LmiBuilder, LmiProblem, LmiSolution, Residuals, Sense, Var, VarKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("expression is not affine in the decision variables")]
    NonAffine,
    #[error("expression uses a variable from a different problem")]
    ForeignVariable,
    #[error("undeclared variable `{0}`")]
    UndeclaredVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("constraint `{0}` is not symmetric")]
    NotSymmetric(String),
    #[error("objective must be a 1x1 expression")]
    BadObjective,
}
