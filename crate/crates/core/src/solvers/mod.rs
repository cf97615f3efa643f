//! Robust safe control filters and the small dense engines behind them.

pub mod lp;
pub mod qp;
mod rssa;
pub mod socp;

pub use lp::{LinearProgram, LpOutcome};
pub use qp::{solve_qp, QpError, QpProblem, QpSolution, FEAS_TOL, QP_TOL};
pub use rssa::*;
pub use socp::{solve_socp, SocError, SocProblem, SocSolution};
