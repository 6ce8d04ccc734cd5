//! Deep-equilibrium fusion: a multi-source fixed-point map, its forward
//! solvers and an implicit backward pass.

mod layer;
mod operator;
pub mod solver;

pub use layer::{deq_fuse, Solver, TraceSink, NEUMANN_TERMS};
pub use operator::{DeqOperator, FFN_EXPANSION, INIT_GAIN};
pub use solver::{relative_residual, solve, DeqTrace, SolverConfig, SolverKind};
