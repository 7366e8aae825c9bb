//! Weighted-sum computation-efficiency maximization for OFDMA mobile edge
//! computing, under partial and binary offloading.

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod solver_binary;
pub mod solver_partial;

pub use model::{Allocation, CeReport, DualState, OffloadingMode, Scenario, SolveTrace, SystemParams, UserParams};
pub use solver_binary::solve_binary;
pub use solver_partial::{solve_partial, PartialSolution, SolverConfig, SolverError};
