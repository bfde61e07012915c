//! Discounted reach-avoid games on grids.
//!
//! Grid-based value iteration for the discounted reach-avoid Bellman
//! equation and its conservative variant, closed-loop policies extracted
//! from a value function, a brute-force finite-horizon oracle, and a small
//! neural Q-learning path.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backup;
pub mod error;
pub mod grid;
pub mod neural;
pub mod oracle;
pub mod policy;
pub mod problem;

pub use backup::{
    backup_sweep, bellman_backup, cql_backup, maxmin_next, membership, value_iteration, Init, SolveConfig, SolveReport,
};
pub use error::{Error, Result};
pub use grid::{sup_norm_diff, GridSpec, ValueField};
pub use problem::{builtin_benchmark, default_grid, ProblemSpec, SolveMode};
