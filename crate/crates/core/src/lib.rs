//! Permutation tests for a single regression coefficient with a shielded
//! subgroup of row permutations.
//!
//! The test fixes a set of rows `R` and permutes only the rest. Rows are
//! chosen by a two-stage greedy search over the collinearity probability
//! and a lower quantile of the signal term.
//!
//! ```
//! use permshield::designs::paired_design;
//! use permshield::palm::run_test;
//! use permshield::perm::RowSet;
//!
//! let d = paired_design(12, 2).unwrap();
//! let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
//! let res = run_test(&d.x, &d.z, &y, &RowSet::full(12), 99, 1).unwrap();
//! assert_eq!(res.p_value, (1.0 + 99.0 / 2.0) / 100.0);
//! ```

pub mod cli;
pub mod designs;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod oracle;
pub mod palm;
pub mod perm;
pub mod rng;
pub mod rowselect;
pub mod verify;

pub use error::{Error, Result};
