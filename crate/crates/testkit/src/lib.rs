//! Independent reference implementations used by the test suites.
//!
//! Everything in this crate is a *second opinion*: brute-force searches,
//! arbitrary-precision arithmetic, full-matrix dynamic programming, and
//! finite differences. None of it calls into the library crates it checks.

mod bigscore;
mod editdist;
mod gradcheck;
mod selection;
mod stats;

pub use bigscore::{bias_score_oracle, exp_rational, rational_to_f64};
pub use editdist::levenshtein_ref;
pub use gradcheck::{central_difference, max_mixed_rel_err};
pub use selection::min_bias_selection;
pub use stats::binomial_two_sided_tail;
