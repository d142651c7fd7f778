//! Scenario loading, analysis pipeline and report writing for the
//! `comoving` command-line tool.

// Negated float comparisons reject NaN; index loops mirror tensor notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod pipeline;
pub mod plotdata;
pub mod report;
pub mod scenario;
