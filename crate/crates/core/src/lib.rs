//! Robust predicate transfer: semi-join reduction along a maximum-weight join
//! tree, followed by hash joins in an arbitrary Cartesian-free order.
//!
//! Modules, bottom up:
//! - [`relstore`]: columnar relations with selection vectors and CSV IO.
//! - [`joingraph`]: join graphs, join trees, acyclicity and transfer schedules.
//! - [`bloom`]: blocked Bloom filters for approximate semi-joins.
//! - [`query`]: query documents and instances.
//! - [`planner`]: random and exhaustive join plans.
//! - [`executor`]: transfer phase and join phase.
//! - [`oracle`]: nested-loop reference join.
//! - [`synth`]: synthetic instance generators.
//! - [`harness`]: verification battery and robustness sweeps.

pub mod bloom;
pub mod executor;
pub mod harness;
pub mod joingraph;
pub mod oracle;
pub mod planner;
pub mod query;
pub mod relstore;
pub mod synth;
