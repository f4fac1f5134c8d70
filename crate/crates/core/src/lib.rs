//! Reliability simulator for RPL downward routing.
//!
//! The crate models link traces, gradient metrics, parent selection, link
//! estimation, storing and non-storing downward routes and a simple MAC, and
//! ties them together in a discrete-event engine.

// `!(x >= lo)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod estimator;
pub mod mac;
pub mod metric;
pub mod rng;
pub mod routing;
pub mod topology;

pub use metric::Metric;
pub use topology::{NodeId, Topology};
