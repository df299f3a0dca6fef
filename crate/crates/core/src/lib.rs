//! Multiport battery strings: modulation, waveform analytics, circuit
//! simulation and dual-port control for a reconfigurable series string of
//! battery modules feeding a dc link and an isolated auxiliary output.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// port spans are passed as slices, often with a single span
#![allow(clippy::single_range_in_vec_init)]

pub mod analytics;
pub mod control;
pub mod error;
pub mod model;
pub mod modulation;
pub mod oracle;
pub mod scenario;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
