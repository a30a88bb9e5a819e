//! Joint power purchasing, battery scheduling and workload dispatch for a
//! fleet of geo-distributed data centers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod allocation;
pub mod battery;
pub mod cli;
pub mod error;
pub mod integer;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod policy;
pub mod queueing;
pub mod scenario;
pub mod scp;

pub use error::{Error, Result};
