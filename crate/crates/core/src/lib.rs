//! Models of a slotted-ALOHA two-way relay network whose relay XORs the
//! head-of-line packets of its two virtual buffers when both are backlogged.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod chain;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod qbd;
pub mod saturated;
pub mod sim;
pub mod unsaturated;

pub use error::{AnalysisError, OracleError, ParamError, QbdError};
pub use metrics::{Metrics, OccupancySplit, Provenance};
pub use model::{ArrivalRates, Mode, ProtocolParams, Queue};
