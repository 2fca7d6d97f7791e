//! Fisher-information analysis of transmitter hardware impairments (IQ
//! imbalance and third-order PA nonlinearity), a symbol-rate burst
//! simulator, impairment feature extraction and fingerprint authentication.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auth;
pub mod burst_io;
pub mod constellation;
pub mod error;
pub mod estimator;
pub mod features;
pub mod fim;
pub mod rng;
pub mod signal_model;

pub use constellation::{Constellation, ConstellationKind, Moments};
pub use error::{Error, Result};
pub use fim::{CrbReport, CrbValue, Fim};
pub use signal_model::{Burst, ChannelConfig, HwiParams};
