//! CP-OFDM-based OTFS link simulation.
//!
//! The signal chain lives in [`grid`] (transforms) and [`channel`] (ray
//! channel), the closed-form delay-Doppler model in [`ddmath`], the receiver
//! in [`estimation`] and [`equalization`], and experiment plumbing in
//! [`harness`].

pub mod channel;
pub mod ddmath;
pub mod error;
pub mod equalization;
pub mod estimation;
pub(crate) mod fft;
pub mod grid;
pub mod harness;
pub mod util;
pub mod validate;

pub use error::{Error, Result};
