//! Massive-MIMO data detection.
//!
//! Classical detectors (matched filter, ZF, LMMSE, exhaustive ML, sphere
//! decoding, OAMP), unfolded detection networks (DetNet, FS-Net, OAMP-Net2,
//! MMNet, MMNet-iid) with a reverse-mode training engine, and a Monte-Carlo
//! harness for SER curves and runtime tables.

pub mod autodiff;
pub mod channel;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod modulation;
pub mod rng;
pub mod training;
pub mod unfolded;

pub use error::{Error, Result};
