//! Virtual peripherals backed by host resources.

pub mod adc;
pub mod flash;
