//! Host-side companion to `sat-core`: WAV input, the SATW weight format,
//! label files, allocation metering, cost reports and the `sat` command line.
#![deny(unsafe_code)]

pub mod checkpoint;
pub mod cli;
pub mod labels;
pub mod meter;
pub mod report;
pub mod wav;

pub use sat_core as core;
