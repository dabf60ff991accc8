//! Streaming audio transformer inference.
//!
//! `sat-core` holds everything that is pure computation: the log-mel
//! frontend, the ViT encoder with single-chunk key/value recurrence, the
//! chunked streaming driver, clip and event metrics, and the analytic
//! flops/memory model. It is `no_std` and only needs `alloc`; file formats,
//! the allocation meter and the command line live in the `sat` crate.
#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod config;
pub mod error;
pub mod frontend;
pub mod math;
pub mod metrics;
pub mod model;
pub mod profiler;
pub mod rng;
pub mod stream;
pub mod weights;

pub use config::{ModelConfig, Pooling, Variant};
pub use error::{Error, Result};
pub use frontend::{AudioBuffer, MelFrontendConfig, MelSpectrogram, NormalizerParams};
pub use model::{LayerKV, TokenGrid};
pub use stream::{ClipScores, StreamState};
pub use weights::{Tensor, WeightSet};

/// Number of Audioset classes the heads are trained for.
pub const N_CLASSES: usize = 527;
/// Input sample rate the frontend accepts.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
