use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("sample_rate_hz must be 16000, got {0} (resample the input first)")]
    SampleRate(u32),
    #[error("channel_count must be 1, got {0}")]
    ChannelCount(u16),
    #[error("audio contains non-finite samples")]
    NonFiniteAudio,
    #[error("audio too short: {have} samples, need at least {need}")]
    AudioTooShort { have: usize, need: usize },
    #[error("invalid frontend config: {0}")]
    FrontendConfig(&'static str),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("spectrogram has {have} frames, need at least {need}")]
    TooFewFrames { have: usize, need: usize },
    #[error("chunk has {have} time patches but the position table holds {max}")]
    PositionOverflow { have: usize, max: usize },
    #[error("chunk width mismatch: expected {expected} frames, got {got}")]
    ChunkWidth { expected: usize, got: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("delay must be finite and span at least one patch of 16 frames (0.16 s), got {0}")]
    Delay(f32),
    #[error("no class has a positive label")]
    NoPositives,
    #[error("invalid event: {0}")]
    Event(String),
    #[error("stream state: {0}")]
    State(String),
}
