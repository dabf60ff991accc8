//! Chunked inference with single-chunk key/value recurrence.
//!
//! A stream is cut into chunks of `delay` seconds. Each chunk's attention
//! context is the previous chunk's cached keys/values followed by its own,
//! so per-chunk cost and state size do not grow with stream length.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{ModelConfig, Pooling, Variant};
use crate::error::{Error, Result};
use crate::frontend::{AudioBuffer, MelFrontend, MelFrontendConfig, MelSpectrogram, FRAME_RATE_HZ};
use crate::model::{empty_caches, AttentionObserver, Encoder, LayerKV};
use crate::weights::WeightSet;

/// Delays the model is trained for (2 s → 48 tokens, 1 s → 24 tokens).
pub const TRAINED_DELAYS_S: [f32; 2] = [1.0, 2.0];

const STATE_MAGIC: &[u8; 4] = b"SATS";
const STATE_VERSION: u32 = 1;

/// Frame geometry of a chunk schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPlan {
    /// Frames the encoder consumes per chunk (a multiple of the patch size).
    pub chunk_frames: usize,
    /// Frames between chunk starts; `delay · 100`.
    pub hop_frames: usize,
}

impl ChunkPlan {
    pub fn for_delay(cfg: &ModelConfig, delay_s: f32) -> Result<Self> {
        if !(delay_s > 0.0) || !delay_s.is_finite() {
            return Err(Error::Delay(delay_s));
        }
        let hop_frames = libm::roundf(delay_s * FRAME_RATE_HZ as f32) as usize;
        let chunk_frames = hop_frames / cfg.patch_size * cfg.patch_size;
        if chunk_frames == 0 {
            return Err(Error::Delay(delay_s));
        }
        if chunk_frames / cfg.patch_size > cfg.max_time_patches {
            return Err(Error::PositionOverflow {
                have: chunk_frames / cfg.patch_size,
                max: cfg.max_time_patches,
            });
        }
        Ok(Self { chunk_frames, hop_frames })
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_frames as f64 / FRAME_RATE_HZ as f64
    }

    /// Audio samples covering one hop.
    pub fn hop_samples(&self, fe: &MelFrontendConfig) -> usize {
        self.hop_frames * fe.hop_samples
    }

    /// `(start_frame, width)` of every chunk of an `n_frames` spectrogram.
    /// The last entry may be narrower (a tail) when at least one patch column
    /// of frames remains; shorter remainders are dropped.
    pub fn spans(&self, n_frames: usize, patch: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start + self.chunk_frames <= n_frames {
            out.push((start, self.chunk_frames));
            start += self.hop_frames;
        }
        if start < n_frames {
            let tail = (n_frames - start).min(self.chunk_frames) / patch * patch;
            if tail > 0 {
                out.push((start, tail));
            }
        }
        out
    }
}

/// Scores of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkScores {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub n_tokens: usize,
    pub scores: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores {
    pub chunks: Vec<ChunkScores>,
    /// Arithmetic mean of the chunk rows.
    pub averaged: Vec<f32>,
}

impl ClipScores {
    pub fn from_chunks(chunks: Vec<ChunkScores>) -> Self {
        let n_classes = chunks.first().map_or(0, |c| c.scores.len());
        let mut sum = vec![0.0f64; n_classes];
        for c in &chunks {
            for (s, &v) in sum.iter_mut().zip(&c.scores) {
                *s += v as f64;
            }
        }
        let k = chunks.len().max(1) as f64;
        let averaged = sum.into_iter().map(|s| (s / k) as f32).collect();
        Self { chunks, averaged }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.chunks.iter().map(|c| c.scores.as_slice())
    }
}

/// Per-stream recurrence state: the previous chunk's keys and values for
/// every layer. Owned by one stream; share only the [`WeightSet`].
#[derive(Debug, Clone)]
pub struct StreamState {
    config: ModelConfig,
    delay_s: f32,
    plan: ChunkPlan,
    caches: Vec<LayerKV>,
    chunks_processed: u64,
    use_cache: bool,
    encoder: Encoder,
}

impl StreamState {
    pub fn new(cfg: &ModelConfig, delay_s: f32) -> Result<Self> {
        cfg.validate()?;
        let plan = ChunkPlan::for_delay(cfg, delay_s)?;
        Ok(Self {
            config: *cfg,
            delay_s,
            plan,
            caches: empty_caches(cfg),
            chunks_processed: 0,
            use_cache: true,
            encoder: Encoder::new(),
        })
    }

    /// A stream that forgets its context before every chunk.
    pub fn stateless(cfg: &ModelConfig, delay_s: f32) -> Result<Self> {
        let mut s = Self::new(cfg, delay_s)?;
        s.use_cache = false;
        Ok(s)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn delay_s(&self) -> f32 {
        self.delay_s
    }

    /// Whether the model is trained for this delay.
    pub fn is_trained_delay(&self) -> bool {
        TRAINED_DELAYS_S.contains(&self.delay_s)
    }

    pub fn plan(&self) -> ChunkPlan {
        self.plan
    }

    pub fn chunk_frames(&self) -> usize {
        self.plan.chunk_frames
    }

    pub fn tokens_per_chunk(&self) -> usize {
        crate::model::token_count(&self.config, self.plan.chunk_frames)
    }

    pub fn chunks_processed(&self) -> u64 {
        self.chunks_processed
    }

    pub fn uses_cache(&self) -> bool {
        self.use_cache
    }

    pub fn caches(&self) -> &[LayerKV] {
        &self.caches
    }

    /// Tokens of context the next chunk will attend to before its own.
    pub fn cached_len(&self) -> usize {
        self.caches.first().map_or(0, LayerKV::len)
    }

    pub fn reset(&mut self) {
        for c in self.caches.iter_mut() {
            c.clear();
        }
        self.chunks_processed = 0;
    }

    fn check_weights(&self, w: &WeightSet) -> Result<()> {
        if w.config != self.config {
            return Err(Error::Config(alloc::format!(
                "weights are for {:?}, stream expects {:?}",
                w.config.variant,
                self.config.variant
            )));
        }
        Ok(())
    }

    /// Scores one full-width chunk and rolls the cache forward.
    pub fn process_chunk(&mut self, w: &WeightSet, mel_chunk: &MelSpectrogram) -> Result<Vec<f32>> {
        self.process_chunk_observed(w, mel_chunk, &mut ())
    }

    pub fn process_chunk_observed(
        &mut self,
        w: &WeightSet,
        mel_chunk: &MelSpectrogram,
        obs: &mut dyn AttentionObserver,
    ) -> Result<Vec<f32>> {
        if mel_chunk.n_frames() != self.plan.chunk_frames {
            return Err(Error::ChunkWidth { expected: self.plan.chunk_frames, got: mel_chunk.n_frames() });
        }
        self.run(w, mel_chunk, obs)
    }

    /// Scores a trailing chunk narrower than `chunk_frames`; positions
    /// `0..n` of the time table stay valid.
    pub fn process_tail(&mut self, w: &WeightSet, mel_chunk: &MelSpectrogram) -> Result<Vec<f32>> {
        let p = self.config.patch_size;
        let width = mel_chunk.n_frames();
        if width < p || width > self.plan.chunk_frames {
            return Err(Error::ChunkWidth { expected: self.plan.chunk_frames, got: width });
        }
        self.run(w, mel_chunk, &mut ())
    }

    fn run(&mut self, w: &WeightSet, mel: &MelSpectrogram, obs: &mut dyn AttentionObserver) -> Result<Vec<f32>> {
        self.check_weights(w)?;
        if !self.use_cache {
            for c in self.caches.iter_mut() {
                c.clear();
            }
        }
        let scores = self.encoder.forward(w, mel, &mut self.caches, obs)?;
        self.chunks_processed += 1;
        Ok(scores)
    }

    /// Versioned little-endian encoding of the recurrence state (config
    /// identity, schedule, counter and caches). Scratch buffers are not
    /// part of it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.push(match self.config.variant {
            Variant::Tiny => 0,
            Variant::Small => 1,
            Variant::Base => 2,
        });
        out.push(matches!(self.config.pooling, Pooling::Cls) as u8);
        out.push(self.use_cache as u8);
        out.extend_from_slice(&self.delay_s.to_le_bytes());
        out.extend_from_slice(&self.chunks_processed.to_le_bytes());
        out.extend_from_slice(&(self.caches.len() as u32).to_le_bytes());
        for c in &self.caches {
            out.extend_from_slice(&(c.len() as u32).to_le_bytes());
            for v in c.keys().iter().chain(c.values()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Restores a state written by [`Self::to_bytes`] for the same config.
    pub fn from_bytes(cfg: &ModelConfig, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != STATE_MAGIC {
            return Err(Error::State("bad magic".into()));
        }
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(Error::State(alloc::format!("unsupported version {version}")));
        }
        let variant = match r.u8()? {
            0 => Variant::Tiny,
            1 => Variant::Small,
            2 => Variant::Base,
            v => return Err(Error::State(alloc::format!("unknown variant tag {v}"))),
        };
        let cls = r.u8()? != 0;
        let use_cache = r.u8()? != 0;
        if variant != cfg.variant || cls != (cfg.pooling == Pooling::Cls) {
            return Err(Error::State("state was saved for a different model config".into()));
        }
        let delay_s = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let chunks_processed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let n_layers = r.u32()? as usize;
        if n_layers != cfg.n_layers {
            return Err(Error::State(alloc::format!("expected {} layers, found {n_layers}", cfg.n_layers)));
        }
        let mut s = Self::new(cfg, delay_s)?;
        s.use_cache = use_cache;
        s.chunks_processed = chunks_processed;
        let per = cfg.n_heads * cfg.head_dim();
        for cache in s.caches.iter_mut() {
            let len = r.u32()? as usize;
            let n = len.checked_mul(per).ok_or_else(|| Error::State("cache length overflow".into()))?;
            let keys = r.f32s(n)?;
            let values = r.f32s(n)?;
            *cache = LayerKV::from_parts(cfg.n_heads, cfg.head_dim(), keys, values)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::State("trailing bytes".into()));
        }
        Ok(s)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::State("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::State("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }
}

pub fn new_stream(cfg: &ModelConfig, delay_s: f32) -> Result<StreamState> {
    StreamState::new(cfg, delay_s)
}

fn mel_of(audio: &AudioBuffer) -> Result<MelSpectrogram> {
    MelFrontend::new(MelFrontendConfig::default())?.compute(audio.samples())
}

fn run_spans(state: &mut StreamState, w: &WeightSet, audio: &AudioBuffer) -> Result<ClipScores> {
    let plan = state.plan();
    let p = w.config.patch_size;
    let fe = MelFrontendConfig::default();
    let need = (plan.chunk_frames - 1) * fe.hop_samples + fe.window_samples;
    if audio.len() < need {
        return Err(Error::AudioTooShort { have: audio.len(), need });
    }
    let mel = mel_of(audio)?;
    let duration_s = audio.duration_s();
    let mut chunks = Vec::new();
    for (index, (start, width)) in plan.spans(mel.n_frames(), p).into_iter().enumerate() {
        let piece = mel.slice_frames(start, start + width);
        let scores = if width == plan.chunk_frames {
            state.process_chunk(w, &piece)?
        } else {
            state.process_tail(w, &piece)?
        };
        let start_s = start as f64 / FRAME_RATE_HZ as f64;
        chunks.push(ChunkScores {
            index,
            start_s,
            end_s: (start_s + plan.hop_s()).min(duration_s.max(start_s)),
            n_tokens: crate::model::token_count(&w.config, width),
            scores,
        });
    }
    Ok(ClipScores::from_chunks(chunks))
}

/// Streams `audio` through one [`StreamState`] and averages the chunk scores.
pub fn run_clip(w: &WeightSet, audio: &AudioBuffer, delay_s: f32) -> Result<ClipScores> {
    let mut state = StreamState::new(&w.config, delay_s)?;
    run_spans(&mut state, w, audio)
}

/// Same chunking as [`run_clip`] with the cache cleared before every chunk.
pub fn run_clip_stateless(w: &WeightSet, audio: &AudioBuffer, delay_s: f32) -> Result<ClipScores> {
    let mut state = StreamState::stateless(&w.config, delay_s)?;
    run_spans(&mut state, w, audio)
}

/// Full-context scoring: the spectrogram is cut into windows of the full
/// position-table width, the last one padded with silence, and each window
/// is scored without history.
pub fn run_clip_full(w: &WeightSet, audio: &AudioBuffer) -> Result<ClipScores> {
    let fe = MelFrontendConfig::default();
    let mel = mel_of(audio)?;
    let width = w.config.full_context_frames();
    let silence = libm::logf(fe.log_floor);
    let mut caches = empty_caches(&w.config);
    let mut encoder = Encoder::new();
    let mut chunks = Vec::new();
    let mut start = 0;
    let duration_s = audio.duration_s();
    while start == 0 || start < mel.n_frames() {
        let end = (start + width).min(mel.n_frames());
        let piece = mel.slice_frames(start, end).fit_frames(width, silence);
        for c in caches.iter_mut() {
            c.clear();
        }
        let scores = encoder.forward(w, &piece, &mut caches, &mut ())?;
        let start_s = start as f64 / FRAME_RATE_HZ as f64;
        chunks.push(ChunkScores {
            index: chunks.len(),
            start_s,
            end_s: (start_s + width as f64 / FRAME_RATE_HZ as f64).min(duration_s),
            n_tokens: crate::model::token_count(&w.config, width),
            scores,
        });
        start += width;
    }
    Ok(ClipScores::from_chunks(chunks))
}
