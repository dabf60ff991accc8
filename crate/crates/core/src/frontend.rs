//! 16 kHz mono audio to 64-bin log-mel frames (32 ms Hann window, 10 ms hop)
//! plus the per-bin affine normalization that precedes patchification.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::SAMPLE_RATE_HZ;

/// Mel frames per second at a 160-sample hop.
pub const FRAME_RATE_HZ: u32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate_hz: u32,
    channel_count: u16,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32, channel_count: u16) -> Result<Self> {
        if channel_count != 1 {
            return Err(Error::ChannelCount(channel_count));
        }
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::SampleRate(sample_rate_hz));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteAudio);
        }
        Ok(Self { samples, sample_rate_hz, channel_count })
    }

    /// Mono 16 kHz buffer.
    pub fn mono(samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE_HZ, 1)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channel_count(&self) -> u16 {
        self.channel_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelFrontendConfig {
    pub n_mels: usize,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub f_min_hz: f32,
    pub f_max_hz: f32,
    pub log_floor: f32,
}

impl Default for MelFrontendConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            window_samples: 512,
            hop_samples: 160,
            fft_size: 512,
            f_min_hz: 0.0,
            f_max_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelFrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels != 64 {
            return Err(Error::FrontendConfig("n_mels must be 64"));
        }
        if self.hop_samples == 0 || self.hop_samples >= self.window_samples {
            return Err(Error::FrontendConfig("hop must be positive and shorter than the window"));
        }
        if self.fft_size < self.window_samples || !self.fft_size.is_power_of_two() {
            return Err(Error::FrontendConfig("fft_size must be a power of two >= window"));
        }
        if !(self.log_floor > 0.0) || !self.log_floor.is_finite() {
            return Err(Error::FrontendConfig("log_floor must be positive"));
        }
        if !(self.f_min_hz >= 0.0 && self.f_max_hz > self.f_min_hz)
            || self.f_max_hz > SAMPLE_RATE_HZ as f32 / 2.0
        {
            return Err(Error::FrontendConfig("need 0 <= f_min < f_max <= nyquist"));
        }
        Ok(())
    }

    /// Frames produced for `n_samples` without center padding; 0 if shorter
    /// than one window.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.window_samples {
            0
        } else {
            (n_samples - self.window_samples) / self.hop_samples + 1
        }
    }
}

/// Log-mel matrix stored row-major as `[mel bin][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    n_mels: usize,
    n_frames: usize,
    values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn from_values(n_mels: usize, n_frames: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::Shape {
                what: "mel values".into(),
                expected: alloc::format!("{n_mels}x{n_frames}"),
                got: alloc::format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel spectrogram".into()));
        }
        Ok(Self { n_mels, n_frames, values })
    }

    pub fn filled(n_mels: usize, n_frames: usize, value: f32) -> Self {
        Self { n_mels, n_frames, values: vec![value; n_mels * n_frames] }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame_rate_hz(&self) -> u32 {
        FRAME_RATE_HZ
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    #[inline]
    pub fn set(&mut self, mel: usize, frame: usize, v: f32) {
        self.values[mel * self.n_frames + frame] = v;
    }

    pub fn row(&self, mel: usize) -> &[f32] {
        &self.values[mel * self.n_frames..(mel + 1) * self.n_frames]
    }

    /// Copy of frames `start..end`.
    pub fn slice_frames(&self, start: usize, end: usize) -> MelSpectrogram {
        assert!(start <= end && end <= self.n_frames, "frame range out of bounds");
        let width = end - start;
        let mut values = Vec::with_capacity(self.n_mels * width);
        for m in 0..self.n_mels {
            values.extend_from_slice(&self.row(m)[start..end]);
        }
        MelSpectrogram { n_mels: self.n_mels, n_frames: width, values }
    }

    /// Right-pads (or truncates) to exactly `n_frames` columns.
    pub fn fit_frames(&self, n_frames: usize, pad_value: f32) -> MelSpectrogram {
        let keep = self.n_frames.min(n_frames);
        let mut out = MelSpectrogram::filled(self.n_mels, n_frames, pad_value);
        for m in 0..self.n_mels {
            out.values[m * n_frames..m * n_frames + keep].copy_from_slice(&self.row(m)[..keep]);
        }
        out
    }
}

/// Radix-2 complex FFT with precomputed twiddles.
#[derive(Debug, Clone)]
struct Fft {
    n: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
    bitrev: Vec<u32>,
}

impl Fft {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let half = n / 2;
        let cos = (0..half).map(|k| libm::cos(2.0 * PI * k as f64 / n as f64) as f32).collect();
        let sin = (0..half).map(|k| -libm::sin(2.0 * PI * k as f64 / n as f64) as f32).collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        Self { n, cos, sin, bitrev }
    }

    fn forward(&self, re: &mut [f32], im: &mut [f32]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            let half = len / 2;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * step], self.sin[k * step]);
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// One triangular filter: first FFT bin and its non-zero weights.
#[derive(Debug, Clone)]
struct MelFilter {
    start: usize,
    weights: Vec<f32>,
}

/// HTK-style triangular filterbank, unnormalized, as `n_mels` sparse rows over
/// the `fft_size / 2 + 1` power bins.
fn htk_filterbank(cfg: &MelFrontendConfig) -> Vec<MelFilter> {
    let n_bins = cfg.fft_size / 2 + 1;
    let m_lo = hz_to_mel(cfg.f_min_hz as f64);
    let m_hi = hz_to_mel(cfg.f_max_hz as f64);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE_HZ as f64 / cfg.fft_size as f64;

    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let dense: Vec<f32> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0) as f32
                })
                .collect();
            let start = dense.iter().position(|&w| w > 0.0).unwrap_or(0);
            let end = dense.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
            MelFilter { start, weights: dense[start..end].to_vec() }
        })
        .collect()
}

/// Precomputed window, FFT and filterbank for one [`MelFrontendConfig`].
#[derive(Debug, Clone)]
pub struct MelFrontend {
    cfg: MelFrontendConfig,
    window: Vec<f32>,
    fft: Fft,
    filters: Vec<MelFilter>,
}

impl MelFrontend {
    pub fn new(cfg: MelFrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_samples;
        // Periodic Hann.
        let window = (0..n)
            .map(|i| (0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64)) as f32)
            .collect();
        Ok(Self { cfg, window, fft: Fft::new(cfg.fft_size), filters: htk_filterbank(&cfg) })
    }

    pub fn config(&self) -> &MelFrontendConfig {
        &self.cfg
    }

    /// Mel-band power before the log, `[mel][frame]`.
    pub fn mel_power(&self, samples: &[f32]) -> Result<MelSpectrogram> {
        let cfg = &self.cfg;
        let n_frames = cfg.frame_count(samples.len());
        if n_frames == 0 {
            return Err(Error::AudioTooShort { have: samples.len(), need: cfg.window_samples });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteAudio);
        }
        let n_bins = cfg.fft_size / 2 + 1;
        let mut re = vec![0.0f32; cfg.fft_size];
        let mut im = vec![0.0f32; cfg.fft_size];
        let mut power = vec![0.0f32; n_bins];
        let mut values = vec![0.0f32; cfg.n_mels * n_frames];

        for t in 0..n_frames {
            let frame = &samples[t * cfg.hop_samples..t * cfg.hop_samples + cfg.window_samples];
            re.fill(0.0);
            im.fill(0.0);
            for ((r, &s), &w) in re.iter_mut().zip(frame).zip(&self.window) {
                *r = s * w;
            }
            self.fft.forward(&mut re, &mut im);
            for (k, p) in power.iter_mut().enumerate() {
                *p = re[k] * re[k] + im[k] * im[k];
            }
            for (m, filt) in self.filters.iter().enumerate() {
                let bins = &power[filt.start..filt.start + filt.weights.len()];
                let e: f32 = bins.iter().zip(&filt.weights).map(|(p, w)| p * w).sum();
                values[m * n_frames + t] = e;
            }
        }
        Ok(MelSpectrogram { n_mels: cfg.n_mels, n_frames, values })
    }

    /// `ln(max(mel_power, log_floor))`.
    pub fn compute(&self, samples: &[f32]) -> Result<MelSpectrogram> {
        let mut mel = self.mel_power(samples)?;
        let floor = self.cfg.log_floor;
        for v in mel.values.iter_mut() {
            *v = libm::logf(v.max(floor));
        }
        Ok(mel)
    }
}

pub fn compute_mel(audio: &AudioBuffer, cfg: &MelFrontendConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(*cfg)?.compute(audio.samples())
}

/// Inference-mode batch norm over mel bins (running statistics plus affine).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizerParams {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl NormalizerParams {
    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: vec![0.0; n_mels],
            var: vec![1.0; n_mels],
            gamma: vec![1.0; n_mels],
            beta: vec![0.0; n_mels],
            eps: 0.0,
        }
    }

    pub fn validate(&self, n_mels: usize) -> Result<()> {
        for (name, v) in [("mean", &self.mean), ("var", &self.var), ("gamma", &self.gamma), ("beta", &self.beta)] {
            if v.len() != n_mels {
                return Err(Error::Shape {
                    what: alloc::format!("normalizer {name}"),
                    expected: alloc::format!("[{n_mels}]"),
                    got: alloc::format!("[{}]", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(alloc::format!("normalizer {name}")));
            }
        }
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::NonFinite("normalizer eps".into()));
        }
        if self.var.iter().any(|&v| !(v + self.eps > 0.0)) {
            return Err(Error::NonFinite("normalizer var + eps must be positive".into()));
        }
        Ok(())
    }

    /// Applies the affine in place.
    pub fn apply(&self, mel: &mut MelSpectrogram) {
        let n = mel.n_frames;
        for (f, row) in mel.values.chunks_exact_mut(n).enumerate() {
            let scale = self.gamma[f] / libm::sqrtf(self.var[f] + self.eps);
            let shift = self.beta[f] - self.mean[f] * scale;
            for v in row {
                *v = *v * scale + shift;
            }
        }
    }
}

pub fn normalize(mel: &MelSpectrogram, p: &NormalizerParams) -> Result<MelSpectrogram> {
    p.validate(mel.n_mels)?;
    let mut out = mel.clone();
    p.apply(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut r = SplitMix64::new(seed);
        (0..n).map(|_| (r.next_uniform() * 2.0 - 1.0) as f32 * 0.5).collect()
    }

    #[test]
    fn audio_buffer_rejects_bad_format() {
        assert_eq!(AudioBuffer::new(vec![0.0; 10], 16_000, 2), Err(Error::ChannelCount(2)));
        assert_eq!(AudioBuffer::new(vec![0.0; 10], 44_100, 1), Err(Error::SampleRate(44_100)));
        assert_eq!(AudioBuffer::mono(vec![f32::NAN]), Err(Error::NonFiniteAudio));
        let msg = alloc::format!("{}", Error::ChannelCount(2));
        assert!(msg.contains("channel_count must be 1"));
    }

    #[test]
    fn frame_counts() {
        let cfg = MelFrontendConfig::default();
        assert_eq!(cfg.frame_count(32_000), 197);
        assert_eq!(cfg.frame_count(163_840), 1021);
        assert_eq!(cfg.frame_count(512), 1);
        assert_eq!(cfg.frame_count(511), 0);
        let mel = compute_mel(&AudioBuffer::mono(noise(32_000, 1)).unwrap(), &cfg).unwrap();
        assert_eq!((mel.n_mels(), mel.n_frames()), (64, 197));
    }

    #[test]
    fn short_audio_is_an_error() {
        let cfg = MelFrontendConfig::default();
        let audio = AudioBuffer::mono(vec![0.0; 511]).unwrap();
        assert_eq!(compute_mel(&audio, &cfg), Err(Error::AudioTooShort { have: 511, need: 512 }));
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let cfg = MelFrontendConfig::default();
        let mel = compute_mel(&AudioBuffer::mono(vec![0.0; 16_000]).unwrap(), &cfg).unwrap();
        let want = libm::logf(1e-10);
        assert!(mel.values().iter().all(|&v| v == want));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let n = 64;
        let fft = Fft::new(n);
        let x = noise(n, 3);
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        fft.forward(&mut re, &mut im);
        for k in 0..n {
            let (mut sr, mut si) = (0.0f64, 0.0f64);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                sr += v as f64 * a.cos();
                si += v as f64 * a.sin();
            }
            assert!((re[k] as f64 - sr).abs() < 1e-4 && (im[k] as f64 - si).abs() < 1e-4);
        }
    }

    #[test]
    fn sine_energy_lands_in_the_matching_mel_band() {
        let cfg = MelFrontendConfig::default();
        let fe = MelFrontend::new(cfg).unwrap();
        let tone: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin() as f32 * 0.5)
            .collect();
        let mel = fe.mel_power(&tone).unwrap();
        let peak = (0..64)
            .max_by(|&a, &b| mel.get(a, 10).partial_cmp(&mel.get(b, 10)).unwrap())
            .unwrap();
        let target = hz_to_mel(1000.0);
        let centers: Vec<f64> = (1..=64).map(|i| hz_to_mel(8000.0) * i as f64 / 65.0).collect();
        let nearest = (0..64)
            .min_by(|&a, &b| {
                (centers[a] - target).abs().partial_cmp(&(centers[b] - target).abs()).unwrap()
            })
            .unwrap();
        assert!(peak.abs_diff(nearest) <= 1, "peak {peak} nearest {nearest}");
    }

    #[test]
    fn every_filter_has_support() {
        let filters = htk_filterbank(&MelFrontendConfig::default());
        assert_eq!(filters.len(), 64);
        assert!(filters.iter().all(|f| !f.weights.is_empty()));
    }

    #[test]
    fn normalize_identity_and_centering() {
        let mut r = SplitMix64::new(9);
        let vals: Vec<f32> = (0..64 * 10).map(|_| r.next_normal() as f32).collect();
        let mel = MelSpectrogram::from_values(64, 10, vals).unwrap();
        let out = normalize(&mel, &NormalizerParams::identity(64)).unwrap();
        assert_eq!(out, mel);

        let flat = MelSpectrogram::filled(64, 3, 5.0);
        let mut p = NormalizerParams::identity(64);
        p.mean = vec![5.0; 64];
        p.gamma = (0..64).map(|i| i as f32).collect();
        p.beta = (0..64).map(|i| -(i as f32)).collect();
        let out = normalize(&flat, &p).unwrap();
        for f in 0..64 {
            for t in 0..3 {
                assert_eq!(out.get(f, t), -(f as f32));
            }
        }
    }

    #[test]
    fn normalize_matches_scalar_loop() {
        let mut r = SplitMix64::new(11);
        let mut g = |s: f64| (r.next_normal() * s) as f32;
        let vals: Vec<f32> = (0..640).map(|_| g(3.0)).collect();
        let mel = MelSpectrogram::from_values(64, 10, vals).unwrap();
        let p = NormalizerParams {
            mean: (0..64).map(|_| g(1.0)).collect(),
            var: (0..64).map(|_| g(1.0).abs() + 0.1).collect(),
            gamma: (0..64).map(|_| g(1.0)).collect(),
            beta: (0..64).map(|_| g(1.0)).collect(),
            eps: 1e-5,
        };
        let out = normalize(&mel, &p).unwrap();
        for f in 0..64 {
            for t in 0..10 {
                let want = p.gamma[f] as f64 * (mel.get(f, t) as f64 - p.mean[f] as f64)
                    / ((p.var[f] + p.eps) as f64).sqrt()
                    + p.beta[f] as f64;
                assert!((out.get(f, t) as f64 - want).abs() <= 1e-6 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn normalize_rejects_non_finite_params() {
        let mel = MelSpectrogram::filled(64, 2, 0.0);
        let mut p = NormalizerParams::identity(64);
        p.gamma[3] = f32::INFINITY;
        assert!(matches!(normalize(&mel, &p), Err(Error::NonFinite(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn frame_count_formula_holds(n in 512usize..40_000) {
            let cfg = MelFrontendConfig::default();
            let mel = MelFrontend::new(cfg).unwrap().compute(&vec![0.0; n]).unwrap();
            prop_assert_eq!(mel.n_frames(), (n - 512) / 160 + 1);
            prop_assert_eq!(mel.n_mels(), 64);
        }

        #[test]
        fn doubling_amplitude_never_lowers_band_power(seed in any::<u64>(), n in 512usize..4_000) {
            let fe = MelFrontend::new(MelFrontendConfig::default()).unwrap();
            let x = noise(n, seed);
            let x2: Vec<f32> = x.iter().map(|v| v * 2.0).collect();
            let a = fe.mel_power(&x).unwrap();
            let b = fe.mel_power(&x2).unwrap();
            for (p, q) in a.values().iter().zip(b.values()) {
                prop_assert!(q >= p);
            }
        }

        #[test]
        fn compute_is_deterministic(seed in any::<u64>()) {
            let fe = MelFrontend::new(MelFrontendConfig::default()).unwrap();
            let x = noise(2_000, seed);
            prop_assert_eq!(fe.compute(&x).unwrap(), fe.compute(&x).unwrap());
        }
    }
}
