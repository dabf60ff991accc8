use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};
use sat::wav::{self, WavError};

fn write(path: &Path, channels: u16, rate: u32, bits: u16, format: SampleFormat, n: usize) {
    let spec = WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut w = WavWriter::create(path, spec).unwrap();
    for i in 0..n * channels as usize {
        match (format, bits) {
            (SampleFormat::Float, _) => w.write_sample(0.0f32).unwrap(),
            (_, 8) => w.write_sample(0i8).unwrap(),
            (_, 16) => w.write_sample((i % 7) as i16).unwrap(),
            _ => w.write_sample(0i32).unwrap(),
        }
    }
    w.finalize().unwrap();
}

#[test]
fn silence_and_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    wav::write_wav_i16(&p, &vec![0.0; 16_000]).unwrap();
    let a = wav::load_wav(&p).unwrap();
    assert_eq!(a.len(), 16_000);
    assert!(a.samples().iter().all(|&s| s == 0.0));

    let p = dir.path().join("ten.wav");
    wav::write_wav_f32(&p, &vec![0.25; 160_000]).unwrap();
    let a = wav::load_wav(&p).unwrap();
    assert_eq!(a.len(), 160_000);
    assert!((a.duration_s() - 10.0).abs() < 1e-12);
    assert!(a.samples().iter().all(|&s| s == 0.25));
}

#[test]
fn integer_samples_are_scaled() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.wav");
    let spec = WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(&p, spec).unwrap();
    for s in [i16::MIN, -16384, 0, 16384, i16::MAX] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    let a = wav::load_wav(&p).unwrap();
    assert_eq!(a.samples(), &[-1.0, -0.5, 0.0, 0.5, 32767.0 / 32768.0]);
}

#[test]
fn precondition_violations() {
    let dir = tempfile::tempdir().unwrap();
    let stereo = dir.path().join("stereo.wav");
    write(&stereo, 2, 16_000, 16, SampleFormat::Int, 100);
    let e = wav::load_wav(&stereo).unwrap_err();
    assert!(matches!(e, WavError::Audio { source: sat_core::Error::ChannelCount(2), .. }));
    let chain = format!("{:#}", anyhow::Error::new(e));
    assert!(chain.contains("channel_count must be 1"), "{chain}");

    let fast = dir.path().join("44k.wav");
    write(&fast, 1, 44_100, 16, SampleFormat::Int, 100);
    let chain = format!("{:#}", anyhow::Error::new(wav::load_wav(&fast).unwrap_err()));
    assert!(chain.contains("16000") && chain.contains("resample"), "{chain}");

    for (bits, fmt) in [(8, SampleFormat::Int), (24, SampleFormat::Int), (32, SampleFormat::Int)] {
        let p = dir.path().join(format!("{bits}.wav"));
        write(&p, 1, 16_000, bits, fmt, 10);
        assert!(matches!(wav::load_wav(&p), Err(WavError::Unsupported { .. })), "{bits}");
    }

    let garbage = dir.path().join("g.wav");
    std::fs::write(&garbage, b"RIFF....not a wav").unwrap();
    assert!(matches!(wav::load_wav(&garbage), Err(WavError::Decode { .. })));
    assert!(matches!(wav::load_wav(dir.path().join("missing.wav")), Err(WavError::Decode { .. })));
}

#[test]
fn non_finite_float_samples_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nan.wav");
    wav::write_wav_f32(&p, &[0.0, f32::NAN, 0.0]).unwrap();
    assert!(matches!(
        wav::load_wav(&p),
        Err(WavError::Audio { source: sat_core::Error::NonFiniteAudio, .. })
    ));
}
