//! PCM WAV input and raw little-endian `f32` sample streams.

use std::io::{self, Read};
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use sat_core::{AudioBuffer, SAMPLE_RATE_HZ};

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("cannot decode {path}")]
    Decode {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported encoding ({bits}-bit {format}); use 16-bit PCM or 32-bit float")]
    Unsupported {
        path: PathBuf,
        bits: u16,
        format: &'static str,
    },
    #[error("{path}")]
    Audio {
        path: PathBuf,
        #[source]
        source: sat_core::Error,
    },
}

fn format_name(f: SampleFormat) -> &'static str {
    match f {
        SampleFormat::Int => "integer",
        SampleFormat::Float => "float",
    }
}

/// Reads a 16 kHz mono WAV file, 16-bit integer or 32-bit float.
///
/// Integer samples are scaled by 1/32768. Other rates and channel counts
/// are rejected rather than converted.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, WavError> {
    let path = path.as_ref();
    let decode = |source| WavError::Decode {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(decode)?;
    let spec = reader.spec();
    let audio_err = |source| WavError::Audio {
        path: path.to_path_buf(),
        source,
    };
    if spec.channels != 1 {
        return Err(audio_err(sat_core::Error::ChannelCount(spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(audio_err(sat_core::Error::SampleRate(spec.sample_rate)));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(decode)?,
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>().map_err(decode)?,
        (format, bits) => {
            return Err(WavError::Unsupported {
                path: path.to_path_buf(),
                bits,
                format: format_name(format),
            })
        }
    };
    AudioBuffer::new(samples, spec.sample_rate, spec.channels).map_err(audio_err)
}

/// Writes mono 16 kHz samples as 16-bit PCM, clamping to [-1, 1].
pub fn write_wav_i16(path: impl AsRef<Path>, samples: &[f32]) -> Result<(), hound::Error> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()
}

/// Writes mono 16 kHz samples as 32-bit float.
pub fn write_wav_f32(path: impl AsRef<Path>, samples: &[f32]) -> Result<(), hound::Error> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(s)?;
    }
    w.finalize()
}

/// Reads headerless little-endian `f32` samples in fixed-size blocks.
pub struct RawF32Reader<R> {
    inner: R,
    pending: Vec<u8>,
    eof: bool,
}

impl<R: Read> RawF32Reader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            pending: Vec::new(),
            eof: false,
        }
    }

    /// Returns up to `n` samples, fewer only at end of input. An empty
    /// block means the input is exhausted; a trailing partial sample is
    /// dropped.
    pub fn read_block(&mut self, n: usize) -> io::Result<Vec<f32>> {
        let want = n * 4;
        let mut buf = [0u8; 8192];
        while self.pending.len() < want && !self.eof {
            let k = (want - self.pending.len()).min(buf.len());
            match self.inner.read(&mut buf[..k]) {
                Ok(0) => self.eof = true,
                Ok(got) => self.pending.extend_from_slice(&buf[..got]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        let take = self.pending.len().min(want) / 4 * 4;
        let out = self.pending[..take]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        self.pending.drain(..take);
        if self.eof {
            self.pending.clear();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_reader_blocks_and_partial_tail() {
        let mut bytes: Vec<u8> = (0..10).flat_map(|i| (i as f32).to_le_bytes()).collect();
        bytes.extend_from_slice(&[1, 2]);
        let mut r = RawF32Reader::new(bytes.as_slice());
        assert_eq!(r.read_block(4).unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(r.read_block(4).unwrap(), vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(r.read_block(4).unwrap(), vec![8.0, 9.0]);
        assert!(r.read_block(4).unwrap().is_empty());
    }
}
