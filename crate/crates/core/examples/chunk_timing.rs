//! Times one streaming chunk per variant on seeded weights.

use std::time::Instant;

use sat_core::config::{ModelConfig, Variant};
use sat_core::stream::StreamState;
use sat_core::{MelSpectrogram, WeightSet};

fn main() {
    for v in Variant::ALL {
        let cfg = ModelConfig::new(v);
        let w = WeightSet::seeded(&cfg, 0).unwrap();
        let mut s = StreamState::new(&cfg, 2.0).unwrap();
        let mel = MelSpectrogram::filled(64, s.chunk_frames(), -4.0);
        s.process_chunk(&w, &mel).unwrap();
        let t = Instant::now();
        let n = 5;
        for _ in 0..n {
            s.process_chunk(&w, &mel).unwrap();
        }
        println!("{v}: {:.1} ms per 2 s chunk", t.elapsed().as_secs_f64() * 1e3 / n as f64);
    }
}
