//! The `sat` command line: `tag`, `stream`, `eval`, `profile` and `init`.

use std::ffi::OsString;
use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sat_core::frontend::{MelFrontend, FRAME_RATE_HZ};
use sat_core::metrics::{self, ClipLabelMatrix, Counts};
use sat_core::profiler::CostReport;
use sat_core::stream::{self, ChunkPlan, ClipScores, StreamState};
use sat_core::{AudioBuffer, MelFrontendConfig, ModelConfig, Pooling, Variant, WeightSet, N_CLASSES};
use serde::Serialize;

use crate::labels::{self, ClassNames};
use crate::{checkpoint, report, wav};

pub const TAG_SCHEMA: &str = "sat.tag/1";
pub const EVAL_SCHEMA: &str = "sat.eval/1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_WEIGHTS: i32 = 3;
pub const EXIT_AUDIO: i32 = 4;
pub const EXIT_EVAL_FAILURES: i32 = 5;

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl Failure {
    fn is_broken_pipe(&self) -> bool {
        self.error
            .chain()
            .any(|e| e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn usage(msg: impl fmt::Display) -> Failure {
    Failure::new(EXIT_USAGE, anyhow!("{msg}"))
}

fn bad_input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::new(EXIT_USAGE, e)
}

fn output(e: io::Error) -> Failure {
    Failure::new(EXIT_FAILURE, anyhow::Error::new(e).context("writing output"))
}

#[derive(Debug, Parser)]
#[command(name = "sat", version, about = "Streaming audio tagging with chunk-recurrent transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tag a WAV file chunk by chunk, then print the clip average.
    Tag(TagArgs),
    /// Tag a continuous stream, emitting each chunk as soon as its audio arrives.
    Stream(StreamArgs),
    /// Score a labelled dataset: mAP, and segment/onset F1 with strong labels.
    Eval(EvalArgs),
    /// Print the analytic cost of one forward pass.
    Profile(ProfileArgs),
    /// Write seeded random weights to a SATW file.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Tiny,
    Small,
    Base,
}

impl From<Arch> for Variant {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Tiny => Variant::Tiny,
            Arch::Small => Variant::Small,
            Arch::Base => Variant::Base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Mean,
    Cls,
}

/// Chunk delay in seconds, or the whole clip at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delay {
    Seconds(f32),
    Full,
}

impl FromStr for Delay {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(Delay::Full);
        }
        match s.parse::<f32>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Delay::Seconds(v)),
            _ => Err(format!("expected a positive number of seconds or `full`, got {s:?}")),
        }
    }
}

impl fmt::Display for Delay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delay::Seconds(s) => write!(f, "{s}"),
            Delay::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// SATW weight file.
    #[arg(long, required_unless_present = "seed", conflicts_with = "seed")]
    pub weights: Option<PathBuf>,
    /// Use seeded random weights instead of a file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Arch::Tiny)]
    pub arch: Arch,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        let pooling = match self.pooling {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Cls => Pooling::Cls,
        };
        ModelConfig::new(self.arch.into()).with_pooling(pooling)
    }

    pub fn load(&self) -> Result<WeightSet, Failure> {
        let cfg = self.config();
        match (&self.weights, self.seed) {
            (Some(path), _) => checkpoint::load(path, &cfg)
                .with_context(|| format!("loading weights {}", path.display()))
                .map_err(|e| Failure::new(EXIT_WEIGHTS, e)),
            (None, Some(seed)) => WeightSet::seeded(&cfg, seed).map_err(|e| Failure::new(EXIT_WEIGHTS, e)),
            (None, None) => Err(usage("one of --weights or --seed is required")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct TagArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seconds per chunk (1, 2, ...) or `full`.
    #[arg(long, default_value = "2")]
    pub delay: Delay,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u16).range(1..=527))]
    pub topk: u16,
    /// Class-name CSV (`id,name`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RecordFormat::Jsonl)]
    pub format: RecordFormat,
}

#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Read headerless little-endian f32 mono 16 kHz samples from stdin.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub stdin_raw_f32: bool,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seconds per chunk.
    #[arg(long, default_value = "2")]
    pub delay: Delay,
    /// Score every chunk without the previous chunk's keys and values.
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u16).range(1..=527))]
    pub topk: u16,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RecordFormat::Jsonl)]
    pub format: RecordFormat,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "2")]
    pub delay: Delay,
    /// TSV of `clip_id`, `path` and optional comma-separated class ids.
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV of `clip_id` and class ids; replaces labels from the manifest.
    #[arg(long)]
    pub weak_labels: Option<PathBuf>,
    /// TSV of `clip_id`, `onset_s`, `offset_s`, `class_id`.
    #[arg(long)]
    pub strong_labels: Option<PathBuf>,
    #[arg(long, default_value_t = metrics::DEFAULT_THRESHOLD)]
    pub threshold: f32,
    #[arg(long, default_value_t = metrics::DEFAULT_COLLAR_S)]
    pub collar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileFormat {
    Json,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    /// One or more of tiny, small, base (comma separated).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "tiny")]
    pub arch: Vec<Arch>,
    #[arg(long, conflicts_with = "delay", value_parser = clap::value_parser!(u32).range(1..))]
    pub tokens: Option<u32>,
    #[arg(long)]
    pub delay: Option<Delay>,
    /// Attach a cache as long as the chunk itself.
    #[arg(long)]
    pub streaming: bool,
    #[arg(long, value_enum, default_value_t = ProfileFormat::Json)]
    pub format: ProfileFormat,
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    #[arg(long, value_enum, default_value_t = Arch::Tiny)]
    pub arch: Arch,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Tag(a) => cmd_tag(&a, &mut out),
        Command::Stream(a) => cmd_stream(&a, &mut out),
        Command::Eval(a) => cmd_eval(&a, &mut out),
        Command::Profile(a) => cmd_profile(&a, &mut out),
        Command::Init(a) => cmd_init(&a),
    };
    match result {
        Ok(code) => code,
        // A closed downstream pipe (`sat tag ... | head`) is not an error.
        Err(f) if f.is_broken_pipe() => EXIT_OK,
        Err(f) => {
            eprintln!("sat: {f}");
            f.code
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopEntry {
    pub class_id: usize,
    pub class_name: String,
    pub prob: f32,
}

/// One line of `tag`/`stream` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagRecord {
    pub schema: &'static str,
    /// `chunk` or `summary`.
    pub record: &'static str,
    pub stream: String,
    pub chunk: Option<usize>,
    pub start_s: f64,
    pub end_s: f64,
    pub n_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_chunks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interrupted: Option<bool>,
    pub top: Vec<TopEntry>,
}

/// Indices of the `k` largest scores, highest first, ties by class id.
pub fn top_k(scores: &[f32], k: usize, names: &ClassNames) -> Vec<TopEntry> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter()
        .map(|i| TopEntry {
            class_id: i,
            class_name: names.name(i),
            prob: scores[i],
        })
        .collect()
}

struct RecordWriter<'a> {
    out: &'a mut dyn Write,
    format: RecordFormat,
}

fn csv_rows<I, R>(rows: I) -> io::Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

impl<'a> RecordWriter<'a> {
    fn new(out: &'a mut dyn Write, format: RecordFormat) -> io::Result<Self> {
        if format == RecordFormat::Csv {
            out.write_all(&csv_rows([[
                "schema", "record", "stream", "chunk", "start_s", "end_s", "n_tokens", "rank", "class_id",
                "class_name", "prob",
            ]])?)?;
            out.flush()?;
        }
        Ok(Self { out, format })
    }

    fn write(&mut self, r: &TagRecord) -> io::Result<()> {
        match self.format {
            RecordFormat::Jsonl => {
                serde_json::to_writer(&mut *self.out, r)?;
                self.out.write_all(b"\n")?;
            }
            RecordFormat::Csv => {
                let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
                let rows = r.top.iter().enumerate().map(|(rank, t)| {
                    [
                        r.schema.to_string(),
                        r.record.to_string(),
                        r.stream.clone(),
                        opt(r.chunk),
                        r.start_s.to_string(),
                        r.end_s.to_string(),
                        opt(r.n_tokens),
                        (rank + 1).to_string(),
                        t.class_id.to_string(),
                        t.class_name.clone(),
                        t.prob.to_string(),
                    ]
                });
                self.out.write_all(&csv_rows(rows)?)?;
            }
        }
        self.out.flush()
    }
}

fn class_names(path: &Option<PathBuf>) -> Result<ClassNames, Failure> {
    match path {
        Some(p) => ClassNames::read(p).map_err(bad_input),
        None => Ok(ClassNames::default()),
    }
}

fn chunk_record(stream: &str, c: &stream::ChunkScores, k: usize, names: &ClassNames) -> TagRecord {
    TagRecord {
        schema: TAG_SCHEMA,
        record: "chunk",
        stream: stream.to_string(),
        chunk: Some(c.index),
        start_s: c.start_s,
        end_s: c.end_s,
        n_tokens: Some(c.n_tokens),
        n_chunks: None,
        interrupted: None,
        top: top_k(&c.scores, k, names),
    }
}

fn summary_record(stream: &str, clip: &ClipScores, k: usize, names: &ClassNames, interrupted: Option<bool>) -> TagRecord {
    TagRecord {
        schema: TAG_SCHEMA,
        record: "summary",
        stream: stream.to_string(),
        chunk: None,
        start_s: clip.chunks.first().map_or(0.0, |c| c.start_s),
        end_s: clip.chunks.last().map_or(0.0, |c| c.end_s),
        n_tokens: None,
        n_chunks: Some(clip.chunks.len()),
        interrupted,
        top: top_k(&clip.averaged, k, names),
    }
}

fn check_delay(cfg: &ModelConfig, delay: Delay) -> Result<(), Failure> {
    if let Delay::Seconds(d) = delay {
        ChunkPlan::for_delay(cfg, d).map_err(|e| usage(format!("--delay {d}: {e}")))?;
        if !stream::TRAINED_DELAYS_S.contains(&d) {
            eprintln!("sat: note: delay {d} s is outside the trained settings (1 s, 2 s)");
        }
    }
    Ok(())
}

fn audio_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure::new(EXIT_AUDIO, e)
}

/// Scores a whole clip with the given delay policy.
pub fn score_clip(w: &WeightSet, audio: &AudioBuffer, delay: Delay) -> sat_core::Result<ClipScores> {
    match delay {
        Delay::Seconds(d) => stream::run_clip(w, audio, d),
        Delay::Full => stream::run_clip_full(w, audio),
    }
}

pub fn cmd_tag(a: &TagArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let names = class_names(&a.labels)?;
    let cfg = a.model.config();
    check_delay(&cfg, a.delay)?;
    let w = a.model.load()?;
    let audio = wav::load_wav(&a.input).map_err(audio_failure)?;
    let clip = score_clip(&w, &audio, a.delay)
        .with_context(|| a.input.display().to_string())
        .map_err(audio_failure)?;
    let name = a.input.display().to_string();
    let k = a.topk as usize;
    let mut rw = RecordWriter::new(out, a.format).map_err(output)?;
    for c in &clip.chunks {
        rw.write(&chunk_record(&name, c, k, &names)).map_err(output)?;
    }
    rw.write(&summary_record(&name, &clip, k, &names, None)).map_err(output)?;
    Ok(EXIT_OK)
}

enum Block {
    Samples(Vec<f32>),
    Failed(io::Error),
}

fn spawn_reader(a: &StreamArgs, block: usize) -> Result<mpsc::Receiver<Block>, Failure> {
    let (tx, rx) = mpsc::sync_channel::<Block>(4);
    match &a.input {
        Some(path) => {
            let audio = wav::load_wav(path).map_err(audio_failure)?;
            std::thread::spawn(move || {
                for piece in audio.samples().chunks(block) {
                    if tx.send(Block::Samples(piece.to_vec())).is_err() {
                        return;
                    }
                }
            });
        }
        None => {
            std::thread::spawn(move || {
                let mut r = wav::RawF32Reader::new(io::stdin().lock());
                loop {
                    match r.read_block(block) {
                        Ok(b) if b.is_empty() => return,
                        Ok(b) => {
                            if tx.send(Block::Samples(b)).is_err() {
                                return;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Block::Failed(e));
                            return;
                        }
                    }
                }
            });
        }
    }
    Ok(rx)
}

/// Incremental chunker: accepts samples as they arrive and scores every
/// chunk whose audio is complete. Produces the same rows as
/// [`stream::run_clip`] on the concatenated input.
pub struct LiveTagger<'w> {
    weights: &'w WeightSet,
    state: StreamState,
    frontend: MelFrontend,
    plan: ChunkPlan,
    buf: Vec<f32>,
    /// Absolute sample index of `buf[0]`.
    buf_start: usize,
    next_chunk: usize,
    received: usize,
    chunks: Vec<stream::ChunkScores>,
}

impl<'w> LiveTagger<'w> {
    pub fn new(weights: &'w WeightSet, delay_s: f32, use_cache: bool) -> sat_core::Result<Self> {
        let state = if use_cache {
            StreamState::new(&weights.config, delay_s)?
        } else {
            StreamState::stateless(&weights.config, delay_s)?
        };
        Ok(Self {
            weights,
            plan: state.plan(),
            state,
            frontend: MelFrontend::new(MelFrontendConfig::default())?,
            buf: Vec::new(),
            buf_start: 0,
            next_chunk: 0,
            received: 0,
            chunks: Vec::new(),
        })
    }

    fn fe(&self) -> &MelFrontendConfig {
        self.frontend.config()
    }

    fn chunk_start_sample(&self, k: usize) -> usize {
        k * self.plan.hop_frames * self.fe().hop_samples
    }

    fn samples_for(&self, frames: usize) -> usize {
        (frames - 1) * self.fe().hop_samples + self.fe().window_samples
    }

    fn score(&mut self, start: usize, width: usize, end_s: f64) -> sat_core::Result<stream::ChunkScores> {
        let from = start - self.buf_start;
        let n = self.samples_for(width);
        let mel = self.frontend.compute(&self.buf[from..from + n])?;
        let scores = if width == self.plan.chunk_frames {
            self.state.process_chunk(self.weights, &mel)?
        } else {
            self.state.process_tail(self.weights, &mel)?
        };
        let start_s = (start / self.fe().hop_samples) as f64 / FRAME_RATE_HZ as f64;
        let c = stream::ChunkScores {
            index: self.next_chunk,
            start_s,
            end_s: end_s.max(start_s),
            n_tokens: sat_core::model::token_count(&self.weights.config, width),
            scores,
        };
        self.next_chunk += 1;
        self.chunks.push(c.clone());
        Ok(c)
    }

    /// Appends samples and returns the chunks that became complete.
    pub fn push(&mut self, samples: &[f32]) -> sat_core::Result<Vec<stream::ChunkScores>> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(sat_core::Error::NonFiniteAudio);
        }
        self.buf.extend_from_slice(samples);
        self.received += samples.len();
        let mut ready = Vec::new();
        loop {
            let start = self.chunk_start_sample(self.next_chunk);
            let need = start + self.samples_for(self.plan.chunk_frames);
            if self.received < need {
                break;
            }
            let start_s = start as f64 / sat_core::SAMPLE_RATE_HZ as f64;
            ready.push(self.score(start, self.plan.chunk_frames, start_s + self.plan.hop_s())?);
            let keep_from = self.chunk_start_sample(self.next_chunk).min(self.received);
            self.buf.drain(..keep_from - self.buf_start);
            self.buf_start = keep_from;
        }
        Ok(ready)
    }

    /// Scores the trailing partial chunk, if at least one patch remains.
    pub fn finish(&mut self) -> sat_core::Result<Option<stream::ChunkScores>> {
        let start = self.chunk_start_sample(self.next_chunk);
        if self.received <= start {
            return Ok(None);
        }
        let frames = self.fe().frame_count(self.received - start);
        let p = self.weights.config.patch_size;
        let width = frames.min(self.plan.chunk_frames) / p * p;
        if width == 0 {
            return Ok(None);
        }
        let end_s = self.received as f64 / sat_core::SAMPLE_RATE_HZ as f64;
        self.score(start, width, end_s).map(Some)
    }

    pub fn clip(&self) -> ClipScores {
        ClipScores::from_chunks(self.chunks.clone())
    }
}

pub fn cmd_stream(a: &StreamArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let names = class_names(&a.labels)?;
    let cfg = a.model.config();
    let delay = match a.delay {
        Delay::Seconds(d) => d,
        Delay::Full => return Err(usage("stream needs a finite --delay; use `tag --delay full` for whole clips")),
    };
    check_delay(&cfg, a.delay)?;
    let w = a.model.load()?;
    let mut tagger = LiveTagger::new(&w, delay, !a.no_cache).map_err(bad_input)?;
    let stream_name = a.input.as_ref().map_or("stdin".to_string(), |p| p.display().to_string());

    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let flag = interrupted.clone();
        if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
            eprintln!("sat: warning: cannot install interrupt handler: {e}");
        }
    }

    let block = tagger.plan.hop_samples(&MelFrontendConfig::default());
    let rx = spawn_reader(a, block)?;
    let k = a.topk as usize;
    let mut rw = RecordWriter::new(out, a.format).map_err(output)?;
    let fail = |e: sat_core::Error| audio_failure(anyhow::Error::new(e).context(stream_name.clone()));
    let was_interrupted = loop {
        if interrupted.load(Ordering::SeqCst) {
            break true;
        }
        match rx.recv_timeout(Duration::from_millis(50)) {
            Ok(Block::Samples(s)) => {
                for c in tagger.push(&s).map_err(fail)? {
                    rw.write(&chunk_record(&stream_name, &c, k, &names)).map_err(output)?;
                }
            }
            Ok(Block::Failed(e)) => return Err(audio_failure(anyhow::Error::new(e).context("reading stdin"))),
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break false,
        }
    };
    if !was_interrupted {
        if let Some(c) = tagger.finish().map_err(fail)? {
            rw.write(&chunk_record(&stream_name, &c, k, &names)).map_err(output)?;
        }
    }
    let clip = tagger.clip();
    rw.write(&summary_record(&stream_name, &clip, k, &names, Some(was_interrupted)))
        .map_err(output)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema: &'static str,
    pub arch: &'static str,
    pub delay: String,
    pub n_clips: usize,
    pub n_failed: usize,
    /// Classes with at least one positive clip.
    pub n_scored_classes: usize,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_strong_clips: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seg_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub onset_f1: Option<f64>,
    pub threshold: f32,
    pub collar_s: f64,
}

fn eval_threads() -> Result<usize, Failure> {
    match std::env::var("SAT_NUM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(usage(format!("SAT_NUM_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(0),
    }
}

/// Runs the evaluation and returns the report plus whether more than 10%
/// of the clips failed.
pub fn evaluate(a: &EvalArgs) -> Result<(EvalReport, bool), Failure> {
    let cfg = a.model.config();
    check_delay(&cfg, a.delay)?;
    let entries = labels::read_manifest(&a.manifest).map_err(bad_input)?;
    if entries.is_empty() {
        return Err(usage(format!("{}: manifest lists no clips", a.manifest.display())));
    }
    let weak = match &a.weak_labels {
        Some(p) => Some(labels::read_weak_labels(p).map_err(bad_input)?),
        None => None,
    };
    let strong = match &a.strong_labels {
        Some(p) => Some(labels::read_strong_labels(p).map_err(bad_input)?),
        None => None,
    };
    let w = a.model.load()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval_threads()?)
        .build()
        .map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let results: Vec<anyhow::Result<ClipScores>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let audio = wav::load_wav(&e.path)?;
                score_clip(&w, &audio, a.delay).with_context(|| e.path.display().to_string())
            })
            .collect()
    });

    let mut labels_flat = Vec::new();
    let mut scores_flat = Vec::new();
    let mut n_ok = 0;
    let mut n_failed = 0;
    let mut seg = Counts::default();
    let mut onset = Counts::default();
    let mut n_strong = 0;
    let chunk_s = match a.delay {
        Delay::Seconds(d) => ChunkPlan::for_delay(&cfg, d).map_err(bad_input)?.hop_s(),
        Delay::Full => cfg.full_context_frames() as f64 / FRAME_RATE_HZ as f64,
    };
    for (e, r) in entries.iter().zip(&results) {
        let clip = match r {
            Ok(c) => c,
            Err(err) => {
                eprintln!("sat: eval: {}: {err:#}", e.clip_id);
                n_failed += 1;
                continue;
            }
        };
        n_ok += 1;
        let ids = match &weak {
            Some(map) => map.get(&e.clip_id).map(Vec::as_slice).unwrap_or(&[]),
            None => e.labels.as_slice(),
        };
        let mut row = vec![false; N_CLASSES];
        for &i in ids {
            row[i] = true;
        }
        labels_flat.extend(row);
        scores_flat.extend(clip.averaged.iter().map(|&v| v as f64));

        if let Some(truth) = strong.as_ref().and_then(|s| s.get(&e.clip_id)) {
            n_strong += 1;
            let rows: Vec<Vec<f32>> = clip.rows().map(<[f32]>::to_vec).collect();
            let c = metrics::segment_counts(&rows, truth, chunk_s, a.threshold)
                .with_context(|| e.clip_id.clone())
                .map_err(|e| Failure::new(EXIT_FAILURE, e))?;
            seg += c;
            let pred = metrics::events_from_chunks(&rows, chunk_s, a.threshold);
            onset += metrics::onset_counts(&pred, truth, a.collar);
        }
    }

    let (map, n_scored_classes) = if n_ok == 0 {
        (None, 0)
    } else {
        let m = ClipLabelMatrix::new(n_ok, N_CLASSES, labels_flat, scores_flat).map_err(bad_input)?;
        let per_class = m.per_class_ap();
        (metrics::mean_ap(&m).ok(), per_class.iter().flatten().count())
    };
    let report = EvalReport {
        schema: EVAL_SCHEMA,
        arch: cfg.variant.name(),
        delay: a.delay.to_string(),
        n_clips: entries.len(),
        n_failed,
        n_scored_classes,
        map,
        n_strong_clips: strong.as_ref().map(|_| n_strong),
        seg_f1: strong.as_ref().map(|_| seg.f1()),
        onset_f1: strong.as_ref().map(|_| onset.f1()),
        threshold: a.threshold,
        collar_s: a.collar,
    };
    Ok((report, n_failed * 10 > entries.len()))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (report, too_many_failures) = evaluate(a)?;
    serde_json::to_writer(&mut *out, &report).map_err(|e| output(e.into()))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(output)?;
    if too_many_failures {
        eprintln!("sat: eval: {} of {} clips failed", report.n_failed, report.n_clips);
        return Ok(EXIT_EVAL_FAILURES);
    }
    Ok(EXIT_OK)
}

/// Token count for a profile request: explicit, from a delay, or the full
/// position table.
pub fn profile_tokens(cfg: &ModelConfig, tokens: Option<u32>, delay: Option<Delay>) -> Result<usize, Failure> {
    Ok(match (tokens, delay) {
        (Some(n), _) => n as usize,
        (None, Some(Delay::Seconds(d))) => {
            let plan = ChunkPlan::for_delay(cfg, d).map_err(bad_input)?;
            sat_core::model::token_count(cfg, plan.chunk_frames)
        }
        (None, Some(Delay::Full)) | (None, None) => sat_core::model::token_count(cfg, cfg.full_context_frames()),
    })
}

pub fn cmd_profile(a: &ProfileArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut rows = Vec::new();
    for &arch in &a.arch {
        let cfg = ModelConfig::new(arch.into());
        let n = profile_tokens(&cfg, a.tokens, a.delay)?;
        let cache = if a.streaming { n } else { 0 };
        rows.push((CostReport::new(&cfg, n, cache), a.streaming));
    }
    match a.format {
        ProfileFormat::Json => {
            for (r, s) in &rows {
                serde_json::to_writer(&mut *out, &report::to_json(r, *s)).map_err(|e| output(e.into()))?;
                out.write_all(b"\n").map_err(output)?;
            }
        }
        ProfileFormat::Table => out.write_all(report::markdown_table(&rows).as_bytes()).map_err(output)?,
    }
    out.flush().map_err(output)?;
    Ok(EXIT_OK)
}

pub fn cmd_init(a: &InitArgs) -> Result<i32, Failure> {
    let m = ModelArgs {
        weights: None,
        seed: Some(a.seed),
        arch: a.arch,
        pooling: a.pooling,
    };
    let w = m.load()?;
    checkpoint::save(&w, &a.out).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    eprintln!(
        "sat: wrote {} ({} parameters) to {}",
        w.config.variant.short_name(),
        w.parameter_count(),
        a.out.display()
    );
    Ok(EXIT_OK)
}
