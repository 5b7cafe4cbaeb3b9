//! Text-to-speech adapters, sentence chunking and clip concatenation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::encoder::stable_seed;
use crate::error::{Error, Result};
use crate::tokenize::tokenize;

pub const SAMPLE_RATE: u32 = 16_000;
pub const MAX_CHUNK_TOKENS: usize = 45;
pub const TOY_TTS: &str = "toy-tone";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("waveform has non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; (seconds * sample_rate as f64).round() as usize], sample_rate }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub trait TtsBackend: Send + Sync {
    fn name(&self) -> &str;

    fn max_clip_seconds(&self) -> f64;

    fn synth(&self, chunk: &str) -> Result<Waveform>;
}

/// Deterministic stand-in voice: every character becomes a short tone at a
/// frequency drawn from a seeded table; spaces are silent and an ellipsis
/// leaves a longer gap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTts {
    pub seed: u64,
    pub char_ms: f64,
    pub pause_ms: f64,
    pub max_clip_seconds: f64,
    pub sample_rate: u32,
}

impl Default for ToyTts {
    fn default() -> Self {
        Self { seed: 0, char_ms: 50.0, pause_ms: 150.0, max_clip_seconds: 13.0, sample_rate: SAMPLE_RATE }
    }
}

impl ToyTts {
    pub fn frequency(&self, c: char) -> f64 {
        let h = stable_seed(&format!("{TOY_TTS}:{}", self.seed), &c.to_lowercase().to_string());
        200.0 + (h % 3600) as f64
    }

    fn samples_for(&self, ms: f64) -> usize {
        (ms / 1000.0 * self.sample_rate as f64).round() as usize
    }
}

impl TtsBackend for ToyTts {
    fn name(&self) -> &str {
        TOY_TTS
    }

    fn max_clip_seconds(&self) -> f64 {
        self.max_clip_seconds
    }

    fn synth(&self, chunk: &str) -> Result<Waveform> {
        let sr = self.sample_rate as f64;
        let tone = self.samples_for(self.char_ms);
        let mut out: Vec<f32> = Vec::new();
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            if let Some(r) = rest.strip_prefix("...").or_else(|| rest.strip_prefix('…')) {
                out.extend(std::iter::repeat_n(0.0, self.samples_for(self.pause_ms)));
                rest = r;
                continue;
            }
            rest = &rest[c.len_utf8()..];
            if c.is_whitespace() {
                out.extend(std::iter::repeat_n(0.0, tone));
                continue;
            }
            let f = self.frequency(c);
            out.extend((0..tone).map(|n| {
                // short linear fade to avoid clicks at tone boundaries
                let edge = (n.min(tone - 1 - n) as f64 / 40.0).min(1.0);
                (0.3 * edge * (2.0 * PI * f * n as f64 / sr).sin()) as f32
            }));
        }
        let cap = (self.max_clip_seconds * sr).floor() as usize;
        out.truncate(cap);
        Waveform::new(out, self.sample_rate)
    }
}

pub fn resolve_tts(name: &str, seed: u64) -> Result<Box<dyn TtsBackend>> {
    match name {
        TOY_TTS => Ok(Box::new(ToyTts { seed, ..ToyTts::default() })),
        other => Err(Error::backend(other, "no such TTS backend")),
    }
}

/// Splits at `.`, `!`, `?` and newlines, then caps each sentence at
/// `max_tokens` tokens by greedy runs.
pub fn chunk_text(text: &str, max_tokens: usize) -> Result<Vec<String>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let max_tokens = max_tokens.max(1);
    let mut sentences = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c == '\n' {
            sentences.push(std::mem::take(&mut current));
            continue;
        }
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            sentences.push(std::mem::take(&mut current));
        }
    }
    sentences.push(current);
    let mut chunks = Vec::new();
    for s in sentences {
        let words: Vec<&str> = s.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let mut run: Vec<&str> = Vec::new();
        let mut run_tokens = 0;
        for w in words {
            let n = tokenize(w).len().max(1);
            if !run.is_empty() && run_tokens + n > max_tokens {
                chunks.push(run.join(" "));
                run.clear();
                run_tokens = 0;
            }
            run.push(w);
            run_tokens += n;
        }
        if !run.is_empty() {
            chunks.push(run.join(" "));
        }
    }
    Ok(chunks)
}

/// Linear-interpolation resampling.
pub fn resample(wav: &Waveform, rate: u32) -> Waveform {
    if wav.sample_rate == rate || wav.samples.is_empty() {
        return Waveform { samples: wav.samples.clone(), sample_rate: rate };
    }
    let ratio = wav.sample_rate as f64 / rate as f64;
    let n = (wav.samples.len() as f64 / ratio).round() as usize;
    let last = wav.samples.len() - 1;
    let samples = (0..n)
        .map(|i| {
            let x = i as f64 * ratio;
            let j = (x.floor() as usize).min(last);
            let k = (j + 1).min(last);
            let t = x - j as f64;
            (wav.samples[j] as f64 * (1.0 - t) + wav.samples[k] as f64 * t) as f32
        })
        .collect();
    Waveform { samples, sample_rate: rate }
}

/// Synthesises each chunk and concatenates the clips at 16 kHz.
pub fn synthesize(chunks: &[String], backend: &dyn TtsBackend) -> Result<Waveform> {
    let mut samples = Vec::new();
    for chunk in chunks {
        let clip = backend.synth(chunk)?;
        let secs = clip.duration();
        if secs > backend.max_clip_seconds() + 1e-9 {
            return Err(Error::ClipTooLong { backend: backend.name().into(), seconds: secs, max: backend.max_clip_seconds() });
        }
        samples.extend(resample(&clip, SAMPLE_RATE).samples);
    }
    Waveform::new(samples, SAMPLE_RATE)
}

pub fn synthesize_text(text: &str, backend: &dyn TtsBackend) -> Result<Waveform> {
    synthesize(&chunk_text(text, MAX_CHUNK_TOKENS)?, backend)
}
