//! Log-mel filterbank features and corpus-level normalisation.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::tts::{Waveform, SAMPLE_RATE};
use crate::emotion::graph::{matrix_from_f32_blob, matrix_to_f32_blob};
use crate::error::{Error, Result};

pub const MEL_BINS: usize = 128;
/// 25 ms at 16 kHz.
pub const WIN_LENGTH: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP_LENGTH: usize = 160;
pub const N_FFT: usize = 1024;
pub const LOG_FLOOR: f64 = 1e-10;

/// `frames × 128` log-mel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub seconds: f64,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

pub fn frame_count(samples: usize) -> usize {
    (samples.max(WIN_LENGTH) - WIN_LENGTH) / HOP_LENGTH + 1
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters over `0..=sr/2`, `MEL_BINS × (N_FFT/2+1)`.
pub fn mel_filterbank(sample_rate: u32) -> Array2<f64> {
    let n_freq = N_FFT / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let points: Vec<f64> = (0..MEL_BINS + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (MEL_BINS + 1) as f64)).collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / N_FFT as f64;
    Array2::from_shape_fn((MEL_BINS, n_freq), |(m, k)| {
        let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
        let f = bin_hz(k);
        if f <= l || f >= r {
            0.0
        } else if f <= c {
            (f - l) / (c - l)
        } else {
            (r - f) / (r - c)
        }
    })
}

pub struct MelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Array2<f64>,
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..WIN_LENGTH).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (WIN_LENGTH - 1) as f64).cos()).collect();
        Self { fft, window, filters: mel_filterbank(SAMPLE_RATE) }
    }

    /// Hamming-windowed STFT magnitude, 128 mel filters, natural log.
    /// Input is resampled to 16 kHz and zero-padded to one window.
    pub fn log_mel(&self, wav: &Waveform) -> Spectrogram {
        let wav = super::tts::resample(wav, SAMPLE_RATE);
        let mut x: Vec<f64> = wav.samples.iter().map(|&s| s as f64).collect();
        if x.len() < WIN_LENGTH {
            x.resize(WIN_LENGTH, 0.0);
        }
        let frames = frame_count(x.len());
        let n_freq = N_FFT / 2 + 1;
        let mut mag = Array2::zeros((frames, n_freq));
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for t in 0..frames {
            let start = t * HOP_LENGTH;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < WIN_LENGTH { Complex::new(x[start + i] * self.window[i], 0.0) } else { Complex::new(0.0, 0.0) };
            }
            self.fft.process(&mut buf);
            for k in 0..n_freq {
                mag[[t, k]] = buf[k].norm();
            }
        }
        let mel = mag.dot(&self.filters.t()).mapv(|v| v.max(LOG_FLOOR).ln());
        Spectrogram { values: mel, seconds: wav.duration() }
    }
}

pub fn log_mel_spectrogram(wav: &Waveform) -> Spectrogram {
    MelExtractor::new().log_mel(wav)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    /// Which split the statistics came from.
    pub source: String,
}

impl NormStats {
    /// Pooled mean and population std over every value of every spectrogram.
    pub fn compute<'a>(specs: impl IntoIterator<Item = &'a Spectrogram>, source: &str) -> Result<Self> {
        // two passes: a constant input must give exactly zero spread
        let specs: Vec<&Spectrogram> = specs.into_iter().collect();
        let n: usize = specs.iter().map(|s| s.values.len()).sum();
        if n == 0 {
            return Err(Error::Config("no spectrogram values to normalise over".into()));
        }
        let mean = specs.iter().map(|s| s.values.sum()).sum::<f64>() / n as f64;
        let sq: f64 = specs.iter().map(|s| s.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()).sum();
        Ok(Self { mean, std: (sq / n as f64).sqrt(), source: source.into() })
    }
}

/// `(x - mean) / (2 std)`, which maps the source split to mean 0, std 0.5.
pub fn normalize_spectrogram(spec: &Spectrogram, stats: &NormStats) -> Spectrogram {
    let values = if stats.std < 1e-8 {
        Array2::zeros(spec.values.dim())
    } else {
        spec.values.mapv(|x| (x - stats.mean) / (2.0 * stats.std))
    };
    Spectrogram { values, seconds: spec.seconds }
}

/// Keeps at most `max_frames` leading frames.
pub fn truncate_frames(spec: &Spectrogram, max_frames: usize) -> Spectrogram {
    if spec.frames() <= max_frames {
        return spec.clone();
    }
    Spectrogram { values: spec.values.slice_axis(Axis(0), (0..max_frames).into()).to_owned(), seconds: spec.seconds }
}

/// Cache blob: `frames:u32, bins:u32`, then f32 LE row-major values.
pub fn write_spectrogram(path: &Path, spec: &Spectrogram) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, matrix_to_f32_blob(&spec.values)).map_err(|e| Error::io(path, e))
}

pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    let values = matrix_from_f32_blob(&fs::read(path).map_err(|e| Error::io(path, e))?)?;
    let seconds = (values.nrows().saturating_sub(1) * HOP_LENGTH + WIN_LENGTH) as f64 / SAMPLE_RATE as f64;
    Ok(Spectrogram { values, seconds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_shape() {
        let s = log_mel_spectrogram(&Waveform::silence(1.0, SAMPLE_RATE));
        assert_eq!(s.values.dim(), (98, 128));
    }

    #[test]
    fn short_clip_pads_to_one_frame() {
        assert_eq!(log_mel_spectrogram(&Waveform::silence(0.01, SAMPLE_RATE)).frames(), 1);
        assert_eq!(log_mel_spectrogram(&Waveform::silence(0.0, SAMPLE_RATE)).frames(), 1);
    }

    #[test]
    fn silence_is_constant() {
        let s = log_mel_spectrogram(&Waveform::silence(0.5, SAMPLE_RATE));
        assert!(s.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn no_empty_filters() {
        let fb = mel_filterbank(SAMPLE_RATE);
        assert!(fb.rows().into_iter().all(|r| r.sum() > 0.0));
    }

    #[test]
    fn tone_peaks_in_matching_band() {
        let sr = SAMPLE_RATE as f64;
        let tone = |f: f64| {
            let samples = (0..16000).map(|n| (0.5 * (2.0 * PI * f * n as f64 / sr).sin()) as f32).collect();
            log_mel_spectrogram(&Waveform::new(samples, SAMPLE_RATE).unwrap())
        };
        let peak = |s: &Spectrogram| {
            let row = s.values.row(10);
            (0..128).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
        };
        assert!(peak(&tone(500.0)) < peak(&tone(3000.0)));
    }

    #[test]
    fn normalisation_formula() {
        let s = Spectrogram { values: ndarray::array![[0.0, 2.0]], seconds: 0.0 };
        let n = normalize_spectrogram(&s, &NormStats { mean: 1.0, std: 1.0, source: "t".into() });
        assert_eq!(n.values, ndarray::array![[-0.5, 0.5]]);
        let c = Spectrogram { values: Array2::from_elem((3, 4), 7.0), seconds: 0.0 };
        let st = NormStats::compute([&c], "train").unwrap();
        assert!(normalize_spectrogram(&c, &st).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalised_corpus_has_half_std() {
        let specs: Vec<Spectrogram> = (0..3)
            .map(|k| Spectrogram { values: Array2::from_shape_fn((5, 4), |(i, j)| (i * j + k) as f64), seconds: 0.0 })
            .collect();
        let st = NormStats::compute(&specs, "train").unwrap();
        let normed: Vec<Spectrogram> = specs.iter().map(|s| normalize_spectrogram(s, &st)).collect();
        let again = NormStats::compute(&normed, "check").unwrap();
        assert!(again.mean.abs() < 1e-9);
        assert!((again.std - 0.5).abs() < 1e-3);
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = log_mel_spectrogram(&Waveform::silence(0.1, SAMPLE_RATE));
        let p = dir.path().join("x.spec");
        write_spectrogram(&p, &s).unwrap();
        let back = read_spectrogram(&p).unwrap();
        assert_eq!(back.values.dim(), s.values.dim());
    }
}
