//! MFCC front end.
//!
//! The chain per signal is: pre-emphasis over the whole signal, framing,
//! Hamming window, zero-padded power spectrum, Mel filterbank energies, floored
//! natural log, orthonormal DCT-II. Coefficient 0 (overall log energy) is
//! dropped, so the retained `c1..=n_coeffs` are insensitive to global gain.

mod matrix;
mod mel;

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::par;

pub use matrix::FeatureMatrix;
pub use mel::{hz_to_mel, mel_to_hz, MelFilter, MelFilterBank};

/// Filterbank energies are clamped to this value before the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("{n_filters} Mel filters do not fit in a {n_fft}-point FFT (point {point} collides with its neighbour)")]
    FilterbankTooFine {
        n_filters: usize,
        n_fft: usize,
        point: usize,
    },
    #[error("audio too short: {samples} samples, need at least {frame_len} for one frame")]
    TooShort { samples: usize, frame_len: usize },
    #[error("non-finite value in input at row/sample {row}")]
    NonFinite { row: usize },
    #[error("audio is at {found} Hz but the extractor was built for {expected} Hz")]
    RateMismatch { expected: u32, found: u32 },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature dimension must be positive")]
    ZeroDimension,
    #[error("{len} values cannot be split into rows of {dim}")]
    RaggedRows { len: usize, dim: usize },
    #[error("no rows supplied")]
    NoRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub preemphasis: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub n_coeffs: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            preemphasis: 0.97,
            n_fft: 512,
            n_mels: 26,
            fmin: 0.0,
            fmax: 8000.0,
            n_coeffs: 16,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (self.frame_len_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    /// Number of frames a signal of `n_samples` produces.
    pub fn frame_count(&self, n_samples: usize, sample_rate: u32) -> usize {
        frame_count(n_samples, self.frame_len(sample_rate), self.hop_len(sample_rate))
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        let frame_len = self.frame_len(sample_rate);
        let hop = self.hop_len(sample_rate);
        if frame_len == 0 || hop == 0 {
            return bad(format!(
                "frame ({} ms) and hop ({} ms) must each cover at least one sample",
                self.frame_len_ms, self.hop_ms
            ));
        }
        if self.hop_ms > self.frame_len_ms {
            return bad(format!(
                "hop_ms {} exceeds frame_len_ms {}",
                self.hop_ms, self.frame_len_ms
            ));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad(format!("preemphasis {} outside [0, 1)", self.preemphasis));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < frame_len {
            return bad(format!(
                "n_fft {} must be a power of two >= frame length {frame_len}",
                self.n_fft
            ));
        }
        if self.n_coeffs == 0 || self.n_coeffs >= self.n_mels {
            // c0 is dropped, so c1..=n_coeffs needs n_coeffs < n_mels
            return bad(format!(
                "n_coeffs {} must be in 1..n_mels ({})",
                self.n_coeffs, self.n_mels
            ));
        }
        let nyquist = f64::from(sample_rate) / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got {} / {}",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }
}

/// `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
pub fn pre_emphasize(samples: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    if let Some(&first) = samples.first() {
        out.push(first);
    }
    out.extend(samples.windows(2).map(|w| w[1] - alpha * w[0]));
    out
}

/// `floor((n - frame_len) / hop) + 1` when `n >= frame_len`, else 0.
pub fn frame_count(n: usize, frame_len: usize, hop: usize) -> usize {
    if frame_len == 0 || hop == 0 || n < frame_len {
        0
    } else {
        (n - frame_len) / hop + 1
    }
}

/// Frame `i` covers `[i * hop, i * hop + frame_len)`; a trailing partial frame
/// is dropped.
pub fn frame_signal(samples: &[f64], frame_len: usize, hop: usize) -> Vec<&[f64]> {
    (0..frame_count(samples.len(), frame_len, hop))
        .map(|i| &samples[i * hop..i * hop + frame_len])
        .collect()
}

pub fn hamming_coefficients(len: usize) -> Vec<f64> {
    let denom = len.saturating_sub(1) as f64;
    (0..len)
        .map(|n| {
            let phase = if denom == 0.0 { 0.0 } else { 2.0 * PI * n as f64 / denom };
            0.54 - 0.46 * phase.cos()
        })
        .collect()
}

pub fn hamming_window(frame: &[f64]) -> Vec<f64> {
    frame
        .iter()
        .zip(hamming_coefficients(frame.len()))
        .map(|(x, w)| x * w)
        .collect()
}

/// `|FFT|^2 / n_fft` for bins `0..=n_fft/2` of the zero-padded frame.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    power_spectrum_with(fft.as_ref(), frame, n_fft)
}

fn power_spectrum_with(fft: &dyn Fft<f64>, frame: &[f64], n_fft: usize) -> Vec<f64> {
    assert!(frame.len() <= n_fft, "frame longer than n_fft");
    let mut buf: Vec<Complex<f64>> = frame
        .iter()
        .map(|&re| Complex::new(re, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    fft.process(&mut buf);
    let scale = 1.0 / n_fft as f64;
    buf[..n_fft / 2 + 1]
        .iter()
        .map(|c| c.norm_sqr() * scale)
        .collect()
}

/// Orthonormal DCT-II matrix, `n x n`, row `k` is basis vector `k`.
pub fn dct_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Reusable MFCC extractor for one configuration and sample rate.
#[derive(Clone)]
pub struct MfccExtractor {
    cfg: MfccConfig,
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
    window: Vec<f64>,
    bank: MelFilterBank,
    /// Rows `1..=n_coeffs` of the DCT-II matrix.
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    log_floor: Option<f64>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("cfg", &self.cfg)
            .field("sample_rate", &self.sample_rate)
            .field("log_floor", &self.log_floor)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(cfg: &MfccConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        cfg.validate(sample_rate)?;
        let frame_len = cfg.frame_len(sample_rate);
        let bank = MelFilterBank::new(cfg.n_mels, cfg.n_fft, sample_rate, cfg.fmin, cfg.fmax)?;
        let dct = dct_matrix(cfg.n_mels)
            .into_iter()
            .skip(1)
            .take(cfg.n_coeffs)
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            frame_len,
            hop: cfg.hop_len(sample_rate),
            window: hamming_coefficients(frame_len),
            bank,
            dct,
            fft: FftPlanner::new().plan_fft_forward(cfg.n_fft),
            log_floor: Some(LOG_FLOOR),
        })
    }

    /// Replaces the log floor; `None` takes the log of raw energies.
    pub fn with_log_floor(mut self, floor: Option<f64>) -> Self {
        self.log_floor = floor;
        self
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &MelFilterBank {
        &self.bank
    }

    fn frames(&self, buf: &AudioBuffer) -> Result<(Vec<f64>, usize), FeatureError> {
        if buf.sample_rate() != self.sample_rate {
            return Err(FeatureError::RateMismatch {
                expected: self.sample_rate,
                found: buf.sample_rate(),
            });
        }
        if let Some(i) = buf.samples().iter().position(|s| !s.is_finite()) {
            return Err(FeatureError::NonFinite { row: i });
        }
        let n = frame_count(buf.len(), self.frame_len, self.hop);
        if n == 0 {
            return Err(FeatureError::TooShort {
                samples: buf.len(),
                frame_len: self.frame_len,
            });
        }
        Ok((pre_emphasize(buf.samples(), self.cfg.preemphasis), n))
    }

    fn frame_energies(&self, emphasized: &[f64], i: usize) -> Vec<f64> {
        let start = i * self.hop;
        let windowed: Vec<f64> = emphasized[start..start + self.frame_len]
            .iter()
            .zip(&self.window)
            .map(|(x, w)| x * w)
            .collect();
        let spectrum = power_spectrum_with(self.fft.as_ref(), &windowed, self.cfg.n_fft);
        self.bank.apply(&spectrum)
    }

    /// Pre-log Mel filterbank energies, one row of `n_mels` per frame.
    pub fn filterbank_energies(&self, buf: &AudioBuffer) -> Result<FeatureMatrix, FeatureError> {
        let (emphasized, n) = self.frames(buf)?;
        let rows = par::map_range(n, |i| self.frame_energies(&emphasized, i));
        FeatureMatrix::from_rows(&rows)
    }

    pub fn extract(&self, buf: &AudioBuffer) -> Result<FeatureMatrix, FeatureError> {
        let (emphasized, n) = self.frames(buf)?;
        let rows = par::map_range(n, |i| {
            let log_e: Vec<f64> = self
                .frame_energies(&emphasized, i)
                .into_iter()
                .map(|e| match self.log_floor {
                    Some(floor) => e.max(floor).ln(),
                    None => e.ln(),
                })
                .collect();
            self.dct
                .iter()
                .map(|basis| basis.iter().zip(&log_e).map(|(b, v)| b * v).sum())
                .collect::<Vec<f64>>()
        });
        FeatureMatrix::from_rows(&rows)
    }
}

/// One-shot MFCC extraction. The buffer must already be at the rate the
/// features are meant for.
pub fn extract_mfcc(buf: &AudioBuffer, cfg: &MfccConfig) -> Result<FeatureMatrix, FeatureError> {
    MfccExtractor::new(cfg, buf.sample_rate())?.extract(buf)
}
