//! WAV loading, mono mixdown and linear resampling.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Rate every enrollment and identification signal is resampled to before
/// feature extraction.
pub const CANONICAL_RATE: u32 = 16_000;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed RIFF/WAVE data: {0}")]
    Malformed(String),
    #[error("unsupported codec: format tag {format_tag:#06x}, {bits} bits per sample")]
    UnsupportedCodec { format_tag: u16, bits: u16 },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
}

/// Mono floating-point PCM at a known rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scales the buffer down so its peak is at most 1. Buffers already
    /// within range are returned unchanged.
    pub fn normalized(mut self) -> Self {
        let peak = self.peak();
        if peak > 1.0 {
            for s in &mut self.samples {
                *s /= peak;
            }
        }
        self
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Averages interleaved multi-channel samples to mono.
pub fn mixdown(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    let scale = 1.0 / channels as f64;
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() * scale)
        .collect()
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            AudioError::NotFound(path.to_path_buf())
        } else {
            AudioError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    parse_wav(&bytes)
}

struct Format {
    tag: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes an in-memory RIFF/WAVE file to a mono buffer.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::Malformed("missing RIFF/WAVE signature".into()));
    }
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                AudioError::Malformed(format!(
                    "chunk '{}' overruns the file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let format = format.ok_or_else(|| AudioError::Malformed("missing 'fmt ' chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::Malformed("missing 'data' chunk".into()))?;
    if format.channels == 0 {
        return Err(AudioError::Malformed("zero channels".into()));
    }
    if format.rate == 0 {
        return Err(AudioError::Malformed("zero sample rate".into()));
    }
    let interleaved = decode_samples(&format, data)?;
    let mono = mixdown(&interleaved, usize::from(format.channels));
    AudioBuffer::new(mono, format.rate)
}

fn parse_fmt(body: &[u8]) -> Result<Format, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::Malformed("'fmt ' chunk shorter than 16 bytes".into()));
    }
    let mut tag = u16_at(body, 0);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID,
        // whose first two bytes carry the real format tag.
        if body.len() < 26 {
            return Err(AudioError::Malformed("truncated WAVE_FORMAT_EXTENSIBLE header".into()));
        }
        tag = u16_at(body, 24);
    }
    Ok(Format {
        tag,
        channels: u16_at(body, 2),
        rate: u32_at(body, 4),
        bits,
    })
}

fn decode_samples(format: &Format, data: &[u8]) -> Result<Vec<f64>, AudioError> {
    let unsupported = || AudioError::UnsupportedCodec {
        format_tag: format.tag,
        bits: format.bits,
    };
    let samples: Vec<f64> = match (format.tag, format.bits) {
        (FORMAT_PCM, 8) => data.iter().map(|&b| (f64::from(b) - 128.0) / 128.0).collect(),
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32_768.0)
            .collect(),
        (FORMAT_PCM, 24) => data
            .chunks_exact(3)
            .map(|c| {
                // sign-extend the 3-byte little-endian integer
                let v = i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8;
                f64::from(v) / 8_388_608.0
            })
            .collect(),
        (FORMAT_PCM, 32) => data
            .chunks_exact(4)
            .map(|c| f64::from(i32::from_le_bytes([c[0], c[1], c[2], c[3]])) / 2_147_483_648.0)
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).clamp(-1.0, 1.0))
            .collect(),
        _ => return Err(unsupported()),
    };
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(AudioError::Malformed("non-finite float sample".into()));
    }
    Ok(samples)
}

/// Encodes mono samples as 16-bit PCM WAV bytes. Samples are clamped to
/// [-1, 1] and scaled by 32767.
pub fn encode_wav_i16(buf: &AudioBuffer) -> Vec<u8> {
    let data_len = buf.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in buf.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32_767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav_i16(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<(), AudioError> {
    let path = path.as_ref();
    let io_err = |source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&encode_wav_i16(buf)).map_err(io_err)
}

/// Linear-interpolation resampler.
///
/// Output length is `round(n * target / source)`; output sample `j` reads the
/// input at position `j * source / target`, holding the last sample past the
/// end. Equal rates return the input unchanged.
pub fn resample_linear(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    let src_rate = buf.sample_rate();
    if src_rate == target_rate || buf.is_empty() {
        return AudioBuffer::new(buf.samples().to_vec(), target_rate);
    }
    let input = buf.samples();
    let n = input.len();
    let out_len = (n as f64 * f64::from(target_rate) / f64::from(src_rate)).round() as usize;
    let step = f64::from(src_rate) / f64::from(target_rate);
    let last = n - 1;
    let out = (0..out_len)
        .map(|j| {
            let pos = j as f64 * step;
            let i = pos.floor() as usize;
            if i >= last {
                return input[last];
            }
            let frac = pos - i as f64;
            input[i] + (input[i + 1] - input[i]) * frac
        })
        .collect();
    AudioBuffer::new(out, target_rate)
}

/// Resamples to [`CANONICAL_RATE`] (or `rate`) and normalizes peak amplitude.
pub fn prepare(buf: &AudioBuffer, rate: u32) -> Result<AudioBuffer, AudioError> {
    Ok(resample_linear(buf, rate)?.normalized())
}
