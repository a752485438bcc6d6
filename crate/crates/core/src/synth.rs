//! Synthetic multi-speaker corpus.
//!
//! Each speaker owns a fundamental frequency and 3-5 "sound units", each unit a
//! set of three formant resonances. An utterance is a random sequence of unit
//! segments rendered as harmonics of the speaker's f0 shaped by the unit's
//! formant envelope. Every utterance draws its own session jitter (f0 shift,
//! vocal-tract warp, per-formant drift, gain) and additive white noise, so a
//! model trained on one session generalizes imperfectly to another.
//!
//! All randomness comes from [`Xorshift64Star`] streams derived from
//! `(seed, speaker, utterance)`, so generation order does not matter.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::audio::{self, AudioBuffer, AudioError, CANONICAL_RATE};
use crate::manifest::{Manifest, ManifestEntry, Split};
use crate::par;
use crate::rng::{derive_seed, Xorshift64Star};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least one speaker and one utterance per speaker")]
    EmptyCorpus,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Knobs of the voice generator. The defaults are what `synth-corpus` uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub sample_rate: u32,
    /// Utterance duration range, seconds.
    pub duration: (f64, f64),
    /// Segment (one sound unit) duration range, seconds.
    pub segment: (f64, f64),
    pub f0: (f64, f64),
    pub units: (usize, usize),
    pub formant_ranges: [(f64, f64); 3],
    pub bandwidth: (f64, f64),
    /// Relative std-dev of the per-utterance f0 shift.
    pub f0_jitter: f64,
    /// Relative std-dev of the per-utterance warp applied to every formant.
    pub warp_jitter: f64,
    /// Relative std-dev of per-utterance, per-formant drift.
    pub formant_jitter: f64,
    /// Std-dev of per-utterance formant gain changes, dB.
    pub gain_jitter_db: f64,
    /// Signal-to-noise ratio range, dB.
    pub snr_db: (f64, f64),
    /// Highest harmonic frequency rendered, Hz.
    pub max_harmonic_hz: f64,
    pub train_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sample_rate: CANONICAL_RATE,
            duration: (7.5, 10.0),
            segment: (0.08, 0.25),
            f0: (90.0, 240.0),
            units: (3, 5),
            formant_ranges: [(250.0, 850.0), (850.0, 2400.0), (2200.0, 3600.0)],
            bandwidth: (60.0, 160.0),
            f0_jitter: 0.06,
            warp_jitter: 0.04,
            formant_jitter: 0.03,
            gain_jitter_db: 2.0,
            snr_db: (10.0, 25.0),
            max_harmonic_hz: 4000.0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Formant {
    freq: f64,
    bandwidth: f64,
    gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Voice {
    f0: f64,
    units: Vec<[Formant; 3]>,
}

impl Voice {
    fn draw(rng: &mut Xorshift64Star, p: &SynthParams) -> Self {
        let f0 = rng.uniform(p.f0.0, p.f0.1);
        let n_units = p.units.0 + rng.below(p.units.1 - p.units.0 + 1);
        let gains_db = [(0.0, 0.0), (-9.0, -3.0), (-16.0, -8.0)];
        let units = (0..n_units)
            .map(|_| {
                std::array::from_fn(|i| Formant {
                    freq: rng.uniform(p.formant_ranges[i].0, p.formant_ranges[i].1),
                    bandwidth: rng.uniform(p.bandwidth.0, p.bandwidth.1),
                    gain: db_to_amp(rng.uniform(gains_db[i].0, gains_db[i].1)),
                })
            })
            .collect();
        Self { f0, units }
    }

    /// This voice as heard in one recording session.
    fn session(&self, rng: &mut Xorshift64Star, p: &SynthParams) -> Voice {
        let f0 = self.f0 * (1.0 + p.f0_jitter * rng.gaussian());
        let warp = 1.0 + p.warp_jitter * rng.gaussian();
        let units = self
            .units
            .iter()
            .map(|unit| {
                std::array::from_fn(|i| {
                    let f = &unit[i];
                    Formant {
                        freq: f.freq * warp * (1.0 + p.formant_jitter * rng.gaussian()),
                        bandwidth: f.bandwidth,
                        gain: f.gain * db_to_amp(p.gain_jitter_db * rng.gaussian()),
                    }
                })
            })
            .collect();
        Voice { f0, units }
    }
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Magnitude response of the formant envelope at `hz`.
fn envelope(unit: &[Formant; 3], hz: f64) -> f64 {
    unit.iter()
        .map(|f| {
            let x = (hz - f.freq) / (0.5 * f.bandwidth);
            f.gain / (1.0 + x * x).sqrt()
        })
        .sum()
}

fn render_utterance(voice: &Voice, rng: &mut Xorshift64Star, p: &SynthParams) -> Vec<f64> {
    let rate = f64::from(p.sample_rate);
    let session = voice.session(rng, p);
    let total = (rng.uniform(p.duration.0, p.duration.1) * rate).round() as usize;
    let fade = (0.01 * rate) as usize;
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let len = ((rng.uniform(p.segment.0, p.segment.1) * rate) as usize).min(total - out.len());
        let unit = &session.units[rng.below(session.units.len())];
        // mild intonation within a session
        let f0 = session.f0 * (1.0 + 0.03 * rng.gaussian());
        let n_harm = (p.max_harmonic_hz / f0).floor().max(1.0) as usize;
        let mut osc: Vec<(f64, f64, f64, f64, f64)> = (1..=n_harm)
            .map(|h| {
                let w = 2.0 * PI * f0 * h as f64 / rate;
                let phase = 2.0 * PI * rng.next_f64();
                // (amplitude, cos, sin, rotation cos, rotation sin)
                (envelope(unit, f0 * h as f64), phase.cos(), phase.sin(), w.cos(), w.sin())
            })
            .collect();
        for n in 0..len {
            let mut s = 0.0;
            for (amp, c, si, rc, rs) in osc.iter_mut() {
                s += *amp * *si;
                let (nc, ns) = (*c * *rc - *si * *rs, *si * *rc + *c * *rs);
                *c = nc;
                *si = ns;
            }
            let ramp = if n < fade {
                n as f64 / fade as f64
            } else if len - n <= fade {
                (len - n) as f64 / fade as f64
            } else {
                1.0
            };
            out.push(s * ramp);
        }
    }
    let power = out.iter().map(|s| s * s).sum::<f64>() / out.len().max(1) as f64;
    let snr = rng.uniform(p.snr_db.0, p.snr_db.1);
    let noise_std = (power / 10f64.powf(snr / 10.0)).sqrt();
    for s in &mut out {
        *s += noise_std * rng.gaussian();
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        for s in &mut out {
            *s *= g;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub speaker_id: String,
    pub split: Split,
    /// Path relative to the corpus directory.
    pub rel_path: PathBuf,
    pub audio: AudioBuffer,
}

pub fn speaker_name(index: usize, n_speakers: usize) -> String {
    let width = n_speakers.to_string().len().max(2);
    format!("spk{:0width$}", index + 1)
}

/// Number of training utterances out of `n`: `round(n * fraction)`, kept in
/// `1..n` whenever `n >= 2` so every speaker has both splits.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let k = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        n
    }
}

/// Generates the corpus in memory. Within each speaker the first
/// [`train_count`] utterances are the training split.
pub fn generate_corpus(
    n_speakers: usize,
    utterances_per_speaker: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<SynthUtterance>, SynthError> {
    if n_speakers == 0 || utterances_per_speaker == 0 {
        return Err(SynthError::EmptyCorpus);
    }
    let n_train = train_count(utterances_per_speaker, params.train_fraction);
    let voices: Vec<Voice> = (0..n_speakers)
        .map(|s| Voice::draw(&mut Xorshift64Star::derived(seed, s as u64), params))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..n_speakers)
        .flat_map(|s| (0..utterances_per_speaker).map(move |u| (s, u)))
        .collect();
    par::map_slice(&jobs, |&(s, u)| {
        let speaker_seed = derive_seed(seed, s as u64);
        let mut rng = Xorshift64Star::derived(speaker_seed, 1 + u as u64);
        let samples = render_utterance(&voices[s], &mut rng, params);
        let speaker_id = speaker_name(s, n_speakers);
        let rel_path = PathBuf::from(&speaker_id).join(format!("utt{:02}.wav", u + 1));
        Ok(SynthUtterance {
            split: if u < n_train { Split::Train } else { Split::Test },
            rel_path,
            audio: AudioBuffer::new(samples, params.sample_rate)?,
            speaker_id,
        })
    })
    .into_iter()
    .collect()
}

/// Writes a generated corpus as 16-bit WAV files plus `manifest.tsv` under
/// `out_dir` and returns the manifest path.
pub fn write_corpus(out_dir: &Path, corpus: &[SynthUtterance]) -> Result<PathBuf, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut manifest = Manifest {
        entries: Vec::with_capacity(corpus.len()),
        base_dir: out_dir.to_path_buf(),
    };
    for u in corpus {
        let path = out_dir.join(&u.rel_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, audio::encode_wav_i16(&u.audio)).map_err(io(&path))?;
        manifest.entries.push(ManifestEntry {
            speaker_id: u.speaker_id.clone(),
            split: u.split,
            path: u.rel_path.clone(),
        });
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    fs::write(&manifest_path, manifest.to_text()).map_err(io(&manifest_path))?;
    Ok(manifest_path)
}

/// Generates and writes a corpus with the default generator settings.
pub fn synth_corpus(
    out_dir: &Path,
    n_speakers: usize,
    utterances_per_speaker: usize,
    seed: u64,
) -> Result<PathBuf, SynthError> {
    let corpus = generate_corpus(n_speakers, utterances_per_speaker, seed, &SynthParams::default())?;
    write_corpus(out_dir, &corpus)
}
