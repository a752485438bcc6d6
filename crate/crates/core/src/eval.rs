//! Closed-set evaluation over a labelled corpus.
//!
//! For every grid point (backend, model size, iteration limit, optional cap
//! on training seconds) each speaker is trained on its train split and every
//! test utterance is identified against all speakers. Rows come out in grid
//! order; trials within a row in manifest order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::audio::{self, AudioError};
use crate::config::EngineConfig;
use crate::features::{FeatureError, FeatureMatrix, MfccExtractor};
use crate::gmm::{self, GmmError};
use crate::manifest::{Manifest, ManifestError, Split};
use crate::par;
use crate::registry::{Backend, RankedScore};
use crate::synth::SynthUtterance;
use crate::vq::{self, VqError};

pub const CSV_HEADER: &str =
    "backend,k_or_m,iterations,train_seconds,test_seconds,trials,correct,identification_rate";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("manifest lists no utterances")]
    EmptyManifest,
    #[error("speaker '{0}' has no test utterances")]
    NoTestUtterances(String),
    #[error("speaker '{0}' has no training utterances")]
    NoTrainUtterances(String),
    #[error("{path}: {source}")]
    Audio {
        path: PathBuf,
        #[source]
        source: AudioError,
    },
    #[error("{path}: {source}")]
    Feature {
        path: PathBuf,
        #[source]
        source: FeatureError,
    },
    #[error(transparent)]
    Config(#[from] FeatureError),
    #[error("training {backend} model for '{speaker}': {message}")]
    Training {
        backend: Backend,
        speaker: String,
        message: String,
    },
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error("empty evaluation grid")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub backend: Backend,
    /// K for VQ, M for GMM.
    pub k_or_m: usize,
    /// k-means iteration limit for VQ, EM iteration limit for GMM.
    pub iterations: usize,
    /// Cap on training audio per speaker, seconds.
    pub train_cap_secs: Option<f64>,
}

impl GridPoint {
    pub fn vq(k: usize) -> Self {
        Self {
            backend: Backend::Vq,
            k_or_m: k,
            iterations: vq::DEFAULT_MAX_ITER,
            train_cap_secs: None,
        }
    }

    pub fn gmm(m: usize, iterations: usize) -> Self {
        Self {
            backend: Backend::Gmm,
            k_or_m: m,
            iterations,
            train_cap_secs: None,
        }
    }

    pub fn with_train_cap(mut self, secs: f64) -> Self {
        self.train_cap_secs = Some(secs);
        self
    }
}

/// Cartesian grid in nesting order backend, size, iterations, cap.
pub fn cartesian_grid(
    backends: &[Backend],
    sizes: &[usize],
    iterations: &[usize],
    caps: &[Option<f64>],
) -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for &backend in backends {
        for &k_or_m in sizes {
            for &iters in iterations {
                for &cap in caps {
                    grid.push(GridPoint {
                        backend,
                        k_or_m,
                        iterations: iters,
                        train_cap_secs: cap,
                    });
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub backend: Backend,
    pub k_or_m: usize,
    pub iterations: usize,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub trials: usize,
    pub correct: usize,
    pub identification_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub row: usize,
    pub true_speaker: String,
    pub path: PathBuf,
    pub ranked: Vec<RankedScore>,
}

impl TrialOutcome {
    pub fn decision(&self) -> &str {
        &self.ranked[0].speaker_id
    }

    pub fn correct(&self) -> bool {
        self.decision() == self.true_speaker
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub trials: Vec<TrialOutcome>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{:.2},{},{},{:.4}",
                r.backend,
                r.k_or_m,
                r.iterations,
                r.train_seconds,
                r.test_seconds,
                r.trials,
                r.correct,
                r.identification_rate
            );
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = [
            "backend", "K/M", "iters", "train s", "test s", "trials", "correct", "rate %",
        ];
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.backend.to_string(),
                    r.k_or_m.to_string(),
                    r.iterations.to_string(),
                    format!("{:.2}", r.train_seconds),
                    format!("{:.2}", r.test_seconds),
                    r.trials.to_string(),
                    r.correct.to_string(),
                    format!("{:.4}", r.identification_rate),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..8)
            .map(|c| cells.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, fields: &[&str]| {
            let padded: Vec<String> = fields
                .iter()
                .zip(&widths)
                .map(|(f, w)| format!("{f:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  "));
        };
        line(&mut out, &header);
        for r in &cells {
            let refs: Vec<&str> = r.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }
}

#[derive(Debug, Clone)]
struct TestUtterance {
    path: PathBuf,
    secs: f64,
    features: FeatureMatrix,
}

#[derive(Debug, Clone)]
struct SpeakerData {
    id: String,
    train: Vec<(f64, FeatureMatrix)>,
    test: Vec<TestUtterance>,
}

/// A manifest with every utterance loaded and turned into features.
#[derive(Debug, Clone)]
pub struct FeatureCorpus {
    speakers: Vec<SpeakerData>,
    cfg: EngineConfig,
}

impl FeatureCorpus {
    pub fn from_manifest(manifest: &Manifest, cfg: &EngineConfig) -> Result<Self, EvalError> {
        if manifest.entries.is_empty() {
            return Err(EvalError::EmptyManifest);
        }
        let extractor = MfccExtractor::new(&cfg.mfcc, cfg.sample_rate)?;
        let extracted = par::map_slice(&manifest.entries, |entry| {
            let path = manifest.resolve(entry);
            let audio = audio::load_wav(&path)
                .and_then(|a| audio::prepare(&a, cfg.sample_rate))
                .map_err(|source| EvalError::Audio {
                    path: path.clone(),
                    source,
                })?;
            let features = extractor.extract(&audio).map_err(|source| EvalError::Feature {
                path: path.clone(),
                source,
            })?;
            Ok::<_, EvalError>((path, audio.duration_secs(), features))
        });
        let mut speakers: Vec<SpeakerData> = manifest
            .speakers()
            .into_iter()
            .map(|id| SpeakerData {
                id: id.to_string(),
                train: Vec::new(),
                test: Vec::new(),
            })
            .collect();
        for (entry, res) in manifest.entries.iter().zip(extracted) {
            let (path, secs, features) = res?;
            let spk = speakers
                .iter_mut()
                .find(|s| s.id == entry.speaker_id)
                .expect("speaker list built from the same manifest");
            match entry.split {
                Split::Train => spk.train.push((secs, features)),
                Split::Test => spk.test.push(TestUtterance {
                    path,
                    secs,
                    features,
                }),
            }
        }
        Self::checked(speakers, cfg)
    }

    fn checked(speakers: Vec<SpeakerData>, cfg: &EngineConfig) -> Result<Self, EvalError> {
        if speakers.is_empty() {
            return Err(EvalError::EmptyManifest);
        }
        for s in &speakers {
            if s.train.is_empty() {
                return Err(EvalError::NoTrainUtterances(s.id.clone()));
            }
            if s.test.is_empty() {
                return Err(EvalError::NoTestUtterances(s.id.clone()));
            }
        }
        Ok(Self {
            speakers,
            cfg: cfg.clone(),
        })
    }

    /// Builds the corpus straight from generated audio, skipping the WAV
    /// round trip.
    pub fn from_synth(corpus: &[SynthUtterance], cfg: &EngineConfig) -> Result<Self, EvalError> {
        let extractor = MfccExtractor::new(&cfg.mfcc, cfg.sample_rate)?;
        let mut speakers: Vec<SpeakerData> = Vec::new();
        let extracted = par::map_slice(corpus, |u| {
            let audio = audio::prepare(&u.audio, cfg.sample_rate).map_err(|source| EvalError::Audio {
                path: u.rel_path.clone(),
                source,
            })?;
            let features = extractor.extract(&audio).map_err(|source| EvalError::Feature {
                path: u.rel_path.clone(),
                source,
            })?;
            Ok::<_, EvalError>((audio.duration_secs(), features))
        });
        for (u, res) in corpus.iter().zip(extracted) {
            let (secs, features) = res?;
            let idx = match speakers.iter().position(|s| s.id == u.speaker_id) {
                Some(i) => i,
                None => {
                    speakers.push(SpeakerData {
                        id: u.speaker_id.clone(),
                        train: Vec::new(),
                        test: Vec::new(),
                    });
                    speakers.len() - 1
                }
            };
            match u.split {
                Split::Train => speakers[idx].train.push((secs, features)),
                Split::Test => speakers[idx].test.push(TestUtterance {
                    path: u.rel_path.clone(),
                    secs,
                    features,
                }),
            }
        }
        Self::checked(speakers, cfg)
    }

    pub fn speaker_ids(&self) -> Vec<&str> {
        self.speakers.iter().map(|s| s.id.as_str()).collect()
    }

    /// Training frames for one speaker, limited to what `cap_secs` of audio
    /// would yield; returns the features and the seconds of audio they cover.
    fn training_set(&self, s: &SpeakerData, cap_secs: Option<f64>) -> (FeatureMatrix, f64) {
        let total_secs: f64 = s.train.iter().map(|(secs, _)| secs).sum();
        let all = FeatureMatrix::concat(self.cfg.mfcc.n_coeffs, s.train.iter().map(|(_, f)| f))
            .expect("training features share the configured dimension");
        match cap_secs {
            Some(cap) if cap < total_secs => {
                let cap_samples = (cap * f64::from(self.cfg.sample_rate)).round() as usize;
                let frames = self.cfg.mfcc.frame_count(cap_samples, self.cfg.sample_rate);
                (all.head(frames), cap)
            }
            _ => (all, total_secs),
        }
    }

    pub fn evaluate(&self, grid: &[GridPoint]) -> Result<EvalReport, EvalError> {
        if grid.is_empty() {
            return Err(EvalError::EmptyGrid);
        }
        let tests: Vec<(&SpeakerData, &TestUtterance)> = self
            .speakers
            .iter()
            .flat_map(|s| s.test.iter().map(move |t| (s, t)))
            .collect();
        let test_seconds = tests.iter().map(|(_, t)| t.secs).sum::<f64>() / tests.len() as f64;
        let mut report = EvalReport::default();
        for (row, point) in grid.iter().enumerate() {
            let seed = self.cfg.seed;
            let trained = par::map_slice(&self.speakers, |s| {
                let (x, secs) = self.training_set(s, point.train_cap_secs);
                let model = match point.backend {
                    Backend::Vq => vq::kmeans_fit(&x, point.k_or_m, seed, point.iterations)
                        .map(Model::Vq)
                        .map_err(|e| e.to_string()),
                    Backend::Gmm => gmm::em_fit(&x, point.k_or_m, seed, point.iterations, self.cfg.em_tol)
                        .map(|(g, _)| Model::Gmm(g))
                        .map_err(|e| e.to_string()),
                };
                model.map(|m| (m, secs)).map_err(|message| EvalError::Training {
                    backend: point.backend,
                    speaker: s.id.clone(),
                    message,
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            let train_seconds =
                trained.iter().map(|(_, secs)| secs).sum::<f64>() / trained.len() as f64;

            let ranked = par::map_slice(&tests, |(_, t)| -> Result<Vec<RankedScore>, EvalError> {
                Ok(match point.backend {
                    Backend::Vq => {
                        let books = self.speakers.iter().zip(&trained).map(|(s, (m, _))| {
                            (s.id.as_str(), m.codebook().expect("VQ row trains codebooks"))
                        });
                        vq::vq_identify(&t.features, books)?
                            .into_iter()
                            .map(|s| RankedScore {
                                speaker_id: s.speaker_id,
                                score: s.distortion,
                            })
                            .collect()
                    }
                    Backend::Gmm => {
                        let models = self.speakers.iter().zip(&trained).map(|(s, (m, _))| {
                            (s.id.as_str(), m.gmm().expect("GMM row trains mixtures"))
                        });
                        gmm::gmm_identify(&t.features, models)?
                            .into_iter()
                            .map(|s| RankedScore {
                                speaker_id: s.speaker_id,
                                score: s.avg_log_likelihood,
                            })
                            .collect()
                    }
                })
            });

            let mut correct = 0;
            for ((speaker, t), ranked) in tests.iter().zip(ranked) {
                let outcome = TrialOutcome {
                    row,
                    true_speaker: speaker.id.clone(),
                    path: t.path.clone(),
                    ranked: ranked?,
                };
                if outcome.correct() {
                    correct += 1;
                }
                report.trials.push(outcome);
            }
            report.rows.push(EvalRow {
                backend: point.backend,
                k_or_m: point.k_or_m,
                iterations: point.iterations,
                train_seconds,
                test_seconds,
                trials: tests.len(),
                correct,
                identification_rate: 100.0 * correct as f64 / tests.len() as f64,
            });
        }
        Ok(report)
    }
}

enum Model {
    Vq(vq::Codebook),
    Gmm(gmm::GmmModel),
}

impl Model {
    fn codebook(&self) -> Option<&vq::Codebook> {
        match self {
            Model::Vq(c) => Some(c),
            Model::Gmm(_) => None,
        }
    }

    fn gmm(&self) -> Option<&gmm::GmmModel> {
        match self {
            Model::Gmm(g) => Some(g),
            Model::Vq(_) => None,
        }
    }
}

/// Loads the manifest, extracts features and runs the grid.
pub fn evaluate_manifest(
    manifest_path: &Path,
    grid: &[GridPoint],
    cfg: &EngineConfig,
) -> Result<EvalReport, EvalError> {
    let manifest = Manifest::load(manifest_path)?;
    FeatureCorpus::from_manifest(&manifest, cfg)?.evaluate(grid)
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the inputs are shorter than two.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        // ranks (1, 2, 3.5, 3.5)
        let r = spearman(&[6.0, 12.0, 30.0, 60.0], &[80.0, 90.0, 100.0, 100.0]).unwrap();
        assert!((r - 4.5 / (5.0f64 * 4.5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grid_order() {
        let g = cartesian_grid(&[Backend::Gmm], &[4], &[6, 8, 10], &[None]);
        assert_eq!(g.iter().map(|p| p.iterations).collect::<Vec<_>>(), vec![6, 8, 10]);
        let g = cartesian_grid(&[Backend::Vq, Backend::Gmm], &[2, 3], &[5], &[Some(1.0), None]);
        assert_eq!(g.len(), 8);
        assert_eq!(g[1].train_cap_secs, None);
        assert_eq!(g[2].k_or_m, 3);
    }

    #[test]
    fn csv_layout() {
        let report = EvalReport {
            rows: vec![EvalRow {
                backend: Backend::Vq,
                k_or_m: 16,
                iterations: 100,
                train_seconds: 64.123,
                test_seconds: 8.5,
                trials: 16,
                correct: 15,
                identification_rate: 93.75,
            }],
            trials: vec![],
        };
        assert_eq!(
            report.to_csv(),
            format!("{CSV_HEADER}\nvq,16,100,64.12,8.50,16,15,93.7500\n")
        );
        let table = report.to_table();
        assert!(table.lines().next().unwrap().contains("rate %"));
        assert_eq!(table.lines().count(), 2);
    }
}
