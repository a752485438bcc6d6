//! Enrolled speakers, their accumulated training frames and trained models.
//!
//! Every enrollment appends frames to the speaker's accumulated set and
//! retrains both the codebook and the GMM from scratch on the whole set, so
//! enrolling `F1` then `F2` yields exactly the models of enrolling `F1 ++ F2`.
//!
//! # File format
//!
//! Little-endian throughout:
//!
//! ```text
//! magic            8 bytes  "VOXID1\0\0"
//! version          u32      FORMAT_VERSION
//! feature dim      u32
//! speaker count    u32
//! per speaker, in id order:
//!   name           u32 byte length + UTF-8
//!   utterances     u32      enrolled utterance count
//!   last trained   u64      registry enrollment sequence number
//!   frames         u32 count + count*dim f64, row-major
//!   flags          u8       bit 0: codebook follows, bit 1: GMM follows
//!   codebook       u32 K + K*dim f64 centroids
//!   gmm            u32 M + M f64 weights + M*dim f64 means + M*dim f64 variances
//! crc32            u32      over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMatrix};
use crate::gmm::{self, GmmError, GmmModel};
use crate::par;
use crate::vq::{self, Codebook, VqError};

pub const MAGIC: &[u8; 8] = b"VOXID1\0\0";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_CODEBOOK: u8 = 1;
const FLAG_GMM: u8 = 2;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("speaker id must be non-empty")]
    EmptySpeakerId,
    #[error("feature dimension mismatch: registry uses {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no enrollment frames supplied")]
    EmptyFeatures,
    #[error("no trained models for the {0} backend")]
    NoTrainedModels(Backend),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a registry file (bad magic)")]
    BadMagic,
    #[error("registry format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("registry checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("registry file is truncated")]
    Truncated,
    #[error("malformed registry: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Vq,
    Gmm,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Vq => "vq",
            Backend::Gmm => "gmm",
        })
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vq" => Ok(Backend::Vq),
            "gmm" => Ok(Backend::Gmm),
            other => Err(format!("unknown backend '{other}' (expected vq or gmm)")),
        }
    }
}

/// Model-size and EM settings used whenever a speaker is (re)trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub m: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub seed: u64,
    pub kmeans_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: vq::DEFAULT_K,
            m: gmm::DEFAULT_COMPONENTS,
            em_max_iter: gmm::DEFAULT_MAX_ITER,
            em_tol: gmm::DEFAULT_TOL,
            seed: 42,
            kmeans_max_iter: vq::DEFAULT_MAX_ITER,
        }
    }
}

impl TrainConfig {
    pub fn train_codebook(&self, x: &FeatureMatrix) -> Result<Codebook, VqError> {
        vq::kmeans_fit(x, self.k, self.seed, self.kmeans_max_iter)
    }

    pub fn train_gmm(&self, x: &FeatureMatrix) -> Result<GmmModel, GmmError> {
        gmm::em_fit(x, self.m, self.seed, self.em_max_iter, self.em_tol).map(|(model, _)| model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub accumulated_features: FeatureMatrix,
    pub codebook: Option<Codebook>,
    pub gmm: Option<GmmModel>,
    pub enrolled_utterances: u32,
    /// Registry enrollment sequence number of the last retrain.
    pub last_trained: u64,
}

/// Outcome of training one model during enrollment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ModelStatus {
    Trained,
    /// Too few (distinct) frames for the requested model size; model absent.
    InsufficientData { frames: usize, required: usize },
}

impl fmt::Display for ModelStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelStatus::Trained => f.write_str("trained"),
            ModelStatus::InsufficientData { frames, required } => {
                write!(f, "insufficient data ({frames} frames, need {required})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnrollReport {
    pub speaker_id: String,
    pub frames_added: usize,
    pub total_frames: usize,
    pub codebook: ModelStatus,
    pub gmm: ModelStatus,
}

impl EnrollReport {
    pub fn fully_trained(&self) -> bool {
        self.codebook == ModelStatus::Trained && self.gmm == ModelStatus::Trained
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedScore {
    pub speaker_id: String,
    /// Distortion for VQ (lower is better), average log-likelihood for GMM
    /// (higher is better).
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    /// `None` means "unknown" (rejected by the open-set threshold).
    pub decision: Option<String>,
    pub backend: Backend,
    pub ranked_scores: Vec<RankedScore>,
    pub accepted: bool,
}

impl IdentificationResult {
    pub fn decision_label(&self) -> &str {
        self.decision.as_deref().unwrap_or("unknown")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    dim: usize,
    speakers: BTreeMap<String, SpeakerRecord>,
    clock: u64,
}

fn insufficient<E>(err: &E, frames: usize, required: usize) -> Option<ModelStatus>
where
    E: InsufficiencyCheck,
{
    err.is_insufficient()
        .then_some(ModelStatus::InsufficientData { frames, required })
}

trait InsufficiencyCheck {
    fn is_insufficient(&self) -> bool;
}

impl InsufficiencyCheck for VqError {
    fn is_insufficient(&self) -> bool {
        matches!(
            self,
            VqError::NotEnoughFrames { .. } | VqError::NotEnoughDistinct { .. }
        )
    }
}

impl InsufficiencyCheck for GmmError {
    fn is_insufficient(&self) -> bool {
        match self {
            GmmError::NotEnoughFrames { .. } => true,
            GmmError::Init(e) => e.is_insufficient(),
            _ => false,
        }
    }
}

impl Registry {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            speakers: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerRecord> {
        self.speakers.get(id)
    }

    pub fn speakers(&self) -> impl Iterator<Item = &SpeakerRecord> {
        self.speakers.values()
    }

    pub fn codebooks(&self) -> impl Iterator<Item = (&str, &Codebook)> {
        self.speakers
            .values()
            .filter_map(|r| r.codebook.as_ref().map(|c| (r.speaker_id.as_str(), c)))
    }

    pub fn gmms(&self) -> impl Iterator<Item = (&str, &GmmModel)> {
        self.speakers
            .values()
            .filter_map(|r| r.gmm.as_ref().map(|g| (r.speaker_id.as_str(), g)))
    }

    /// Enrolls one utterance's frames.
    pub fn enroll(
        &mut self,
        speaker_id: &str,
        features: &FeatureMatrix,
        cfg: &TrainConfig,
    ) -> Result<EnrollReport, RegistryError> {
        self.enroll_utterances(speaker_id, std::slice::from_ref(features), cfg)
    }

    /// Appends every utterance's frames to the speaker (creating it if
    /// needed) and retrains both models on the full accumulated set.
    pub fn enroll_utterances(
        &mut self,
        speaker_id: &str,
        utterances: &[FeatureMatrix],
        cfg: &TrainConfig,
    ) -> Result<EnrollReport, RegistryError> {
        if speaker_id.is_empty() {
            return Err(RegistryError::EmptySpeakerId);
        }
        for u in utterances {
            if u.dim() != self.dim {
                return Err(RegistryError::DimensionMismatch {
                    expected: self.dim,
                    found: u.dim(),
                });
            }
        }
        let frames_added: usize = utterances.iter().map(FeatureMatrix::len).sum();
        if frames_added == 0 {
            return Err(RegistryError::EmptyFeatures);
        }

        let mut accumulated = match self.speakers.get(speaker_id) {
            Some(r) => r.accumulated_features.clone(),
            None => FeatureMatrix::empty(self.dim)?,
        };
        for u in utterances {
            accumulated.append(u)?;
        }
        let (codebook, gmm) = train_models(&accumulated, cfg)?;
        let report = EnrollReport {
            speaker_id: speaker_id.to_string(),
            frames_added,
            total_frames: accumulated.len(),
            codebook: codebook.1,
            gmm: gmm.1,
        };

        self.clock += 1;
        let previous = self.speakers.get(speaker_id).map_or(0, |r| r.enrolled_utterances);
        self.speakers.insert(
            speaker_id.to_string(),
            SpeakerRecord {
                speaker_id: speaker_id.to_string(),
                accumulated_features: accumulated,
                codebook: codebook.0,
                gmm: gmm.0,
                enrolled_utterances: previous + utterances.iter().filter(|u| !u.is_empty()).count() as u32,
                last_trained: self.clock,
            },
        );
        Ok(report)
    }

    /// Closed-set identification when `threshold` is `None`; otherwise the top
    /// candidate is accepted only if its distortion is `<= threshold` (VQ) or
    /// its average log-likelihood is `>= threshold` (GMM).
    pub fn identify(
        &self,
        features: &FeatureMatrix,
        backend: Backend,
        threshold: Option<f64>,
    ) -> Result<IdentificationResult, RegistryError> {
        let ranked: Vec<RankedScore> = match backend {
            Backend::Vq => {
                let books: Vec<_> = self.codebooks().collect();
                if books.is_empty() {
                    return Err(RegistryError::NoTrainedModels(backend));
                }
                vq::vq_identify(features, books)?
                    .into_iter()
                    .map(|s| RankedScore {
                        speaker_id: s.speaker_id,
                        score: s.distortion,
                    })
                    .collect()
            }
            Backend::Gmm => {
                let models: Vec<_> = self.gmms().collect();
                if models.is_empty() {
                    return Err(RegistryError::NoTrainedModels(backend));
                }
                gmm::gmm_identify(features, models)?
                    .into_iter()
                    .map(|s| RankedScore {
                        speaker_id: s.speaker_id,
                        score: s.avg_log_likelihood,
                    })
                    .collect()
            }
        };
        let best = &ranked[0];
        let accepted = match (threshold, backend) {
            (None, _) => true,
            (Some(th), Backend::Vq) => best.score <= th,
            (Some(th), Backend::Gmm) => best.score >= th,
        };
        Ok(IdentificationResult {
            decision: accepted.then(|| best.speaker_id.clone()),
            backend,
            ranked_scores: ranked,
            accepted,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegistryError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        put_u32(&mut w, self.dim as u32);
        put_u32(&mut w, self.speakers.len() as u32);
        for r in self.speakers.values() {
            put_u32(&mut w, r.speaker_id.len() as u32);
            w.extend_from_slice(r.speaker_id.as_bytes());
            put_u32(&mut w, r.enrolled_utterances);
            w.extend_from_slice(&r.last_trained.to_le_bytes());
            put_u32(&mut w, r.accumulated_features.len() as u32);
            put_f64s(&mut w, r.accumulated_features.as_slice());
            let mut flags = 0;
            if r.codebook.is_some() {
                flags |= FLAG_CODEBOOK;
            }
            if r.gmm.is_some() {
                flags |= FLAG_GMM;
            }
            w.push(flags);
            if let Some(cb) = &r.codebook {
                put_u32(&mut w, cb.k() as u32);
                put_f64s(&mut w, cb.centroids().as_slice());
            }
            if let Some(g) = &r.gmm {
                put_u32(&mut w, g.m() as u32);
                put_f64s(&mut w, g.weights());
                put_f64s(&mut w, g.means());
                put_f64s(&mut w, g.variances());
            }
        }
        let crc = crc32fast::hash(&w);
        put_u32(&mut w, crc);
        w
    }

    /// Parses the binary format. Version is checked first; then, if the
    /// checksum fails, a body that runs out of bytes is reported as
    /// [`RegistryError::Truncated`] and anything else as
    /// [`RegistryError::ChecksumMismatch`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RegistryError> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                RegistryError::Truncated
            } else {
                RegistryError::BadMagic
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(RegistryError::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(RegistryError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(RegistryError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(RegistryError::Truncated);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            // A cut-off file fails to parse from the full buffer; a damaged
            // one parses (or fails differently) but carries the wrong CRC.
            return match parse_body(&mut Reader::new(bytes)) {
                Err(RegistryError::Truncated) => Err(RegistryError::Truncated),
                _ => Err(RegistryError::ChecksumMismatch { stored, computed }),
            };
        }
        let mut reader = Reader::new(body);
        let registry = parse_body(&mut reader)?;
        if reader.remaining() != 0 {
            return Err(RegistryError::Malformed(format!(
                "{} unexpected bytes before checksum",
                reader.remaining()
            )));
        }
        Ok(registry)
    }

    /// Human-readable export. Not guaranteed to round-trip bit-exactly.
    pub fn to_json(&self) -> Result<String, RegistryError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, RegistryError> {
        Ok(serde_json::from_str(s)?)
    }
}

type Trained<T> = (Option<T>, ModelStatus);

fn train_models(
    x: &FeatureMatrix,
    cfg: &TrainConfig,
) -> Result<(Trained<Codebook>, Trained<GmmModel>), RegistryError> {
    let frames = x.len();
    let (cb, gm) = par::join(|| cfg.train_codebook(x), || cfg.train_gmm(x));
    let cb = match cb {
        Ok(c) => (Some(c), ModelStatus::Trained),
        Err(e) => match insufficient(&e, frames, cfg.k) {
            Some(status) => (None, status),
            None => return Err(e.into()),
        },
    };
    let gm = match gm {
        Ok(g) => (Some(g), ModelStatus::Trained),
        Err(e) => match insufficient(&e, frames, cfg.m) {
            Some(status) => (None, status),
            None => return Err(e.into()),
        },
    };
    Ok((cb, gm))
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(w: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], RegistryError> {
        if n > self.remaining() {
            return Err(RegistryError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, RegistryError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, RegistryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, RegistryError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, RegistryError> {
        let len = n.checked_mul(8).ok_or(RegistryError::Truncated)?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn parse_body(r: &mut Reader<'_>) -> Result<Registry, RegistryError> {
    r.take(MAGIC.len())?;
    r.u32()?; // version, already checked
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(RegistryError::Malformed("feature dimension 0".into()));
    }
    let count = r.u32()?;
    let mut registry = Registry::new(dim);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let speaker_id = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| RegistryError::Malformed("speaker id is not UTF-8".into()))?;
        let enrolled_utterances = r.u32()?;
        let last_trained = r.u64()?;
        let frames = r.u32()? as usize;
        let accumulated_features = FeatureMatrix::new(r.f64s(frames * dim)?, dim)?;
        let flags = r.u8()?;
        if flags & !(FLAG_CODEBOOK | FLAG_GMM) != 0 {
            return Err(RegistryError::Malformed(format!("unknown model flags {flags:#04x}")));
        }
        let codebook = if flags & FLAG_CODEBOOK != 0 {
            let k = r.u32()? as usize;
            let centroids = FeatureMatrix::new(r.f64s(k * dim)?, dim)?;
            Some(Codebook::new(centroids, frames)?)
        } else {
            None
        };
        let gmm = if flags & FLAG_GMM != 0 {
            let m = r.u32()? as usize;
            let weights = r.f64s(m)?;
            let means = r.f64s(m * dim)?;
            let variances = r.f64s(m * dim)?;
            Some(GmmModel::new(weights, means, variances, dim)?)
        } else {
            None
        };
        if registry.speakers.contains_key(&speaker_id) {
            return Err(RegistryError::Malformed(format!("duplicate speaker '{speaker_id}'")));
        }
        registry.clock = registry.clock.max(last_trained);
        registry.speakers.insert(
            speaker_id.clone(),
            SpeakerRecord {
                speaker_id,
                accumulated_features,
                codebook,
                gmm,
                enrolled_utterances,
                last_trained,
            },
        );
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64Star;

    fn blob(rng: &mut Xorshift64Star, t: usize, dim: usize, center: f64) -> FeatureMatrix {
        FeatureMatrix::new((0..t * dim).map(|_| center + rng.gaussian()).collect(), dim).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            k: 4,
            m: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn enroll_happy_path() {
        let mut rng = Xorshift64Star::new(1);
        let mut reg = Registry::new(16);
        let report = reg
            .enroll("alice", &blob(&mut rng, 500, 16, 0.0), &TrainConfig::default())
            .unwrap();
        assert!(report.fully_trained());
        let rec = reg.speaker("alice").unwrap();
        assert_eq!(rec.codebook.as_ref().unwrap().k(), 16);
        assert_eq!(rec.gmm.as_ref().unwrap().m(), 4);
        assert_eq!(rec.enrolled_utterances, 1);
    }

    #[test]
    fn insufficient_data_leaves_model_absent() {
        let mut rng = Xorshift64Star::new(2);
        let mut reg = Registry::new(3);
        let report = reg
            .enroll("bob", &blob(&mut rng, 10, 3, 0.0), &TrainConfig::default())
            .unwrap();
        assert_eq!(
            report.codebook,
            ModelStatus::InsufficientData {
                frames: 10,
                required: 16
            }
        );
        assert_eq!(report.gmm, ModelStatus::Trained);
        let rec = reg.speaker("bob").unwrap();
        assert!(rec.codebook.is_none());
        assert!(rec.gmm.is_some());
    }

    #[test]
    fn enroll_errors() {
        let mut rng = Xorshift64Star::new(3);
        let mut reg = Registry::new(3);
        assert!(matches!(
            reg.enroll("", &blob(&mut rng, 10, 3, 0.0), &small_cfg()),
            Err(RegistryError::EmptySpeakerId)
        ));
        assert!(matches!(
            reg.enroll("x", &blob(&mut rng, 10, 2, 0.0), &small_cfg()),
            Err(RegistryError::DimensionMismatch { expected: 3, found: 2 })
        ));
        assert!(matches!(
            reg.enroll("x", &FeatureMatrix::empty(3).unwrap(), &small_cfg()),
            Err(RegistryError::EmptyFeatures)
        ));
    }

    #[test]
    fn incremental_equals_concatenated() {
        let mut rng = Xorshift64Star::new(4);
        let f1 = blob(&mut rng, 120, 5, 0.0);
        let f2 = blob(&mut rng, 80, 5, 1.0);
        let cfg = small_cfg();

        let mut twice = Registry::new(5);
        twice.enroll("s", &f1, &cfg).unwrap();
        twice.enroll("s", &f2, &cfg).unwrap();

        let mut joined = f1.clone();
        joined.append(&f2).unwrap();
        let mut once = Registry::new(5);
        once.enroll("s", &joined, &cfg).unwrap();

        let a = twice.speaker("s").unwrap();
        let b = once.speaker("s").unwrap();
        assert_eq!(a.accumulated_features, b.accumulated_features);
        assert_eq!(a.codebook, b.codebook);
        assert_eq!(a.gmm, b.gmm);
        assert_eq!(a.enrolled_utterances, 2);
    }

    #[test]
    fn identify_closed_and_open_set() {
        let mut rng = Xorshift64Star::new(5);
        let mut reg = Registry::new(4);
        let cfg = small_cfg();
        reg.enroll("a", &blob(&mut rng, 200, 4, 0.0), &cfg).unwrap();
        reg.enroll("b", &blob(&mut rng, 200, 4, 8.0), &cfg).unwrap();
        let probe = blob(&mut rng, 50, 4, 8.0);

        for backend in [Backend::Vq, Backend::Gmm] {
            let res = reg.identify(&probe, backend, None).unwrap();
            assert_eq!(res.decision.as_deref(), Some("b"));
            assert!(res.accepted);
            assert_eq!(res.ranked_scores.len(), 2);
        }
        let res = reg.identify(&probe, Backend::Gmm, Some(-1e9)).unwrap();
        assert!(res.accepted);
        let res = reg.identify(&probe, Backend::Vq, Some(0.0)).unwrap();
        assert!(!res.accepted);
        assert_eq!(res.decision, None);
        assert_eq!(res.decision_label(), "unknown");
    }

    #[test]
    fn empty_registry_has_no_models() {
        let reg = Registry::from_bytes(&Registry::new(16).to_bytes()).unwrap();
        assert!(reg.is_empty());
        let probe = FeatureMatrix::new(vec![0.0; 16], 16).unwrap();
        assert!(matches!(
            reg.identify(&probe, Backend::Gmm, None),
            Err(RegistryError::NoTrainedModels(Backend::Gmm))
        ));
    }

    #[test]
    fn binary_round_trip_and_damage() {
        let mut rng = Xorshift64Star::new(6);
        let mut reg = Registry::new(3);
        reg.enroll("a", &blob(&mut rng, 60, 3, 0.0), &small_cfg()).unwrap();
        reg.enroll("b", &blob(&mut rng, 3, 3, 5.0), &small_cfg()).unwrap();
        let bytes = reg.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Registry::from_bytes(&bytes).unwrap();
        assert_eq!(back, reg);
        assert_eq!(back.to_bytes(), bytes);

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 1] ^= 0xFF;
        assert!(matches!(Registry::from_bytes(&bad), Err(RegistryError::ChecksumMismatch { .. })));

        let mut bad = bytes.clone();
        bad[60] ^= 0x01; // inside the first speaker's feature block
        assert!(matches!(Registry::from_bytes(&bad), Err(RegistryError::ChecksumMismatch { .. })));

        assert!(matches!(
            Registry::from_bytes(&bytes[..bytes.len() - 20]),
            Err(RegistryError::Truncated)
        ));

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            Registry::from_bytes(&bad),
            Err(RegistryError::VersionMismatch { found: 9, expected: 1 })
        ));

        assert!(matches!(Registry::from_bytes(b"NOTVOXID...."), Err(RegistryError::BadMagic)));
    }

    #[test]
    fn json_export() {
        let mut rng = Xorshift64Star::new(7);
        let mut reg = Registry::new(2);
        reg.enroll("a", &blob(&mut rng, 30, 2, 0.0), &small_cfg()).unwrap();
        let json = reg.to_json().unwrap();
        assert!(json.contains("\"speaker_id\": \"a\""));
        let back = Registry::from_json(&json).unwrap();
        assert_eq!(back.len(), 1);
    }

    #[test]
    fn backend_parse() {
        assert_eq!("VQ".parse::<Backend>().unwrap(), Backend::Vq);
        assert_eq!("gmm".parse::<Backend>().unwrap(), Backend::Gmm);
        assert!("svm".parse::<Backend>().is_err());
    }
}
