//! K-means codebooks and minimum-average-distortion speaker identification.
//!
//! Training minimizes squared Euclidean distortion (Lloyd's algorithm, k-means++
//! seeding). Identification scores a test utterance against each codebook with
//! the average *unsquared* Euclidean distance from every frame to its nearest
//! centroid; the smallest average wins.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMatrix};
use crate::par;
use crate::rng::Xorshift64Star;

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqError {
    #[error("need at least {k} frames to fit {k} clusters, got {frames}")]
    NotEnoughFrames { frames: usize, k: usize },
    #[error("need at least {k} distinct frames to fit {k} clusters, got {distinct}")]
    NotEnoughDistinct { distinct: usize, k: usize },
    #[error("cluster count and iteration limit must be positive")]
    ZeroParameter,
    #[error("dimension mismatch: features have {features}, codebook has {codebook}")]
    DimensionMismatch { features: usize, codebook: usize },
    #[error("no frames to score")]
    EmptyInput,
    #[error("no codebooks to score against")]
    NoCodebooks,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// One speaker's centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    centroids: FeatureMatrix,
    train_frames: usize,
}

impl Codebook {
    pub fn new(centroids: FeatureMatrix, train_frames: usize) -> Result<Self, VqError> {
        if centroids.is_empty() {
            return Err(VqError::ZeroParameter);
        }
        Ok(Self {
            centroids,
            train_frames,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn train_frames(&self) -> usize {
        self.train_frames
    }

    pub fn centroids(&self) -> &FeatureMatrix {
        &self.centroids
    }

    /// Index and squared distance of the nearest centroid; ties go to the
    /// lower index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(self.centroids.as_slice(), self.dim(), x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqScore {
    pub speaker_id: String,
    pub distortion: f64,
}

/// Per-iteration record of a k-means run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KmeansTrace {
    /// Mean squared distance from each frame to its assigned centroid: entry 0
    /// after seeding, then one entry per Lloyd iteration.
    pub distortions: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub repairs: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(x: &FeatureMatrix, centroids: &[f64]) -> Vec<(usize, f64)> {
    let dim = x.dim();
    par::map_range(x.len(), |t| nearest(centroids, dim, x.row(t)))
}

fn mean_sq(assignment: &[(usize, f64)]) -> f64 {
    assignment.iter().map(|a| a.1).sum::<f64>() / assignment.len() as f64
}

fn count_distinct_up_to(x: &FeatureMatrix, limit: usize) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for r in x.rows() {
        if !seen.contains(&r) {
            seen.push(r);
            if seen.len() >= limit {
                break;
            }
        }
    }
    seen.len()
}

/// k-means++ seeding: the first centroid is a uniformly drawn row, each later
/// one is drawn with probability proportional to its squared distance to the
/// nearest centroid chosen so far.
fn kmeanspp_seed(x: &FeatureMatrix, k: usize, rng: &mut Xorshift64Star) -> Vec<f64> {
    let dim = x.dim();
    let n = x.len();
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(x.row(rng.below(n)));
    let mut d2: Vec<f64> = x.rows().map(|r| sq_dist(r, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final partial sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            rng.below(n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(x.row(pick));
        let newest = &centroids[start..];
        for (d, r) in d2.iter_mut().zip(x.rows()) {
            *d = d.min(sq_dist(r, newest));
        }
    }
    centroids
}

pub fn kmeans_fit(x: &FeatureMatrix, k: usize, seed: u64, max_iter: usize) -> Result<Codebook, VqError> {
    kmeans_fit_traced(x, k, seed, max_iter).map(|(cb, _)| cb)
}

/// Lloyd's algorithm from k-means++ seeds. Stops when assignments stop
/// changing or after `max_iter` centroid updates.
///
/// A cluster left empty by an assignment is re-seeded at the frame farthest
/// from its own (updated) centroid, each such frame used at most once per
/// iteration. Repairs never raise the objective: an empty cluster carries no
/// cost, and the frame it captures can only get closer.
pub fn kmeans_fit_traced(
    x: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(Codebook, KmeansTrace), VqError> {
    if k == 0 || max_iter == 0 {
        return Err(VqError::ZeroParameter);
    }
    let n = x.len();
    if n < k {
        return Err(VqError::NotEnoughFrames { frames: n, k });
    }
    let distinct = count_distinct_up_to(x, k);
    if distinct < k {
        return Err(VqError::NotEnoughDistinct { distinct, k });
    }
    let dim = x.dim();
    let mut rng = Xorshift64Star::new(seed);
    let mut centroids = kmeanspp_seed(x, k, &mut rng);
    let mut assignment = assign(x, &centroids);
    let mut trace = KmeansTrace {
        distortions: vec![mean_sq(&assignment)],
        ..Default::default()
    };

    for _ in 0..max_iter {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (t, &(j, _)) in assignment.iter().enumerate() {
            counts[j] += 1;
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(x.row(t)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *c = s * inv;
                }
            }
        }
        if counts.contains(&0) {
            trace.repairs += repair_empty(x, &mut centroids, &assignment, &counts);
        }
        let next = assign(x, &centroids);
        trace.distortions.push(mean_sq(&next));
        trace.iterations += 1;
        let unchanged = next.iter().zip(&assignment).all(|(a, b)| a.0 == b.0);
        assignment = next;
        if unchanged {
            trace.converged = true;
            break;
        }
    }

    dedupe_centroids(x, &mut centroids, k);
    let centroids = FeatureMatrix::new(centroids, dim)?;
    Ok((Codebook::new(centroids, n)?, trace))
}

fn repair_empty(
    x: &FeatureMatrix,
    centroids: &mut [f64],
    assignment: &[(usize, f64)],
    counts: &[usize],
) -> usize {
    let dim = x.dim();
    // distance from each frame to its cluster's updated centroid
    let mut far: Vec<(usize, f64)> = assignment
        .iter()
        .enumerate()
        .map(|(t, &(j, _))| (t, sq_dist(x.row(t), &centroids[j * dim..(j + 1) * dim])))
        .collect();
    far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut donors = far.into_iter().map(|(t, _)| t);
    let mut repaired = 0;
    for (j, _) in counts.iter().enumerate().filter(|(_, &c)| c == 0) {
        if let Some(t) = donors.next() {
            centroids[j * dim..(j + 1) * dim].copy_from_slice(x.row(t));
            repaired += 1;
        }
    }
    repaired
}

/// Moves any centroid identical to an earlier one onto the frame farthest from
/// its nearest centroid. Such a centroid never wins an assignment (ties go to
/// the lower index), so moving it cannot raise the distortion.
fn dedupe_centroids(x: &FeatureMatrix, centroids: &mut [f64], k: usize) {
    let dim = x.dim();
    for j in 1..k {
        let dup = (0..j).any(|i| centroids[i * dim..(i + 1) * dim] == centroids[j * dim..(j + 1) * dim]);
        if !dup {
            continue;
        }
        let mut best = (0, -1.0);
        for (t, r) in x.rows().enumerate() {
            let (_, d) = nearest(centroids, dim, r);
            if d > best.1 {
                best = (t, d);
            }
        }
        centroids[j * dim..(j + 1) * dim].copy_from_slice(x.row(best.0));
    }
}

/// Average over frames of the Euclidean distance to the nearest centroid.
pub fn quantization_distortion(x: &FeatureMatrix, codebook: &Codebook) -> Result<f64, VqError> {
    if x.dim() != codebook.dim() {
        return Err(VqError::DimensionMismatch {
            features: x.dim(),
            codebook: codebook.dim(),
        });
    }
    if x.is_empty() {
        return Err(VqError::EmptyInput);
    }
    let mins = par::map_range(x.len(), |t| codebook.nearest(x.row(t)).1.sqrt());
    Ok(mins.iter().sum::<f64>() / x.len() as f64)
}

/// Scores `x` against every codebook. Ascending distortion, ties broken by
/// speaker id; the first entry is the decision.
pub fn vq_identify<'a, I>(x: &FeatureMatrix, codebooks: I) -> Result<Vec<VqScore>, VqError>
where
    I: IntoIterator<Item = (&'a str, &'a Codebook)>,
{
    let books: Vec<(&str, &Codebook)> = codebooks.into_iter().collect();
    if books.is_empty() {
        return Err(VqError::NoCodebooks);
    }
    let mut scores = books
        .iter()
        .map(|(id, cb)| {
            Ok(VqScore {
                speaker_id: (*id).to_string(),
                distortion: quantization_distortion(x, cb)?,
            })
        })
        .collect::<Result<Vec<_>, VqError>>()?;
    scores.sort_by(|a, b| {
        a.distortion
            .partial_cmp(&b.distortion)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.speaker_id.cmp(&b.speaker_id))
    });
    Ok(scores)
}
