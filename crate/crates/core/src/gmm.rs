//! Diagonal-covariance Gaussian mixtures trained by Expectation-Maximization,
//! and maximum-likelihood speaker identification.
//!
//! All density arithmetic happens in the log domain; mixture sums go through
//! log-sum-exp. Scores are per-frame averages of the log-likelihood so that
//! utterances of different lengths are comparable.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMatrix};
use crate::par;
use crate::vq::{self, VqError};

pub const DEFAULT_COMPONENTS: usize = 4;
pub const DEFAULT_MAX_ITER: usize = 12;
pub const DEFAULT_TOL: f64 = 1e-5;

/// Variance floor relative to the global per-dimension training variance.
pub const RELATIVE_VARIANCE_FLOOR: f64 = 1e-4;
pub const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-8;
/// Components whose soft count falls below this fraction of T are re-seeded.
pub const STARVATION_FRACTION: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variance entry {index} is {value}, must be positive")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("no frames supplied")]
    EmptyInput,
    #[error("need at least {m} frames to fit {m} components, got {frames}")]
    NotEnoughFrames { frames: usize, m: usize },
    #[error("component count, iteration limit and tolerance must be positive")]
    InvalidParameter,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("responsibilities are {rows}x{cols}, expected {frames} rows")]
    ResponsibilityShape { rows: usize, cols: usize, frames: usize },
    #[error("no models to score against")]
    NoModels,
    #[error("initialization failed: {0}")]
    Init(#[from] VqError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Mixture weights, means and diagonal variances, `M` components of
/// dimension `D`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    dim: usize,
}

impl GmmModel {
    /// Checks weights are positive and sum to 1 (within 1e-9), variances are
    /// positive, and everything is finite.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self, GmmError> {
        let m = weights.len();
        if m == 0 || dim == 0 {
            return Err(GmmError::InvalidModel("empty model".into()));
        }
        if means.len() != m * dim || variances.len() != m * dim {
            return Err(GmmError::InvalidModel(format!(
                "{m} components of dim {dim} need {} means/variances, got {}/{}",
                m * dim,
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().chain(&means).chain(&variances).any(|v| !v.is_finite()) {
            return Err(GmmError::InvalidModel("non-finite parameter".into()));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(GmmError::InvalidModel("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidModel(format!("weights sum to {total}")));
        }
        if let Some(index) = variances.iter().position(|&v| v <= 0.0) {
            return Err(GmmError::NonPositiveVariance {
                index,
                value: variances[index],
            });
        }
        Ok(Self {
            weights,
            means,
            variances,
            dim,
        })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variance(&self, i: usize) -> &[f64] {
        &self.variances[i * self.dim..(i + 1) * self.dim]
    }

    fn check_dim(&self, x: &FeatureMatrix) -> Result<(), GmmError> {
        if x.dim() != self.dim {
            return Err(GmmError::DimensionMismatch {
                expected: self.dim,
                found: x.dim(),
            });
        }
        if x.is_empty() {
            return Err(GmmError::EmptyInput);
        }
        Ok(())
    }

    /// Precomputes, per component, `ln p_i - D/2 ln 2pi - 1/2 sum ln var` and
    /// the inverse variances.
    fn scorer(&self) -> Scorer<'_> {
        let consts = (0..self.m())
            .map(|i| {
                let log_det: f64 = self.variance(i).iter().map(|v| v.ln()).sum();
                self.weights[i].ln() - 0.5 * (self.dim as f64 * LN_2PI + log_det)
            })
            .collect();
        let inv_var = self.variances.iter().map(|v| 1.0 / v).collect();
        Scorer {
            model: self,
            consts,
            inv_var,
        }
    }
}

struct Scorer<'a> {
    model: &'a GmmModel,
    consts: Vec<f64>,
    inv_var: Vec<f64>,
}

impl Scorer<'_> {
    /// `ln(p_i g_i(x))` for each component, written into `out`.
    fn weighted_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.model.dim;
        for (i, o) in out.iter_mut().enumerate() {
            let mean = self.model.mean(i);
            let inv = &self.inv_var[i * dim..(i + 1) * dim];
            let mut q = 0.0;
            for d in 0..dim {
                let e = x[d] - mean[d];
                q += e * e * inv[d];
            }
            *o = self.consts[i] - 0.5 * q;
        }
    }

    fn frame_log_likelihood(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        self.weighted_log_densities(x, scratch);
        log_sum_exp(scratch)
    }
}

/// `ln sum exp(v)` without overflow; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log density of a diagonal-covariance multivariate normal.
pub fn log_gaussian(x: &[f64], mu: &[f64], var: &[f64]) -> Result<f64, GmmError> {
    if mu.len() != x.len() || var.len() != x.len() {
        return Err(GmmError::DimensionMismatch {
            expected: x.len(),
            found: if mu.len() != x.len() { mu.len() } else { var.len() },
        });
    }
    if let Some(index) = var.iter().position(|&v| !(v > 0.0)) {
        return Err(GmmError::NonPositiveVariance {
            index,
            value: var[index],
        });
    }
    let mut acc = -0.5 * x.len() as f64 * (2.0 * PI).ln();
    for d in 0..x.len() {
        let e = x[d] - mu[d];
        acc -= 0.5 * (var[d].ln() + e * e / var[d]);
    }
    Ok(acc)
}

/// Average per-frame log-likelihood of `x` under `model`.
pub fn gmm_log_likelihood(x: &FeatureMatrix, model: &GmmModel) -> Result<f64, GmmError> {
    model.check_dim(x)?;
    let scorer = model.scorer();
    let per_frame = par::map_range(x.len(), |t| {
        let mut scratch = vec![0.0; model.m()];
        scorer.frame_log_likelihood(x.row(t), &mut scratch)
    });
    Ok(per_frame.iter().sum::<f64>() / x.len() as f64)
}

/// Posterior component probabilities for every frame, plus each frame's
/// log-likelihood under the model that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    gamma: Vec<f64>,
    frame_log_lik: Vec<f64>,
    m: usize,
}

impl Responsibilities {
    /// Builds responsibilities from a row-major `T x M` matrix whose rows are
    /// each normalized to sum to 1. Frame log-likelihoods are unknown (zero).
    pub fn from_matrix(gamma: Vec<f64>, m: usize) -> Result<Self, GmmError> {
        if m == 0 || gamma.len() % m != 0 {
            return Err(GmmError::ResponsibilityShape {
                rows: gamma.len() / m.max(1),
                cols: m,
                frames: gamma.len() / m.max(1),
            });
        }
        if gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(GmmError::InvalidModel("responsibility outside [0, 1]".into()));
        }
        let frames = gamma.len() / m;
        Ok(Self {
            gamma,
            frame_log_lik: vec![0.0; frames],
            m,
        })
    }

    pub fn frames(&self) -> usize {
        self.frame_log_lik.len()
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.gamma[t * self.m..(t + 1) * self.m]
    }

    pub fn frame_log_likelihoods(&self) -> &[f64] {
        &self.frame_log_lik
    }
}

pub fn e_step(x: &FeatureMatrix, model: &GmmModel) -> Result<(Responsibilities, f64), GmmError> {
    model.check_dim(x)?;
    let m = model.m();
    let scorer = model.scorer();
    let rows = par::map_range(x.len(), |t| {
        let mut logs = vec![0.0; m];
        scorer.weighted_log_densities(x.row(t), &mut logs);
        let ll = log_sum_exp(&logs);
        for v in &mut logs {
            *v = (*v - ll).exp();
        }
        // renormalize away the last ulp of rounding
        let s: f64 = logs.iter().sum();
        for v in &mut logs {
            *v /= s;
        }
        (logs, ll)
    });
    let mut gamma = Vec::with_capacity(x.len() * m);
    let mut frame_log_lik = Vec::with_capacity(x.len());
    for (g, ll) in rows {
        gamma.extend_from_slice(&g);
        frame_log_lik.push(ll);
    }
    let avg = frame_log_lik.iter().sum::<f64>() / x.len() as f64;
    Ok((
        Responsibilities {
            gamma,
            frame_log_lik,
            m,
        },
        avg,
    ))
}

/// Per-dimension variance floor for a training set:
/// `max(1e-4 * global variance, 1e-8)`.
pub fn variance_floor(x: &FeatureMatrix) -> Vec<f64> {
    x.column_variances()
        .into_iter()
        .map(|v| (RELATIVE_VARIANCE_FLOOR * v).max(ABSOLUTE_VARIANCE_FLOOR))
        .collect()
}

/// Maximum-likelihood re-estimation from responsibilities.
///
/// Variances are clamped to [`variance_floor`]. A component whose soft count
/// is below `1e-6 * T` is re-seeded at the worst-explained frame (lowest frame
/// log-likelihood from the E-step; ties to the earlier frame) with the global
/// variance and weight `1/M`, and all weights are renormalized.
pub fn m_step(x: &FeatureMatrix, gamma: &Responsibilities) -> Result<GmmModel, GmmError> {
    let t_len = x.len();
    if t_len == 0 {
        return Err(GmmError::EmptyInput);
    }
    if gamma.frames() != t_len {
        return Err(GmmError::ResponsibilityShape {
            rows: gamma.frames(),
            cols: gamma.m,
            frames: t_len,
        });
    }
    let dim = x.dim();
    let m = gamma.m;
    let floor = variance_floor(x);
    let global_var = x.column_variances();

    // (N_i, mean_i, var_i) per component; each component's sums run over
    // frames in order, so the result is independent of scheduling.
    let stats = par::map_range(m, |i| {
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        for t in 0..t_len {
            let g = gamma.row(t)[i];
            n += g;
            for (s, v) in sum.iter_mut().zip(x.row(t)) {
                *s += g * v;
            }
        }
        let mean: Vec<f64> = if n > 0.0 {
            sum.iter().map(|s| s / n).collect()
        } else {
            vec![0.0; dim]
        };
        let mut var = vec![0.0; dim];
        if n > 0.0 {
            for t in 0..t_len {
                let g = gamma.row(t)[i];
                for ((acc, v), mu) in var.iter_mut().zip(x.row(t)).zip(&mean) {
                    let e = v - mu;
                    *acc += g * e * e;
                }
            }
            for v in &mut var {
                *v /= n;
            }
        }
        (n, mean, var)
    });

    let mut worst_frames: Vec<usize> = (0..t_len).collect();
    worst_frames.sort_by(|&a, &b| {
        gamma.frame_log_lik[a]
            .total_cmp(&gamma.frame_log_lik[b])
            .then(a.cmp(&b))
    });
    let mut worst = worst_frames.into_iter();

    let mut weights = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m * dim);
    let mut variances = Vec::with_capacity(m * dim);
    let starved = STARVATION_FRACTION * t_len as f64;
    for (n, mean, var) in stats {
        if n < starved {
            let t = worst.next().unwrap_or(0);
            weights.push(1.0 / m as f64);
            means.extend_from_slice(x.row(t));
            variances.extend(global_var.iter().zip(&floor).map(|(v, f)| v.max(*f)));
        } else {
            weights.push(n / t_len as f64);
            means.extend(mean);
            variances.extend(var.iter().zip(&floor).map(|(v, f)| v.max(*f)));
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GmmModel::new(weights, means, variances, dim)
}

/// Average log-likelihood after initialization and after every EM iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

/// Initial model from a k-means codebook: means are the centroids, variances
/// the per-cluster biased variances (floored), weights the cluster
/// occupancies.
pub fn init_from_kmeans(x: &FeatureMatrix, m: usize, seed: u64) -> Result<GmmModel, GmmError> {
    let cb = vq::kmeans_fit(x, m, seed, vq::DEFAULT_MAX_ITER)?;
    let dim = x.dim();
    let floor = variance_floor(x);
    let mut counts = vec![0usize; m];
    let mut sums = vec![0.0; m * dim];
    let mut sq = vec![0.0; m * dim];
    let labels: Vec<usize> = x.rows().map(|r| cb.nearest(r).0).collect();
    for (r, &j) in x.rows().zip(&labels) {
        counts[j] += 1;
        for d in 0..dim {
            sums[j * dim + d] += r[d];
        }
    }
    let means: Vec<f64> = (0..m * dim)
        .map(|i| {
            let c = counts[i / dim];
            if c > 0 {
                sums[i] / c as f64
            } else {
                cb.centroids().as_slice()[i]
            }
        })
        .collect();
    for (r, &j) in x.rows().zip(&labels) {
        for d in 0..dim {
            let e = r[d] - means[j * dim + d];
            sq[j * dim + d] += e * e;
        }
    }
    let variances = (0..m * dim)
        .map(|i| {
            let c = counts[i / dim].max(1) as f64;
            (sq[i] / c).max(floor[i % dim])
        })
        .collect();
    // every cluster is non-empty after k-means, but guard the weight anyway
    let mut weights: Vec<f64> = counts.iter().map(|&c| c.max(1) as f64).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GmmModel::new(weights, means, variances, dim)
}

/// EM from a k-means initialization. Iterates until the relative change in
/// average log-likelihood drops below `tol` or `max_iter` M-steps have run.
pub fn em_fit(
    x: &FeatureMatrix,
    m: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(GmmModel, EmTrace), GmmError> {
    if m == 0 || max_iter == 0 || !(tol > 0.0) {
        return Err(GmmError::InvalidParameter);
    }
    if x.len() < m {
        return Err(GmmError::NotEnoughFrames { frames: x.len(), m });
    }
    let mut model = init_from_kmeans(x, m, seed)?;
    let (mut gamma, mut ll) = e_step(x, &model)?;
    let mut trace = EmTrace {
        log_likelihoods: vec![ll],
        ..Default::default()
    };
    for _ in 0..max_iter {
        let next = m_step(x, &gamma)?;
        let (next_gamma, next_ll) = e_step(x, &next)?;
        model = next;
        gamma = next_gamma;
        trace.log_likelihoods.push(next_ll);
        trace.iterations_run += 1;
        let change = (next_ll - ll).abs();
        ll = next_ll;
        if change <= tol * ll.abs() {
            trace.converged = true;
            break;
        }
    }
    Ok((model, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmScore {
    pub speaker_id: String,
    pub avg_log_likelihood: f64,
}

/// Scores `x` against every model. Descending average log-likelihood, ties
/// broken by speaker id; the first entry is the decision.
pub fn gmm_identify<'a, I>(x: &FeatureMatrix, models: I) -> Result<Vec<GmmScore>, GmmError>
where
    I: IntoIterator<Item = (&'a str, &'a GmmModel)>,
{
    let models: Vec<(&str, &GmmModel)> = models.into_iter().collect();
    if models.is_empty() {
        return Err(GmmError::NoModels);
    }
    let mut scores = models
        .iter()
        .map(|(id, model)| {
            Ok(GmmScore {
                speaker_id: (*id).to_string(),
                avg_log_likelihood: gmm_log_likelihood(x, model)?,
            })
        })
        .collect::<Result<Vec<_>, GmmError>>()?;
    scores.sort_by(|a, b| {
        b.avg_log_likelihood
            .partial_cmp(&a.avg_log_likelihood)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.speaker_id.cmp(&b.speaker_id))
    });
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64Star;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    fn random_matrix(rng: &mut Xorshift64Star, t: usize, d: usize) -> FeatureMatrix {
        FeatureMatrix::new((0..t * d).map(|_| rng.gaussian()).collect(), d).unwrap()
    }

    fn random_model(rng: &mut Xorshift64Star, m: usize, d: usize) -> GmmModel {
        let raw: Vec<f64> = (0..m).map(|_| rng.uniform(0.1, 1.0)).collect();
        let s: f64 = raw.iter().sum();
        GmmModel::new(
            raw.iter().map(|w| w / s).collect(),
            (0..m * d).map(|_| rng.uniform(-2.0, 2.0)).collect(),
            (0..m * d).map(|_| rng.uniform(0.5, 2.0)).collect(),
            d,
        )
        .unwrap()
    }

    /// Density by direct exponentiation of the textbook formula.
    fn naive_density(x: &[f64], mu: &[f64], var: &[f64]) -> f64 {
        let d = x.len() as f64;
        let det: f64 = var.iter().product();
        let q: f64 = x.iter().zip(mu).zip(var).map(|((x, m), v)| (x - m).powi(2) / v).sum();
        (-0.5 * q).exp() / ((2.0 * PI).powf(d / 2.0) * det.sqrt())
    }

    #[test]
    fn log_gaussian_examples() {
        let v = log_gaussian(&[0.0], &[0.0], &[1.0]).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        let v = log_gaussian(&[3.0, -1.0], &[3.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!((v + (2.0 * PI).ln()).abs() < 1e-12);

        let mut rng = Xorshift64Star::new(4);
        let x: Vec<f64> = (0..4).map(|_| rng.gaussian()).collect();
        let mu: Vec<f64> = (0..4).map(|_| rng.gaussian()).collect();
        let var: Vec<f64> = (0..4).map(|_| rng.uniform(0.5, 2.0)).collect();
        let direct = naive_density(&x, &mu, &var);
        let got = log_gaussian(&x, &mu, &var).unwrap().exp();
        assert!((got - direct).abs() <= 1e-12);

        assert!(matches!(
            log_gaussian(&[0.0], &[0.0], &[0.0]),
            Err(GmmError::NonPositiveVariance { .. })
        ));
        assert!(log_gaussian(&[0.0, 1.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn single_component_likelihood_is_mean_log_density() {
        let mut rng = Xorshift64Star::new(8);
        let model = random_model(&mut rng, 1, 3);
        let x = random_matrix(&mut rng, 20, 3);
        let want = x
            .rows()
            .map(|r| log_gaussian(r, model.mean(0), model.variance(0)).unwrap())
            .sum::<f64>()
            / 20.0;
        assert!((gmm_log_likelihood(&x, &model).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn duplicate_components_collapse() {
        let one = GmmModel::new(vec![1.0], vec![0.5, -0.5], vec![1.5, 0.7], 2).unwrap();
        let two = GmmModel::new(vec![0.5, 0.5], vec![0.5, -0.5, 0.5, -0.5], vec![1.5, 0.7, 1.5, 0.7], 2)
            .unwrap();
        let mut rng = Xorshift64Star::new(2);
        let x = random_matrix(&mut rng, 10, 2);
        let a = gmm_log_likelihood(&x, &one).unwrap();
        let b = gmm_log_likelihood(&x, &two).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn likelihood_matches_direct_sum() {
        let mut rng = Xorshift64Star::new(31);
        let model = random_model(&mut rng, 5, 4);
        let x = random_matrix(&mut rng, 30, 4);
        let naive = x
            .rows()
            .map(|r| {
                (0..5)
                    .map(|i| model.weights()[i] * naive_density(r, model.mean(i), model.variance(i)))
                    .sum::<f64>()
                    .ln()
            })
            .sum::<f64>()
            / 30.0;
        let got = gmm_log_likelihood(&x, &model).unwrap();
        assert!(((got - naive) / naive).abs() < 1e-9);
    }

    #[test]
    fn far_components_stay_finite() {
        // 100 sigma apart: naive densities underflow to zero for one side
        let model = GmmModel::new(vec![0.5, 0.5], vec![0.0, 100.0], vec![1.0, 1.0], 1).unwrap();
        let x = fm(&[&[-60.0], &[160.0]]);
        let ll = gmm_log_likelihood(&x, &model).unwrap();
        assert!(ll.is_finite());
        assert_eq!(naive_density(&[-60.0], &[0.0], &[1.0]) * 0.5 + naive_density(&[-60.0], &[100.0], &[1.0]) * 0.5, 0.0);
    }

    #[test]
    fn e_step_examples() {
        let mut rng = Xorshift64Star::new(12);
        let x = random_matrix(&mut rng, 25, 3);
        let single = random_model(&mut rng, 1, 3);
        let (g, ll) = e_step(&x, &single).unwrap();
        assert!((0..25).all(|t| g.row(t) == [1.0]));
        assert_eq!(ll, gmm_log_likelihood(&x, &single).unwrap());

        let sep = GmmModel::new(vec![0.5, 0.5], vec![0.0, 20.0], vec![1.0, 1.0], 1).unwrap();
        let (g, _) = e_step(&fm(&[&[0.0]]), &sep).unwrap();
        assert!(g.row(0)[0] >= 1.0 - 1e-6);

        let model = random_model(&mut rng, 6, 3);
        let (g, _) = e_step(&x, &model).unwrap();
        for t in 0..25 {
            let s: f64 = g.row(t).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn m_step_single_component_is_sample_moments() {
        let mut rng = Xorshift64Star::new(13);
        let x = random_matrix(&mut rng, 40, 3);
        let g = Responsibilities::from_matrix(vec![1.0; 40], 1).unwrap();
        let model = m_step(&x, &g).unwrap();
        let mean = x.column_means();
        let var = x.column_variances();
        for d in 0..3 {
            assert!((model.mean(0)[d] - mean[d]).abs() < 1e-12);
            assert!((model.variance(0)[d] - var[d]).abs() < 1e-12);
        }
        assert_eq!(model.weights(), &[1.0]);
    }

    #[test]
    fn m_step_hard_partition() {
        let x = fm(&[&[0.0], &[2.0], &[10.0], &[14.0], &[12.0]]);
        let g = Responsibilities::from_matrix(
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            2,
        )
        .unwrap();
        let model = m_step(&x, &g).unwrap();
        assert!((model.weights()[0] - 0.4).abs() < 1e-12);
        assert_eq!(model.mean(0), &[1.0]);
        assert_eq!(model.variance(0), &[1.0]);
        assert_eq!(model.mean(1), &[12.0]);
        assert!((model.variance(1)[0] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn m_step_reseeds_starved_component() {
        let x = fm(&[&[0.0], &[1.0], &[2.0], &[30.0]]);
        let mut g = Responsibilities::from_matrix(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 2).unwrap();
        g.frame_log_lik = vec![-1.0, -1.0, -1.0, -50.0];
        let model = m_step(&x, &g).unwrap();
        assert_eq!(model.mean(1), &[30.0]);
        assert!((model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(model.weights().iter().all(|&w| w > 0.0));
        assert!((model.variance(1)[0] - x.column_variances()[0]).abs() < 1e-12);
    }

    #[test]
    fn variance_floor_applies() {
        // one component sits on a single repeated point
        let x = fm(&[&[1.0], &[1.0], &[5.0], &[9.0]]);
        let g = Responsibilities::from_matrix(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], 2).unwrap();
        let model = m_step(&x, &g).unwrap();
        let floor = variance_floor(&x)[0];
        assert_eq!(model.variance(0)[0], floor);
    }

    #[test]
    fn em_single_component_closed_form() {
        let mut rng = Xorshift64Star::new(21);
        let x = random_matrix(&mut rng, 100, 4);
        for seed in [0, 1, 99] {
            let (model, trace) = em_fit(&x, 1, seed, 12, 1e-5).unwrap();
            assert!(trace.converged);
            assert_eq!(trace.iterations_run, 1);
            let mean = x.column_means();
            let var = x.column_variances();
            for d in 0..4 {
                assert!((model.mean(0)[d] - mean[d]).abs() < 1e-10);
                assert!((model.variance(0)[d] - var[d]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn em_recovers_separated_means() {
        let mut rng = Xorshift64Star::new(42);
        let rows: Vec<[f64; 1]> = (0..2000)
            .map(|i| [if i % 2 == 0 { 0.0 } else { 10.0 } + rng.gaussian()])
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let (model, trace) = em_fit(&x, 2, 7, 50, 1e-8).unwrap();
        let mut means = vec![model.mean(0)[0], model.mean(1)[0]];
        means.sort_by(f64::total_cmp);
        assert!((means[0] - 0.0).abs() < 0.1, "{means:?}");
        assert!((means[1] - 10.0).abs() < 0.1, "{means:?}");
        for w in trace.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn em_accepts_table_regimes() {
        let mut rng = Xorshift64Star::new(3);
        let x = random_matrix(&mut rng, 300, 16);
        for (m, iters) in [(2, 6), (4, 8), (5, 10), (6, 12), (7, 14)] {
            let (model, trace) = em_fit(&x, m, 42, iters, 1e-5).unwrap();
            assert_eq!(model.m(), m);
            assert!(trace.iterations_run <= iters);
        }
    }

    #[test]
    fn em_errors() {
        let x = fm(&[&[0.0], &[1.0]]);
        assert_eq!(em_fit(&x, 3, 0, 5, 1e-5).unwrap_err(), GmmError::NotEnoughFrames { frames: 2, m: 3 });
        assert_eq!(em_fit(&x, 1, 0, 0, 1e-5).unwrap_err(), GmmError::InvalidParameter);
        assert_eq!(em_fit(&x, 1, 0, 5, 0.0).unwrap_err(), GmmError::InvalidParameter);
    }

    #[test]
    fn identify_by_likelihood() {
        let a = GmmModel::new(vec![1.0], vec![0.0], vec![1.0], 1).unwrap();
        let b = GmmModel::new(vec![1.0], vec![10.0], vec![1.0], 1).unwrap();
        let scores = gmm_identify(&fm(&[&[0.0]]), [("b", &b), ("a", &a)]).unwrap();
        assert_eq!(scores[0].speaker_id, "a");
        assert!((scores[0].avg_log_likelihood - scores[1].avg_log_likelihood - 50.0).abs() < 1e-12);
        let only = gmm_identify(&fm(&[&[100.0]]), [("b", &b)]).unwrap();
        assert_eq!(only[0].speaker_id, "b");
        assert_eq!(gmm_identify(&fm(&[&[0.0]]), []), Err(GmmError::NoModels));
    }

    #[test]
    fn model_validation() {
        assert!(GmmModel::new(vec![0.5, 0.4], vec![0.0, 0.0], vec![1.0, 1.0], 1).is_err());
        assert!(GmmModel::new(vec![1.0], vec![0.0], vec![-1.0], 1).is_err());
        assert!(GmmModel::new(vec![1.0], vec![f64::NAN], vec![1.0], 1).is_err());
        assert!(GmmModel::new(vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], 1).is_err());
    }
}
