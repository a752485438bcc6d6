//! Text-independent speaker identification.
//!
//! Audio is reduced to 16-dimensional MFCC frames ([`features`]); each
//! enrolled speaker is modelled twice, by a k-means codebook ([`vq`]) and by a
//! diagonal-covariance Gaussian mixture trained with EM ([`gmm`]). A test
//! utterance is assigned to the codebook with the lowest average quantization
//! distortion, or to the mixture with the highest average log-likelihood.
//! [`registry`] keeps speakers and models on disk; [`eval`] and [`synth`] run
//! identification-rate experiments on labelled or generated corpora.
//!
//! Data-parallel loops (frames, speakers, test utterances) run on rayon when
//! the default `parallel` feature is enabled. Reductions are always performed
//! sequentially in input order, so results are bit-identical with or without
//! it.

pub mod audio;
pub mod config;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod manifest;
pub mod par;
pub mod registry;
pub mod rng;
pub mod synth;
pub mod vq;

pub use audio::{load_wav, resample_linear, AudioBuffer};
pub use config::EngineConfig;
pub use features::{extract_mfcc, FeatureMatrix, MfccConfig, MfccExtractor};
pub use gmm::{em_fit, gmm_identify, gmm_log_likelihood, GmmModel};
pub use registry::{Backend, IdentificationResult, Registry, TrainConfig};
pub use vq::{kmeans_fit, quantization_distortion, vq_identify, Codebook};
