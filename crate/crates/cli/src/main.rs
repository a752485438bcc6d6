//! `voxid` command-line front end.
//!
//! Exit codes: 0 success or accept, 1 usage error, 2 data error,
//! 3 open-set reject.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voxid::audio;
use voxid::eval::{self, GridPoint};
use voxid::features::{FeatureError, FeatureMatrix, MfccExtractor};
use voxid::registry::{ModelStatus, Registry};
use voxid::synth;
use voxid::{Backend, EngineConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_REJECT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "voxid", version, about = "Text-independent speaker identification (MFCC + VQ/GMM)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add utterances for a speaker and retrain their models.
    Enroll {
        #[arg(long)]
        registry: PathBuf,
        speaker: String,
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Rank enrolled speakers against one utterance.
    Identify {
        #[arg(long)]
        registry: PathBuf,
        wav: PathBuf,
        #[arg(long, default_value = "gmm")]
        backend: Backend,
        /// Accept only if the best distortion is <= X (vq) or the best
        /// average log-likelihood is >= X (gmm).
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Run a closed-set evaluation grid over a manifest.
    Evaluate {
        manifest: PathBuf,
        /// Backends to evaluate, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [Backend::Vq, Backend::Gmm])]
        backend: Vec<Backend>,
        /// Codebook sizes for vq rows.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Component counts for gmm rows.
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
        /// EM iteration limits for gmm rows.
        #[arg(long, value_delimiter = ',')]
        iters: Vec<usize>,
        /// Caps on training audio per speaker, seconds.
        #[arg(long = "train-secs", value_delimiter = ',')]
        train_secs: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic multi-speaker corpus and its manifest.
    SynthCorpus {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 10)]
        utterances: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// List a registry's speakers and model shapes.
    Inspect {
        #[arg(long)]
        registry: PathBuf,
        /// Dump the whole registry as JSON instead.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct EngineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

type CmdResult = Result<u8, Failure>;

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, Failure> {
    match path {
        Some(p) => EngineConfig::load(p).map_err(|e| Failure::Usage(e.to_string())),
        None => Ok(EngineConfig::default()),
    }
}

fn validated(cfg: EngineConfig) -> Result<EngineConfig, Failure> {
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

impl EngineArgs {
    fn resolve(&self) -> Result<EngineConfig, Failure> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(k) = self.k {
            cfg.vq_k = k;
        }
        if let Some(m) = self.m {
            cfg.gmm_m = m;
        }
        if let Some(it) = self.iters {
            cfg.em_max_iter = it;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        validated(cfg)
    }
}

fn features_of(path: &Path, extractor: &MfccExtractor, cfg: &EngineConfig) -> Result<FeatureMatrix, Failure> {
    let ctx = |e: &dyn std::fmt::Display| Failure::Data(format!("{}: {e}", path.display()));
    let audio = audio::load_wav(path)
        .and_then(|a| audio::prepare(&a, cfg.sample_rate))
        .map_err(|e| ctx(&e))?;
    match extractor.extract(&audio) {
        Ok(f) => Ok(f),
        Err(e @ FeatureError::TooShort { .. }) => Err(ctx(&format!("insufficient data: {e}"))),
        Err(e) => Err(ctx(&e)),
    }
}

fn cmd_enroll(registry_path: &Path, speaker: &str, wavs: &[PathBuf], engine: &EngineArgs) -> CmdResult {
    let cfg = engine.resolve()?;
    let extractor = MfccExtractor::new(&cfg.mfcc, cfg.sample_rate).map_err(|e| Failure::Usage(e.to_string()))?;
    let utterances = wavs
        .iter()
        .map(|p| features_of(p, &extractor, &cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut registry = if registry_path.exists() {
        Registry::load(registry_path).map_err(|e| Failure::Data(format!("{}: {e}", registry_path.display())))?
    } else {
        Registry::new(cfg.mfcc.n_coeffs)
    };
    let report = registry
        .enroll_utterances(speaker, &utterances, &cfg.train_config())
        .map_err(data)?;
    registry.save(registry_path).map_err(data)?;

    println!("speaker {}", report.speaker_id);
    println!("frames added {} (total {})", report.frames_added, report.total_frames);
    println!("vq codebook K={}: {}", cfg.vq_k, report.codebook);
    println!("gmm M={}: {}", cfg.gmm_m, report.gmm);
    let starved = |s: &ModelStatus| matches!(s, ModelStatus::InsufficientData { .. });
    if starved(&report.codebook) || starved(&report.gmm) {
        eprintln!("error: insufficient data to train every model for '{speaker}'");
        return Ok(EXIT_DATA);
    }
    Ok(0)
}

fn cmd_identify(
    registry_path: &Path,
    wav: &Path,
    backend: Backend,
    threshold: Option<f64>,
    engine: &EngineArgs,
) -> CmdResult {
    let cfg = engine.resolve()?;
    let registry =
        Registry::load(registry_path).map_err(|e| Failure::Data(format!("{}: {e}", registry_path.display())))?;
    let extractor = MfccExtractor::new(&cfg.mfcc, cfg.sample_rate).map_err(|e| Failure::Usage(e.to_string()))?;
    let features = features_of(wav, &extractor, &cfg)?;
    let result = registry.identify(&features, backend, threshold).map_err(data)?;
    for s in &result.ranked_scores {
        println!("{} {:.6}", s.speaker_id, s.score);
    }
    println!("decision: {}", result.decision_label());
    Ok(if result.accepted { 0 } else { EXIT_REJECT })
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    manifest: &Path,
    backends: &[Backend],
    ks: &[usize],
    ms: &[usize],
    iters: &[usize],
    caps: &[f64],
    seed: Option<u64>,
    config: Option<&Path>,
    csv: Option<&Path>,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let cfg = validated(cfg)?;
    let or_default = |v: &[usize], d: usize| if v.is_empty() { vec![d] } else { v.to_vec() };
    let ks = or_default(ks, cfg.vq_k);
    let ms = or_default(ms, cfg.gmm_m);
    let iters = or_default(iters, cfg.em_max_iter);
    if ks.iter().chain(&ms).chain(&iters).any(|&v| v == 0) {
        return Err(Failure::Usage("--k, --m and --iters values must be positive".into()));
    }
    if caps.iter().any(|&c| !(c > 0.0)) {
        return Err(Failure::Usage("--train-secs values must be positive".into()));
    }
    let caps: Vec<Option<f64>> = if caps.is_empty() {
        vec![None]
    } else {
        caps.iter().copied().map(Some).collect()
    };

    let mut grid = Vec::new();
    for &backend in backends {
        match backend {
            Backend::Vq => {
                for &k in &ks {
                    for &cap in &caps {
                        grid.push(GridPoint { train_cap_secs: cap, ..GridPoint::vq(k) });
                    }
                }
            }
            Backend::Gmm => {
                for &m in &ms {
                    for &it in &iters {
                        for &cap in &caps {
                            grid.push(GridPoint { train_cap_secs: cap, ..GridPoint::gmm(m, it) });
                        }
                    }
                }
            }
        }
    }

    let report = eval::evaluate_manifest(manifest, &grid, &cfg).map_err(data)?;
    print!("{}", report.to_table());
    if let Some(path) = csv {
        fs::write(path, report.to_csv()).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(0)
}

fn cmd_synth(out_dir: &Path, speakers: usize, utterances: usize, seed: u64) -> CmdResult {
    if speakers == 0 || utterances < 2 {
        return Err(Failure::Usage(
            "need at least one speaker and two utterances per speaker".into(),
        ));
    }
    let manifest = synth::synth_corpus(out_dir, speakers, utterances, seed).map_err(data)?;
    println!("{}", manifest.display());
    Ok(0)
}

fn cmd_inspect(registry_path: &Path, json: bool) -> CmdResult {
    let registry =
        Registry::load(registry_path).map_err(|e| Failure::Data(format!("{}: {e}", registry_path.display())))?;
    if json {
        println!("{}", registry.to_json().map_err(data)?);
        return Ok(0);
    }
    let mut out = String::new();
    let _ = writeln!(out, "dim {} speakers {}", registry.dim(), registry.len());
    for r in registry.speakers() {
        let cb = r
            .codebook
            .as_ref()
            .map_or("none".to_string(), |c| format!("K={} D={}", c.k(), c.dim()));
        let g = r
            .gmm
            .as_ref()
            .map_or("none".to_string(), |g| format!("M={} D={}", g.m(), g.dim()));
        let _ = writeln!(
            out,
            "{}\tutterances={}\tframes={}\tvq: {}\tgmm: {}",
            r.speaker_id,
            r.enrolled_utterances,
            r.accumulated_features.len(),
            cb,
            g
        );
    }
    print!("{out}");
    Ok(0)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Enroll { registry, speaker, wavs, engine } => cmd_enroll(&registry, &speaker, &wavs, &engine),
        Command::Identify { registry, wav, backend, threshold, engine } => {
            cmd_identify(&registry, &wav, backend, threshold, &engine)
        }
        Command::Evaluate { manifest, backend, k, m, iters, train_secs, seed, config, csv } => cmd_evaluate(
            &manifest,
            &backend,
            &k,
            &m,
            &iters,
            &train_secs,
            seed,
            config.as_deref(),
            csv.as_deref(),
        ),
        Command::SynthCorpus { out_dir, speakers, utterances, seed } => {
            cmd_synth(&out_dir, speakers, utterances, seed)
        }
        Command::Inspect { registry, json } => cmd_inspect(&registry, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
