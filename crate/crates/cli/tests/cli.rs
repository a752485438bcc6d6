use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voxid::audio::{self, AudioBuffer};
use voxid::manifest::{Manifest, Split};

fn voxid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxid"))
        .args(args)
        .output()
        .expect("run voxid")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

type TrainWavs = Vec<(String, Vec<PathBuf>)>;
type TestWavs = Vec<(String, PathBuf)>;

/// Two-speaker corpus written through the CLI.
fn corpus(dir: &Path) -> (PathBuf, TrainWavs, TestWavs) {
    let out = voxid(&["synth-corpus", s(dir), "--speakers", "2", "--utterances", "4", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest_path = PathBuf::from(stdout(&out).trim());
    let manifest = Manifest::load(&manifest_path).unwrap();
    let train = manifest
        .speakers()
        .into_iter()
        .map(|id| {
            let wavs = manifest
                .entries
                .iter()
                .filter(|e| e.speaker_id == id && e.split == Split::Train)
                .map(|e| manifest.resolve(e))
                .collect();
            (id.to_string(), wavs)
        })
        .collect();
    let test = manifest
        .entries
        .iter()
        .filter(|e| e.split == Split::Test)
        .map(|e| (e.speaker_id.clone(), manifest.resolve(e)))
        .collect();
    (manifest_path, train, test)
}

fn enroll_all(registry: &Path, train: &[(String, Vec<PathBuf>)], extra: &[&str]) {
    for (id, wavs) in train {
        let mut args = vec!["enroll", "--registry", s(registry), id.as_str()];
        args.extend(wavs.iter().map(|p| s(p)));
        args.extend_from_slice(extra);
        let out = voxid(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
}

fn total_frames(enroll_stdout: &str) -> usize {
    let line = enroll_stdout.lines().find(|l| l.starts_with("frames added")).unwrap();
    line.split("total ").nth(1).unwrap().trim_end_matches(')').parse().unwrap()
}

#[test]
fn enroll_identify_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, train, test) = corpus(&tmp.path().join("corpus"));
    let reg = tmp.path().join("reg.bin");
    enroll_all(&reg, &train, &[]);

    let out = voxid(&["inspect", "--registry", s(&reg)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("dim 16 speakers 2"), "{text}");
    assert!(text.contains("vq: K=16 D=16") && text.contains("gmm: M=4 D=16"), "{text}");

    let (truth, wav) = &test[0];
    for backend in ["vq", "gmm"] {
        let out = voxid(&["identify", "--registry", s(&reg), s(wav), "--backend", backend]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let text = stdout(&out);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3, "{text}");
        assert_eq!(lines[2], format!("decision: {truth}"));
        assert!(lines[0].starts_with(truth.as_str()));
    }

    let json = voxid(&["inspect", "--registry", s(&reg), "--json"]);
    assert_eq!(code(&json), 0);
    assert!(stdout(&json).contains("\"speakers\""));
}

#[test]
fn reenrollment_grows_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, train, _) = corpus(&tmp.path().join("corpus"));
    let reg = tmp.path().join("reg.bin");
    let (id, wavs) = &train[0];
    let first = voxid(&["enroll", "--registry", s(&reg), id, s(&wavs[0])]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = voxid(&["enroll", "--registry", s(&reg), id, s(&wavs[1])]);
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    assert!(total_frames(&stdout(&second)) > total_frames(&stdout(&first)));
    assert!(stdout(&voxid(&["inspect", "--registry", s(&reg)])).contains("utterances=2"));
}

#[test]
fn open_set_threshold_rejects_with_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, train, test) = corpus(&tmp.path().join("corpus"));
    let reg = tmp.path().join("reg.bin");
    enroll_all(&reg, &train, &[]);
    let wav = s(&test[0].1);

    let out = voxid(&["identify", "--registry", s(&reg), wav, "--backend", "gmm", "--threshold", "1e9"]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).ends_with("decision: unknown\n"));
    let out = voxid(&["identify", "--registry", s(&reg), wav, "--backend", "vq", "--threshold", "1e-9"]);
    assert_eq!(code(&out), 3);
    let out = voxid(&["identify", "--registry", s(&reg), wav, "--backend", "gmm", "--threshold", "-1e9"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn tiny_file_is_insufficient_data() {
    let tmp = tempfile::tempdir().unwrap();
    let wav = tmp.path().join("blip.wav");
    audio::write_wav_i16(&wav, &AudioBuffer::new(vec![0.1; 160], 16_000).unwrap()).unwrap();
    let out = voxid(&["enroll", "--registry", s(&tmp.path().join("r.bin")), "alice", s(&wav)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("insufficient data"), "{}", stderr(&out));

    // Long enough to frame but too few frames for K = 16.
    audio::write_wav_i16(&wav, &AudioBuffer::new((0..2000).map(|i| (i as f64 * 0.3).sin()).collect(), 16_000).unwrap()).unwrap();
    let out = voxid(&["enroll", "--registry", s(&tmp.path().join("r.bin")), "alice", s(&wav)]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("insufficient data"), "{}", stdout(&out));
}

#[test]
fn usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = tmp.path().join("missing.bin");
    assert_eq!(code(&voxid(&[])), 1);
    assert_eq!(code(&voxid(&["frobnicate"])), 1);
    assert_eq!(code(&voxid(&["identify", "--registry", s(&reg), "x.wav", "--backend", "svm"])), 1);
    assert_eq!(code(&voxid(&["enroll", "--registry", s(&reg), "a", "x.wav", "--k", "0"])), 1);
    assert_eq!(code(&voxid(&["--help"])), 0);

    assert_eq!(code(&voxid(&["identify", "--registry", s(&reg), "x.wav"])), 2);
    assert_eq!(code(&voxid(&["enroll", "--registry", s(&reg), "a", "x.wav"])), 2);

    let garbage = tmp.path().join("garbage.bin");
    fs::write(&garbage, b"definitely not a registry").unwrap();
    let out = voxid(&["inspect", "--registry", s(&garbage)]);
    assert_eq!(code(&out), 2);

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "vq_k = \"many\"\n").unwrap();
    assert_eq!(code(&voxid(&["enroll", "--registry", s(&reg), "a", "x.wav", "--config", s(&cfg)])), 1);
}

#[test]
fn config_file_and_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, train, _) = corpus(&tmp.path().join("corpus"));
    let cfg = tmp.path().join("engine.toml");
    fs::write(&cfg, "vq_k = 8\ngmm_m = 3\n").unwrap();

    let reg = tmp.path().join("a.bin");
    enroll_all(&reg, &train[..1], &["--config", s(&cfg)]);
    let text = stdout(&voxid(&["inspect", "--registry", s(&reg)]));
    assert!(text.contains("K=8") && text.contains("M=3"), "{text}");

    let reg = tmp.path().join("b.bin");
    enroll_all(&reg, &train[..1], &["--config", s(&cfg), "--k", "4", "--m", "2"]);
    let text = stdout(&voxid(&["inspect", "--registry", s(&reg)]));
    assert!(text.contains("K=4") && text.contains("M=2"), "{text}");
}

#[test]
fn commands_are_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, train, _) = corpus(&tmp.path().join("corpus"));

    let regs = [tmp.path().join("r1.bin"), tmp.path().join("r2.bin")];
    for r in &regs {
        enroll_all(r, &train, &["--seed", "9"]);
    }
    assert_eq!(fs::read(&regs[0]).unwrap(), fs::read(&regs[1]).unwrap());

    let csvs = [tmp.path().join("a.csv"), tmp.path().join("b.csv")];
    for c in &csvs {
        let out = voxid(&[
            "evaluate", s(&manifest), "--backend", "vq,gmm", "--k", "8,16", "--m", "4", "--iters", "6,8",
            "--train-secs", "10", "--csv", s(c),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert_eq!(stdout(&out).lines().count(), 5);
    }
    let (a, b) = (fs::read_to_string(&csvs[0]).unwrap(), fs::read_to_string(&csvs[1]).unwrap());
    assert_eq!(a, b);

    let mut reader = csv::Reader::from_reader(a.as_bytes());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["backend", "k_or_m", "iterations", "train_seconds", "test_seconds", "trials", "correct", "identification_rate"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let shape: Vec<(String, String, String)> = rows.iter().map(|r| (r[0].into(), r[1].into(), r[2].into())).collect();
    assert_eq!(
        shape,
        [("vq", "8", "100"), ("vq", "16", "100"), ("gmm", "4", "6"), ("gmm", "4", "8")]
            .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
    );
    for r in &rows {
        let (trials, correct): (f64, f64) = (r[5].parse().unwrap(), r[6].parse().unwrap());
        assert_eq!(&r[7], format!("{:.4}", 100.0 * correct / trials));
    }

    let corpus_b = tmp.path().join("corpus-again");
    let out = voxid(&["synth-corpus", s(&corpus_b), "--speakers", "2", "--utterances", "4", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(manifest.parent().unwrap().join("spk01/utt01.wav")).unwrap(),
        fs::read(corpus_b.join("spk01/utt01.wav")).unwrap()
    );
}
