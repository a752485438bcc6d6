//! Corpus manifests: one utterance per line, `<speaker_id>\t<split>\t<wav_path>`.
//! Relative paths resolve against the manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub split: Split,
    /// Path as written in the manifest.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| ManifestError::Syntax {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(syntax(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            if fields[0].is_empty() || fields[2].is_empty() {
                return Err(syntax("empty speaker id or path".into()));
            }
            entries.push(ManifestEntry {
                speaker_id: fields[0].to_string(),
                split: fields[1].parse().map_err(syntax)?,
                path: PathBuf::from(fields[2]),
            });
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.speaker_id, e.split, e.path.display()))
            .collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Speaker ids in order of first appearance.
    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.speaker_id.as_str()) {
                out.push(&e.speaker_id);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let text = "# corpus\nalice\ttrain\ta/1.wav\n\nbob\ttest\t/abs/2.wav\n";
        let m = Manifest::parse(text, "/data").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/a/1.wav"));
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/abs/2.wav"));
        assert_eq!(m.speakers(), vec!["alice", "bob"]);
        assert_eq!(m.to_text(), "alice\ttrain\ta/1.wav\nbob\ttest\t/abs/2.wav\n");
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = Manifest::parse("a\ttrain\tx.wav\nb train y.wav\n", ".").unwrap_err();
        assert!(matches!(err, ManifestError::Syntax { line: 2, .. }));
        assert!(Manifest::parse("a\tdev\tx.wav\n", ".").is_err());
    }
}
