use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;

use crate::dsp::{extract_mfcc_with, read_wav, FeatureConfig, MfccMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "val" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train, dev, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    /// Resolved path (index paths are relative to the corpus root).
    pub path: PathBuf,
    pub pcl_c: f64,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Deserialize)]
struct RawRow {
    id: String,
    path: String,
    pcl_c: String,
    split: String,
}

pub const INDEX_FILE: &str = "index.csv";

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Write `id,path,pcl_c,split`, with paths relative to `root` where possible.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(["id", "path", "pcl_c", "split"]).map_err(csv_error)?;
        for e in &self.entries {
            let rel = e.path.strip_prefix(&self.root).unwrap_or(&e.path);
            w.write_record([
                e.id.as_str(),
                &rel.to_string_lossy(),
                &e.pcl_c.to_string(),
                e.split.as_str(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Read and validate an index CSV (`id,path,pcl_c,split`). Paths are resolved
/// against `root`; every file must exist, ids must be unique and scores finite.
pub fn load_corpus(root: &Path, index_file: &Path) -> Result<CorpusIndex> {
    let index_path = if index_file.is_absolute() {
        index_file.to_path_buf()
    } else {
        root.join(index_file)
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&index_path)
        .map_err(csv_error)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
        let row = i + 1;
        let raw = rec.map_err(|e| Error::Load {
            row,
            id: String::new(),
            path: index_path.clone(),
            reason: e.to_string(),
        })?;
        let path = root.join(&raw.path);
        let fail = |reason: String| Error::Load {
            row,
            id: raw.id.clone(),
            path: path.clone(),
            reason,
        };
        if raw.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(fail(format!("duplicate id {}", raw.id)));
        }
        let score: f64 = raw
            .pcl_c
            .parse()
            .map_err(|_| fail(format!("score {:?} is not a number", raw.pcl_c)))?;
        if !score.is_finite() {
            return Err(fail(format!("score {score} is not finite")));
        }
        let split: Split = raw.split.parse().map_err(|e: Error| fail(e.to_string()))?;
        if !path.is_file() {
            return Err(fail("file does not exist".into()));
        }
        entries.push(CorpusEntry {
            id: raw.id.clone(),
            path,
            pcl_c: score,
            split,
        });
    }
    Ok(CorpusIndex {
        root: root.to_path_buf(),
        entries,
    })
}

/// A labelled feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: MfccMatrix,
    pub score: f64,
    pub split: Split,
}

/// Features for one file: WAV is extracted on the fly, `.mfcc` is read as text.
pub fn load_features(path: &Path, cfg: &FeatureConfig) -> Result<MfccMatrix> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "wav" => {
            let sig = read_wav(path)?;
            if sig.sample_rate() != cfg.sample_rate {
                return Err(Error::Input(format!(
                    "{} is {} Hz, features expect {} Hz",
                    path.display(),
                    sig.sample_rate(),
                    cfg.sample_rate
                )));
            }
            extract_mfcc_with(&sig, cfg, &cfg.filterbank()?)
        }
        "mfcc" | "csv" | "txt" => MfccMatrix::load(path),
        _ => Err(Error::Format(format!(
            "{}: expected a .wav or .mfcc file",
            path.display()
        ))),
    }
}

/// Load features for the selected split (or all entries), in index order,
/// extracting files in parallel.
pub fn load_examples(index: &CorpusIndex, split: Option<Split>, cfg: &FeatureConfig) -> Result<Vec<Example>> {
    cfg.validate()?;
    let entries: Vec<(usize, &CorpusEntry)> = index
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| split.is_none_or(|s| e.split == s))
        .collect();
    entries
        .par_iter()
        .map(|&(row, e)| {
            let features = load_features(&e.path, cfg).map_err(|err| Error::Load {
                row: row + 1,
                id: e.id.clone(),
                path: e.path.clone(),
                reason: err.to_string(),
            })?;
            Ok(Example {
                id: e.id.clone(),
                features,
                score: e.pcl_c,
                split: e.split,
            })
        })
        .collect()
}
