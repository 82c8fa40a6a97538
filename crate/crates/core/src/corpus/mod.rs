//! Corpus ingestion: PAN-style author-profiling splits, the three-class
//! labeled image dataset, tweet chunking and a synthetic corpus generator
//! that writes both layouts to disk.

mod chunking;
mod images;
mod pan;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{GenderLabel, ImageClass};

pub use chunking::{chunk_tweets, ChunkSet, ChunkingOptions};
pub use images::{load_labeled_image_dataset, write_labeled_layout, IMAGE_EXTENSIONS};
pub use pan::{check_disjoint, load_pan_dataset, resolve_language_dir, write_pan_split};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no truth file found under {0}")]
    MissingTruthFile(PathBuf),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("user {user_id}: unknown label {value:?}")]
    UnknownLabel { user_id: String, value: String },
    #[error("missing class folder {0}")]
    MissingClassFolder(PathBuf),
    #[error("split {split}: class {class} has no images")]
    EmptyClass { split: SplitName, class: ImageClass },
    #[error("user {0} has no tweets")]
    EmptyTweetList(String),
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidSignal { name: &'static str, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One profiled user. `label` is `None` for unlabeled inference data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub label: Option<GenderLabel>,
    pub tweets: Vec<String>,
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub users: Vec<UserRecord>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Count of users per label; unlabeled users are not counted.
    pub fn label_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for u in &self.users {
            if let Some(l) = u.label {
                counts[l.index()] += 1;
            }
        }
        counts
    }
}

/// Concatenation of several tweets of one user, used as a single text input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetChunk {
    pub user_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub member_indices: Vec<usize>,
}

/// Per-class image lists for the train and test splits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledImageDataset {
    pub train: BTreeMap<ImageClass, Vec<PathBuf>>,
    pub test: BTreeMap<ImageClass, Vec<PathBuf>>,
}

impl LabeledImageDataset {
    pub fn split(&self, split: SplitName) -> &BTreeMap<ImageClass, Vec<PathBuf>> {
        match split {
            SplitName::Train => &self.train,
            SplitName::Test => &self.test,
        }
    }

    /// `(path, class)` pairs of a split in class order, files sorted within a class.
    pub fn items(&self, split: SplitName) -> Vec<(PathBuf, ImageClass)> {
        self.split(split)
            .iter()
            .flat_map(|(c, paths)| paths.iter().map(move |p| (p.clone(), *c)))
            .collect()
    }

    pub fn counts(&self, split: SplitName) -> [usize; 3] {
        let mut out = [0; 3];
        for (c, paths) in self.split(split) {
            out[c.index()] = paths.len();
        }
        out
    }

    /// Human-readable count table, one line per split.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for split in [SplitName::Train, SplitName::Test] {
            let c = self.counts(split);
            s.push_str(&format!(
                "{split}: female={} male={} unknown={} total={}\n",
                c[0],
                c[1],
                c[2],
                c.iter().sum::<usize>()
            ));
        }
        s
    }
}
