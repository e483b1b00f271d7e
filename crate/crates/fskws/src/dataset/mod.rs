//! Few-shot Speech Commands: synthesis from a Speech Commands root, the
//! manifest format, and episode sampling/loading.

mod episode;
mod manifest;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wav::WavError;

pub use episode::{
    load_episode, sample_episode, EpisodeLoader, EpisodePool, EpisodeSource, EpisodeSpec, ManifestSource,
    SILENCE_CATEGORY, UNKNOWN_CATEGORY,
};
pub use fskws_core::protonet::Role;
pub use manifest::{Manifest, ManifestEntry, ManifestHeader, MANIFEST_FORMAT};
pub use synth::{
    balance, build_silence, filter_short, group_core_unknown, largest_remainder, scan_speech_commands,
    split_core, split_unknown, synthesize_manifest, Balanced, Grouped, Inventory, KeywordStats, SynthConfig,
    SynthOutput, SynthesisReport, Utterance, BACKGROUND_DIR, REFERENCE_CORE, REFERENCE_UNKNOWN, SILENCE_DIR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Train,
    Val,
    Test,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Train, Phase::Val, Phase::Test];
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Train => "TRAIN",
            Phase::Val => "VAL",
            Phase::Test => "TEST",
        })
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing background folder {0}")]
    MissingBackgroundFolder(PathBuf),
    #[error("keyword folder {0} contains no WAV files")]
    EmptyKeywordFolder(PathBuf),
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("keyword {keyword:?} has {speakers} speakers, fewer than the quota of {quota}")]
    QuotaUnreachable { keyword: String, speakers: usize, quota: usize },
    #[error("{phase} has {available} core keywords, {needed} needed")]
    InsufficientClasses { phase: Phase, needed: usize, available: usize },
    #[error("category {category:?} has {available} samples, {needed} needed")]
    InsufficientSamples { category: String, needed: usize, available: usize },
    #[error("{path}:{line}: {detail}")]
    Manifest { path: PathBuf, line: usize, detail: String },
    #[error("invalid manifest: {0}")]
    Invariant(String),
    #[error("invalid episode spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Core(#[from] fskws_core::Error),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| DatasetError::Io { path, source }
    }
}
