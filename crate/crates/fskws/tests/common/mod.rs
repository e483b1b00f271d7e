#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fskws::dataset::{synthesize_manifest, Manifest};
use fskws::synthetic::MockCorpus;
use fskws::trainer::TrainConfig;
use tempfile::TempDir;

/// A generated corpus plus the manifest synthesized from it.
pub struct Fixture {
    pub dir: TempDir,
    pub manifest: Manifest,
}

impl Fixture {
    pub fn corpus(&self) -> PathBuf {
        self.dir.path().join("corpus")
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("fewshot")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out().join("manifest.jsonl")
    }
}

pub fn write_corpus(root: &Path, mock: &MockCorpus) {
    mock.write(root).expect("mock corpus");
}

pub fn fixture(seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockCorpus::default();
    write_corpus(&dir.path().join("corpus"), &mock);
    let out = synthesize_manifest(&dir.path().join("corpus"), &dir.path().join("fewshot"), seed, &mock.synth_config())
        .expect("synthesis");
    Fixture { dir, manifest: out.manifest }
}

/// A schedule small enough for tests: a few epochs of a few episodes.
pub fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        train_episodes_per_epoch: 3,
        val_episodes_per_epoch: 2,
        test_episodes: 3,
        lr_halving_period_epochs: 1,
        seed,
        ..TrainConfig::default()
    }
}
