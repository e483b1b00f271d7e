use std::fmt;
use std::str::FromStr;

use fskws_core::features::FeatureConfig;
use fskws_core::nets::ArchKind;
use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeSpec, Phase};

/// Experimental setting: which optional categories appear and whether
/// background noise is mixed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    /// Core keywords only.
    #[serde(rename = "a")]
    A,
    /// Core keywords with background noise.
    #[serde(rename = "b")]
    B,
    /// Core keywords plus an unknown-keyword category.
    #[serde(rename = "c-unknown")]
    CUnknown,
    /// Core keywords plus a silence category.
    #[serde(rename = "c-silence")]
    CSilence,
    /// Core, unknown and silence with background noise.
    #[serde(rename = "d")]
    D,
}

impl Case {
    pub const ALL: [Case; 5] = [Case::A, Case::B, Case::CUnknown, Case::CSilence, Case::D];

    pub fn name(self) -> &'static str {
        match self {
            Case::A => "a",
            Case::B => "b",
            Case::CUnknown => "c-unknown",
            Case::CSilence => "c-silence",
            Case::D => "d",
        }
    }

    pub fn include_unknown(self) -> bool {
        matches!(self, Case::CUnknown | Case::D)
    }

    pub fn include_silence(self) -> bool {
        matches!(self, Case::CSilence | Case::D)
    }

    pub fn background(self) -> bool {
        matches!(self, Case::B | Case::D)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Case::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Case::ALL.iter().map(|c| c.name()).collect();
            format!("unknown case {s:?}; valid values: {}", valid.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 200 epochs of 200 training and 100 validation episodes.
    Full,
    /// 40 epochs of 100 training and 50 validation episodes.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchKind,
    pub case: Case,
    pub n_way: usize,
    pub k_shot: usize,
    pub epochs: usize,
    pub train_episodes_per_epoch: usize,
    pub val_episodes_per_epoch: usize,
    pub test_episodes: usize,
    pub initial_lr: f64,
    pub lr_halving_period_epochs: usize,
    pub train_queries_per_class: usize,
    pub eval_queries_per_class: usize,
    pub background_volume: f32,
    pub mix_probability: f64,
    /// Mix background into support clips at evaluation time as well.
    pub mix_support_at_test: bool,
    pub seed: u64,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Full)
    }
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (epochs, train, val) = match profile {
            Profile::Full => (200, 200, 100),
            Profile::Desk => (40, 100, 50),
        };
        Self {
            arch: ArchKind::TdResnet7,
            case: Case::A,
            n_way: 2,
            k_shot: 5,
            epochs,
            train_episodes_per_epoch: train,
            val_episodes_per_epoch: val,
            test_episodes: 100,
            initial_lr: 1e-3,
            lr_halving_period_epochs: 20,
            train_queries_per_class: 5,
            eval_queries_per_class: 15,
            background_volume: 0.1,
            mix_probability: 1.0,
            mix_support_at_test: true,
            seed: 0,
            features: FeatureConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("epochs", self.epochs),
            ("train_episodes_per_epoch", self.train_episodes_per_epoch),
            ("val_episodes_per_epoch", self.val_episodes_per_epoch),
            ("test_episodes", self.test_episodes),
            ("lr_halving_period_epochs", self.lr_halving_period_epochs),
            ("train_queries_per_class", self.train_queries_per_class),
            ("eval_queries_per_class", self.eval_queries_per_class),
            ("k_shot", self.k_shot),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.n_way < 2 {
            return Err("n_way must be at least 2".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err("initial_lr must be positive".into());
        }
        self.features.validate().map_err(|e| e.to_string())?;
        self.features.require_network_shape().map_err(|e| e.to_string())
    }

    /// Episode shape for a phase: training uses the training query count,
    /// validation and testing the evaluation count.
    pub fn episode_spec(&self, phase: Phase) -> EpisodeSpec {
        let n_query = match phase {
            Phase::Train => self.train_queries_per_class,
            _ => self.eval_queries_per_class,
        };
        EpisodeSpec {
            include_unknown: self.case.include_unknown(),
            include_silence: self.case.include_silence(),
            background: self.case.background(),
            background_volume: self.background_volume,
            mix_probability: self.mix_probability,
            mix_support: phase != Phase::Test || self.mix_support_at_test,
            ..EpisodeSpec::core(self.n_way, self.k_shot, n_query, phase)
        }
    }
}

/// Learning rate for a 0-based epoch: halved every `lr_halving_period_epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halving_period_epochs.max(1)).min(i32::MAX as usize) as i32;
    cfg.initial_lr * 0.5f64.powi(halvings)
}
