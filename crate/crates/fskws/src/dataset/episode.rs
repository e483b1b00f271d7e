use std::collections::BTreeMap;
use std::sync::OnceLock;

use fskws_core::audio::{mix_background, random_snippet, BackgroundTrack};
use fskws_core::features::{FeatureConfig, FeatureMatrix, Mfcc};
use fskws_core::protonet::{Category, Episode, Labeled, Role};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use super::{DatasetError, Phase};
use crate::wav;

pub const UNKNOWN_CATEGORY: &str = "_unknown_";
pub const SILENCE_CATEGORY: &str = "_silence_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub include_unknown: bool,
    pub include_silence: bool,
    pub background: bool,
    pub background_volume: f32,
    /// Probability that a non-silence clip gets background mixed in.
    pub mix_probability: f64,
    /// Whether support clips are mixed too (queries always are when enabled).
    pub mix_support: bool,
    pub phase: Phase,
}

impl EpisodeSpec {
    pub fn core(n_way: usize, k_shot: usize, n_query: usize, phase: Phase) -> Self {
        Self {
            n_way,
            k_shot,
            n_query,
            include_unknown: false,
            include_silence: false,
            background: false,
            background_volume: 0.1,
            mix_probability: 1.0,
            mix_support: true,
            phase,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_way < 2 || self.k_shot < 1 || self.n_query < 1 {
            return Err(DatasetError::InvalidSpec(format!(
                "need n_way >= 2, k_shot >= 1, n_query >= 1 (got {}, {}, {})",
                self.n_way, self.k_shot, self.n_query
            )));
        }
        if !(0.0..=1.0).contains(&self.background_volume) || !(0.0..=1.0).contains(&self.mix_probability) {
            return Err(DatasetError::InvalidSpec("volume and mix probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn way_total(&self) -> usize {
        self.n_way + self.include_unknown as usize + self.include_silence as usize
    }
}

/// Manifest entry indices grouped by phase and category.
#[derive(Debug, Clone)]
pub struct EpisodePool {
    core: BTreeMap<Phase, BTreeMap<String, Vec<usize>>>,
    unknown: BTreeMap<Phase, Vec<usize>>,
    silence: BTreeMap<Phase, Vec<usize>>,
}

impl EpisodePool {
    pub fn new(manifest: &Manifest) -> Self {
        let mut pool = Self { core: BTreeMap::new(), unknown: BTreeMap::new(), silence: BTreeMap::new() };
        for (i, e) in manifest.entries.iter().enumerate() {
            match e.role {
                Role::Core => pool.core.entry(e.phase).or_default().entry(e.keyword.clone()).or_default().push(i),
                Role::Unknown => pool.unknown.entry(e.phase).or_default().push(i),
                Role::Silence => pool.silence.entry(e.phase).or_default().push(i),
            }
        }
        pool
    }

    pub fn core_keywords(&self, phase: Phase) -> Vec<&str> {
        self.core.get(&phase).map(|m| m.keys().map(String::as_str).collect()).unwrap_or_default()
    }
}

fn draw(
    rng: &mut ChaCha8Rng,
    items: &[usize],
    spec: &EpisodeSpec,
    category: &str,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    let needed = spec.k_shot + spec.n_query;
    if items.len() < needed {
        return Err(DatasetError::InsufficientSamples { category: category.into(), needed, available: items.len() });
    }
    let picks: Vec<usize> = index::sample(rng, items.len(), needed).into_iter().map(|j| items[j]).collect();
    let (s, q) = picks.split_at(spec.k_shot);
    Ok((s.to_vec(), q.to_vec()))
}

/// Draws an episode of manifest entry indices. Core keywords and their samples
/// are drawn without replacement; each optional category is inserted at a
/// uniformly random position and draws from the phase's pooled samples.
pub fn sample_episode(pool: &EpisodePool, spec: &EpisodeSpec, rng: &mut ChaCha8Rng) -> Result<Episode<usize>, DatasetError> {
    spec.validate()?;
    let empty = BTreeMap::new();
    let core = pool.core.get(&spec.phase).unwrap_or(&empty);
    if core.len() < spec.n_way {
        return Err(DatasetError::InsufficientClasses { phase: spec.phase, needed: spec.n_way, available: core.len() });
    }
    let names: Vec<&String> = core.keys().collect();
    let mut categories: Vec<Category> = index::sample(rng, names.len(), spec.n_way)
        .into_iter()
        .map(|i| Category { name: names[i].clone(), role: Role::Core })
        .collect();
    for (on, name, role) in [
        (spec.include_unknown, UNKNOWN_CATEGORY, Role::Unknown),
        (spec.include_silence, SILENCE_CATEGORY, Role::Silence),
    ] {
        if on {
            let at = rng.gen_range(0..=categories.len());
            categories.insert(at, Category { name: name.into(), role });
        }
    }

    let no_items = Vec::new();
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (label, cat) in categories.iter().enumerate() {
        let items = match cat.role {
            Role::Core => &core[&cat.name],
            Role::Unknown => pool.unknown.get(&spec.phase).unwrap_or(&no_items),
            Role::Silence => pool.silence.get(&spec.phase).unwrap_or(&no_items),
        };
        let (s, q) = draw(rng, items, spec, &cat.name)?;
        support.extend(s.into_iter().map(|item| Labeled { item, label }));
        query.extend(q.into_iter().map(|item| Labeled { item, label }));
    }
    Ok(Episode { categories, support, query })
}

/// Loads audio and computes frame-major MFCC features for manifest episodes.
#[derive(Debug)]
pub struct EpisodeLoader<'a> {
    manifest: &'a Manifest,
    mfcc: Mfcc,
    backgrounds: OnceLock<Result<Vec<BackgroundTrack>, String>>,
}

impl<'a> EpisodeLoader<'a> {
    pub fn new(manifest: &'a Manifest, features: FeatureConfig) -> Result<Self, DatasetError> {
        Ok(Self { manifest, mfcc: Mfcc::new(features)?, backgrounds: OnceLock::new() })
    }

    pub fn mfcc(&self) -> &Mfcc {
        &self.mfcc
    }

    fn backgrounds(&self) -> Result<&[BackgroundTrack], DatasetError> {
        let loaded = self.backgrounds.get_or_init(|| {
            let dir = self.manifest.background_dir();
            let mut paths: Vec<_> = std::fs::read_dir(&dir)
                .map_err(|e| format!("{}: {e}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            paths.sort();
            let tracks = paths.iter().map(|p| wav::load_track(p).map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>()?;
            if tracks.is_empty() {
                return Err(format!("no background tracks in {}", dir.display()));
            }
            Ok(tracks)
        });
        loaded.as_deref().map_err(|e| DatasetError::MissingBackgroundFolder(e.into()))
    }

    fn features(&self, entry: usize, mix: Option<(&mut ChaCha8Rng, &EpisodeSpec)>) -> Result<FeatureMatrix, DatasetError> {
        let e = &self.manifest.entries[entry];
        let mut clip = wav::load_clip(&self.manifest.resolve(e))?.truncated_to_one_second();
        if let Some((rng, spec)) = mix {
            if e.role != Role::Silence && rng.gen_bool(spec.mix_probability) {
                let tracks = self.backgrounds()?;
                let track = &tracks[rng.gen_range(0..tracks.len())];
                let snippet = random_snippet(track, rng)?;
                let volume = rng.gen::<f32>() * spec.background_volume;
                clip = mix_background(&clip, &snippet, volume)?;
            }
        }
        Ok(self.mfcc.compute(&clip)?)
    }
}

/// Replaces entry indices by features, mixing background into non-silence
/// clips when the spec asks for it.
pub fn load_episode(
    loader: &EpisodeLoader<'_>,
    episode: &Episode<usize>,
    spec: &EpisodeSpec,
    mix_rng: &mut ChaCha8Rng,
) -> Result<Episode<FeatureMatrix>, DatasetError> {
    let mut load = |items: &[Labeled<usize>], mix: bool| {
        items
            .iter()
            .map(|l| {
                let mix = (spec.background && mix).then_some((&mut *mix_rng, spec));
                Ok(Labeled { item: loader.features(l.item, mix)?, label: l.label })
            })
            .collect::<Result<Vec<_>, DatasetError>>()
    };
    let support = load(&episode.support, spec.mix_support)?;
    let query = load(&episode.query, true)?;
    Ok(Episode { categories: episode.categories.clone(), support, query })
}

/// Anything that can produce loaded episodes for training and evaluation.
pub trait EpisodeSource {
    /// Draws an episode with `sample_rng` and loads it, using `mix_rng` for any
    /// background mixing. Features are frame-major.
    fn episode(
        &self,
        spec: &EpisodeSpec,
        sample_rng: &mut ChaCha8Rng,
        mix_rng: &mut ChaCha8Rng,
    ) -> Result<Episode<FeatureMatrix>, DatasetError>;
}

/// Episodes drawn from a synthesized manifest.
#[derive(Debug)]
pub struct ManifestSource<'a> {
    pub pool: EpisodePool,
    pub loader: EpisodeLoader<'a>,
}

impl<'a> ManifestSource<'a> {
    pub fn new(manifest: &'a Manifest, features: FeatureConfig) -> Result<Self, DatasetError> {
        Ok(Self { pool: EpisodePool::new(manifest), loader: EpisodeLoader::new(manifest, features)? })
    }
}

impl EpisodeSource for ManifestSource<'_> {
    fn episode(
        &self,
        spec: &EpisodeSpec,
        sample_rng: &mut ChaCha8Rng,
        mix_rng: &mut ChaCha8Rng,
    ) -> Result<Episode<FeatureMatrix>, DatasetError> {
        let ep = sample_episode(&self.pool, spec, sample_rng)?;
        load_episode(&self.loader, &ep, spec, mix_rng)
    }
}
