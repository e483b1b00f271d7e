use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fskws_core::audio::{random_snippet, CLIP_LEN};
use fskws_core::rng::{sub_stream_rng, Stream};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestEntry, ManifestHeader, MANIFEST_FORMAT};
use super::{DatasetError, Phase, Role};
use crate::wav;

pub const BACKGROUND_DIR: &str = "_background_noise_";
pub const SILENCE_DIR: &str = "_silence_";

/// Published core keywords with their speaker counts.
pub const REFERENCE_CORE: [(&str, usize); 30] = [
    ("down", 1465),
    ("zero", 1450),
    ("seven", 1450),
    ("nine", 1443),
    ("five", 1442),
    ("yes", 1422),
    ("four", 1421),
    ("left", 1416),
    ("stop", 1413),
    ("six", 1411),
    ("right", 1409),
    ("on", 1403),
    ("three", 1401),
    ("off", 1387),
    ("dog", 1385),
    ("marvin", 1378),
    ("one", 1376),
    ("go", 1372),
    ("no", 1368),
    ("two", 1367),
    ("eight", 1358),
    ("house", 1357),
    ("wow", 1336),
    ("happy", 1332),
    ("bird", 1315),
    ("cat", 1300),
    ("up", 1291),
    ("sheila", 1291),
    ("bed", 1257),
    ("tree", 1062),
];

/// Published unknown keywords with their speaker counts.
pub const REFERENCE_UNKNOWN: [(&str, usize); 5] =
    [("visual", 412), ("forward", 397), ("backward", 396), ("follow", 387), ("learn", 386)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Keywords with more distinct speakers than this are core keywords.
    pub core_speaker_threshold: usize,
    /// Samples kept per core keyword; defaults to the smallest core speaker count.
    pub core_quota: Option<usize>,
    /// Samples kept per unknown keyword; defaults to the smallest unknown speaker count.
    pub unknown_quota: Option<usize>,
    /// TRAIN/VAL/TEST weights for core keywords.
    pub core_split: [usize; 3],
    /// TRAIN/VAL/TEST weights for the samples of each unknown keyword.
    pub unknown_split: [usize; 3],
    pub silence_clips: usize,
    pub silence_split: [usize; 3],
    pub silence_max_volume: f32,
    /// Use the published core/unknown lists when the inventory has exactly those keywords.
    pub use_reference_lists: bool,
    pub source_version: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            core_speaker_threshold: 1000,
            core_quota: None,
            unknown_quota: None,
            core_split: [20, 5, 5],
            unknown_split: [60, 20, 20],
            silence_clips: 1000,
            silence_split: [60, 20, 20],
            silence_max_volume: 0.1,
            use_reference_lists: true,
            source_version: "speech_commands_v0.02".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub keyword: String,
    pub speaker_id: String,
    /// Path relative to the dataset root, `/`-separated.
    pub rel_path: String,
    pub n_samples: usize,
}

#[derive(Debug, Clone)]
pub struct Inventory {
    pub root: PathBuf,
    /// Sorted by keyword, then file name.
    pub utterances: Vec<Utterance>,
    pub background: Vec<PathBuf>,
    pub unreadable: Vec<PathBuf>,
    pub filtered_short: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordStats {
    pub keyword: String,
    pub role: Role,
    pub speakers: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub mean_utterances: f64,
}

#[derive(Debug, Clone)]
pub struct Grouped {
    pub inventory: Inventory,
    pub roles: BTreeMap<String, Role>,
    pub stats: Vec<KeywordStats>,
    pub reference_lists_applied: bool,
}

#[derive(Debug, Clone)]
pub struct Balanced {
    /// Selected utterances per keyword, one per speaker, in file-name order.
    pub keywords: BTreeMap<String, (Role, Vec<Utterance>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub synthesis_seed: u64,
    pub config: SynthConfig,
    pub keywords: Vec<KeywordStats>,
    pub reference_lists_applied: bool,
    pub filtered_files: usize,
    pub unreadable_files: usize,
    pub silence_clips: usize,
    pub core_keywords: usize,
    pub unknown_keywords: usize,
    pub manifest_entries: usize,
}

impl SynthesisReport {
    /// Per-keyword statistics as an aligned text table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:<8} {:>8} {:>5} {:>5} {:>6}\n", "keyword", "role", "speakers", "min", "max", "mean");
        for k in &self.keywords {
            out += &format!(
                "{:<10} {:<8} {:>8} {:>5} {:>5} {:>6.2}\n",
                k.keyword,
                format!("{:?}", k.role).to_lowercase(),
                k.speakers,
                k.min_utterances,
                k.max_utterances,
                k.mean_utterances
            );
        }
        out += &format!(
            "{} core, {} unknown keywords; {} short files filtered, {} unreadable; {} silence clips; {} entries\n",
            self.core_keywords,
            self.unknown_keywords,
            self.filtered_files,
            self.unreadable_files,
            self.silence_clips,
            self.manifest_entries
        );
        out
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: Manifest,
    pub report: SynthesisReport,
    pub manifest_path: PathBuf,
    pub report_path: PathBuf,
}

fn speaker_of(file_name: &str) -> &str {
    match file_name.find("_nohash_") {
        Some(i) => &file_name[..i],
        None => file_name.strip_suffix(".wav").unwrap_or(file_name),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>, DatasetError> {
    let mut entries = fs::read_dir(dir)
        .map_err(DatasetError::io(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(DatasetError::io(dir))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Inventories a Speech Commands root: one folder per keyword plus the
/// background-noise folder. Unreadable WAV files are logged and skipped.
pub fn scan_speech_commands(root: &Path) -> Result<Inventory, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::NotADirectory(root.to_path_buf()));
    }
    let bg_dir = root.join(BACKGROUND_DIR);
    if !bg_dir.is_dir() {
        return Err(DatasetError::MissingBackgroundFolder(bg_dir));
    }
    let background: Vec<PathBuf> =
        sorted_entries(&bg_dir)?.into_iter().map(|e| e.path()).filter(|p| is_wav(p)).collect();
    if background.is_empty() {
        return Err(DatasetError::MissingBackgroundFolder(bg_dir));
    }

    let mut utterances = Vec::new();
    let mut unreadable = Vec::new();
    for dir in sorted_entries(root)? {
        let name = dir.file_name().to_string_lossy().into_owned();
        if name.starts_with('_') || name.starts_with('.') || !dir.path().is_dir() {
            continue;
        }
        let mut found = 0;
        for file in sorted_entries(&dir.path())? {
            let path = file.path();
            if !is_wav(&path) {
                continue;
            }
            found += 1;
            let file_name = file.file_name().to_string_lossy().into_owned();
            match wav::probe_len(&path) {
                Ok(n_samples) => utterances.push(Utterance {
                    keyword: name.clone(),
                    speaker_id: speaker_of(&file_name).to_string(),
                    rel_path: format!("{name}/{file_name}"),
                    n_samples,
                }),
                Err(e) => {
                    log::warn!("skipping {e}");
                    unreadable.push(path);
                }
            }
        }
        if found == 0 {
            return Err(DatasetError::EmptyKeywordFolder(dir.path()));
        }
    }
    Ok(Inventory { root: root.to_path_buf(), utterances, background, unreadable, filtered_short: 0 })
}

/// Drops utterances shorter than one second.
pub fn filter_short(mut inventory: Inventory) -> Inventory {
    let before = inventory.utterances.len();
    inventory.utterances.retain(|u| u.n_samples >= CLIP_LEN);
    inventory.filtered_short += before - inventory.utterances.len();
    inventory
}

fn keyword_stats(inventory: &Inventory) -> BTreeMap<String, (usize, usize, usize, f64)> {
    let mut per: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for u in &inventory.utterances {
        *per.entry(&u.keyword).or_default().entry(&u.speaker_id).or_default() += 1;
    }
    per.into_iter()
        .map(|(k, speakers)| {
            let counts: Vec<usize> = speakers.values().copied().collect();
            let total: usize = counts.iter().sum();
            let stats = (
                counts.len(),
                counts.iter().copied().min().unwrap_or(0),
                counts.iter().copied().max().unwrap_or(0),
                total as f64 / counts.len().max(1) as f64,
            );
            (k.to_string(), stats)
        })
        .collect()
}

/// Splits keywords into core (more than the threshold of distinct speakers)
/// and unknown. When the inventory holds exactly the published keywords and the
/// threshold disagrees with the published lists, the published lists win.
pub fn group_core_unknown(inventory: Inventory, cfg: &SynthConfig) -> Grouped {
    let raw = keyword_stats(&inventory);
    let mut roles: BTreeMap<String, Role> = raw
        .iter()
        .map(|(k, s)| (k.clone(), if s.0 > cfg.core_speaker_threshold { Role::Core } else { Role::Unknown }))
        .collect();

    let reference: BTreeMap<String, Role> = REFERENCE_CORE
        .iter()
        .map(|(k, _)| (k.to_string(), Role::Core))
        .chain(REFERENCE_UNKNOWN.iter().map(|(k, _)| (k.to_string(), Role::Unknown)))
        .collect();
    let same_keywords = roles.keys().eq(reference.keys());
    let mut reference_lists_applied = false;
    if cfg.use_reference_lists && same_keywords {
        if roles != reference {
            let moved: Vec<&String> = roles.iter().filter(|(k, r)| reference[*k] != **r).map(|(k, _)| k).collect();
            log::warn!("speaker-count grouping disagrees with the published lists for {moved:?}; using the published lists");
        }
        roles = reference;
        reference_lists_applied = true;
    }
    let stats = raw
        .into_iter()
        .map(|(keyword, (speakers, min_utterances, max_utterances, mean_utterances))| KeywordStats {
            role: roles[&keyword],
            keyword,
            speakers,
            min_utterances,
            max_utterances,
            mean_utterances,
        })
        .collect();
    Grouped { inventory, roles, stats, reference_lists_applied }
}

/// One utterance per speaker (smallest file name), then a seeded uniform
/// subsample of speakers down to the group quota.
pub fn balance(grouped: &Grouped, cfg: &SynthConfig, seed: u64) -> Result<Balanced, DatasetError> {
    let mut per: BTreeMap<&str, BTreeMap<&str, &Utterance>> = BTreeMap::new();
    for u in &grouped.inventory.utterances {
        let first = per.entry(&u.keyword).or_default().entry(&u.speaker_id).or_insert(u);
        if u.rel_path < first.rel_path {
            *first = u;
        }
    }
    let min_speakers = |role| {
        per.iter().filter(|(k, _)| grouped.roles[**k] == role).map(|(_, s)| s.len()).min().unwrap_or(0)
    };
    let core_quota = cfg.core_quota.unwrap_or_else(|| min_speakers(Role::Core));
    let unknown_quota = cfg.unknown_quota.unwrap_or_else(|| min_speakers(Role::Unknown));

    let mut keywords = BTreeMap::new();
    for (i, (keyword, speakers)) in per.into_iter().enumerate() {
        let role = grouped.roles[keyword];
        let quota = if role == Role::Core { core_quota } else { unknown_quota };
        if speakers.len() < quota {
            return Err(DatasetError::QuotaUnreachable { keyword: keyword.into(), speakers: speakers.len(), quota });
        }
        let mut chosen: Vec<&Utterance> = speakers.into_values().collect();
        chosen.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        let mut rng = sub_stream_rng(seed, Stream::Dataset, 1000 + i as u64);
        let mut picks = index::sample(&mut rng, chosen.len(), quota).into_vec();
        picks.sort_unstable();
        let selected = picks.into_iter().map(|j| chosen[j].clone()).collect();
        keywords.insert(keyword.to_string(), (role, selected));
    }
    Ok(Balanced { keywords })
}

/// Partitions `total` items by integer weights, handing leftovers to the
/// largest remainders (earlier phases first on ties).
pub fn largest_remainder(total: usize, weights: [usize; 3]) -> [usize; 3] {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return [total, 0, 0];
    }
    let mut out = weights.map(|w| total * w / sum);
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(total * weights[i] % sum));
    for i in order {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

fn phase_of(position: usize, counts: [usize; 3]) -> Phase {
    if position < counts[0] {
        Phase::Train
    } else if position < counts[0] + counts[1] {
        Phase::Val
    } else {
        Phase::Test
    }
}

/// Shuffles the core keywords and assigns whole keywords to phases.
pub fn split_core(balanced: &Balanced, cfg: &SynthConfig, seed: u64) -> BTreeMap<String, Phase> {
    let mut core: Vec<&String> =
        balanced.keywords.iter().filter(|(_, (r, _))| *r == Role::Core).map(|(k, _)| k).collect();
    let counts = largest_remainder(core.len(), cfg.core_split);
    core.shuffle(&mut sub_stream_rng(seed, Stream::Dataset, 1));
    core.into_iter().enumerate().map(|(i, k)| (k.clone(), phase_of(i, counts))).collect()
}

/// Per unknown keyword, shuffles its samples and assigns each to a phase.
/// The returned phases align with the keyword's utterance list.
pub fn split_unknown(balanced: &Balanced, cfg: &SynthConfig, seed: u64) -> BTreeMap<String, Vec<Phase>> {
    let mut out = BTreeMap::new();
    for (i, (keyword, (role, utts))) in balanced.keywords.iter().enumerate() {
        if *role != Role::Unknown {
            continue;
        }
        let counts = largest_remainder(utts.len(), cfg.unknown_split);
        let mut order: Vec<usize> = (0..utts.len()).collect();
        order.shuffle(&mut sub_stream_rng(seed, Stream::Dataset, 2000 + i as u64));
        let mut phases = vec![Phase::Train; utts.len()];
        for (pos, &j) in order.iter().enumerate() {
            phases[j] = phase_of(pos, counts);
        }
        out.insert(keyword.clone(), phases);
    }
    out
}

/// Cuts random one-second sections out of the background tracks, scales each
/// by a volume drawn from `[0, silence_max_volume]` and writes them under
/// `out_dir/_silence_/`.
pub fn build_silence(
    background: &[PathBuf],
    out_dir: &Path,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    if background.is_empty() {
        return Err(DatasetError::MissingBackgroundFolder(out_dir.join(BACKGROUND_DIR)));
    }
    let tracks = background.iter().map(|p| wav::load_track(p)).collect::<Result<Vec<_>, _>>()?;
    let dir = out_dir.join(SILENCE_DIR);
    fs::create_dir_all(&dir).map_err(DatasetError::io(&dir))?;
    let counts = largest_remainder(cfg.silence_clips, cfg.silence_split);
    let mut rng = sub_stream_rng(seed, Stream::Dataset, 3);
    let mut entries = Vec::with_capacity(cfg.silence_clips);
    for i in 0..cfg.silence_clips {
        let track = &tracks[rng.gen_range(0..tracks.len())];
        let snippet = random_snippet(track, &mut rng)?;
        let volume = rng.gen::<f32>() * cfg.silence_max_volume;
        let name = format!("silence_{i:04}.wav");
        wav::write_clip(&dir.join(&name), &snippet.scaled(volume))?;
        entries.push(ManifestEntry {
            path: format!("{SILENCE_DIR}/{name}"),
            keyword: SILENCE_DIR.into(),
            role: Role::Silence,
            phase: phase_of(i, counts),
            speaker_id: format!("silence_{i:04}"),
        });
    }
    Ok(entries)
}

/// Runs scan, filter, grouping, balancing, splitting and silence generation,
/// then writes `manifest.jsonl` and `report.json` into `out_dir`.
pub fn synthesize_manifest(root: &Path, out_dir: &Path, seed: u64, cfg: &SynthConfig) -> Result<SynthOutput, DatasetError> {
    let inventory = scan_speech_commands(root)?;
    let inventory = filter_short(inventory);
    let grouped = group_core_unknown(inventory, cfg);
    let balanced = balance(&grouped, cfg, seed)?;
    let core_phase = split_core(&balanced, cfg, seed);
    let unknown_phase = split_unknown(&balanced, cfg, seed);

    fs::create_dir_all(out_dir).map_err(DatasetError::io(out_dir))?;
    let mut entries = Vec::new();
    for (keyword, (role, utts)) in &balanced.keywords {
        for (j, u) in utts.iter().enumerate() {
            let phase = match role {
                Role::Core => core_phase[keyword],
                _ => unknown_phase[keyword][j],
            };
            entries.push(ManifestEntry {
                path: u.rel_path.clone(),
                keyword: keyword.clone(),
                role: *role,
                phase,
                speaker_id: u.speaker_id.clone(),
            });
        }
    }
    entries.extend(build_silence(&grouped.inventory.background, out_dir, cfg, seed)?);

    let source_root = fs::canonicalize(root).map_err(DatasetError::io(root))?;
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        synthesis_seed: seed,
        source_dataset_version: cfg.source_version.clone(),
        source_root: source_root.display().to_string(),
        config: cfg.clone(),
    };
    let base_dir = fs::canonicalize(out_dir).map_err(DatasetError::io(out_dir))?;
    let manifest = Manifest { header, entries, base_dir };
    manifest.validate()?;

    let count_role = |role| balanced.keywords.values().filter(|(r, _)| *r == role).count();
    let report = SynthesisReport {
        synthesis_seed: seed,
        config: cfg.clone(),
        keywords: grouped.stats.clone(),
        reference_lists_applied: grouped.reference_lists_applied,
        filtered_files: grouped.inventory.filtered_short,
        unreadable_files: grouped.inventory.unreadable.len(),
        silence_clips: cfg.silence_clips,
        core_keywords: count_role(Role::Core),
        unknown_keywords: count_role(Role::Unknown),
        manifest_entries: manifest.entries.len(),
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(DatasetError::io(&report_path))?;
    Ok(SynthOutput { manifest, report, manifest_path, report_path })
}
