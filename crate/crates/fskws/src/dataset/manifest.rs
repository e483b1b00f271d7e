use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{SynthConfig, BACKGROUND_DIR};
use super::{DatasetError, Phase, Role};

pub const MANIFEST_FORMAT: &str = "fskws-manifest/1";

/// First line of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub tool_version: String,
    pub synthesis_seed: u64,
    pub source_dataset_version: String,
    /// Absolute path of the Speech Commands root the keyword entries live in.
    pub source_root: String,
    pub config: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the source root, or to the manifest's folder for silence clips.
    pub path: String,
    pub keyword: String,
    pub role: Role,
    pub phase: Phase,
    pub speaker_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    /// Folder holding the manifest file (and the generated silence clips).
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(DatasetError::io(path))?;
        let bad = |line: usize, detail: String| DatasetError::Manifest { path: path.to_path_buf(), line, detail };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| bad(1, "empty manifest".into()))?;
        let header: ManifestHeader = serde_json::from_str(first).map_err(|e| bad(1, e.to_string()))?;
        if header.format != MANIFEST_FORMAT {
            return Err(bad(1, format!("unsupported format {:?}", header.format)));
        }
        let entries = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 1, e.to_string())))
            .collect::<Result<Vec<ManifestEntry>, _>>()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self { header, entries, base_dir };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out += &serde_json::to_string(e).expect("entry serializes");
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_jsonl()).map_err(DatasetError::io(path))
    }

    /// Absolute location of an entry's audio file.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        match entry.role {
            Role::Silence => self.base_dir.join(&entry.path),
            _ => Path::new(&self.header.source_root).join(&entry.path),
        }
    }

    pub fn background_dir(&self) -> PathBuf {
        Path::new(&self.header.source_root).join(BACKGROUND_DIR)
    }

    /// Entry counts per `(keyword, phase)`.
    pub fn counts(&self) -> BTreeMap<(&str, Phase), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.keyword.as_str(), e.phase)).or_default() += 1;
        }
        out
    }

    /// Sorted keywords with the given role.
    pub fn keywords(&self, role: Role) -> Vec<&str> {
        let set: BTreeSet<&str> = self.entries.iter().filter(|e| e.role == role).map(|e| e.keyword.as_str()).collect();
        set.into_iter().collect()
    }

    /// Checks phase disjointness of core keywords, balanced per-keyword counts,
    /// speaker uniqueness within keywords and that unknown keywords cover every phase.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut phases: BTreeMap<&str, BTreeSet<Phase>> = BTreeMap::new();
        let mut speakers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut per_keyword: BTreeMap<&str, (Role, usize)> = BTreeMap::new();
        let mut paths = BTreeSet::new();
        for e in &self.entries {
            if !paths.insert(e.path.as_str()) {
                return Err(DatasetError::Invariant(format!("{} listed twice", e.path)));
            }
            let slot = per_keyword.entry(&e.keyword).or_insert((e.role, 0));
            if slot.0 != e.role {
                return Err(DatasetError::Invariant(format!("keyword {:?} has mixed roles", e.keyword)));
            }
            slot.1 += 1;
            phases.entry(&e.keyword).or_default().insert(e.phase);
            if e.role != Role::Silence && !speakers.entry(&e.keyword).or_default().insert(&e.speaker_id) {
                return Err(DatasetError::Invariant(format!(
                    "speaker {} appears twice for keyword {:?}",
                    e.speaker_id, e.keyword
                )));
            }
        }
        for role in [Role::Core, Role::Unknown] {
            let counts: BTreeSet<usize> = per_keyword.values().filter(|(r, _)| *r == role).map(|(_, n)| *n).collect();
            if counts.len() > 1 {
                return Err(DatasetError::Invariant(format!("{role:?} keywords are unbalanced: {counts:?}")));
            }
        }
        for (keyword, (role, _)) in &per_keyword {
            let n = phases[keyword].len();
            match role {
                Role::Core if n != 1 => {
                    return Err(DatasetError::Invariant(format!("core keyword {keyword:?} spans {n} phases")));
                }
                Role::Unknown if n != 3 => {
                    return Err(DatasetError::Invariant(format!("unknown keyword {keyword:?} misses a phase")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
