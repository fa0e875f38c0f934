//! Manifest building over the `root/<object>/{mobil,gt}/NNNN.ppm` layout.
//!
//! Split assignment is a pure function of (directory contents, seed): every
//! file stem of an object is ranked by a stable seeded hash, and the ranked
//! list is cut at floor(n * ratio) boundaries. Both roles of the same stem
//! share one assignment, so pairs never straddle a split.

use super::{DatasetError, ObjectEntry};
use crate::config::derive_seed;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Mobil,
    GroundTruth,
}

impl Role {
    pub fn dir_name(self) -> &'static str {
        match self {
            Role::Mobil => "mobil",
            Role::GroundTruth => "gt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub object: String,
    pub split: Split,
    pub role: Role,
    pub path: PathBuf,
}

/// Non-fatal problems found while walking the layout.
#[derive(Debug, Clone)]
pub struct ManifestIssue {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self, role: Role, split: Split) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.role == role && e.split == split)
            .collect()
    }

    /// (mobil, gt) pairs: same object, same file stem, same split.
    pub fn pairs(&self, split: Split) -> Vec<(&ManifestEntry, &ManifestEntry)> {
        let mut gt: BTreeMap<(String, String), &ManifestEntry> = BTreeMap::new();
        for e in &self.entries {
            if e.role == Role::GroundTruth && e.split == split {
                gt.insert((e.object.clone(), stem_of(&e.path)), e);
            }
        }
        let mut out = Vec::new();
        for e in &self.entries {
            if e.role == Role::Mobil && e.split == split {
                if let Some(g) = gt.get(&(e.object.clone(), stem_of(&e.path))) {
                    out.push((e, *g));
                }
            }
        }
        out
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("ppm") | Some("pgm")
    )
}

fn list_images(dir: &Path, issues: &mut Vec<ManifestIssue>) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let rd = match std::fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) => {
            issues.push(ManifestIssue {
                path: dir.to_path_buf(),
                message: e.to_string(),
            });
            return files;
        }
    };
    for entry in rd {
        match entry {
            Ok(de) => {
                let p = de.path();
                if p.is_file() && is_image_file(&p) {
                    // NIR siblings are channels of their base image, not
                    // standalone entries.
                    if !stem_of(&p).ends_with("_nir") {
                        files.push(p);
                    }
                }
            }
            Err(e) => issues.push(ManifestIssue {
                path: dir.to_path_buf(),
                message: e.to_string(),
            }),
        }
    }
    files.sort();
    files
}

/// Rank the object's stems by seeded hash and cut at floor(n * ratio).
fn assign_splits(
    object: &str,
    stems: &[String],
    seed: u64,
    ratios: SplitRatios,
) -> BTreeMap<String, Split> {
    let mut ranked: Vec<(u64, &String)> = stems
        .iter()
        .map(|s| (derive_seed(seed, &format!("split/{object}/{s}")), s))
        .collect();
    ranked.sort();
    let n = ranked.len();
    let n_train = (n as f64 * ratios.train).floor() as usize;
    let n_val = (n as f64 * ratios.val).floor() as usize;
    let mut out = BTreeMap::new();
    for (i, (_, stem)) in ranked.into_iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        out.insert(stem.clone(), split);
    }
    out
}

/// Walk the layout and produce a deterministic manifest (entries ordered
/// lexicographically by path) plus per-file issues. An empty or missing
/// root yields an empty manifest. Objects flagged unpaired in the catalog
/// contribute no ground-truth entries.
pub fn build_manifest(
    root: &Path,
    catalog: &[ObjectEntry],
    seed: u64,
    ratios: SplitRatios,
) -> Result<(Manifest, Vec<ManifestIssue>), DatasetError> {
    let mut issues = Vec::new();
    let mut entries = Vec::new();
    if !root.exists() {
        return Ok((Manifest::default(), issues));
    }
    let mut objects: Vec<PathBuf> = Vec::new();
    let rd = std::fs::read_dir(root).map_err(|e| DatasetError::Io {
        path: root.to_path_buf(),
        message: e.to_string(),
    })?;
    for entry in rd.flatten() {
        let p = entry.path();
        if p.is_dir() {
            objects.push(p);
        }
    }
    objects.sort();

    for obj_dir in objects {
        let object = obj_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let paired = catalog
            .iter()
            .find(|e| e.name == object)
            .map(|e| e.paired)
            .unwrap_or(true);

        let mobil = list_images(&obj_dir.join(Role::Mobil.dir_name()), &mut issues);
        let gt = if paired {
            list_images(&obj_dir.join(Role::GroundTruth.dir_name()), &mut issues)
        } else {
            Vec::new()
        };

        // One split decision per stem, shared by both roles.
        let mut stems: Vec<String> = mobil.iter().chain(gt.iter()).map(|p| stem_of(p)).collect();
        stems.sort();
        stems.dedup();
        let assignment = assign_splits(&object, &stems, seed, ratios);

        for (role, files) in [(Role::Mobil, &mobil), (Role::GroundTruth, &gt)] {
            for path in files {
                entries.push(ManifestEntry {
                    object: object.clone(),
                    split: assignment[&stem_of(path)],
                    role,
                    path: path.clone(),
                });
            }
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok((Manifest { entries }, issues))
}
