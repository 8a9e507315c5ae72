//! Dataset directory layout.
//!
//! ```text
//! <root>/<split>/left/<id>.png
//! <root>/<split>/right/<id>.png
//! <root>/<split>/disp/<id>.pfm
//! <root>/<split>/mask/<id>.png      (optional, nonzero = valid)
//! <root>/<split>/subsets.json       (optional, {id: label})
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const LEFT_DIR: &str = "left";
pub const RIGHT_DIR: &str = "right";
pub const DISP_DIR: &str = "disp";
pub const MASK_DIR: &str = "mask";
pub const SUBSETS_FILE: &str = "subsets.json";

/// Label assigned to entries that `subsets.json` does not mention.
pub const DEFAULT_SUBSET: &str = "normal";

pub const KNOWN_SUBSETS: &[&str] = &[
    "rainy",
    "sunny",
    "foggy",
    "cloudy",
    "snow",
    "snowy",
    "dense_fog",
    "light_fog",
    "normal",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub left: PathBuf,
    pub right: PathBuf,
    pub disparity: PathBuf,
    pub mask: Option<PathBuf>,
    pub subset: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: String,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join(&self.split)
    }

    pub fn get(&self, id: &str) -> Option<&DatasetEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

fn ids_with_extension(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    if !dir.exists() {
        return Ok(ids);
    }
    for item in fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))? {
        let path = item.map_err(|e| CoreError::io(dir, e))?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            // temporaries of an interrupted atomic write
            if !stem.starts_with('.') {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

pub fn read_subsets(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Scans `<root>/<split>` and returns entries sorted by id.
///
/// Missing subdirectories count as empty. Any id not present in all of
/// `left`, `right` and `disp` is an error.
pub fn load_manifest(root: impl AsRef<Path>, split: &str) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let dir = root.join(split);
    if !dir.is_dir() {
        return Err(CoreError::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "split directory not found"),
        ));
    }
    let left = ids_with_extension(&dir.join(LEFT_DIR), "png")?;
    let right = ids_with_extension(&dir.join(RIGHT_DIR), "png")?;
    let disp = ids_with_extension(&dir.join(DISP_DIR), "pfm")?;

    let all: BTreeSet<&String> = left.iter().chain(&right).chain(&disp).collect();
    let incomplete: Vec<String> = all
        .into_iter()
        .filter(|id| !(left.contains(*id) && right.contains(*id) && disp.contains(*id)))
        .cloned()
        .collect();
    if !incomplete.is_empty() {
        return Err(CoreError::Manifest {
            root: dir,
            ids: incomplete,
        });
    }

    let subsets_path = dir.join(SUBSETS_FILE);
    let subsets = if subsets_path.is_file() {
        read_subsets(&subsets_path)?
    } else {
        BTreeMap::new()
    };
    if let Some((id, label)) = subsets
        .iter()
        .find(|(_, l)| !KNOWN_SUBSETS.contains(&l.as_str()))
    {
        return Err(CoreError::Validation(format!(
            "subset label {label:?} for {id} is not one of {KNOWN_SUBSETS:?}"
        )));
    }

    let entries = left
        .into_iter()
        .map(|id| {
            let mask = dir.join(MASK_DIR).join(format!("{id}.png"));
            DatasetEntry {
                left: dir.join(LEFT_DIR).join(format!("{id}.png")),
                right: dir.join(RIGHT_DIR).join(format!("{id}.png")),
                disparity: dir.join(DISP_DIR).join(format!("{id}.pfm")),
                mask: mask.is_file().then_some(mask),
                subset: subsets
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| DEFAULT_SUBSET.to_string()),
                id,
            }
        })
        .collect();
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        split: split.to_string(),
        entries,
    })
}

/// Encoded files of one dataset entry, ready to be written.
#[derive(Debug, Clone)]
pub struct EntryFiles {
    pub id: String,
    pub left_png: Vec<u8>,
    pub right_png: Vec<u8>,
    pub disparity_pfm: Vec<u8>,
    pub mask_png: Option<Vec<u8>>,
}

/// Writes entries into `<root>/<split>` so that an entry is either fully present or absent.
#[derive(Debug, Clone)]
pub struct SplitWriter {
    dir: PathBuf,
}

impl SplitWriter {
    pub fn create(root: impl AsRef<Path>, split: &str) -> Result<Self> {
        let dir = root.as_ref().join(split);
        for sub in [LEFT_DIR, RIGHT_DIR, DISP_DIR] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| CoreError::io(&p, e))?;
        }
        Ok(SplitWriter { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes every file under a temporary name first and renames once all writes succeeded.
    pub fn write_entry(&self, files: &EntryFiles) -> Result<()> {
        let id = &files.id;
        let mut plan: Vec<(PathBuf, &[u8])> = vec![
            (self.dir.join(LEFT_DIR).join(format!("{id}.png")), &files.left_png),
            (self.dir.join(RIGHT_DIR).join(format!("{id}.png")), &files.right_png),
            (self.dir.join(DISP_DIR).join(format!("{id}.pfm")), &files.disparity_pfm),
        ];
        if let Some(mask) = &files.mask_png {
            let mask_dir = self.dir.join(MASK_DIR);
            fs::create_dir_all(&mask_dir).map_err(|e| CoreError::io(&mask_dir, e))?;
            plan.push((mask_dir.join(format!("{id}.png")), mask));
        }

        let mut temps = Vec::with_capacity(plan.len());
        for (target, bytes) in &plan {
            let name = target.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let tmp = target.with_file_name(format!(".{name}.tmp"));
            if let Err(e) = fs::write(&tmp, bytes) {
                for t in &temps {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(CoreError::io(&tmp, e));
            }
            temps.push(tmp);
        }
        for (tmp, (target, _)) in temps.iter().zip(&plan) {
            fs::rename(tmp, target).map_err(|e| CoreError::io(target, e))?;
        }
        Ok(())
    }

    pub fn write_subsets(&self, subsets: &BTreeMap<String, String>) -> Result<()> {
        let path = self.dir.join(SUBSETS_FILE);
        let text = serde_json::to_string_pretty(subsets).map_err(|e| CoreError::Json {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        fs::write(&path, text + "\n").map_err(|e| CoreError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(path: PathBuf) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, b"").unwrap();
    }

    #[test]
    fn empty_directories_give_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for sub in [LEFT_DIR, RIGHT_DIR, DISP_DIR] {
            fs::create_dir_all(dir.path().join("train").join(sub)).unwrap();
        }
        let m = load_manifest(dir.path(), "train").unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn incomplete_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let split = dir.path().join("val");
        for id in ["a", "b", "c"] {
            touch(split.join(LEFT_DIR).join(format!("{id}.png")));
            touch(split.join(RIGHT_DIR).join(format!("{id}.png")));
            touch(split.join(DISP_DIR).join(format!("{id}.pfm")));
        }
        touch(split.join(LEFT_DIR).join("d.png"));
        touch(split.join(DISP_DIR).join("d.pfm"));
        match load_manifest(dir.path(), "val") {
            Err(CoreError::Manifest { ids, .. }) => assert_eq!(ids, vec!["d".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entries_sorted_and_labeled() {
        let dir = tempfile::tempdir().unwrap();
        let split = dir.path().join("s");
        for id in ["z9", "a1", "m5"] {
            touch(split.join(LEFT_DIR).join(format!("{id}.png")));
            touch(split.join(RIGHT_DIR).join(format!("{id}.png")));
            touch(split.join(DISP_DIR).join(format!("{id}.pfm")));
        }
        touch(split.join(LEFT_DIR).join(".x.png.tmp"));
        fs::write(split.join(SUBSETS_FILE), r#"{"a1": "rainy"}"#).unwrap();
        let m = load_manifest(dir.path(), "s").unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a1", "m5", "z9"]);
        assert_eq!(m.entries[0].subset, "rainy");
        assert_eq!(m.entries[1].subset, DEFAULT_SUBSET);
        assert_eq!(m, load_manifest(dir.path(), "s").unwrap());
    }

    #[test]
    fn unknown_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let split = dir.path().join("s");
        fs::create_dir_all(&split).unwrap();
        fs::write(split.join(SUBSETS_FILE), r#"{"a1": "volcanic"}"#).unwrap();
        assert!(matches!(
            load_manifest(dir.path(), "s"),
            Err(CoreError::Validation(_))
        ));
    }
}
