//! Corpus discovery over `<root>/<machine_type>/<train|test>/<file>.wav`
//! trees and the JSON manifest format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ClipRecord, Condition, DataSplit, LabelMap};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<ClipRecord>,
    /// Files that were skipped, one message each.
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn label_map(&self) -> LabelMap {
        LabelMap::from_records(self.records.iter().filter(|r| r.split == DataSplit::Train))
    }

    pub fn split(&self, split: DataSplit) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Parses `normal_id_02_00000042.wav`, `anomaly_id_00_00000005.wav` or the
/// unlabeled `id_01_00000003.wav`; returns the condition and machine id.
pub fn parse_filename(name: &str) -> Option<(Condition, u32)> {
    let stem = name.strip_suffix(".wav")?;
    let (condition, rest) = if let Some(r) = stem.strip_prefix("normal_") {
        (Condition::Normal, r)
    } else if let Some(r) = stem.strip_prefix("anomaly_") {
        (Condition::Anomaly, r)
    } else {
        (Condition::Unknown, stem)
    };
    let mut parts = rest.split('_');
    let (Some("id"), Some(id), Some(num), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return None;
    };
    let digits = |s: &str, n: usize| s.len() == n && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(id, 2) || !digits(num, 8) {
        return None;
    }
    Some((condition, id.parse().ok()?))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(e.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

pub fn scan_corpus(root: &Path) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for type_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let machine_type = type_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        for split_dir in sorted_entries(&type_dir)?.into_iter().filter(|p| p.is_dir()) {
            let split = match split_dir.file_name().and_then(|s| s.to_str()) {
                Some("train") => DataSplit::Train,
                Some("test") => DataSplit::Test,
                _ => {
                    warnings.push(format!("{}: not a train/test directory, skipped", split_dir.display()));
                    continue;
                }
            };
            for file in sorted_entries(&split_dir)? {
                let name = file.file_name().and_then(|s| s.to_str()).unwrap_or_default();
                match parse_filename(name) {
                    Some((condition, id)) => {
                        records.push(ClipRecord::new(file.clone(), &machine_type, id, condition, split)?);
                    }
                    None => warnings.push(format!("{}: unrecognized file name, skipped", file.display())),
                }
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if records.is_empty() {
        return Err(Error::Input(format!("no clips found under {}", root.display())));
    }
    records.sort();
    Ok(Corpus { records, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    machine_type: String,
    machine_id: u32,
    condition: Condition,
    split: DataSplit,
}

/// Writes records with paths relative to `root` where possible.
pub fn write_manifest(path: &Path, root: &Path, records: &[ClipRecord]) -> Result<()> {
    let entries: Vec<ManifestEntry> = records
        .iter()
        .map(|r| ManifestEntry {
            path: r.path.strip_prefix(root).unwrap_or(&r.path).to_string_lossy().into_owned(),
            machine_type: r.machine_type.clone(),
            machine_id: r.machine_id,
            condition: r.condition,
            split: r.split,
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&entries)?).map_err(|e| Error::io(path, e))
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = entries
        .into_iter()
        .map(|e| ClipRecord::new(base.join(&e.path), &e.machine_type, e.machine_id, e.condition, e.split))
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::Input(format!("manifest {} lists no clips", path.display())));
    }
    records.sort();
    Ok(Corpus {
        records,
        warnings: Vec::new(),
    })
}

/// Uses `manifest.json` when the directory has one, otherwise scans the tree.
/// A path to a file is read as a manifest.
pub fn open_corpus(path: &Path) -> Result<Corpus> {
    if path.is_file() {
        return load_manifest(path);
    }
    let manifest = path.join(MANIFEST_NAME);
    if manifest.is_file() {
        load_manifest(&manifest)
    } else {
        scan_corpus(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filename_parsing() {
        assert_eq!(parse_filename("normal_id_02_00000042.wav"), Some((Condition::Normal, 2)));
        assert_eq!(parse_filename("anomaly_id_00_00000005.wav"), Some((Condition::Anomaly, 0)));
        assert_eq!(parse_filename("id_06_00000001.wav"), Some((Condition::Unknown, 6)));
        for bad in ["normal_id_2_00000042.wav", "normal_id_02_42.wav", "normal_id_02_00000042.flac", "noise.wav", "normal_id_02_00000042_x.wav"] {
            assert_eq!(parse_filename(bad), None, "{bad}");
        }
    }

    fn touch(root: &Path, rel: &str) {
        let p = root.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, b"").unwrap();
    }

    #[test]
    fn scan_records_warnings_and_label_map() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        touch(r, "fan/train/normal_id_02_00000042.wav");
        touch(r, "fan/train/normal_id_00_00000001.wav");
        touch(r, "valve/test/anomaly_id_00_00000005.wav");
        touch(r, "valve/train/normal_id_00_00000000.wav");
        touch(r, "valve/test/readme.txt");
        touch(r, "valve/extra/normal_id_00_00000000.wav");
        let c = scan_corpus(r).unwrap();
        assert_eq!(c.records.len(), 4);
        assert_eq!(c.warnings.len(), 2);
        let a = c.records.iter().find(|x| x.condition == Condition::Anomaly).unwrap();
        assert_eq!((a.machine_type.as_str(), a.machine_id, a.split), ("valve", 0, DataSplit::Test));
        let f = c.records.iter().find(|x| x.machine_id == 2).unwrap();
        assert_eq!((f.machine_type.as_str(), f.condition, f.split), ("fan", Condition::Normal, DataSplit::Train));

        let map = c.label_map();
        assert_eq!(map.len(), 3);
        assert_eq!(scan_corpus(r).unwrap().label_map(), map);
    }

    #[test]
    fn anomaly_in_train_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "fan/train/anomaly_id_00_00000000.wav");
        assert!(matches!(scan_corpus(dir.path()), Err(Error::Invariant(_))));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_corpus(dir.path()), Err(Error::Input(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        touch(r, "fan/train/normal_id_00_00000000.wav");
        touch(r, "fan/test/anomaly_id_00_00000000.wav");
        let c = scan_corpus(r).unwrap();
        let m = r.join(MANIFEST_NAME);
        write_manifest(&m, r, &c.records).unwrap();
        let text = fs::read_to_string(&m).unwrap();
        assert!(text.contains("\"fan/test/anomaly_id_00_00000000.wav\""));
        assert_eq!(load_manifest(&m).unwrap().records, c.records);
        assert_eq!(open_corpus(r).unwrap().records, c.records);
    }
}
