//! Clip metadata, the class label map, corpus discovery and the synthetic
//! machine-sound generator.

pub mod corpus;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corpus::{load_manifest, scan_corpus, write_manifest, Corpus};
pub use synth::{synth_generate, ClassSpec, SynthSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Normal,
    Anomaly,
    /// Evaluation clips without ground truth: scoreable, excluded from metrics.
    Unknown,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Anomaly => "anomaly",
            Condition::Unknown => "unknown",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSplit {
    Train,
    Test,
}

impl DataSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            DataSplit::Train => "train",
            DataSplit::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipRecord {
    pub path: PathBuf,
    pub machine_type: String,
    pub machine_id: u32,
    pub condition: Condition,
    pub split: DataSplit,
}

impl ClipRecord {
    pub fn new(path: PathBuf, machine_type: &str, machine_id: u32, condition: Condition, split: DataSplit) -> Result<Self> {
        if split == DataSplit::Train && condition != Condition::Normal {
            return Err(Error::Invariant(format!(
                "{}: training clips must be normal, found {}",
                path.display(),
                condition.as_str()
            )));
        }
        Ok(Self {
            path,
            machine_type: machine_type.to_string(),
            machine_id,
            condition,
            split,
        })
    }

    pub fn key(&self) -> MachineKey {
        MachineKey {
            machine_type: self.machine_type.clone(),
            machine_id: self.machine_id,
        }
    }
}

/// A machine instance: one classification target.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MachineKey {
    pub machine_type: String,
    pub machine_id: u32,
}

impl fmt::Display for MachineKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:02}", self.machine_type, self.machine_id)
    }
}

impl MachineKey {
    pub fn parse(s: &str) -> Result<Self> {
        let (t, id) = s
            .rsplit_once('/')
            .ok_or_else(|| Error::Input(format!("label key {s:?} is not type/id")))?;
        let machine_id = id
            .parse()
            .map_err(|_| Error::Input(format!("label key {s:?} has a non-numeric id")))?;
        Ok(Self {
            machine_type: t.to_string(),
            machine_id,
        })
    }
}

/// Dense class indices over machine instances, assigned in sorted order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    keys: Vec<MachineKey>,
}

impl LabelMap {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ClipRecord>) -> Self {
        let mut keys: Vec<MachineKey> = records.into_iter().map(ClipRecord::key).collect();
        keys.sort();
        keys.dedup();
        Self { keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[MachineKey] {
        &self.keys
    }

    pub fn index(&self, key: &MachineKey) -> Result<usize> {
        self.keys
            .binary_search(key)
            .map_err(|_| Error::Lookup(format!("machine {key} is not in the label map")))
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<String, usize> = self.keys.iter().enumerate().map(|(i, k)| (k.to_string(), i)).collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, usize> = serde_json::from_str(text)?;
        let mut keys = vec![None; map.len()];
        for (k, &i) in &map {
            let slot = keys
                .get_mut(i)
                .ok_or_else(|| Error::Input(format!("label map index {i} out of range")))?;
            if slot.is_some() {
                return Err(Error::Input(format!("label map index {i} used twice")));
            }
            *slot = Some(MachineKey::parse(k)?);
        }
        let keys: Vec<MachineKey> = keys.into_iter().map(|k| k.expect("every index filled")).collect();
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("label map indices are not in sorted key order".into()));
        }
        Ok(Self { keys })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
