//! JSON dataset manifest.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GLOBAL_LABEL: &str = "global";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecord {
    pub id: i64,
    pub name: String,
    /// One description per granularity, in `granularities` order.
    pub descriptions: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSplit {
    pub seen: BTreeSet<i64>,
    pub unseen: BTreeSet<i64>,
}

impl ClassSplit {
    pub fn new(seen: impl IntoIterator<Item = i64>, unseen: impl IntoIterator<Item = i64>) -> Result<Self> {
        let split = Self { seen: seen.into_iter().collect(), unseen: unseen.into_iter().collect() };
        if let Some(&c) = split.seen.intersection(&split.unseen).next() {
            return Err(Error::SplitOverlap(c));
        }
        if split.seen.is_empty() {
            return Err(Error::Manifest("split has no seen classes".into()));
        }
        Ok(split)
    }

    pub fn is_seen(&self, class_id: i64) -> bool {
        self.seen.contains(&class_id)
    }

    pub fn is_unseen(&self, class_id: i64) -> bool {
        self.unseen.contains(&class_id)
    }

    pub fn contains(&self, class_id: i64) -> bool {
        self.is_seen(class_id) || self.is_unseen(class_id)
    }

    pub fn all(&self) -> BTreeSet<i64> {
        self.seen.union(&self.unseen).copied().collect()
    }
}

/// What a sample is used for. Absent in the JSON means seen-class samples
/// train and unseen-class samples are test data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    #[serde(rename = "class")]
    pub class_id: i64,
    #[serde(rename = "features")]
    pub feature_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<SampleRole>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    #[serde(rename = "C")]
    pub classes: usize,
    #[serde(rename = "Gr")]
    pub granularities: usize,
    #[serde(rename = "d")]
    pub text_dim: usize,
    #[serde(rename = "S")]
    pub nodes: usize,
    #[serde(rename = "n")]
    pub visual_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(rename = "classes")]
    pub class_records: Vec<ClassRecord>,
    pub split: ClassSplit,
    #[serde(rename = "granularities")]
    pub granularity_labels: Vec<String>,
    #[serde(rename = "anchors")]
    pub anchor_file: PathBuf,
    #[serde(rename = "samples")]
    pub sample_records: Vec<SampleRecord>,
    pub dims: Dims,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn from_json_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.base_dir = base_dir.into();
        manifest.check()?;
        Ok(manifest)
    }

    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// Number of body-part granularities (`bp_*` labels).
    pub fn num_parts(&self) -> usize {
        self.granularity_labels.iter().filter(|l| l.starts_with("bp_")).count()
    }

    /// Number of temporal-phase granularities (`ti_*` labels).
    pub fn num_segments(&self) -> usize {
        self.granularity_labels.iter().filter(|l| l.starts_with("ti_")).count()
    }

    pub fn class_ids(&self) -> Vec<i64> {
        self.class_records.iter().map(|c| c.id).collect()
    }

    pub fn class_index(&self, class_id: i64) -> Option<usize> {
        self.class_records.iter().position(|c| c.id == class_id)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn anchor_path(&self) -> PathBuf {
        self.resolve(&self.anchor_file)
    }

    pub fn role_of(&self, sample: &SampleRecord) -> SampleRole {
        sample.role.unwrap_or(if self.split.is_seen(sample.class_id) { SampleRole::Train } else { SampleRole::Test })
    }

    /// Checks the split, granularity and cross-reference invariants.
    pub fn check(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for class in &self.class_records {
            if !ids.insert(class.id) {
                return Err(Error::DuplicateClass(class.id));
            }
        }
        if let Some(&c) = self.split.seen.intersection(&self.split.unseen).next() {
            return Err(Error::SplitOverlap(c));
        }
        if self.split.seen.is_empty() {
            return Err(Error::Manifest("split has no seen classes".into()));
        }
        for &c in self.split.seen.iter().chain(&self.split.unseen) {
            if !ids.contains(&c) {
                return Err(Error::Manifest(format!("split references unknown class {c}")));
            }
        }
        if let Some(c) = self.class_records.iter().find(|c| !self.split.contains(c.id)) {
            return Err(Error::Manifest(format!("class {} is in neither seen nor unseen", c.id)));
        }

        check_granularity_labels(&self.granularity_labels)?;
        let gr = self.granularity_labels.len();
        if self.dims.granularities != gr {
            return Err(Error::GranularityCount(format!(
                "dims.Gr = {} but {gr} granularity labels",
                self.dims.granularities
            )));
        }
        for class in &self.class_records {
            if class.descriptions.len() != gr {
                return Err(Error::GranularityCount(format!(
                    "class {} has {} descriptions, expected {gr}",
                    class.id,
                    class.descriptions.len()
                )));
            }
        }
        if self.dims.classes != self.class_records.len() {
            return Err(Error::Manifest(format!(
                "dims.C = {} but {} classes listed",
                self.dims.classes,
                self.class_records.len()
            )));
        }
        let d = &self.dims;
        if d.text_dim == 0 || d.nodes == 0 || d.visual_dim == 0 {
            return Err(Error::Manifest("dims must be positive".into()));
        }

        let mut sample_ids = HashSet::new();
        for s in &self.sample_records {
            if !sample_ids.insert(s.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sample id {}", s.id)));
            }
            if !self.split.contains(s.class_id) {
                return Err(Error::Manifest(format!("sample {} has class {} outside the split", s.id, s.class_id)));
            }
            if s.role == Some(SampleRole::Train) && !self.split.is_seen(s.class_id) {
                return Err(Error::Protocol(format!(
                    "training sample {} belongs to unseen class {}",
                    s.id, s.class_id
                )));
            }
        }
        Ok(())
    }
}

/// Labels must read `global, bp_1..bp_P, ti_1..ti_Z`.
fn check_granularity_labels(labels: &[String]) -> Result<()> {
    if labels.first().map(String::as_str) != Some(GLOBAL_LABEL) {
        return Err(Error::GranularityCount("first granularity must be \"global\"".into()));
    }
    let parts = labels.iter().filter(|l| l.starts_with("bp_")).count();
    let segments = labels.iter().filter(|l| l.starts_with("ti_")).count();
    let expected: Vec<String> = std::iter::once(GLOBAL_LABEL.to_string())
        .chain((1..=parts).map(|i| format!("bp_{i}")))
        .chain((1..=segments).map(|i| format!("ti_{i}")))
        .collect();
    if labels != expected.as_slice() {
        return Err(Error::GranularityCount(format!(
            "labels {labels:?} are not global, bp_1..bp_P, ti_1..ti_Z (P+Z+1 = {})",
            parts + segments + 1
        )));
    }
    Ok(())
}

/// Standard label list for `parts` body parts and `segments` temporal phases.
pub fn granularity_labels(parts: usize, segments: usize) -> Vec<String> {
    std::iter::once(GLOBAL_LABEL.to_string())
        .chain((1..=parts).map(|i| format!("bp_{i}")))
        .chain((1..=segments).map(|i| format!("ti_{i}")))
        .collect()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::from_json_str(&text, base)
}
