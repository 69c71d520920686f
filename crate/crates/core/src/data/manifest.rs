use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoders::{load_region_features, RegionFeatures, TextFields};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| format!("unknown split `{s}` (valid: train, validation, test)"))
    }
}

/// One line of a JSONL manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    /// 0 non-hateful, 1 hateful.
    pub label: u8,
    pub text_ocr: String,
    pub entities: Vec<String>,
    pub demographics: Vec<String>,
    /// Relative to the manifest's directory.
    pub feature_file: String,
    pub split: Split,
}

const FIELDS: [&str; 7] = [
    "id",
    "label",
    "text_ocr",
    "entities",
    "demographics",
    "feature_file",
    "split",
];

/// Which auxiliary text fields reach the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMask {
    pub use_entities: bool,
    pub use_demographics: bool,
}

impl Default for FieldMask {
    fn default() -> Self {
        Self {
            use_entities: true,
            use_demographics: true,
        }
    }
}

impl FieldMask {
    pub fn apply(&self, record: &mut ManifestRecord) {
        if !self.use_entities {
            record.entities.clear();
        }
        if !self.use_demographics {
            record.demographics.clear();
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub hateful: usize,
    pub non_hateful: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: ClassCounts,
    pub validation: ClassCounts,
    pub test: ClassCounts,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> ClassCounts {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut ClassCounts {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }
}

/// A manifest record with its region features loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct MemeSample {
    pub record: ManifestRecord,
    pub features: Arc<RegionFeatures>,
}

impl MemeSample {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn label(&self) -> u8 {
        self.record.label
    }

    pub fn text_fields(&self) -> TextFields<'_> {
        TextFields {
            ocr: &self.record.text_ocr,
            entities: &self.record.entities,
            demographics: &self.record.demographics,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Samples in manifest order.
    pub samples: Vec<MemeSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&MemeSample> {
        self.samples.iter().filter(|s| s.record.split == split).collect()
    }

    pub fn counts(&self) -> SplitCounts {
        let mut counts = SplitCounts::default();
        for s in &self.samples {
            let c = counts.get_mut(s.record.split);
            if s.record.label == 1 {
                c.hateful += 1;
            } else {
                c.non_hateful += 1;
            }
        }
        counts
    }

    pub fn get(&self, id: &str) -> Option<&MemeSample> {
        self.samples.iter().find(|s| s.record.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Manifest {
            line,
            detail: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Manifest {
            line,
            detail: "record is not a JSON object".into(),
        })?;
        if let Some(field) = FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::MissingField {
                line,
                field: field.to_string(),
            });
        }
        let record: ManifestRecord = serde_json::from_value(value).map_err(|e| Error::Manifest {
            line,
            detail: e.to_string(),
        })?;
        if record.label > 1 {
            return Err(Error::Manifest {
                line,
                detail: format!("label must be 0 or 1, got {}", record.label),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn to_jsonl(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("manifest records always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(records)).map_err(|e| Error::path(path, e))
}

/// Reads a manifest, applies `mask`, and loads every referenced feature file.
/// Records sharing a feature file share one loaded copy.
pub fn load_manifest(path: impl AsRef<Path>, mask: FieldMask) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cache: HashMap<PathBuf, Arc<RegionFeatures>> = HashMap::new();
    let mut samples = Vec::new();
    for mut record in parse_manifest(&text)? {
        mask.apply(&mut record);
        let feature_path = root.join(&record.feature_file);
        let features = match cache.get(&feature_path) {
            Some(f) => f.clone(),
            None => {
                let f = Arc::new(load_region_features(&feature_path)?);
                cache.insert(feature_path, f.clone());
                f
            }
        };
        samples.push(MemeSample { record, features });
    }
    Ok(Dataset { samples })
}
