//! Synthetic memes with a planted target category.
//!
//! Each sample draws a category `c`. The text carries `c`'s cue words, a
//! polarity word (`hostile` or `friendly`) and filler; the entity field names
//! `c`'s group. One region row is `sign · e_c` plus Gaussian noise, the other
//! rows are pure noise. A sample is hateful iff its text is hostile and its
//! planted row points along `+e_c`, so neither modality alone decides the
//! label.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{to_jsonl, ManifestRecord, Split};
use crate::diffcore::RngStream;
use crate::encoders::RegionFeatures;
use crate::error::{Error, Result};

pub const HOSTILE: &str = "hostile";
pub const FRIENDLY: &str = "friendly";
const FILLER_WORDS: usize = 24;
const DEMOGRAPHIC_WORDS: usize = 4;

/// Samples per label class in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of planted categories `K`.
    pub categories: usize,
    /// Samples per label class (hateful, non-hateful) in each split.
    pub per_class: SplitSizes,
    /// Cue words per category.
    pub cue_tokens: usize,
    /// Filler words per caption.
    pub noise_tokens: usize,
    pub visual_dim: usize,
    pub regions: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            categories: 4,
            per_class: SplitSizes {
                train: 32,
                validation: 16,
                test: 16,
            },
            cue_tokens: 2,
            noise_tokens: 2,
            visual_dim: 8,
            regions: 4,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.categories < 2 {
            return bad(format!("need at least 2 categories, got {}", self.categories));
        }
        for split in Split::ALL {
            if self.per_class.get(split) == 0 {
                return bad(format!("{split} needs at least one sample per class"));
            }
        }
        if self.cue_tokens == 0 {
            return bad("need at least one cue word per category".into());
        }
        if self.visual_dim < self.categories {
            return bad(format!(
                "visual dim {} cannot hold {} orthogonal category directions",
                self.visual_dim, self.categories
            ));
        }
        if self.regions == 0 {
            return bad("need at least one region".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("noise sigma must be ≥ 0, got {}", self.sigma));
        }
        Ok(())
    }

    pub fn cue_word(category: usize, j: usize) -> String {
        format!("topic{category}cue{j}")
    }

    pub fn group_word(category: usize) -> String {
        format!("group{category}")
    }

    /// The caption a retrieval query for `category` would use.
    pub fn category_query(&self, category: usize) -> String {
        (0..self.cue_tokens)
            .map(|j| Self::cue_word(category, j))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Planted category of one sample, as written to `truth.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub category: usize,
}

/// In-memory result of generation plus where it was written.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub truth: PathBuf,
    pub spec: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub categories: Vec<TruthRecord>,
}

struct Drawn {
    record: ManifestRecord,
    features: RegionFeatures,
    category: usize,
}

fn draw_split(spec: &SynthSpec, split: Split, rng: &mut RngStream) -> Vec<Drawn> {
    let per_class = spec.per_class.get(split);
    let mut labels: Vec<u8> = std::iter::repeat_n(1u8, per_class)
        .chain(std::iter::repeat_n(0u8, per_class))
        .collect();
    rng.shuffle(&mut labels);

    let mut out = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let category = rng.index(spec.categories);
        let (hostile, sign) = if label == 1 {
            (true, 1.0)
        } else {
            // the three non-hateful combinations, equally likely
            match rng.index(3) {
                0 => (true, -1.0),
                1 => (false, 1.0),
                _ => (false, -1.0),
            }
        };

        let mut words: Vec<String> = (0..spec.cue_tokens).map(|j| SynthSpec::cue_word(category, j)).collect();
        words.push(if hostile { HOSTILE } else { FRIENDLY }.to_string());
        for _ in 0..spec.noise_tokens {
            words.push(format!("filler{}", rng.index(FILLER_WORDS)));
        }
        rng.shuffle(&mut words);

        let (n, d) = (spec.regions, spec.visual_dim);
        let planted = rng.index(n);
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            for j in 0..d {
                let base = if r == planted && j == category { sign } else { 0.0 };
                data.push(base + spec.sigma * rng.normal());
            }
        }
        let id = format!("{split}-{i:05}");
        out.push(Drawn {
            record: ManifestRecord {
                feature_file: format!("features/{id}.dmhf"),
                id,
                label,
                text_ocr: words.join(" "),
                entities: vec![SynthSpec::group_word(category)],
                demographics: vec![format!("demo{}", rng.index(DEMOGRAPHIC_WORDS))],
                split,
            },
            features: RegionFeatures::new(n, d, data).expect("dimensions validated"),
            category,
        });
    }
    out
}

/// Writes `manifest.jsonl`, `truth.jsonl`, `spec.json` and `features/*.dmhf`
/// under `out_dir`. Output is a pure function of `spec`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let features_dir = out_dir.join("features");
    fs::create_dir_all(&features_dir).map_err(|e| Error::path(&features_dir, e))?;

    let mut records = Vec::new();
    let mut categories = Vec::new();
    for split in Split::ALL {
        let mut rng = RngStream::derive(spec.seed, &format!("synth/{split}"));
        for drawn in draw_split(spec, split, &mut rng) {
            let path = out_dir.join(&drawn.record.feature_file);
            fs::write(&path, drawn.features.to_bytes()).map_err(|e| Error::path(&path, e))?;
            categories.push(TruthRecord {
                id: drawn.record.id.clone(),
                category: drawn.category,
            });
            records.push(drawn.record);
        }
    }

    let manifest = out_dir.join("manifest.jsonl");
    fs::write(&manifest, to_jsonl(&records)).map_err(|e| Error::path(&manifest, e))?;
    let truth = out_dir.join("truth.jsonl");
    let mut truth_text = String::new();
    for t in &categories {
        truth_text.push_str(&serde_json::to_string(t)?);
        truth_text.push('\n');
    }
    fs::write(&truth, truth_text).map_err(|e| Error::path(&truth, e))?;
    let spec_path = out_dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(spec)? + "\n").map_err(|e| Error::path(&spec_path, e))?;

    Ok(SynthOutput {
        manifest,
        truth,
        spec: spec_path,
        records,
        categories,
    })
}

/// Reads a truth sidecar into `id → category`.
pub fn load_truth(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TruthRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: idx + 1,
            detail: e.to_string(),
        })?;
        if out.insert(t.id.clone(), t.category).is_some() {
            return Err(Error::DuplicateId(t.id));
        }
    }
    Ok(out)
}
