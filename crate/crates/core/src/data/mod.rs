//! Dataset manifests, the synthetic benchmark generator and disentanglement
//! scoring against planted categories.

mod manifest;
mod score;
mod synth;

pub use manifest::{
    load_manifest, parse_manifest, to_jsonl, write_manifest, ClassCounts, Dataset, FieldMask, ManifestRecord,
    MemeSample, Split, SplitCounts,
};
pub use score::{score_disentanglement, DisentanglementScore, LatentPair};
pub use synth::{generate_synthetic, load_truth, SplitSizes, SynthOutput, SynthSpec, TruthRecord};
