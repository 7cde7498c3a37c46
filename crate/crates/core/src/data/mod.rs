//! Samples, manifests, splits, synthetic data and deduplication.

pub mod dedup;
pub mod io;
pub mod manifest;
pub mod sample;
pub mod split;
pub mod synth;

pub use dedup::{average_hash, dedup_manifest, dedup_perceptual_hash};
pub use manifest::{parse_manifest, Manifest, ManifestRecord};
pub use sample::{Category, Sample};
pub use split::{split_dataset, split_indices, Split, SplitIndices, SplitSpec};
pub use io::write_dataset;
pub use synth::{generate_synthetic, SynthConfig};
