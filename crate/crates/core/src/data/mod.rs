//! Dataset records and preprocessing, the synthetic corpus, and the on-disk
//! formats for tensors, features and checkpoints.

mod checkpoint;
mod features;
mod preprocess;
mod record;
mod split;
pub mod synth;
pub mod tensor_file;

pub use checkpoint::{Checkpoint, Manifest, OptimizerManifest};
pub use features::{crop_at, FeatureStore, InputMode, Source, Variant};
pub use preprocess::{preprocess, preprocess_all, PreprocessConfig};
pub use record::{class_names, read_records, write_records, Condition, ScanpathRecord, Split};
pub use split::{assign_splits, split_counts, DEFAULT_RATIOS};
pub use synth::{generate, SceneFeatures, SynthConfig, SynthCorpus};

use std::path::Path;

use crate::error::Result;

/// Writes via a sibling temporary file and a rename, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
