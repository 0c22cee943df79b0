//! File formats (features, PCA, checkpoints, heads, run configs) and the
//! synthetic moving-blob corpus.

mod binary;
mod checkpoint;
mod corpus;
mod features;
mod heads;
mod pca_file;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use corpus::{
    generate_synthetic_corpus, load_eval_items, load_sequences, render_labels, write_corpus,
    BlobTrack, Manifest, ManifestEntry, SceneSpec, Split, SyntheticSequence, CLASS_NAMES,
    FEATURE_EXT, MANIFEST_FILE, MOVABLE,
};
pub use features::{
    load_features, read_feature_header, save_features, FeatureFileHeader, FEATURE_VERSION,
};
pub use heads::{load_head, load_heads, save_head};
pub use pca_file::{load_pca, save_pca};
pub use run::{
    prepare_clips, resize_grid, run_pca, train_from_config, DataConfig, RunConfig, TrainOutcome,
};

/// Writes any serializable value as pretty JSON, atomically.
pub fn save_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> crate::Result<()> {
    binary::write_json(path, value)
}
