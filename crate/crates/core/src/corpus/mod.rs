//! Manifests, the synthetic triplet generator and simulator validation.

mod dataset;
mod labels;
mod manifest;
mod synth;
mod validate;

pub use dataset::{Dataset, DatasetError, Sample};
pub use labels::{label_index, LABELS, NUM_LABELS};
pub use manifest::{
    load_manifest, read_feature_file, save_manifest, write_feature_file, Manifest, ManifestError, Split, TripletRecord,
};
pub use synth::{
    family, generate_samples, generate_synthetic_corpus, write_corpus, Family, Slot, SynthConfig, SynthError, SynthSample,
    FAMILIES,
};
pub use validate::{
    locate, validate_corpus, CompileStatus, RecordStatus, ValidateOptions, ValidationOutcome, ValidationReport, SIMULATOR_ENV,
};
