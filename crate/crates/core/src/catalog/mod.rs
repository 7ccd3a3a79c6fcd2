//! Dataset manifests, patient-wise splits and image preprocessing.

mod bank;
mod manifest;
mod preprocess;
mod split;

pub use bank::{ImageBank, LoadFailures};
pub use manifest::{
    filter_manifest, parse_manifest, read_manifest, serialize_manifest, write_manifest, Gender,
    ImageRecord, Manifest, ManifestSchema, RecordIssue, View, NO_FINDING,
};
pub use preprocess::{
    load_and_preprocess, load_raster, preprocess_raster, PreprocessSpec, Raster,
};
pub use split::{patient_wise_split, read_split_file, write_split_file, Split, SplitAssignment};
