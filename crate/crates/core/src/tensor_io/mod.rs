//! Tensor container format, dataset manifest, and dataset validation.

mod dataset;
mod manifest;
mod tensor;

pub use dataset::{validate_dataset, ValidatedDataset};
pub use manifest::{
    granularity_labels, load_manifest, ClassRecord, ClassSplit, DatasetManifest, Dims, SampleRecord, SampleRole,
    GLOBAL_LABEL,
};
pub use tensor::{load_tensor, read_header, save_tensor, DType, Tensor, TensorData, TensorHeader, MAGIC};
