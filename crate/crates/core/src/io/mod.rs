//! On-disk formats: tensor files, sequence bundles and mask images.

pub mod bundle;
pub mod image;
pub mod tensor_file;

pub use bundle::{
    read_bundle, validate_bundle, write_bundle, Manifest, SequenceBundle, ValidationReport,
};
pub use image::{read_label_mask, render_score_map, write_label_mask};
pub use tensor_file::{read_tensor, write_tensor, DType, Tensor, TensorData};
