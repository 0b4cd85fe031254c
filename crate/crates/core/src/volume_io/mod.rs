//! Reading and writing CT volumes and masks, and evaluation-time preprocessing.

pub mod nifti;
mod preprocess;

pub use nifti::{
    read_binary_mask, read_mask, read_volume, write_binary_mask, write_grid, write_mask, write_volume, Datatype,
};
pub use preprocess::{preprocess, PreprocessParams};
