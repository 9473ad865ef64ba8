//! Synthetic texture datasets, view transformations and jigsaw patch sets.

mod batch;
mod dataset;
mod image;
pub mod io;
mod jigsaw;
mod transform;

pub use batch::EpochPlan;
pub use dataset::{generate_synthetic_dataset, ClassTexture, Dataset, DatasetSpec, ImageSample};
pub use image::Image;
pub use io::{read_dataset, write_dataset};
pub use jigsaw::{make_jigsaw, make_jigsaw_with, JigsawPatchSet};
pub use transform::{apply_jitter, geometric_flip, photometric_jitter, JitterFactors};
