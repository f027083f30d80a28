//! Volumes, preprocessing, subject-level splits, manifests and the synthetic
//! phantom generator.

mod dataset;
mod manifest;
mod normalize;
pub mod phantom;
mod split;
mod volume;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dataset::{load_samples, stack_batch, Batch, Sample};
pub use manifest::{read_manifest, write_manifest, Diagnosis, Manifest, SampleRecord};
pub use normalize::{center_crop_or_pad, zscore_normalize, Normalized};
pub use phantom::{generate_phantom_dataset, phantom_samples, PhantomConfig};
pub use split::{subject_level_split, SplitSpec, DEFAULT_RATIOS};
pub use volume::{header_path, read_volume, write_volume, Modality, Volume, DEFAULT_VOXEL_MM};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
