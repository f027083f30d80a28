use super::{
    center_crop_or_pad, read_volume, zscore_normalize, DataError, Diagnosis, Manifest,
    SampleRecord, Volume,
};
use crate::tensor::Tensor;

/// A preprocessed study: z-scored MRI and raw-intensity PET target, both at the
/// model's input geometry.
#[derive(Clone, Debug)]
pub struct Sample {
    pub subject_id: String,
    pub session_id: String,
    pub label: Diagnosis,
    pub mri: Vec<f32>,
    pub pet: Option<Vec<f32>>,
    /// The MRI was constant and normalized to zeros.
    pub degenerate_mri: bool,
}

impl Sample {
    pub fn from_volumes(
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
        label: Diagnosis,
        mri: &Volume,
        pet: Option<&Volume>,
        dims: [usize; 3],
    ) -> Self {
        let norm = zscore_normalize(&center_crop_or_pad(mri, dims));
        Self {
            subject_id: subject_id.into(),
            session_id: session_id.into(),
            label,
            mri: norm.volume.into_data(),
            pet: pet.map(|p| center_crop_or_pad(p, dims).into_data()),
            degenerate_mri: norm.degenerate,
        }
    }
}

/// Reads and preprocesses `records` (paths resolved against `manifest.root`).
pub fn load_samples(
    manifest: &Manifest,
    records: &[SampleRecord],
    dims: [usize; 3],
) -> Result<Vec<Sample>, DataError> {
    records
        .iter()
        .map(|r| {
            let mri = read_volume(&manifest.resolve(&r.mri_path))?;
            let pet = r
                .pet_path
                .as_ref()
                .map(|p| read_volume(&manifest.resolve(p)))
                .transpose()?;
            Ok(Sample::from_volumes(
                r.subject_id.clone(),
                r.session_id.clone(),
                r.label,
                &mri,
                pet.as_ref(),
                dims,
            ))
        })
        .collect()
}

/// Model-ready mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `N×1×D×H×W`
    pub mri: Tensor<f32>,
    /// `N×1×D×H×W`; zeros for unpaired samples.
    pub pet: Tensor<f32>,
    pub pet_mask: Vec<bool>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn paired_count(&self) -> usize {
        self.pet_mask.iter().filter(|&&m| m).count()
    }
}

/// Stacks the samples at `indices` into a batch.
pub fn stack_batch(samples: &[Sample], indices: &[usize], dims: [usize; 3]) -> Batch {
    let voxels: usize = dims.iter().product();
    let n = indices.len();
    let mut mri = Vec::with_capacity(n * voxels);
    let mut pet = Vec::with_capacity(n * voxels);
    let mut pet_mask = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for &i in indices {
        let s = &samples[i];
        assert_eq!(
            s.mri.len(),
            voxels,
            "sample {} has the wrong geometry",
            s.subject_id
        );
        mri.extend_from_slice(&s.mri);
        match &s.pet {
            Some(p) => pet.extend_from_slice(p),
            None => pet.resize(pet.len() + voxels, 0.0),
        }
        pet_mask.push(s.pet.is_some());
        labels.push(s.label.index());
    }
    let shape = [n, 1, dims[0], dims[1], dims[2]];
    Batch {
        mri: Tensor::new(&shape, mri).expect("consistent batch"),
        pet: Tensor::new(&shape, pet).expect("consistent batch"),
        pet_mask,
        labels,
    }
}
