//! 3D scalar volumes and their on-disk format: a raw little-endian `f32` payload
//! (`name.raw`) next to a JSON header (`name.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "MRI")]
    Mri,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "ATTN")]
    Attention,
}

pub const DEFAULT_VOXEL_MM: [f64; 3] = [1.5, 1.5, 1.5];
const DTYPE: &str = "f32le";

/// A `D×H×W` scalar field stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    modality: Modality,
    tag: Option<String>,
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    modality: Modality,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
}

impl Volume {
    pub fn new(dims: [usize; 3], modality: Modality, data: Vec<f32>) -> Result<Self, DataError> {
        Self::with_voxel_size(dims, DEFAULT_VOXEL_MM, modality, data)
    }

    pub fn with_voxel_size(
        dims: [usize; 3],
        voxel_size_mm: [f64; 3],
        modality: Modality,
        data: Vec<f32>,
    ) -> Result<Self, DataError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(DataError::Invalid(format!(
                "volume dims must be positive, got {dims:?}"
            )));
        }
        if voxel_size_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(DataError::Invalid(format!(
                "voxel sizes must be positive, got {voxel_size_mm:?}"
            )));
        }
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(DataError::Invalid(format!(
                "volume {dims:?} needs {expected} voxels, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            voxel_size_mm,
            modality,
            tag: None,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], modality: Modality) -> Self {
        Self::new(dims, modality, vec![0.0; dims.iter().product()]).expect("positive dims")
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// Same geometry and modality, new voxel values.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            dims: self.dims,
            voxel_size_mm: self.voxel_size_mm,
            modality: self.modality,
            tag: self.tag.clone(),
            data,
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.modality == other.modality
            && self.voxel_size_mm == other.voxel_size_mm
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Sidecar header path for a payload path.
pub fn header_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub fn write_volume(volume: &Volume, path: &Path) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }
    let header = Header {
        dims: volume.dims,
        voxel_size_mm: volume.voxel_size_mm,
        modality: volume.modality,
        dtype: DTYPE.to_string(),
        tag: volume.tag.clone(),
    };
    let mut bytes = Vec::with_capacity(volume.data.len() * 4);
    for v in &volume.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))?;
    let hp = header_path(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&hp, text).map_err(|e| DataError::io(&hp, e))
}

pub fn read_volume(path: &Path) -> Result<Volume, DataError> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| DataError::io(&hp, e))?;
    let header: Header = serde_json::from_str(&text)
        .map_err(|e| DataError::Format(format!("{}: bad header: {e}", hp.display())))?;
    if header.dtype != DTYPE {
        return Err(DataError::Format(format!(
            "{}: unsupported dtype {:?} (expected {DTYPE:?})",
            hp.display(),
            header.dtype
        )));
    }
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let voxels = header.dims.iter().product::<usize>();
    if bytes.len() != voxels * 4 {
        return Err(DataError::Format(format!(
            "{}: payload has {} bytes, header dims {:?} need {}",
            path.display(),
            bytes.len(),
            header.dims,
            voxels * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut v = Volume::with_voxel_size(header.dims, header.voxel_size_mm, header.modality, data)?;
    v.tag = header.tag;
    Ok(v)
}
