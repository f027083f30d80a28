//! Binary portable graymap (P5) mid-slices of a volume.

use std::fs;
use std::path::{Path, PathBuf};

use upet::data::Volume;

use crate::error::{CliError, Result};

/// Intensity window mapped to 0..=255.
#[derive(Clone, Copy, Debug)]
pub enum Window {
    /// Fixed range, for maps with a known codomain such as attention in (0, 1).
    Fixed(f32, f32),
    /// The volume's own minimum and maximum.
    MinMax,
}

/// Plane through the volume centre. Volumes are indexed `[z][y][x]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }
}

/// `(width, height, row-major pixels)` of the central slice.
pub fn mid_slice(v: &Volume, plane: Plane) -> (usize, usize, Vec<f32>) {
    let [d, h, w] = v.dims();
    let (rows, cols) = match plane {
        Plane::Axial => (h, w),
        Plane::Coronal => (d, w),
        Plane::Sagittal => (d, h),
    };
    let mut px = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            px.push(match plane {
                Plane::Axial => v.at(d / 2, r, c),
                Plane::Coronal => v.at(r, h / 2, c),
                Plane::Sagittal => v.at(r, c, w / 2),
            });
        }
    }
    (cols, rows, px)
}

pub fn encode(width: usize, height: usize, px: &[f32], window: Window) -> Vec<u8> {
    let (lo, hi) = match window {
        Window::Fixed(lo, hi) => (lo, hi),
        Window::MinMax => px
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            }),
    };
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(px.iter().map(|&v| {
        if span > 0.0 {
            (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Writes `<stem>_<plane>.pgm` for the three planes; returns the paths.
pub fn write_mid_slices(
    v: &Volume,
    dir: &Path,
    stem: &str,
    window: Window,
) -> Result<Vec<PathBuf>> {
    Plane::ALL
        .iter()
        .map(|&plane| {
            let (w, h, px) = mid_slice(v, plane);
            let path = dir.join(format!("{stem}_{}.pgm", plane.name()));
            fs::write(&path, encode(w, h, &px, window)).map_err(|e| CliError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use upet::data::Modality;

    #[test]
    fn slices_pick_the_centre_planes() {
        let dims = [4, 6, 8];
        let data = (0..4 * 6 * 8).map(|i| i as f32).collect();
        let v = Volume::new(dims, Modality::Mri, data).unwrap();
        let (w, h, px) = mid_slice(&v, Plane::Axial);
        assert_eq!((w, h), (8, 6));
        assert_eq!(px[0], v.at(2, 0, 0));
        let (w, h, px) = mid_slice(&v, Plane::Coronal);
        assert_eq!((w, h), (8, 4));
        assert_eq!(px[8 + 1], v.at(1, 3, 1));
        let (w, h, px) = mid_slice(&v, Plane::Sagittal);
        assert_eq!((w, h), (6, 4));
        assert_eq!(px[6 * 3 + 5], v.at(3, 5, 4));
    }

    #[test]
    fn encoding_has_header_and_scaled_pixels() {
        let bytes = encode(3, 1, &[0.0, 0.5, 1.0], Window::Fixed(0.0, 1.0));
        assert_eq!(&bytes[..11], b"P5\n3 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255]);
        let flat = encode(2, 1, &[4.0, 4.0], Window::MinMax);
        assert_eq!(&flat[flat.len() - 2..], &[0, 0]);
        let mm = encode(2, 1, &[-2.0, 6.0], Window::MinMax);
        assert_eq!(&mm[mm.len() - 2..], &[0, 255]);
    }
}
