use super::Volume;

/// Result of [`zscore_normalize`].
#[derive(Clone, Debug)]
pub struct Normalized {
    pub volume: Volume,
    /// Set when the input was (numerically) constant and the output is all zeros.
    pub degenerate: bool,
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
/// Statistics are accumulated in `f64`.
pub fn zscore_normalize(v: &Volume) -> Normalized {
    let n = v.len() as f64;
    let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .data()
        .iter()
        .map(|&x| (x as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std >= 1e-8) {
        return Normalized {
            volume: v.with_data(vec![0.0; v.len()]),
            degenerate: true,
        };
    }
    let data = v
        .data()
        .iter()
        .map(|&x| ((x as f64 - mean) / std) as f32)
        .collect();
    Normalized {
        volume: v.with_data(data),
        degenerate: false,
    }
}

/// Centered crop or symmetric zero pad to `target` dims. When the surplus or
/// deficit along an axis is odd, the extra voxel goes to the high-index side.
pub fn center_crop_or_pad(v: &Volume, target: [usize; 3]) -> Volume {
    let src = v.dims();
    // offset = input index − output index along each axis
    let offset: [isize; 3] = std::array::from_fn(|a| {
        let (s, t) = (src[a] as isize, target[a] as isize);
        if s >= t {
            (s - t) / 2
        } else {
            -((t - s) / 2)
        }
    });
    let mut data = vec![0.0f32; target.iter().product()];
    let mut o = 0;
    for z in 0..target[0] {
        let iz = z as isize + offset[0];
        for y in 0..target[1] {
            let iy = y as isize + offset[1];
            for x in 0..target[2] {
                let ix = x as isize + offset[2];
                let inside = (0..src[0] as isize).contains(&iz)
                    && (0..src[1] as isize).contains(&iy)
                    && (0..src[2] as isize).contains(&ix);
                if inside {
                    data[o] = v.at(iz as usize, iy as usize, ix as usize);
                }
                o += 1;
            }
        }
    }
    Volume::with_voxel_size(target, v.voxel_size_mm(), v.modality(), data)
        .expect("target dims are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;

    fn stats(v: &Volume) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let s = (v
            .data()
            .iter()
            .map(|&x| (x as f64 - m).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        (m, s)
    }

    #[test]
    fn zscore_has_unit_moments() {
        let v = Volume::new(
            [4, 5, 6],
            Modality::Mri,
            (0..120)
                .map(|i| (i as f32 * 0.7).cos() * 3.0 + 2.0)
                .collect(),
        )
        .unwrap();
        let n = zscore_normalize(&v);
        assert!(!n.degenerate);
        let (m, s) = stats(&n.volume);
        assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-5, "{m} {s}");
    }

    #[test]
    fn constant_volume_is_flagged() {
        let v = Volume::new([2, 2, 2], Modality::Mri, vec![3.5; 8]).unwrap();
        let n = zscore_normalize(&v);
        assert!(n.degenerate);
        assert!(n.volume.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn crop_offsets_follow_floor_rule() {
        let dims = [120, 130, 120];
        let v = Volume::new(
            dims,
            Modality::Mri,
            (0..dims.iter().product::<usize>())
                .map(|i| i as f32)
                .collect(),
        )
        .unwrap();
        let c = center_crop_or_pad(&v, [112, 128, 112]);
        assert_eq!(c.dims(), [112, 128, 112]);
        assert_eq!(c.at(0, 0, 0), v.at(4, 1, 4));
        assert_eq!(c.at(111, 127, 111), v.at(115, 128, 115));
    }

    #[test]
    fn identity_and_pad() {
        let v = Volume::new(
            [3, 3, 3],
            Modality::Pet,
            (1..=27).map(|i| i as f32).collect(),
        )
        .unwrap();
        assert_eq!(center_crop_or_pad(&v, [3, 3, 3]), v);
        let p = center_crop_or_pad(&v, [5, 5, 5]);
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let inner = (1..4).contains(&z) && (1..4).contains(&y) && (1..4).contains(&x);
                    let want = if inner {
                        v.at(z - 1, y - 1, x - 1)
                    } else {
                        0.0
                    };
                    assert_eq!(p.at(z, y, x), want);
                }
            }
        }
    }
}
