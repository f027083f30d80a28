//! Pooling, resampling, channel concatenation and instance normalization on
//! `N×C×D×H×W` tensors.

use crate::tensor::{dims5, Result, Scalar, Tensor, TensorError};

const AXES: [&str; 3] = ["depth", "height", "width"];

/// 2×2×2 max pooling with stride 2. Returns the output and, for every output
/// element, the linear input index it was taken from. Ties resolve to the lowest
/// linear index.
pub(crate) fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, dims) = dims5("maxpool3d", x.shape())?;
    for (axis, &e) in dims.iter().enumerate() {
        if e % 2 != 0 {
            return Err(TensorError::OddExtent {
                op: "maxpool3d",
                axis: AXES[axis],
                extent: e,
            });
        }
    }
    let [d, h, w] = dims;
    let [od, oh, ow] = [d / 2, h / 2, w / 2];
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    let src = x.data();
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xw in 0..ow {
                    let mut best_i = base + ((2 * z) * h + 2 * y) * w + 2 * xw;
                    let mut best = src[best_i];
                    // visit the window in increasing linear order; strict '>' keeps the first max
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * xw + dx;
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::new(&[n, c, od, oh, ow], out)?, arg))
}

/// Non-overlapping average pooling by an integer factor per axis.
pub(crate) fn avgpool<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, dims) = dims5("avgpool3d", x.shape())?;
    if factor == 0 {
        return Err(TensorError::Invalid(
            "avgpool3d: factor must be positive".into(),
        ));
    }
    for (axis, &e) in dims.iter().enumerate() {
        if e % factor != 0 {
            return Err(TensorError::Invalid(format!(
                "avgpool3d: {} extent {e} is not divisible by {factor}",
                AXES[axis]
            )));
        }
    }
    let [d, h, w] = dims;
    let [od, oh, ow] = [d / factor, h / factor, w / factor];
    let norm = T::from_f64_lossy(1.0 / (factor * factor * factor) as f64);
    let mut out = vec![T::zero(); n * c * od * oh * ow];
    let src = x.data();
    for nc in 0..n * c {
        let ib = nc * d * h * w;
        let ob = nc * od * oh * ow;
        for z in 0..d {
            for y in 0..h {
                let orow = ob + ((z / factor) * oh + y / factor) * ow;
                let irow = ib + (z * h + y) * w;
                for xw in 0..w {
                    out[orow + xw / factor] = out[orow + xw / factor] + src[irow + xw];
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v = *v * norm);
    Tensor::new(&[n, c, od, oh, ow], out)
}

pub(crate) fn avgpool_backward<T: Scalar>(shape: &[usize], factor: usize, dy: &[T]) -> Vec<T> {
    let [n, c, d, h, w] = [shape[0], shape[1], shape[2], shape[3], shape[4]];
    let [od, oh, ow] = [d / factor, h / factor, w / factor];
    let norm = T::from_f64_lossy(1.0 / (factor * factor * factor) as f64);
    let mut dx = vec![T::zero(); n * c * d * h * w];
    for nc in 0..n * c {
        for z in 0..d {
            for y in 0..h {
                let orow = nc * od * oh * ow + ((z / factor) * oh + y / factor) * ow;
                let irow = nc * d * h * w + (z * h + y) * w;
                for xw in 0..w {
                    dx[irow + xw] = dy[orow + xw / factor] * norm;
                }
            }
        }
    }
    dx
}

/// Interpolation taps along one axis (half-pixel centres, edge-clamped).
#[derive(Clone, Debug)]
struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn taps(input: usize, output: usize) -> Taps {
    let scale = input as f64 / output as f64;
    let mut t = Taps {
        lo: Vec::with_capacity(output),
        hi: Vec::with_capacity(output),
        frac: Vec::with_capacity(output),
    };
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        t.lo.push(lo);
        t.hi.push(hi);
        t.frac.push(if hi == lo { 0.0 } else { src - lo as f64 });
    }
    t
}

/// Trilinear resize of every `N, C` slab to `out` spatial extents.
pub(crate) fn resize_trilinear<T: Scalar>(x: &Tensor<T>, out: [usize; 3]) -> Result<Tensor<T>> {
    let (n, c, dims) = dims5("upsample_trilinear", x.shape())?;
    if out.iter().any(|&e| e == 0) {
        return Err(TensorError::InvalidShape {
            shape: out.to_vec(),
        });
    }
    let t: Vec<Taps> = (0..3).map(|a| taps(dims[a], out[a])).collect();
    let [d, h, w] = dims;
    let [od, oh, ow] = out;
    let src = x.data();
    let mut res = Vec::with_capacity(n * c * od * oh * ow);
    for nc in 0..n * c {
        let base = nc * d * h * w;
        let at = |z: usize, y: usize, xx: usize| src[base + (z * h + y) * w + xx].to_f64_lossy();
        for z in 0..od {
            let (z0, z1, fz) = (t[0].lo[z], t[0].hi[z], t[0].frac[z]);
            for y in 0..oh {
                let (y0, y1, fy) = (t[1].lo[y], t[1].hi[y], t[1].frac[y]);
                for xx in 0..ow {
                    let (x0, x1, fx) = (t[2].lo[xx], t[2].hi[xx], t[2].frac[xx]);
                    let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
                    let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
                    let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
                    let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
                    let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
                    let v = lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
                    res.push(T::from_f64_lossy(v));
                }
            }
        }
    }
    Tensor::new(&[n, c, od, oh, ow], res)
}

pub(crate) fn resize_trilinear_backward<T: Scalar>(
    in_shape: &[usize],
    out: [usize; 3],
    dy: &[T],
) -> Vec<T> {
    let [n, c, d, h, w] = [
        in_shape[0],
        in_shape[1],
        in_shape[2],
        in_shape[3],
        in_shape[4],
    ];
    let t: Vec<Taps> = (0..3).map(|a| taps([d, h, w][a], out[a])).collect();
    let [od, oh, ow] = out;
    let mut acc = vec![0.0f64; n * c * d * h * w];
    for nc in 0..n * c {
        let base = nc * d * h * w;
        let obase = nc * od * oh * ow;
        for z in 0..od {
            let (z0, z1, fz) = (t[0].lo[z], t[0].hi[z], t[0].frac[z]);
            for y in 0..oh {
                let (y0, y1, fy) = (t[1].lo[y], t[1].hi[y], t[1].frac[y]);
                for xx in 0..ow {
                    let (x0, x1, fx) = (t[2].lo[xx], t[2].hi[xx], t[2].frac[xx]);
                    let g = dy[obase + (z * oh + y) * ow + xx].to_f64_lossy();
                    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                                acc[base + (zi * h + yi) * w + xi] += g * wz * wy * wx;
                            }
                        }
                    }
                }
            }
        }
    }
    acc.into_iter().map(T::from_f64_lossy).collect()
}

pub(crate) fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, da) = dims5("concat_channels", a.shape())?;
    let (nb, cb, db) = dims5("concat_channels", b.shape())?;
    if na != nb || da != db {
        return Err(TensorError::Incompatible {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let vol: usize = da.iter().product();
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..na {
        out.extend_from_slice(&a.data()[n * ca * vol..(n + 1) * ca * vol]);
        out.extend_from_slice(&b.data()[n * cb * vol..(n + 1) * cb * vol]);
    }
    Tensor::new(&[na, ca + cb, da[0], da[1], da[2]], out)
}

pub(crate) fn split_channels<T: Scalar>(
    shape_a: &[usize],
    shape_b: &[usize],
    dy: &[T],
) -> (Vec<T>, Vec<T>) {
    let (n, ca, cb) = (shape_a[0], shape_a[1], shape_b[1]);
    let vol: usize = shape_a[2..].iter().product();
    let mut ga = Vec::with_capacity(n * ca * vol);
    let mut gb = Vec::with_capacity(n * cb * vol);
    for i in 0..n {
        let off = i * (ca + cb) * vol;
        ga.extend_from_slice(&dy[off..off + ca * vol]);
        gb.extend_from_slice(&dy[off + ca * vol..off + (ca + cb) * vol]);
    }
    (ga, gb)
}

/// `N×C×…` → `N×C` by averaging everything past the channel axis.
pub(crate) fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, _) = dims5("global_avg_pool", x.shape())?;
    let vol = x.numel() / (n * c);
    let data = x
        .data()
        .chunks(vol)
        .map(|ch| T::from_f64_lossy(ch.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / vol as f64))
        .collect();
    Tensor::new(&[n, c], data)
}

pub(crate) fn global_avg_pool_backward<T: Scalar>(shape: &[usize], dy: &[T]) -> Vec<T> {
    let nc = shape[0] * shape[1];
    let vol: usize = shape[2..].iter().product();
    let inv = T::from_f64_lossy(1.0 / vol as f64);
    let mut dx = Vec::with_capacity(nc * vol);
    for &g in &dy[..nc] {
        dx.extend(std::iter::repeat(g * inv).take(vol));
    }
    dx
}

/// Per-sample, per-channel normalization to zero mean and unit variance
/// (biased variance, no affine parameters).
pub(crate) fn instance_norm<T: Scalar>(x: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (n, c, _) = dims5("instance_norm", x.shape())?;
    let vol = x.numel() / (n * c);
    let mut out = Vec::with_capacity(x.numel());
    for ch in x.data().chunks(vol) {
        let (mean, inv_std) = moments(ch, eps);
        out.extend(
            ch.iter()
                .map(|&v| T::from_f64_lossy((v.to_f64_lossy() - mean) * inv_std)),
        );
    }
    Tensor::new(x.shape(), out)
}

fn moments<T: Scalar>(ch: &[T], eps: f64) -> (f64, f64) {
    let len = ch.len() as f64;
    let mean = ch.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / len;
    let var = ch
        .iter()
        .map(|v| {
            let d = v.to_f64_lossy() - mean;
            d * d
        })
        .sum::<f64>()
        / len;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn instance_norm_backward<T: Scalar>(x: &Tensor<T>, eps: f64, dy: &[T]) -> Vec<T> {
    let vol = x.numel() / (x.shape()[0] * x.shape()[1]);
    let mut dx = Vec::with_capacity(x.numel());
    for (ch, g) in x.data().chunks(vol).zip(dy.chunks(vol)) {
        let (mean, inv_std) = moments(ch, eps);
        let len = vol as f64;
        let mut g_mean = 0.0;
        let mut gy_mean = 0.0;
        for (&v, &gv) in ch.iter().zip(g) {
            let y = (v.to_f64_lossy() - mean) * inv_std;
            g_mean += gv.to_f64_lossy();
            gy_mean += gv.to_f64_lossy() * y;
        }
        g_mean /= len;
        gy_mean /= len;
        dx.extend(ch.iter().zip(g).map(|(&v, &gv)| {
            let y = (v.to_f64_lossy() - mean) * inv_std;
            T::from_f64_lossy(inv_std * (gv.to_f64_lossy() - g_mean - y * gy_mean))
        }));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_block_maximum() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2, 2], (1..=8).map(|v| v as f32).collect()).unwrap();
        let (y, arg) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[8.0]);
        assert_eq!(arg, vec![7]);
    }

    #[test]
    fn maxpool_ties_resolve_to_lowest_index() {
        let x = Tensor::<f32>::full(&[1, 1, 2, 2, 2], 3.0).unwrap();
        let (_, arg) = maxpool2(&x).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 3, 2]).unwrap();
        let err = maxpool2(&x).unwrap_err();
        assert!(matches!(
            err,
            TensorError::OddExtent {
                axis: "height",
                extent: 3,
                ..
            }
        ));
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = Tensor::<f32>::full(&[1, 2, 2, 3, 2], 0.37).unwrap();
        let y = resize_trilinear(&x, [4, 6, 4]).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.37).abs() < 1e-7));
    }

    #[test]
    fn upsample_by_two_interpolates_quarter_points() {
        // 1D profile [0, 1] along width → [0, 0.25, 0.75, 1]
        let x = Tensor::<f64>::new(&[1, 1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = resize_trilinear(&x, [1, 1, 4]).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn global_avg_pool_of_ones() {
        let x = Tensor::<f32>::full(&[1, 3, 2, 2, 2], 1.0).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn avgpool_averages_blocks() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2, 2], (1..=8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(avgpool(&x, 2).unwrap().data(), &[4.5]);
        assert!(avgpool(&x, 3).is_err());
    }

    #[test]
    fn instance_norm_standardizes_each_channel() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 2, 2, 2], |i| (i as f64 * 1.3).sin() * 4.0 + 2.0)
            .unwrap();
        let y = instance_norm(&x, 0.0).unwrap();
        for ch in y.data().chunks(8) {
            let m = ch.iter().sum::<f64>() / 8.0;
            let v = ch.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }
}
