//! Direct 3D convolution over contiguous output rows.

use crate::tensor::{dims5, Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        const OP: &str = "conv3d";
        let (n, c_in, spatial) = dims5(OP, input)?;
        let (c_out, wc_in, kdims) = dims5(OP, weight)?;
        if wc_in != c_in {
            return Err(TensorError::DimMismatch {
                op: OP,
                dim: "input channels",
                left: c_in,
                right: wc_in,
            });
        }
        let k = kdims[0];
        if kdims[1] != k || kdims[2] != k {
            return Err(TensorError::Invalid(format!(
                "conv3d: kernel must be cubic, got {kdims:?}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::Invalid(
                "conv3d: stride must be positive".into(),
            ));
        }
        if let Some(b) = bias {
            if b != [c_out] {
                return Err(TensorError::DimMismatch {
                    op: OP,
                    dim: "bias length",
                    left: b.iter().product(),
                    right: c_out,
                });
            }
        }
        let mut output = [0; 3];
        for (axis, name) in ["depth", "height", "width"].iter().enumerate() {
            let padded = spatial[axis] + 2 * padding;
            if k > padded {
                return Err(TensorError::KernelTooLarge {
                    op: OP,
                    axis: name,
                    kernel: k,
                    padded,
                });
            }
            output[axis] = (padded - k) / stride + 1;
        }
        Ok(Self {
            n,
            c_in,
            c_out,
            k,
            stride,
            padding,
            input: spatial,
            output,
        })
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k * self.k
    }

    pub fn output_shape(&self) -> [usize; 5] {
        [
            self.n,
            self.c_out,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }
}

/// For one kernel offset along one axis: the range of output positions that read
/// an in-bounds input, and the input coordinate of output position `o`.
fn valid_range(
    out_len: usize,
    in_len: usize,
    offset: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    // input = o*stride + offset - pad must lie in [0, in_len)
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    let hi = if in_len + pad <= offset {
        0
    } else {
        ((in_len + pad - offset - 1) / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

/// Visits every (output row, input row) pair that kernel offset `(kd, kh)`
/// connects: `f(in_row, out_row)` with both as flat offsets of the row start
/// within one channel.
fn for_each_row(g: &ConvGeometry, kd: usize, kh: usize, mut f: impl FnMut(usize, usize)) {
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let (s, p) = (g.stride, g.padding);
    let (d_lo, d_hi) = valid_range(od, id, kd, s, p);
    let (h_lo, h_hi) = valid_range(oh, ih, kh, s, p);
    for o_d in d_lo..d_hi {
        let z = o_d * s + kd - p;
        for o_h in h_lo..h_hi {
            let y = o_h * s + kh - p;
            f((z * ih + y) * iw, (o_d * oh + o_h) * ow);
        }
    }
}

#[inline(always)]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}

/// Dot product with eight independent partial sums (fixed association order).
#[inline(always)]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ar.iter().zip(br) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Direct convolution: every weight scales a shifted input row into an output row.
fn forward_rows<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), b.map(|t| t.shape()), stride, padding)?;
    let (ivol, ovol, k) = (g.in_volume(), g.out_volume(), g.k);
    let (s, p) = (g.stride, g.padding);
    let mut out = vec![T::zero(); g.n * g.c_out * ovol];
    for n in 0..g.n {
        let xn = &x.data()[n * g.c_in * ivol..(n + 1) * g.c_in * ivol];
        for co in 0..g.c_out {
            let oc = &mut out[(n * g.c_out + co) * ovol..(n * g.c_out + co + 1) * ovol];
            if let Some(b) = b {
                oc.fill(b.data()[co]);
            }
            for ci in 0..g.c_in {
                let xc = &xn[ci * ivol..(ci + 1) * ivol];
                let wc = &w.data()[(co * g.c_in + ci) * k * k * k..];
                for kd in 0..k {
                    for kh in 0..k {
                        for kw in 0..k {
                            let wv = wc[(kd * k + kh) * k + kw];
                            let (w_lo, w_hi) = valid_range(g.output[2], g.input[2], kw, s, p);
                            if w_lo == w_hi {
                                continue;
                            }
                            for_each_row(&g, kd, kh, |xr, or| {
                                if s == 1 {
                                    let xs = xr + w_lo + kw - p;
                                    axpy(
                                        &mut oc[or + w_lo..or + w_hi],
                                        wv,
                                        &xc[xs..xs + (w_hi - w_lo)],
                                    );
                                } else {
                                    for o_w in w_lo..w_hi {
                                        oc[or + o_w] =
                                            oc[or + o_w] + wv * xc[xr + o_w * s + kw - p];
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&g.output_shape(), out)
}

fn backward_rows<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    dy: &[T],
    need_dx: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Option<Vec<T>>)> {
    let g = ConvGeometry::new(x.shape(), w.shape(), None, stride, padding)?;
    let (ivol, ovol, k) = (g.in_volume(), g.out_volume(), g.k);
    let (s, p) = (g.stride, g.padding);
    let k3 = k * k * k;
    let mut dw = vec![T::zero(); g.c_out * g.patch_len()];
    let mut db = has_bias.then(|| vec![T::zero(); g.c_out]);
    let mut dx = need_dx.then(|| vec![T::zero(); x.numel()]);
    for n in 0..g.n {
        let xn = &x.data()[n * g.c_in * ivol..(n + 1) * g.c_in * ivol];
        let dyn_ = &dy[n * g.c_out * ovol..(n + 1) * g.c_out * ovol];
        if let Some(db) = db.as_mut() {
            for (c, chunk) in dyn_.chunks(ovol).enumerate() {
                db[c] = db[c] + chunk.iter().copied().sum::<T>();
            }
        }
        for co in 0..g.c_out {
            let dyc = &dyn_[co * ovol..(co + 1) * ovol];
            for ci in 0..g.c_in {
                let xc = &xn[ci * ivol..(ci + 1) * ivol];
                let base = (co * g.c_in + ci) * k3;
                for kd in 0..k {
                    for kh in 0..k {
                        for kw in 0..k {
                            let (w_lo, w_hi) = valid_range(g.output[2], g.input[2], kw, s, p);
                            if w_lo == w_hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for_each_row(&g, kd, kh, |xr, or| {
                                acc = acc
                                    + if s == 1 {
                                        let xs = xr + w_lo + kw - p;
                                        dot(&dyc[or + w_lo..or + w_hi], &xc[xs..xs + (w_hi - w_lo)])
                                    } else {
                                        (w_lo..w_hi).fold(T::zero(), |a, o_w| {
                                            a + dyc[or + o_w] * xc[xr + o_w * s + kw - p]
                                        })
                                    };
                            });
                            let i = base + (kd * k + kh) * k + kw;
                            dw[i] = dw[i] + acc;
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.c_in * ivol..(n + 1) * g.c_in * ivol];
            for ci in 0..g.c_in {
                let dxc = &mut dxn[ci * ivol..(ci + 1) * ivol];
                for co in 0..g.c_out {
                    let dyc = &dyn_[co * ovol..(co + 1) * ovol];
                    let wc = &w.data()[(co * g.c_in + ci) * k3..];
                    for kd in 0..k {
                        for kh in 0..k {
                            for kw in 0..k {
                                let wv = wc[(kd * k + kh) * k + kw];
                                let (w_lo, w_hi) = valid_range(g.output[2], g.input[2], kw, s, p);
                                if w_lo == w_hi {
                                    continue;
                                }
                                for_each_row(&g, kd, kh, |xr, or| {
                                    if s == 1 {
                                        let xs = xr + w_lo + kw - p;
                                        axpy(
                                            &mut dxc[xs..xs + (w_hi - w_lo)],
                                            wv,
                                            &dyc[or + w_lo..or + w_hi],
                                        );
                                    } else {
                                        for o_w in w_lo..w_hi {
                                            let xi = xr + o_w * s + kw - p;
                                            dxc[xi] = dxc[xi] + wv * dyc[or + o_w];
                                        }
                                    }
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

/// Padded, flattened view used by unit-stride convolutions. With the input
/// zero-padded to `Dp×Hp×Wp` and outputs stored on the same row/plane pitch,
/// kernel offset `(kd, kh, kw)` is a constant shift of the flat index, so each
/// weight touches one long contiguous run instead of many short rows.
struct Flat {
    dp: usize,
    hp: usize,
    wp: usize,
    /// Flat length covering every valid output position.
    run: usize,
}

impl Flat {
    fn new(g: &ConvGeometry) -> Self {
        let p = g.padding;
        let [d, h, w] = g.input;
        let [od, oh, ow] = g.output;
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        Self {
            dp: d + 2 * p,
            hp,
            wp,
            run: ((od - 1) * hp + (oh - 1)) * wp + ow,
        }
    }

    fn volume(&self) -> usize {
        self.dp * self.hp * self.wp
    }

    fn shift(&self, kd: usize, kh: usize, kw: usize) -> usize {
        (kd * self.hp + kh) * self.wp + kw
    }

    /// Copies `[c, D, H, W]` into the interior of a zeroed padded buffer.
    fn pad<T: Scalar>(&self, g: &ConvGeometry, src: &[T], channels: usize, dst: &mut Vec<T>) {
        let p = g.padding;
        let [d, h, w] = g.input;
        dst.clear();
        dst.resize(channels * self.volume(), T::zero());
        for c in 0..channels {
            for z in 0..d {
                for y in 0..h {
                    let s = ((c * d + z) * h + y) * w;
                    let o = c * self.volume() + ((z + p) * self.hp + y + p) * self.wp + p;
                    dst[o..o + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }

    /// Flat shift of every kernel offset, in weight order.
    fn shifts(&self, k: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(k * k * k);
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    v.push(self.shift(kd, kh, kw));
                }
            }
        }
        v
    }

    /// Flat index of output position `(z, y, 0)` within one channel.
    fn out_row(&self, z: usize, y: usize) -> usize {
        (z * self.hp + y) * self.wp
    }
}

/// Elements of a flat run processed together, sized so the accumulator block
/// and its source windows stay cache resident.
const BLOCK: usize = 1024;

/// `acc[i] += Σ_t w_t · src[i + shift_t]`, taps applied in order (three at a
/// time, each added separately so the rounding matches one-by-one updates).
#[inline(always)]
fn correlate_block<T: Scalar>(acc: &mut [T], src: &[T], start: usize, taps: &[(usize, T)]) {
    let len = acc.len();
    let mut t = taps.chunks_exact(3);
    for c in &mut t {
        let (s0, w0) = c[0];
        let (s1, w1) = c[1];
        let (s2, w2) = c[2];
        let x0 = &src[start + s0..start + s0 + len];
        let x1 = &src[start + s1..start + s1 + len];
        let x2 = &src[start + s2..start + s2 + len];
        for (((a, &v0), &v1), &v2) in acc.iter_mut().zip(x0).zip(x1).zip(x2) {
            *a = ((*a + w0 * v0) + w1 * v1) + w2 * v2;
        }
    }
    for &(s, w) in t.remainder() {
        axpy(acc, w, &src[start + s..start + s + len]);
    }
}

/// Sum of sixteen lane partials in a fixed tree order.
#[inline(always)]
fn reduce16<T: Scalar>(l: &[T; 16]) -> T {
    let mut h = [T::zero(); 8];
    for i in 0..8 {
        h[i] = l[i] + l[i + 8];
    }
    ((h[0] + h[4]) + (h[1] + h[5])) + ((h[2] + h[6]) + (h[3] + h[7]))
}

/// `out[t] += Σ_i dy[i] · src[start + i + shift_t]` for every tap. Three taps
/// share each pass over `dy`, each with sixteen independent lane sums.
#[inline(always)]
fn dot_block<T: Scalar>(dy: &[T], src: &[T], start: usize, shifts: &[usize], out: &mut [T]) {
    let len = dy.len();
    let main = len - len % 16;
    let mut taps = shifts.chunks_exact(3);
    let mut o = 0;
    for c in &mut taps {
        let x0 = &src[start + c[0]..start + c[0] + len];
        let x1 = &src[start + c[1]..start + c[1] + len];
        let x2 = &src[start + c[2]..start + c[2] + len];
        let mut a0 = [T::zero(); 16];
        let mut a1 = [T::zero(); 16];
        let mut a2 = [T::zero(); 16];
        for i in (0..main).step_by(16) {
            let d = &dy[i..i + 16];
            let (v0, v1, v2) = (&x0[i..i + 16], &x1[i..i + 16], &x2[i..i + 16]);
            for l in 0..16 {
                a0[l] = a0[l] + d[l] * v0[l];
                a1[l] = a1[l] + d[l] * v1[l];
                a2[l] = a2[l] + d[l] * v2[l];
            }
        }
        let (mut t0, mut t1, mut t2) = (T::zero(), T::zero(), T::zero());
        for i in main..len {
            t0 = t0 + dy[i] * x0[i];
            t1 = t1 + dy[i] * x1[i];
            t2 = t2 + dy[i] * x2[i];
        }
        out[o] = out[o] + (reduce16(&a0) + t0);
        out[o + 1] = out[o + 1] + (reduce16(&a1) + t1);
        out[o + 2] = out[o + 2] + (reduce16(&a2) + t2);
        o += 3;
    }
    for &s in taps.remainder() {
        out[o] = out[o] + dot(dy, &src[start + s..start + s + len]);
        o += 1;
    }
}

/// Defines `$name` to run `$generic` compiled for the widest vector extension
/// the CPU offers. Only the vector width changes: fused multiply-add stays
/// disabled, so every path rounds identically.
macro_rules! dispatch {
    ($name:ident, $generic:ident, ($($arg:ident: $ty:ty),*) -> $ret:ty) => {
        fn $name<T: Scalar>($($arg: $ty),*) -> $ret {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f")]
                unsafe fn avx512<T: Scalar>($($arg: $ty),*) -> $ret {
                    $generic($($arg),*)
                }
                #[target_feature(enable = "avx2")]
                unsafe fn avx2<T: Scalar>($($arg: $ty),*) -> $ret {
                    $generic($($arg),*)
                }
                // SAFETY: each path runs only after its feature was detected.
                if std::is_x86_feature_detected!("avx512f") {
                    return unsafe { avx512($($arg),*) };
                }
                if std::is_x86_feature_detected!("avx2") {
                    return unsafe { avx2($($arg),*) };
                }
            }
            $generic($($arg),*)
        }
    };
}

dispatch!(forward_flat, forward_flat_generic, (g: &ConvGeometry, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T>);
dispatch!(backward_flat, backward_flat_generic, (g: &ConvGeometry, x: &[T], w: &[T], dy: &[T], dw: &mut [T], dx: Option<&mut [T]>) -> ());

#[inline(always)]
fn forward_flat_generic<T: Scalar>(g: &ConvGeometry, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let f = Flat::new(g);
    let (ivol, ovol, k) = (g.in_volume(), g.out_volume(), g.k);
    let k3 = k * k * k;
    let [od, oh, ow] = g.output;
    let shifts = f.shifts(k);
    let mut out = vec![T::zero(); g.n * g.c_out * ovol];
    let mut xp = Vec::new();
    let mut acc = vec![T::zero(); f.run];
    let mut taps = vec![(0, T::zero()); k3];
    for n in 0..g.n {
        f.pad(
            g,
            &x[n * g.c_in * ivol..(n + 1) * g.c_in * ivol],
            g.c_in,
            &mut xp,
        );
        for co in 0..g.c_out {
            acc.fill(T::zero());
            for start in (0..f.run).step_by(BLOCK) {
                let a = &mut acc[start..(start + BLOCK).min(f.run)];
                for ci in 0..g.c_in {
                    let wc = &w[(co * g.c_in + ci) * k3..(co * g.c_in + ci + 1) * k3];
                    for (t, (&s, &wv)) in taps.iter_mut().zip(shifts.iter().zip(wc)) {
                        *t = (s, wv);
                    }
                    correlate_block(a, &xp[ci * f.volume()..(ci + 1) * f.volume()], start, &taps);
                }
            }
            let bias = b.map_or(T::zero(), |b| b[co]);
            let oc = &mut out[(n * g.c_out + co) * ovol..(n * g.c_out + co + 1) * ovol];
            for z in 0..od {
                for y in 0..oh {
                    let r = f.out_row(z, y);
                    let o = (z * oh + y) * ow;
                    for (dst, &v) in oc[o..o + ow].iter_mut().zip(&acc[r..r + ow]) {
                        *dst = v + bias;
                    }
                }
            }
        }
    }
    out
}

#[inline(always)]
fn backward_flat_generic<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let f = Flat::new(g);
    let (ivol, ovol, k) = (g.in_volume(), g.out_volume(), g.k);
    let k3 = k * k * k;
    let [od, oh, ow] = g.output;
    let [d, h, wd] = g.input;
    let p = g.padding;
    let shifts = f.shifts(k);
    let smax = shifts[k3 - 1];
    let mut xp = Vec::new();
    // dY on the padded pitch, offset by `smax` zeros on both sides so the input
    // gradient can be gathered as a correlation with the flipped kernel.
    let dlen = f.volume() + 2 * smax;
    let mut dyq = vec![T::zero(); g.c_out * dlen];
    let mut dxp = vec![T::zero(); if dx.is_some() { f.volume() } else { 0 }];
    let mut taps = vec![(0, T::zero()); k3];
    let flipped: Vec<usize> = shifts.iter().map(|s| smax - s).collect();
    for n in 0..g.n {
        f.pad(
            g,
            &x[n * g.c_in * ivol..(n + 1) * g.c_in * ivol],
            g.c_in,
            &mut xp,
        );
        let dyn_ = &dy[n * g.c_out * ovol..(n + 1) * g.c_out * ovol];
        for co in 0..g.c_out {
            let dst = &mut dyq[co * dlen + smax..co * dlen + smax + f.run];
            for z in 0..od {
                for y in 0..oh {
                    let r = f.out_row(z, y);
                    let o = co * ovol + (z * oh + y) * ow;
                    dst[r..r + ow].copy_from_slice(&dyn_[o..o + ow]);
                }
            }
        }
        for co in 0..g.c_out {
            let dyc = &dyq[co * dlen + smax..co * dlen + smax + f.run];
            for start in (0..f.run).step_by(BLOCK) {
                let blk = &dyc[start..(start + BLOCK).min(f.run)];
                for ci in 0..g.c_in {
                    let base = (co * g.c_in + ci) * k3;
                    dot_block(
                        blk,
                        &xp[ci * f.volume()..(ci + 1) * f.volume()],
                        start,
                        &shifts,
                        &mut dw[base..base + k3],
                    );
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            for ci in 0..g.c_in {
                dxp.fill(T::zero());
                for start in (0..f.volume()).step_by(BLOCK) {
                    let a = &mut dxp[start..(start + BLOCK).min(f.volume())];
                    for co in 0..g.c_out {
                        let wc = &w[(co * g.c_in + ci) * k3..(co * g.c_in + ci + 1) * k3];
                        for (t, (&s, &wv)) in taps.iter_mut().zip(flipped.iter().zip(wc)) {
                            *t = (s, wv);
                        }
                        correlate_block(a, &dyq[co * dlen..(co + 1) * dlen], start, &taps);
                    }
                }
                let dxc = &mut dx[(n * g.c_in + ci) * ivol..(n * g.c_in + ci + 1) * ivol];
                for z in 0..d {
                    for y in 0..h {
                        let src = ((z + p) * f.hp + y + p) * f.wp + p;
                        let o = (z * h + y) * wd;
                        dxc[o..o + wd].copy_from_slice(&dxp[src..src + wd]);
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), b.map(|t| t.shape()), stride, padding)?;
    if g.stride != 1 {
        return forward_rows(x, w, b, stride, padding);
    }
    let out = forward_flat(&g, x.data(), w.data(), b.map(|b| b.data()));
    Tensor::new(&g.output_shape(), out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    dy: &[T],
    need_dx: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Option<Vec<T>>)> {
    let g = ConvGeometry::new(x.shape(), w.shape(), None, stride, padding)?;
    if g.stride != 1 {
        return backward_rows(x, w, has_bias, stride, padding, dy, need_dx);
    }
    let ovol = g.out_volume();
    let db = has_bias.then(|| {
        let mut db = vec![T::zero(); g.c_out];
        for (i, chunk) in dy.chunks(ovol).enumerate() {
            let c = i % g.c_out;
            db[c] = db[c] + chunk.iter().copied().sum::<T>();
        }
        db
    });
    let mut dw = vec![T::zero(); g.c_out * g.patch_len()];
    let mut dx = need_dx.then(|| vec![T::zero(); x.numel()]);
    backward_flat(&g, x.data(), w.data(), dy, &mut dw, dx.as_deref_mut());
    Ok((dx, dw, db))
}
