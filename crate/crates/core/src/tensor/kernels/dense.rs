//! Matrix ops, softmax, and the scalar-valued reductions used as losses.

use crate::tensor::{dims2, Result, Scalar, Tensor, TensorError};

pub(crate) fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f) = dims2("linear", x.shape())?;
    let (wf, k) = dims2("linear", w.shape())?;
    if wf != f {
        return Err(TensorError::DimMismatch {
            op: "linear",
            dim: "feature",
            left: f,
            right: wf,
        });
    }
    if b.shape() != [k] {
        return Err(TensorError::DimMismatch {
            op: "linear",
            dim: "bias length",
            left: b.numel(),
            right: k,
        });
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    T::gemm(
        n,
        f,
        k,
        x.data(),
        false,
        w.data(),
        false,
        T::one(),
        &mut out,
    );
    Tensor::new(&[n, k], out)
}

/// Returns `(dx, dw, db)`.
pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    let mut dx = vec![T::zero(); n * f];
    T::gemm(n, k, f, dy, false, w.data(), true, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); f * k];
    T::gemm(f, n, k, x.data(), true, dy, false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); k];
    for row in dy.chunks(k) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    (dx, dw, db)
}

/// Row-wise softmax in max-subtracted form.
pub(crate) fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = dims2("softmax", x.shape())?;
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(k) {
        out.extend(softmax_row(row).into_iter().map(T::from_f64_lossy));
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &[T]) -> Vec<T> {
    let k = y.shape()[1];
    let mut dx = Vec::with_capacity(y.numel());
    for (row, g) in y.data().chunks(k).zip(dy.chunks(k)) {
        let dot: f64 = row
            .iter()
            .zip(g)
            .map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum();
        dx.extend(
            row.iter()
                .zip(g)
                .map(|(&s, &gv)| T::from_f64_lossy(s.to_f64_lossy() * (gv.to_f64_lossy() - dot))),
        );
    }
    dx
}

pub(crate) fn check_labels(n: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(TensorError::DimMismatch {
            op: "cross_entropy",
            dim: "batch",
            left: n,
            right: labels.len(),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(TensorError::LabelOutOfRange {
            row,
            label,
            classes: k,
        });
    }
    Ok(())
}

/// Batch mean of `−log softmax(logits)[label]`.
pub(crate) fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = dims2("cross_entropy", logits.shape())?;
    check_labels(n, k, labels)?;
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
        let lse = row
            .iter()
            .map(|v| (v.to_f64_lossy() - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        total += lse - row[label].to_f64_lossy();
    }
    Ok(Tensor::scalar(T::from_f64_lossy(total / n as f64)))
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    g: T,
) -> Vec<T> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let scale = g.to_f64_lossy() / n as f64;
    let mut dx = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let p = softmax_row(row);
        dx.extend(p.iter().enumerate().map(|(j, &pj)| {
            let onehot = if j == label { 1.0 } else { 0.0 };
            T::from_f64_lossy((pj - onehot) * scale)
        }));
    }
    dx
}

pub(crate) fn check_l1_shapes(pred: &[usize], target: &[usize], mask: &[bool]) -> Result<()> {
    if pred != target {
        return Err(TensorError::Incompatible {
            op: "masked_l1",
            left: pred.to_vec(),
            right: target.to_vec(),
        });
    }
    if mask.len() != pred[0] {
        return Err(TensorError::DimMismatch {
            op: "masked_l1",
            dim: "mask length",
            left: pred[0],
            right: mask.len(),
        });
    }
    Ok(())
}

/// Mean absolute difference over every voxel of the masked-in samples; zero when
/// no sample is masked in.
pub(crate) fn masked_l1<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &[bool],
) -> Result<Tensor<T>> {
    check_l1_shapes(pred.shape(), target.shape(), mask)?;
    let per = pred.numel() / pred.shape()[0];
    let paired = mask.iter().filter(|&&m| m).count();
    if paired == 0 {
        return Ok(Tensor::scalar(T::zero()));
    }
    let mut total = 0.0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let p = &pred.data()[i * per..(i + 1) * per];
        let t = &target.data()[i * per..(i + 1) * per];
        total += p
            .iter()
            .zip(t)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .sum::<f64>();
    }
    Ok(Tensor::scalar(T::from_f64_lossy(
        total / (paired * per) as f64,
    )))
}

pub(crate) fn masked_l1_backward<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &[bool],
    g: T,
) -> Vec<T> {
    let per = pred.numel() / pred.shape()[0];
    let paired = mask.iter().filter(|&&m| m).count();
    let mut dx = vec![T::zero(); pred.numel()];
    if paired == 0 {
        return dx;
    }
    let scale = g / T::from_f64_lossy((paired * per) as f64);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for j in i * per..(i + 1) * per {
            let d = pred.data()[j] - target.data()[j];
            dx[j] = if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            };
        }
    }
    dx
}

pub(crate) fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(T::from_f64_lossy(
        x.data().iter().map(|v| v.to_f64_lossy()).sum(),
    ))
}

pub(crate) fn mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s: f64 = x.data().iter().map(|v| v.to_f64_lossy()).sum();
    Tensor::scalar(T::from_f64_lossy(s / x.numel() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_is_identity() {
        let x = Tensor::<f32>::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -4.0]).unwrap();
        let w = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::<f64>::zeros(&[1, 3]).unwrap();
        for &p in softmax(&x).unwrap().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_handles_huge_logits() {
        let x = Tensor::<f32>::new(&[1, 3], vec![1000.0, 1000.0, 999.0]).unwrap();
        let y = softmax(&x).unwrap();
        let e = (-1.0f64).exp();
        let want = [1.0 / (2.0 + e), 1.0 / (2.0 + e), e / (2.0 + e)];
        for (a, b) in y.data().iter().zip(want) {
            assert!(a.is_finite());
            assert!((*a as f64 - b).abs() < 1e-7);
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let x = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert!(matches!(
            cross_entropy(&x, &[0, 3]),
            Err(TensorError::LabelOutOfRange {
                row: 1,
                label: 3,
                ..
            })
        ));
    }

    #[test]
    fn masked_l1_with_empty_mask_is_zero() {
        let p = Tensor::<f32>::full(&[2, 1, 2, 2, 2], 1.0).unwrap();
        let t = Tensor::<f32>::zeros(&[2, 1, 2, 2, 2]).unwrap();
        assert_eq!(masked_l1(&p, &t, &[false, false]).unwrap().data(), &[0.0]);
        assert_eq!(masked_l1(&p, &t, &[true, false]).unwrap().data(), &[1.0]);
    }
}
