//! Element-wise operators and the channel-broadcast rule shared by `add` and `mul`.

use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// How the right operand lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    Same,
    /// `b` has a 1-extent channel axis: `(batch, channels, inner)`.
    ChannelBroadcast {
        batch: usize,
        channels: usize,
        inner: usize,
    },
}

pub(crate) fn layout(op: &'static str, a: &[usize], b: &[usize]) -> Result<Layout> {
    if a == b {
        return Ok(Layout::Same);
    }
    let compatible =
        a.len() >= 2 && a.len() == b.len() && b[1] == 1 && a[0] == b[0] && a[2..] == b[2..];
    if !compatible {
        return Err(TensorError::Incompatible {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(Layout::ChannelBroadcast {
        batch: a[0],
        channels: a[1],
        inner: a[2..].iter().product(),
    })
}

fn zip_with<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let data = match layout(op, a.shape(), b.shape())? {
        Layout::Same => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
        Layout::ChannelBroadcast {
            batch,
            channels,
            inner,
        } => {
            let mut out = Vec::with_capacity(a.numel());
            for n in 0..batch {
                let bn = &b.data()[n * inner..(n + 1) * inner];
                for c in 0..channels {
                    let off = (n * channels + c) * inner;
                    let an = &a.data()[off..off + inner];
                    out.extend(an.iter().zip(bn).map(|(&x, &y)| f(x, y)));
                }
            }
            out
        }
    };
    Tensor::new(a.shape(), data)
}

pub(crate) fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub(crate) fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

/// Sums a full-shape gradient down to the shape of a broadcast operand.
pub(crate) fn reduce_to<T: Scalar>(lay: Layout, full: Vec<T>) -> Vec<T> {
    match lay {
        Layout::Same => full,
        Layout::ChannelBroadcast {
            batch,
            channels,
            inner,
        } => {
            let mut out = vec![T::zero(); batch * inner];
            for n in 0..batch {
                let on = &mut out[n * inner..(n + 1) * inner];
                for c in 0..channels {
                    let off = (n * channels + c) * inner;
                    for (o, &g) in on.iter_mut().zip(&full[off..off + inner]) {
                        *o = *o + g;
                    }
                }
            }
            out
        }
    }
}

/// Expands a broadcast operand to the full shape of the left operand.
pub(crate) fn expand<T: Scalar>(lay: Layout, b: &[T]) -> Vec<T> {
    match lay {
        Layout::Same => b.to_vec(),
        Layout::ChannelBroadcast {
            batch,
            channels,
            inner,
        } => {
            let mut out = Vec::with_capacity(batch * channels * inner);
            for n in 0..batch {
                for _ in 0..channels {
                    out.extend_from_slice(&b[n * inner..(n + 1) * inner]);
                }
            }
            out
        }
    }
}

pub(crate) fn map<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("shape preserved")
}

pub(crate) fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Logistic sigmoid, saturating at the representable values nearest to 0 and 1
/// so the output always lies strictly inside the open unit interval.
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value()).min(T::one_minus_ulp())
}
