//! Reverse-mode automatic differentiation over a linear record of operations.
//!
//! Every operator method on [`Tape`] evaluates its forward kernel immediately,
//! stores the result as a new node, and returns a [`Var`] handle to it. Calling
//! [`Tape::backward`] on a single-element node walks the record in reverse and
//! accumulates gradients into every reachable leaf whose tensor requires grad.
//! A tape supports one backward pass; a second call is an error.

use std::sync::Arc;

use super::kernels::{conv, dense, pointwise, spatial};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward rule of a user-defined operation.
pub type ForwardFn<T> = Arc<dyn Fn(&[&Tensor<T>]) -> Result<Tensor<T>> + Send + Sync>;
/// Vector-Jacobian product of a user-defined operation: given the inputs, the
/// output and the output gradient, returns one gradient buffer per input.
pub type BackwardFn<T> = Arc<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>> + Send + Sync>;

enum Op<T> {
    Leaf,
    Conv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MaxPool(Var),
    AvgPool(Var, usize),
    Resize(Var, [usize; 3]),
    Concat(Var, Var),
    GlobalAvgPool(Var),
    InstanceNorm(Var, f64),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax(Var),
    CrossEntropy(Var, Vec<usize>),
    MaskedL1 {
        pred: Var,
        target: Var,
        mask: Vec<bool>,
    },
    Sum(Var),
    Mean(Var),
    /// Passes the value through and blocks gradient flow.
    Detach(Var),
    Custom {
        name: String,
        inputs: Vec<Var>,
        forward: ForwardFn<T>,
        backward: BackwardFn<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv3d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Log(x)
            | Op::Scale(x, _)
            | Op::MaxPool(x)
            | Op::AvgPool(x, _)
            | Op::Resize(x, _)
            | Op::GlobalAvgPool(x)
            | Op::InstanceNorm(x, _)
            | Op::Softmax(x)
            | Op::CrossEntropy(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Detach(x) => vec![*x],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::MaskedL1 { pred, target, .. } => vec![*pred, *target],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    /// Whether gradients flow from this node to its inputs.
    fn is_differentiable(&self) -> bool {
        !matches!(self, Op::Leaf | Op::Detach(_))
    }

    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv3d { .. } => "conv3d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MaxPool(_) => "maxpool3d",
            Op::AvgPool(..) => "avgpool3d",
            Op::Resize(..) => "upsample_trilinear",
            Op::Concat(..) => "concat_channels",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::InstanceNorm(..) => "instance_norm",
            Op::Linear { .. } => "linear",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::MaskedL1 { .. } => "masked_l1",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Detach(_) => "detach",
            Op::Custom { name, .. } => name,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// True when some leaf requiring grad is upstream of this node.
    tracked: bool,
}

/// The computation record.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let tracked = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`]; `None` if the leaf does not
    /// require grad or the loss does not depend on it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Gradient of a leaf, with zeros for leaves the loss does not reach.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<T> {
        self.grad(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); self.value(v).numel()])
    }

    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        let value = self.eval(&op)?;
        let tracked = op.is_differentiable() && op.inputs().iter().any(|i| self.nodes[i.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn eval(&self, op: &Op<T>) -> Result<Tensor<T>> {
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => conv::forward(
                self.val(*input),
                self.val(*weight),
                bias.map(|b| self.val(b)),
                *stride,
                *padding,
            )?,
            Op::Relu(x) => pointwise::map(self.val(*x), pointwise::relu),
            Op::Sigmoid(x) => pointwise::map(self.val(*x), pointwise::sigmoid),
            Op::Log(x) => pointwise::map(self.val(*x), |v| v.ln()),
            Op::Add(a, b) => pointwise::add(self.val(*a), self.val(*b))?,
            Op::Mul(a, b) => pointwise::mul(self.val(*a), self.val(*b))?,
            Op::Scale(x, s) => pointwise::map(self.val(*x), |v| v * *s),
            Op::MaxPool(x) => spatial::maxpool2(self.val(*x))?.0,
            Op::AvgPool(x, f) => spatial::avgpool(self.val(*x), *f)?,
            Op::Resize(x, dims) => spatial::resize_trilinear(self.val(*x), *dims)?,
            Op::Concat(a, b) => spatial::concat_channels(self.val(*a), self.val(*b))?,
            Op::GlobalAvgPool(x) => spatial::global_avg_pool(self.val(*x))?,
            Op::InstanceNorm(x, eps) => spatial::instance_norm(self.val(*x), *eps)?,
            Op::Linear {
                input,
                weight,
                bias,
            } => dense::linear(self.val(*input), self.val(*weight), self.val(*bias))?,
            Op::Softmax(x) => dense::softmax(self.val(*x))?,
            Op::CrossEntropy(x, labels) => dense::cross_entropy(self.val(*x), labels)?,
            Op::MaskedL1 { pred, target, mask } => {
                dense::masked_l1(self.val(*pred), self.val(*target), mask)?
            }
            Op::Sum(x) => dense::sum(self.val(*x)),
            Op::Mean(x) => dense::mean(self.val(*x)),
            Op::Detach(x) => self.val(*x).clone().with_requires_grad(false),
            Op::Custom {
                inputs, forward, ..
            } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|i| self.val(*i)).collect();
                forward(&vals)?
            }
        })
    }

    // ---- operators -------------------------------------------------------

    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.push(Op::Conv3d {
            input,
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Log(x))
    }

    /// Element-wise sum; `b` may broadcast a 1-extent channel axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    /// Element-wise product; `b` may broadcast a 1-extent channel axis.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.push(Op::Scale(x, s))
    }

    /// 2×2×2 max pooling, stride 2.
    pub fn maxpool3d(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MaxPool(x))
    }

    pub fn avgpool3d(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.push(Op::AvgPool(x, factor))
    }

    pub fn upsample_trilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 5 {
            return Err(TensorError::Rank {
                op: "upsample_trilinear",
                expected: 5,
                shape: s.to_vec(),
            });
        }
        let dims = [s[2] * factor, s[3] * factor, s[4] * factor];
        self.resize_trilinear(x, dims)
    }

    pub fn resize_trilinear(&mut self, x: Var, dims: [usize; 3]) -> Result<Var> {
        self.push(Op::Resize(x, dims))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Concat(a, b))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.push(Op::GlobalAvgPool(x))
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.push(Op::InstanceNorm(x, eps))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.push(Op::Linear {
            input,
            weight,
            bias,
        })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Softmax(x))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.push(Op::CrossEntropy(logits, labels.to_vec()))
    }

    pub fn masked_l1(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        self.push(Op::MaskedL1 {
            pred,
            target,
            mask: mask.to_vec(),
        })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    pub fn detach(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Detach(x))
    }

    /// Records an operation with caller-supplied forward and gradient rules.
    pub fn custom(
        &mut self,
        name: &str,
        inputs: &[Var],
        forward: ForwardFn<T>,
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        self.push(Op::Custom {
            name: name.to_string(),
            inputs: inputs.to_vec(),
            forward,
            backward,
        })
    }

    // ---- differentiation ---------------------------------------------------

    /// Propagates gradients from a single-element `loss` to every reachable leaf
    /// that requires grad. Gradients from multiple uses of a node accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let lv = self.val(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].value.set_grad(g);
                continue;
            }
            for (input, gi) in self.vjp(idx, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(gi).for_each(|(a, b)| *a = *a + b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient contributions to the tracked inputs of node `idx`.
    fn vjp(&self, idx: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Detach(_) => {}
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (dx, dw, db) = conv::backward(
                    self.val(*input),
                    self.val(*weight),
                    bias.is_some(),
                    *stride,
                    *padding,
                    g,
                    self.needs(*input),
                )?;
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                out.push((*weight, dw));
                if let (Some(b), Some(db)) = (bias, db) {
                    out.push((*b, db));
                }
            }
            Op::Relu(x) => {
                let xv = self.val(*x).data();
                let d = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let d = y
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                out.push((*x, d));
            }
            Op::Log(x) => {
                let d = self
                    .val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| gv / v)
                    .collect();
                out.push((*x, d));
            }
            Op::Add(a, b) => {
                let lay = pointwise::layout("add", self.shape(*a), self.shape(*b))?;
                out.push((*a, g.to_vec()));
                out.push((*b, pointwise::reduce_to(lay, g.to_vec())));
            }
            Op::Mul(a, b) => {
                let lay = pointwise::layout("mul", self.shape(*a), self.shape(*b))?;
                let bv = pointwise::expand(lay, self.val(*b).data());
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(&bv).map(|(&gv, &v)| gv * v).collect()));
                }
                if self.needs(*b) {
                    let full = g
                        .iter()
                        .zip(self.val(*a).data())
                        .map(|(&gv, &v)| gv * v)
                        .collect();
                    out.push((*b, pointwise::reduce_to(lay, full)));
                }
            }
            Op::Scale(x, s) => out.push((*x, g.iter().map(|&gv| gv * *s).collect())),
            Op::MaxPool(x) => {
                let (_, arg) = spatial::maxpool2(self.val(*x))?;
                let mut d = vec![T::zero(); self.val(*x).numel()];
                for (&i, &gv) in arg.iter().zip(g) {
                    d[i] = d[i] + gv;
                }
                out.push((*x, d));
            }
            Op::AvgPool(x, f) => {
                out.push((*x, spatial::avgpool_backward(self.shape(*x), *f, g)));
            }
            Op::Resize(x, dims) => {
                out.push((
                    *x,
                    spatial::resize_trilinear_backward(self.shape(*x), *dims, g),
                ));
            }
            Op::Concat(a, b) => {
                let (ga, gb) = spatial::split_channels(self.shape(*a), self.shape(*b), g);
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::GlobalAvgPool(x) => {
                out.push((*x, spatial::global_avg_pool_backward(self.shape(*x), g)));
            }
            Op::InstanceNorm(x, eps) => {
                out.push((*x, spatial::instance_norm_backward(self.val(*x), *eps, g)));
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (dx, dw, db) = dense::linear_backward(self.val(*input), self.val(*weight), g);
                out.push((*input, dx));
                out.push((*weight, dw));
                out.push((*bias, db));
            }
            Op::Softmax(x) => out.push((*x, dense::softmax_backward(y, g))),
            Op::CrossEntropy(x, labels) => {
                out.push((
                    *x,
                    dense::cross_entropy_backward(self.val(*x), labels, g[0]),
                ));
            }
            Op::MaskedL1 { pred, target, mask } => {
                let dp = dense::masked_l1_backward(self.val(*pred), self.val(*target), mask, g[0]);
                if self.needs(*target) {
                    out.push((*target, dp.iter().map(|&v| -v).collect()));
                }
                out.push((*pred, dp));
            }
            Op::Sum(x) => out.push((*x, vec![g[0]; self.val(*x).numel()])),
            Op::Mean(x) => {
                let n = self.val(*x).numel();
                out.push((*x, vec![g[0] / T::from_f64_lossy(n as f64); n]));
            }
            Op::Custom {
                name,
                inputs,
                backward,
                ..
            } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|i| self.val(*i)).collect();
                let grads = backward(&vals, y, g);
                if grads.len() != inputs.len() {
                    return Err(TensorError::Invalid(format!(
                        "custom op {name}: backward returned {} gradients for {} inputs",
                        grads.len(),
                        inputs.len()
                    )));
                }
                out.extend(inputs.iter().copied().zip(grads));
            }
        }
        out.retain(|(v, _)| self.needs(*v));
        Ok(out)
    }

    /// Re-executes every recorded operation from its recorded inputs and checks
    /// that the outputs are bitwise identical to the stored ones.
    pub fn verify_replay(&self) -> Result<bool> {
        for node in &self.nodes {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            if !self.eval(&node.op)?.bitwise_eq(&node.value) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
