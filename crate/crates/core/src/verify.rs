//! Gradient verification suite: every differentiable operator plus an
//! end-to-end tiny network, each compared against central finite differences.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{BoundParams, UPetConfig, UPetModel};
use crate::objectives::combined_loss;
use crate::tensor::gradcheck::{finite_difference_check_many, GradCheckReport};
use crate::tensor::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// Maximum relative error accepted by the suite.
pub const TOLERANCE: f64 = 1e-5;
/// Central-difference step.
pub const STEP: f64 = 1e-3;

/// A deliberately wrong gradient rule, for exercising the suite itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The sigmoid entry uses `1.1 · σ(1 − σ)` as its derivative.
    SigmoidDerivative,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sigmoid" => Ok(Fault::SigmoidDerivative),
            other => Err(format!("unknown fault {other:?} (known: sigmoid)")),
        }
    }
}

/// One line of the suite's result table.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub max_rel_error: f64,
    pub elements: usize,
    pub passed: bool,
    /// Set when the check could not run at all.
    pub error: Option<String>,
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<(Vec<usize>, f64, f64)>,
    build: Build,
}

/// `Σ w_i y_i` with fixed, distinct weights, so every output element matters.
fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = Tensor::from_fn(&shape, |i| {
        ((i as f64 + 1.0) * 0.754_877_666_2).fract() - 0.4
    })?;
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

fn sigmoid_op(tape: &mut Tape<f64>, x: Var, factor: f64) -> Result<Var> {
    tape.custom(
        "sigmoid",
        &[x],
        Arc::new(|xs: &[&Tensor<f64>]| {
            let x = xs[0];
            Tensor::new(
                x.shape(),
                x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            )
        }),
        Arc::new(move |_xs: &[&Tensor<f64>], y: &Tensor<f64>, g: &[f64]| {
            vec![y
                .data()
                .iter()
                .zip(g)
                .map(|(s, g)| g * factor * s * (1.0 - s))
                .collect()]
        }),
    )
}

fn case(name: &'static str, inputs: Vec<(Vec<usize>, f64, f64)>, build: Build) -> Case {
    Case {
        name,
        inputs,
        build,
    }
}

fn operator_cases(fault: Option<Fault>) -> Vec<Case> {
    let u = |shape: &[usize]| (shape.to_vec(), -1.0, 1.0);
    let mut cases = vec![
        case(
            "conv3d",
            vec![u(&[1, 2, 4, 4, 4]), u(&[3, 2, 3, 3, 3]), u(&[3])],
            Box::new(|t, v| {
                let y = t.conv3d(v[0], v[1], Some(v[2]), 1, 1)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "conv3d_stride2",
            vec![u(&[2, 2, 4, 4, 4]), u(&[2, 2, 1, 1, 1])],
            Box::new(|t, v| {
                let y = t.conv3d(v[0], v[1], None, 2, 0)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "relu",
            vec![u(&[2, 3, 2, 2, 2])],
            Box::new(|t, v| {
                let y = t.relu(v[0])?;
                weighted_sum(t, y)
            }),
        ),
    ];
    let sigmoid_factor = if fault == Some(Fault::SigmoidDerivative) {
        1.1
    } else {
        1.0
    };
    cases.push(case(
        "sigmoid",
        vec![(vec![2, 3, 2, 2, 2], -3.0, 3.0)],
        Box::new(move |t, v| {
            let y = if sigmoid_factor == 1.0 {
                t.sigmoid(v[0])?
            } else {
                sigmoid_op(t, v[0], sigmoid_factor)?
            };
            weighted_sum(t, y)
        }),
    ));
    cases.extend([
        case(
            "log",
            vec![(vec![2, 3], 0.5, 2.0)],
            Box::new(|t, v| {
                let y = t.log(v[0])?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "add",
            vec![u(&[2, 3, 2, 2, 2]), u(&[2, 1, 2, 2, 2])],
            Box::new(|t, v| {
                let y = t.add(v[0], v[1])?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "mul",
            vec![u(&[2, 3, 2, 2, 2]), u(&[2, 1, 2, 2, 2])],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "scale",
            vec![u(&[5])],
            Box::new(|t, v| {
                let y = t.scale(v[0], -1.7)?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "maxpool3d",
            vec![u(&[1, 2, 4, 4, 2])],
            Box::new(|t, v| {
                let y = t.maxpool3d(v[0])?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "avgpool3d",
            vec![u(&[1, 2, 4, 4, 4])],
            Box::new(|t, v| {
                let y = t.avgpool3d(v[0], 2)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "upsample_trilinear",
            vec![u(&[1, 2, 2, 3, 2])],
            Box::new(|t, v| {
                let y = t.upsample_trilinear(v[0], 2)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "resize_trilinear",
            vec![u(&[1, 2, 2, 3, 2])],
            Box::new(|t, v| {
                let y = t.resize_trilinear(v[0], [3, 4, 5])?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "concat_channels",
            vec![u(&[2, 1, 2, 2, 2]), u(&[2, 2, 2, 2, 2])],
            Box::new(|t, v| {
                let y = t.concat_channels(v[0], v[1])?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "global_avg_pool",
            vec![u(&[2, 3, 2, 2, 2])],
            Box::new(|t, v| {
                let y = t.global_avg_pool(v[0])?;
                let y = t.mul(y, y)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "instance_norm",
            vec![u(&[2, 2, 2, 2, 2])],
            Box::new(|t, v| {
                let y = t.instance_norm(v[0], 1e-5)?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "linear",
            vec![u(&[3, 4]), u(&[4, 3]), u(&[3])],
            Box::new(|t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "softmax",
            vec![(vec![3, 3], -2.0, 2.0)],
            Box::new(|t, v| {
                let y = t.softmax(v[0])?;
                weighted_sum(t, y)
            }),
        ),
        case(
            "cross_entropy",
            vec![(vec![4, 3], -2.0, 2.0)],
            Box::new(|t, v| t.cross_entropy(v[0], &[0, 2, 1, 2])),
        ),
        case(
            "masked_l1",
            vec![u(&[3, 1, 2, 2, 2]), u(&[3, 1, 2, 2, 2])],
            Box::new(|t, v| t.masked_l1(v[0], v[1], &[true, false, true])),
        ),
        case(
            "sum",
            vec![u(&[2, 3])],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[0])?;
                t.sum(y)
            }),
        ),
        case(
            "mean",
            vec![u(&[2, 3])],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[0])?;
                t.mean(y)
            }),
        ),
    ]);
    cases
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).expect("static shape")
}

fn row(name: &str, r: Result<GradCheckReport>) -> SuiteRow {
    match r {
        Ok(r) => SuiteRow {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            elements: r.elements,
            passed: r.max_rel_error <= TOLERANCE,
            error: None,
        },
        Err(e) => SuiteRow {
            name: name.to_string(),
            max_rel_error: f64::NAN,
            elements: 0,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

/// Architecture of the end-to-end entry.
pub fn tiny_config() -> UPetConfig {
    UPetConfig::new(3, 2, [8, 8, 8])
}

/// The end-to-end entry: the tiny network at a random parameter point, two
/// samples (one paired), combined loss.
pub struct TinyProblem {
    pub model: UPetModel<f64>,
    pub input: Tensor<f64>,
    pub pet: Tensor<f64>,
    pub labels: [usize; 2],
    pub mask: [bool; 2],
    /// Parameter values to differentiate at, in store order.
    pub thetas: Vec<Tensor<f64>>,
}

impl TinyProblem {
    pub fn new(seed: u64) -> Result<Self> {
        let config = tiny_config();
        let model = UPetModel::<f64>::build(config.clone(), seed)
            .map_err(|e| TensorError::Invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let [d, h, w] = config.input_shape;
        let input = random(&mut rng, &[2, 1, d, h, w], -1.5, 1.5);
        let pet = random(&mut rng, &[2, 1, d, h, w], 0.0, 1.0);
        // Zero-initialized biases put ReLU inputs exactly on the kink wherever
        // the incoming features vanish; check at a generic point instead.
        let thetas = model
            .params()
            .tensors()
            .iter()
            .map(|t| random(&mut rng, t.shape(), -0.5, 0.5))
            .collect();
        Ok(Self {
            model,
            input,
            pet,
            labels: [2, 0],
            mask: [true, false],
            thetas,
        })
    }

    /// Records the combined loss with parameters `vars` on `tape`.
    pub fn loss(&self, tape: &mut Tape<f64>, vars: &[Var]) -> Result<Var> {
        let x = tape.constant(self.input.clone());
        let target = tape.constant(self.pet.clone());
        let out = self
            .model
            .forward_bound(tape, x, BoundParams::from_vars(vars.to_vec()))
            .map_err(|e| TensorError::Invalid(e.to_string()))?;
        let terms = combined_loss(
            tape,
            &out,
            &self.labels,
            Some(target),
            &self.mask,
            self.model.config(),
        )
        .map_err(|e| TensorError::Invalid(e.to_string()))?;
        Ok(terms.total)
    }

    pub fn check(&self) -> Result<GradCheckReport> {
        finite_difference_check_many(|tape, vars| self.loss(tape, vars), &self.thetas, STEP)
    }
}

/// Gradient check of the tiny network with respect to every parameter.
pub fn check_tiny_model(seed: u64) -> Result<GradCheckReport> {
    TinyProblem::new(seed)?.check()
}

/// Runs every operator entry and the end-to-end entry in precision `T`.
/// Only 64-bit is accepted: 32-bit rounding swamps central differences.
pub fn run_gradient_suite<T: Scalar>(fault: Option<Fault>) -> Result<Vec<SuiteRow>> {
    if T::BITS != 64 {
        return Err(TensorError::PrecisionRefused { bits: T::BITS });
    }
    let mut rows = Vec::new();
    for (i, c) in operator_cases(fault).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0901 + i as u64);
        let thetas: Vec<Tensor<f64>> = c
            .inputs
            .iter()
            .map(|(s, lo, hi)| random(&mut rng, s, *lo, *hi))
            .collect();
        rows.push(row(
            c.name,
            finite_difference_check_many(&c.build, &thetas, STEP),
        ));
    }
    rows.push(row("upet_tiny_end_to_end", check_tiny_model(7)));
    Ok(rows)
}

/// Fixed-width table: entry, max relative error, checked elements, verdict.
pub fn format_suite(rows: &[SuiteRow]) -> String {
    let mut s = format!(
        "{:<24} {:>14} {:>9}  result\n",
        "entry", "max_rel_error", "elements"
    );
    for r in rows {
        let verdict = match (&r.error, r.passed) {
            (Some(e), _) => format!("ERROR {e}"),
            (None, true) => "PASS".to_string(),
            (None, false) => "FAIL".to_string(),
        };
        s.push_str(&format!(
            "{:<24} {:>14.3e} {:>9}  {verdict}\n",
            r.name, r.max_rel_error, r.elements
        ));
    }
    s
}
