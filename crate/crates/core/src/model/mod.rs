//! The U-PET network: an attention-gated 3D U-Net whose decoder synthesizes a PET
//! volume while a multi-scale, attention-gated head classifies the input.
//!
//! Encoder level `ℓ` (0 = finest, `levels − 1` = bottleneck) has `base · 2^ℓ`
//! channels. Each encoder block is two `conv3 → instance norm → ReLU` stages,
//! with 2×2×2 max pooling between levels. A decoder level upsamples the level
//! below, applies one `conv3 → IN → ReLU` stage, concatenates the (gated) skip
//! features and applies another double-conv block. The classifier gates the two
//! encoder scales just above the bottleneck with the bottleneck, global-average
//! pools each gated map (and the bottleneck itself) and averages the per-scale
//! logits.

mod attention;
mod config;
mod params;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use attention::{attention_gate, gate_channels, GateVars};
pub use config::{default_ds_weights, parse_bool, parse_dims, Aggregation, UPetConfig};
pub use params::{BoundParams, ParamId, Params};

use crate::data::{Modality, Volume};
use crate::tensor::kernels::spatial;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["CN", "MCI", "AD"];
const IN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input shape {actual:?} does not match the configured N×1×{expected:?}")]
    InputShape {
        expected: [usize; 3],
        actual: Vec<usize>,
    },
    #[error("this model was built without attention gates; there are no attention maps to export")]
    NoAttention,
    #[error("no attention map matches selector {0:?}")]
    NoSuchMap(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    conv1: ParamId,
    conv2: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct GateIds {
    w_x: ParamId,
    w_g: ParamId,
    b_g: ParamId,
    psi: ParamId,
    b_psi: ParamId,
}

impl GateIds {
    fn bind(&self, p: &BoundParams) -> GateVars {
        GateVars {
            w_x: p.var(self.w_x),
            w_g: p.var(self.w_g),
            b_g: p.var(self.b_g),
            psi: p.var(self.psi),
            b_psi: p.var(self.b_psi),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct DecoderIds {
    level: usize,
    up: ParamId,
    block: ConvIds,
    gate: Option<GateIds>,
}

#[derive(Clone, Copy, Debug)]
struct HeadIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct ClassifierIds {
    level: usize,
    gate: Option<GateIds>,
    linear: HeadIds,
}

/// One row of the [`UPetModel::describe`] table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockInfo {
    pub name: String,
    /// Per-sample output shape `C×D×H×W`.
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub attention: bool,
}

/// A built network: configuration plus named parameters.
#[derive(Clone, Debug)]
pub struct UPetModel<T: Scalar = f32> {
    config: UPetConfig,
    params: Params<T>,
    encoder: Vec<ConvIds>,
    decoder: Vec<DecoderIds>,
    pet_head: Option<HeadIds>,
    aux_heads: Vec<(usize, HeadIds)>,
    classifiers: Vec<ClassifierIds>,
    bottleneck_head: Option<HeadIds>,
    blocks: Vec<BlockInfo>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutputs {
    /// `N×3` aggregated logits.
    pub class_logits: Var,
    /// One `N×3` logit matrix per aggregated scale, finest gated scale first.
    pub per_scale_logits: Vec<Var>,
    /// `N×1×D×H×W`; absent without the PET head.
    pub pet_pred: Option<Var>,
    /// `(decoder level ℓ, N×1×(D/2^ℓ)×…)` auxiliary PET outputs.
    pub aux_pet_preds: Vec<(usize, Var)>,
    /// Attention coefficients `N×1×…` at the resolution of the gated features,
    /// named `skip-ℓ` or `cls-ℓ`.
    pub attention_maps: Vec<(String, Var)>,
    pub params: BoundParams,
}

impl ModelOutputs {
    pub fn attention_map(&self, name: &str) -> Option<Var> {
        self.attention_maps
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

/// Which attention maps to export.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MapSelector {
    All,
    Skip,
    Classification,
    /// A single gate, e.g. `skip-0` or `cls-1`.
    Named(String),
}

impl MapSelector {
    fn matches(&self, name: &str) -> bool {
        match self {
            MapSelector::All => true,
            MapSelector::Skip => name.starts_with("skip-"),
            MapSelector::Classification => name.starts_with("cls-"),
            MapSelector::Named(n) => n == name,
        }
    }
}

impl std::str::FromStr for MapSelector {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => MapSelector::All,
            "skip" => MapSelector::Skip,
            "cls" | "classification" => MapSelector::Classification,
            other => MapSelector::Named(other.to_string()),
        })
    }
}

struct Builder<'a, T: Scalar> {
    params: Params<T>,
    rng: &'a mut ChaCha8Rng,
    blocks: Vec<BlockInfo>,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: String, c_out: usize, c_in: usize, k: usize) -> ParamId {
        self.params
            .push_weight(self.rng, name, &[c_out, c_in, k, k, k], c_in * k * k * k)
    }

    fn double_conv(&mut self, prefix: &str, c_in: usize, c_out: usize) -> ConvIds {
        ConvIds {
            conv1: self.conv(format!("{prefix}.conv1.weight"), c_out, c_in, 3),
            conv2: self.conv(format!("{prefix}.conv2.weight"), c_out, c_out, 3),
        }
    }

    fn gate(&mut self, prefix: &str, c_x: usize, c_g: usize) -> GateIds {
        let f = gate_channels(c_x);
        GateIds {
            w_x: self.conv(format!("{prefix}.w_x"), f, c_x, 1),
            w_g: self.conv(format!("{prefix}.w_g"), f, c_g, 1),
            b_g: self.params.push_zeros(format!("{prefix}.b_g"), &[f]),
            psi: self.conv(format!("{prefix}.psi"), 1, f, 1),
            b_psi: self.params.push_zeros(format!("{prefix}.b_psi"), &[1]),
        }
    }

    fn head(&mut self, prefix: &str, c_in: usize) -> HeadIds {
        HeadIds {
            weight: self.conv(format!("{prefix}.weight"), 1, c_in, 1),
            bias: self.params.push_zeros(format!("{prefix}.bias"), &[1]),
        }
    }

    fn linear(&mut self, prefix: &str, features: usize) -> HeadIds {
        HeadIds {
            weight: self.params.push_weight(
                self.rng,
                format!("{prefix}.weight"),
                &[features, NUM_CLASSES],
                features,
            ),
            bias: self
                .params
                .push_zeros(format!("{prefix}.bias"), &[NUM_CLASSES]),
        }
    }

    /// Records a block row covering every parameter pushed since `start`.
    fn block(&mut self, name: String, start: usize, output_shape: Vec<usize>, attention: bool) {
        let params = self.params.tensors()[start..]
            .iter()
            .map(Tensor::numel)
            .sum();
        self.blocks.push(BlockInfo {
            name,
            output_shape,
            params,
            attention,
        });
    }
}

fn shape4(c: usize, r: [usize; 3]) -> Vec<usize> {
    vec![c, r[0], r[1], r[2]]
}

impl<T: Scalar> UPetModel<T> {
    /// Builds and initializes a model. Weights are drawn from `U(±1/√fan_in)`
    /// in creation order from a generator seeded with `seed`; biases start at 0.
    pub fn build(config: UPetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: Params::default(),
            rng: &mut rng,
            blocks: Vec::new(),
        };
        let levels = config.levels;
        let c = |l: usize| config.channels(l);
        let r = |l: usize| config.resolution(l);

        let mut encoder = Vec::with_capacity(levels);
        for l in 0..levels {
            let start = b.params.len();
            let c_in = if l == 0 { 1 } else { c(l - 1) };
            encoder.push(b.double_conv(&format!("enc{l}"), c_in, c(l)));
            b.block(format!("enc{l}"), start, shape4(c(l), r(l)), false);
        }

        let mut decoder = Vec::new();
        let mut pet_head = None;
        let mut aux_heads = Vec::new();
        if config.use_pet_head {
            for l in (0..levels - 1).rev() {
                let gate = if config.use_attention {
                    let start = b.params.len();
                    let g = b.gate(&format!("gate.skip{l}"), c(l), c(l + 1));
                    b.block(format!("gate.skip{l}"), start, shape4(1, r(l)), true);
                    Some(g)
                } else {
                    None
                };
                let start = b.params.len();
                let up = b.conv(format!("dec{l}.up.weight"), c(l), c(l + 1), 3);
                let block = b.double_conv(&format!("dec{l}"), 2 * c(l), c(l));
                b.block(format!("dec{l}"), start, shape4(c(l), r(l)), false);
                decoder.push(DecoderIds {
                    level: l,
                    up,
                    block,
                    gate,
                });
            }
            let start = b.params.len();
            pet_head = Some(b.head("head.pet", c(0)));
            b.block("head.pet".into(), start, shape4(1, r(0)), false);
            for l in 1..levels {
                let start = b.params.len();
                aux_heads.push((l, b.head(&format!("head.aux{l}"), c(l))));
                b.block(format!("head.aux{l}"), start, shape4(1, r(l)), false);
            }
        }

        let bottleneck = levels - 1;
        let mut classifiers = Vec::new();
        for l in config.classification_levels() {
            let gate = if config.use_attention {
                let start = b.params.len();
                let g = b.gate(&format!("gate.cls{l}"), c(l), c(bottleneck));
                b.block(format!("gate.cls{l}"), start, shape4(1, r(l)), true);
                Some(g)
            } else {
                None
            };
            let start = b.params.len();
            let linear = b.linear(&format!("cls.scale{l}"), c(l));
            b.block(format!("cls.scale{l}"), start, vec![NUM_CLASSES], false);
            classifiers.push(ClassifierIds {
                level: l,
                gate,
                linear,
            });
        }
        let bottleneck_head = if config.bottleneck_prediction {
            let start = b.params.len();
            let h = b.linear("cls.bottleneck", c(bottleneck));
            b.block("cls.bottleneck".into(), start, vec![NUM_CLASSES], false);
            Some(h)
        } else {
            None
        };

        let Builder { params, blocks, .. } = b;
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            pet_head,
            aux_heads,
            classifiers,
            bottleneck_head,
            blocks,
        })
    }

    pub fn config(&self) -> &UPetConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    pub fn attention_param_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.attention)
            .map(|b| b.params)
            .sum()
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    /// Same architecture in another precision.
    pub fn cast<U: Scalar>(&self) -> UPetModel<U> {
        UPetModel {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            pet_head: self.pet_head,
            aux_heads: self.aux_heads.clone(),
            classifiers: self.classifiers.clone(),
            bottleneck_head: self.bottleneck_head,
            blocks: self.blocks.clone(),
        }
    }

    /// Plain-text block table: one row per block (name, per-sample output
    /// shape, parameter count), then `total parameters` and
    /// `attention parameters` summary lines.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# U-PET {}", self.config.architecture_key());
        let _ = writeln!(s, "{:<18} {:<20} {:>10}", "block", "output", "params");
        let _ = writeln!(
            s,
            "{:<18} {:<20} {:>10}",
            "input",
            shape_str(&shape4(1, self.config.input_shape)),
            0
        );
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "{:<18} {:<20} {:>10}",
                b.name,
                shape_str(&b.output_shape),
                b.params
            );
        }
        let _ = writeln!(s, "total parameters {}", self.num_params());
        let _ = writeln!(s, "attention parameters {}", self.attention_param_count());
        s
    }

    /// Records all parameters on `tape` and runs the network on `input`
    /// (`N×1×D×H×W`).
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, trainable: bool) -> Result<ModelOutputs> {
        let bound = self.params.bind(tape, trainable);
        self.forward_bound(tape, input, bound)
    }

    /// Forward with parameters already recorded on `tape`.
    pub fn forward_bound(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        p: BoundParams,
    ) -> Result<ModelOutputs> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 5
            || shape[0] == 0
            || shape[1] != 1
            || shape[2..] != self.config.input_shape
        {
            return Err(ModelError::InputShape {
                expected: self.config.input_shape,
                actual: shape,
            });
        }
        let conv_in_relu = |tape: &mut Tape<T>, x: Var, w: ParamId| -> Result<Var> {
            let y = tape.conv3d(x, p.var(w), None, 1, 1)?;
            let y = tape.instance_norm(y, IN_EPS)?;
            Ok(tape.relu(y)?)
        };
        let double = |tape: &mut Tape<T>, x: Var, ids: &ConvIds| -> Result<Var> {
            let y = conv_in_relu(tape, x, ids.conv1)?;
            conv_in_relu(tape, y, ids.conv2)
        };

        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut x = input;
        for (l, ids) in self.encoder.iter().enumerate() {
            if l > 0 {
                x = tape.maxpool3d(x)?;
            }
            x = double(tape, x, ids)?;
            enc.push(x);
        }
        let bottleneck = *enc.last().expect("levels >= 3");
        let mut attention_maps = Vec::new();

        let mut pet_pred = None;
        let mut aux_pet_preds = Vec::new();
        if let Some(head) = self.pet_head {
            let mut dec = vec![None; self.config.levels];
            dec[self.config.levels - 1] = Some(bottleneck);
            for d in &self.decoder {
                let l = d.level;
                let below = dec[l + 1].expect("decoder runs coarse to fine");
                let skip = match &d.gate {
                    Some(g) => {
                        let (gated, alpha) = attention_gate(tape, enc[l], below, &g.bind(&p))?;
                        attention_maps.push((format!("skip-{l}"), alpha));
                        gated
                    }
                    None => enc[l],
                };
                let up = tape.upsample_trilinear(below, 2)?;
                let up = conv_in_relu(tape, up, d.up)?;
                let cat = tape.concat_channels(skip, up)?;
                dec[l] = Some(double(tape, cat, &d.block)?);
            }
            let out = |tape: &mut Tape<T>, x: Var, h: &HeadIds| {
                tape.conv3d(x, p.var(h.weight), Some(p.var(h.bias)), 1, 0)
            };
            pet_pred = Some(out(tape, dec[0].expect("finest level decoded"), &head)?);
            for (l, h) in &self.aux_heads {
                aux_pet_preds.push((*l, out(tape, dec[*l].expect("decoded"), h)?));
            }
            // Finest skip map first.
            attention_maps.reverse();
        }

        let mut per_scale_logits = Vec::new();
        let mut upsampled_bottleneck = None;
        for cls in &self.classifiers {
            let l = cls.level;
            let features = match &cls.gate {
                Some(g) => {
                    // The gate needs a gating signal at half the resolution of
                    // its input; for scales more than one level above the
                    // bottleneck it is resized to match.
                    let steps = self.config.levels - 1 - l;
                    let signal = if steps == 1 {
                        bottleneck
                    } else {
                        match upsampled_bottleneck {
                            Some((s, v)) if s == steps => v,
                            _ => {
                                let target = self.config.resolution(l + 1);
                                let v = tape.resize_trilinear(bottleneck, target)?;
                                upsampled_bottleneck = Some((steps, v));
                                v
                            }
                        }
                    };
                    let (gated, alpha) = attention_gate(tape, enc[l], signal, &g.bind(&p))?;
                    attention_maps.push((format!("cls-{l}"), alpha));
                    gated
                }
                None => enc[l],
            };
            let pooled = tape.global_avg_pool(features)?;
            per_scale_logits.push(tape.linear(
                pooled,
                p.var(cls.linear.weight),
                p.var(cls.linear.bias),
            )?);
        }
        if let Some(h) = self.bottleneck_head {
            let pooled = tape.global_avg_pool(bottleneck)?;
            per_scale_logits.push(tape.linear(pooled, p.var(h.weight), p.var(h.bias))?);
        }
        let class_logits = aggregate(tape, &per_scale_logits, self.config.aggregation)?;

        Ok(ModelOutputs {
            class_logits,
            per_scale_logits,
            pet_pred,
            aux_pet_preds,
            attention_maps,
            params: p,
        })
    }

    /// Attention maps of every sample, trilinearly resized to the input
    /// resolution and tagged with their gate name. Gate-major order.
    pub fn export_attention_maps(
        &self,
        tape: &Tape<T>,
        outputs: &ModelOutputs,
        selector: &MapSelector,
    ) -> Result<Vec<Volume>> {
        if !self.config.use_attention {
            return Err(ModelError::NoAttention);
        }
        let mut volumes = Vec::new();
        for (name, var) in outputs
            .attention_maps
            .iter()
            .filter(|(n, _)| selector.matches(n))
        {
            let alpha = tape.value(*var);
            let resized = if alpha.shape()[2..] == self.config.input_shape {
                alpha.clone()
            } else {
                spatial::resize_trilinear(alpha, self.config.input_shape)?
            };
            let per_sample: usize = self.config.input_shape.iter().product();
            for chunk in resized.data().chunks(per_sample) {
                let data = chunk
                    .iter()
                    .map(|v| {
                        (v.to_f64_lossy() as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
                    })
                    .collect();
                let vol = Volume::new(self.config.input_shape, Modality::Attention, data)
                    .map_err(|e| ModelError::Config(e.to_string()))?;
                volumes.push(vol.with_tag(name.clone()));
            }
        }
        if volumes.is_empty() {
            return Err(ModelError::NoSuchMap(format!("{selector:?}")));
        }
        Ok(volumes)
    }
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

/// Combines per-scale `N×K` logits into one `N×K` matrix.
pub fn aggregate<T: Scalar>(tape: &mut Tape<T>, logits: &[Var], mode: Aggregation) -> Result<Var> {
    if logits.is_empty() {
        return Err(ModelError::Config("nothing to aggregate".into()));
    }
    let inv = T::from_f64_lossy(1.0 / logits.len() as f64);
    let terms: Vec<Var> = match mode {
        Aggregation::Logits => logits.to_vec(),
        Aggregation::Probabilities => logits
            .iter()
            .map(|&l| tape.softmax(l))
            .collect::<std::result::Result<_, _>>()?,
    };
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    let mean = tape.scale(acc, inv)?;
    Ok(match mode {
        Aggregation::Logits => mean,
        Aggregation::Probabilities => tape.log(mean)?,
    })
}

/// Mean of per-scale logit rows, on plain values.
pub fn aggregate_logits(per_scale: &[Vec<f64>]) -> Vec<f64> {
    let k = per_scale.first().map_or(0, Vec::len);
    let n = per_scale.len() as f64;
    (0..k)
        .map(|j| per_scale.iter().map(|row| row[j]).sum::<f64>() / n)
        .collect()
}
