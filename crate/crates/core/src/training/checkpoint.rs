//! Checkpoint container: a UTF-8 index terminated by an `end` line, followed by
//! the little-endian `f32` payload.
//!
//! ```text
//! UPET-CHECKPOINT 1
//! fingerprint = <sha256 of the architecture key>
//! epoch = 12
//! config.<key> = <value>
//! adam.<key> = <value>
//! report.<key> = <value>
//! tensor <param|adam_m|adam_v> <name> <DxHx…> <byte offset> <element count>
//! end
//! <payload>
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{AdamConfig, AdamState};
use crate::model::{Params, UPetConfig, UPetModel};
use crate::objectives::EvalReport;
use crate::tensor::Tensor;

const MAGIC: &str = "UPET-CHECKPOINT 1";
const KINDS: [&str; 3] = ["param", "adam_m", "adam_v"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint index: {0}")]
    CorruptIndex(String),
    #[error("checkpoint payload has {actual} bytes, index describes {expected}")]
    PayloadSize { expected: usize, actual: usize },
    #[error("parameter {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint was written for architecture {found}, model is {expected}")]
    Fingerprint { expected: String, found: String },
}

/// Model parameters, optimizer state and validation report at one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: UPetConfig,
    pub params: Params<f32>,
    pub adam: AdamState,
    pub epoch: usize,
    pub report: EvalReport,
}

impl Checkpoint {
    pub fn capture(
        model: &UPetModel<f32>,
        adam: &AdamState,
        epoch: usize,
        report: EvalReport,
    ) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().clone(),
            adam: adam.clone(),
            epoch,
            report,
        }
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    /// Copies the stored parameters into `model`, which must share the
    /// checkpoint's architecture.
    pub fn restore_into(&self, model: &mut UPetModel<f32>) -> Result<(), CheckpointError> {
        let expected = model.config().fingerprint();
        if expected != self.fingerprint() {
            return Err(CheckpointError::Fingerprint {
                expected,
                found: self.fingerprint(),
            });
        }
        check_layout(model.params(), &self.params)?;
        *model.params_mut() = self.params.clone();
        Ok(())
    }

    /// Builds a model of the stored architecture holding the stored parameters.
    pub fn to_model(&self) -> Result<UPetModel<f32>, CheckpointError> {
        let mut model = UPetModel::build(self.config.clone(), 0)
            .map_err(|e| CheckpointError::CorruptIndex(e.to_string()))?;
        self.restore_into(&mut model)?;
        Ok(model)
    }
}

fn check_layout(expected: &Params<f32>, found: &Params<f32>) -> Result<(), CheckpointError> {
    for (name, t) in expected.iter() {
        match found.get(name) {
            Some(f) if f.shape() == t.shape() => {}
            Some(f) => {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: f.shape().to_vec(),
                })
            }
            None => {
                return Err(CheckpointError::CorruptIndex(format!(
                    "parameter {name} is missing"
                )))
            }
        }
    }
    if found.len() != expected.len() {
        return Err(CheckpointError::CorruptIndex(format!(
            "checkpoint has {} parameters, model has {}",
            found.len(),
            expected.len()
        )));
    }
    Ok(())
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "scalar" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut index = format!(
        "{MAGIC}\nfingerprint = {}\nepoch = {}\n",
        ckpt.fingerprint(),
        ckpt.epoch
    );
    for (k, v) in ckpt.config.entries() {
        let _ = writeln!(index, "config.{k} = {v}");
    }
    let a = &ckpt.adam;
    for (k, v) in [
        ("lr", a.config.lr.to_string()),
        ("beta1", a.config.beta1.to_string()),
        ("beta2", a.config.beta2.to_string()),
        ("eps", a.config.eps.to_string()),
        ("t", a.t.to_string()),
    ] {
        let _ = writeln!(index, "adam.{k} = {v}");
    }
    for (k, v) in ckpt.report.entries() {
        let _ = writeln!(index, "report.{k} = {v}");
    }
    let mut payload: Vec<u8> = Vec::new();
    for (kind, buffers) in [
        (
            "param",
            ckpt.params
                .tensors()
                .iter()
                .map(|t| t.data())
                .collect::<Vec<_>>(),
        ),
        ("adam_m", a.m.iter().map(Vec::as_slice).collect()),
        ("adam_v", a.v.iter().map(Vec::as_slice).collect()),
    ] {
        for ((name, t), data) in ckpt.params.iter().zip(buffers) {
            let _ = writeln!(
                index,
                "tensor {kind} {name} {} {} {}",
                shape_text(t.shape()),
                payload.len(),
                data.len()
            );
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    index.push_str("end\n");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut bytes = index.into_bytes();
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(io)
}

struct Entry {
    kind: usize,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let corrupt = |m: String| CheckpointError::CorruptIndex(m);
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| corrupt("missing end-of-index line".into()))?;
    let index =
        std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("index is not UTF-8".into()))?;
    let payload = &bytes[end + 5..];

    let mut lines = index.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt(format!("expected header {MAGIC:?}")));
    }
    let mut fingerprint = None;
    let mut epoch = None;
    let mut config = UPetConfig::default();
    let mut adam = AdamConfig::default();
    let mut t = None;
    let mut report = Vec::new();
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let at = |m: String| corrupt(format!("line {}: {m}", i + 2));
        if let Some(rest) = line.strip_prefix("tensor ") {
            let f: Vec<&str> = rest.split(' ').collect();
            let [kind, name, shape, offset, count] = f[..] else {
                return Err(at(format!("malformed tensor entry {line:?}")));
            };
            let kind = KINDS
                .iter()
                .position(|k| *k == kind)
                .ok_or_else(|| at(format!("unknown tensor kind {kind:?}")))?;
            let shape = parse_shape(shape).ok_or_else(|| at(format!("bad shape {shape:?}")))?;
            let offset = offset
                .parse()
                .map_err(|_| at(format!("bad offset {offset:?}")))?;
            let count: usize = count
                .parse()
                .map_err(|_| at(format!("bad count {count:?}")))?;
            if count != shape.iter().product::<usize>() {
                return Err(at(format!("{name}: count {count} does not match shape")));
            }
            entries.push(Entry {
                kind,
                name: name.to_string(),
                shape,
                offset,
                count,
            });
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
        let num_err = |_| at(format!("{k}: cannot parse {v:?}"));
        match k {
            "fingerprint" => fingerprint = Some(v.to_string()),
            "epoch" => epoch = Some(v.parse::<usize>().map_err(num_err)?),
            "adam.lr" => adam.lr = v.parse().map_err(|_| at(format!("bad {k}")))?,
            "adam.beta1" => adam.beta1 = v.parse().map_err(|_| at(format!("bad {k}")))?,
            "adam.beta2" => adam.beta2 = v.parse().map_err(|_| at(format!("bad {k}")))?,
            "adam.eps" => adam.eps = v.parse().map_err(|_| at(format!("bad {k}")))?,
            "adam.t" => t = Some(v.parse::<u64>().map_err(|_| at(format!("bad {k}")))?),
            _ => {
                if let Some(key) = k.strip_prefix("config.") {
                    config.set(key, v).map_err(|e| at(e.to_string()))?;
                } else if let Some(key) = k.strip_prefix("report.") {
                    report.push((key, v));
                } else {
                    return Err(at(format!("unknown key {k:?}")));
                }
            }
        }
    }
    let fingerprint = fingerprint.ok_or_else(|| corrupt("missing fingerprint".into()))?;
    if fingerprint != config.fingerprint() {
        return Err(CheckpointError::Fingerprint {
            expected: config.fingerprint(),
            found: fingerprint,
        });
    }
    let epoch = epoch.ok_or_else(|| corrupt("missing epoch".into()))?;
    let t = t.ok_or_else(|| corrupt("missing adam.t".into()))?;
    let report = EvalReport::from_entries(report).map_err(corrupt)?;

    let expected_bytes = entries.iter().map(|e| e.count * 4).sum::<usize>();
    let mut cursor = 0;
    for e in &entries {
        if e.offset != cursor {
            return Err(corrupt(format!(
                "{}: offset {} where {cursor} was expected",
                e.name, e.offset
            )));
        }
        cursor += e.count * 4;
    }
    if payload.len() != expected_bytes {
        return Err(CheckpointError::PayloadSize {
            expected: expected_bytes,
            actual: payload.len(),
        });
    }

    let mut params = Params::default();
    let mut moments: [HashMap<String, Vec<f32>>; 2] = [HashMap::new(), HashMap::new()];
    for e in entries {
        let data: Vec<f32> = payload[e.offset..e.offset + e.count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if e.kind == 0 {
            if params.get(&e.name).is_some() {
                return Err(corrupt(format!("duplicate parameter {}", e.name)));
            }
            let tensor = Tensor::new(&e.shape, data).map_err(|err| corrupt(err.to_string()))?;
            params.push(e.name, tensor);
        } else {
            moments[e.kind - 1].insert(e.name, data);
        }
    }
    let [mut m, mut v] = moments;
    let take = |which: &mut HashMap<String, Vec<f32>>,
                kind: &str|
     -> Result<Vec<Vec<f32>>, CheckpointError> {
        params
            .iter()
            .map(|(name, t)| match which.remove(name) {
                Some(d) if d.len() == t.numel() => Ok(d),
                Some(_) => Err(corrupt(format!(
                    "{kind} buffer of {name} has the wrong size"
                ))),
                None => Err(corrupt(format!("{kind} buffer of {name} is missing"))),
            })
            .collect()
    };
    let m = take(&mut m, "adam_m")?;
    let v = take(&mut v, "adam_v")?;
    Ok(Checkpoint {
        config,
        params,
        adam: AdamState {
            config: adam,
            m,
            v,
            t,
        },
        epoch,
        report,
    })
}
