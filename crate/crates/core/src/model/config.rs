use sha2::{Digest, Sha256};

use super::{ModelError, Result, NUM_CLASSES};

/// How per-scale predictions are combined into the final logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregation {
    /// Element-wise mean of the logit vectors.
    Logits,
    /// `log(mean(softmax(·)))`, i.e. the mean of the class probabilities.
    Probabilities,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Logits => "logits",
            Aggregation::Probabilities => "probabilities",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(Aggregation::Logits),
            "probabilities" | "probs" => Ok(Aggregation::Probabilities),
            other => Err(ModelError::Config(format!(
                "unknown aggregation {other:?} (expected logits or probabilities)"
            ))),
        }
    }
}

/// Architecture and loss hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct UPetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub input_shape: [usize; 3],
    pub use_attention: bool,
    pub use_pet_head: bool,
    pub lambda_l1: f64,
    /// Weight of the auxiliary PET output at decoder level `ℓ = 1..levels−1`
    /// (index `ℓ − 1`).
    pub deep_supervision_weights: Vec<f64>,
    pub aggregation: Aggregation,
    /// Whether the pooled bottleneck contributes its own logit vector.
    pub bottleneck_prediction: bool,
}

impl Default for UPetConfig {
    fn default() -> Self {
        Self::new(4, 8, [32, 32, 32])
    }
}

impl UPetConfig {
    /// Config with default flags and `w_ℓ = 2^−ℓ` deep-supervision weights.
    pub fn new(levels: usize, base_channels: usize, input_shape: [usize; 3]) -> Self {
        Self {
            levels,
            base_channels,
            input_shape,
            use_attention: true,
            use_pet_head: true,
            lambda_l1: 1.0,
            deep_supervision_weights: default_ds_weights(levels),
            aggregation: Aggregation::Logits,
            bottleneck_prediction: true,
        }
    }

    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn resolution(&self, level: usize) -> [usize; 3] {
        self.input_shape.map(|d| d >> level)
    }

    /// Encoder levels whose features feed the classification gates.
    pub fn classification_levels(&self) -> [usize; 2] {
        [self.levels - 3, self.levels - 2]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.levels < 3 {
            return bad(format!("levels must be at least 3, got {}", self.levels));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.levels > 12 {
            return bad(format!("levels {} is unreasonably deep", self.levels));
        }
        let unit = 1usize << (self.levels - 1);
        if let Some(d) = self.input_shape.iter().find(|&&d| d == 0 || d % unit != 0) {
            return bad(format!(
                "input extent {d} is not a positive multiple of 2^(levels-1) = {unit} (input_shape {:?})",
                self.input_shape
            ));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return bad(format!(
                "lambda_l1 must be finite and non-negative, got {}",
                self.lambda_l1
            ));
        }
        if self.deep_supervision_weights.len() != self.levels - 1 {
            return bad(format!(
                "expected {} deep-supervision weights (one per decoder level below the finest), got {}",
                self.levels - 1,
                self.deep_supervision_weights.len()
            ));
        }
        if let Some(w) = self
            .deep_supervision_weights
            .iter()
            .find(|w| !(**w >= 0.0 && w.is_finite()))
        {
            return bad(format!(
                "deep-supervision weights must be finite and non-negative, got {w}"
            ));
        }
        Ok(())
    }

    /// Canonical text of every field that determines the parameter layout or
    /// the forward computation.
    pub fn architecture_key(&self) -> String {
        format!(
            "levels={};base={};input={}x{}x{};classes={};attention={};pet_head={};aggregation={};bottleneck_prediction={}",
            self.levels,
            self.base_channels,
            self.input_shape[0],
            self.input_shape[1],
            self.input_shape[2],
            NUM_CLASSES,
            self.use_attention,
            self.use_pet_head,
            self.aggregation.as_str(),
            self.bottleneck_prediction
        )
    }

    /// SHA-256 of [`architecture_key`](Self::architecture_key), hex encoded.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.architecture_key().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn default_ds_weights(levels: usize) -> Vec<f64> {
    (1..levels.max(1)).map(|l| 0.5f64.powi(l as i32)).collect()
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(ModelError::Config(format!(
            "{key}: expected true/false, got {other:?}"
        ))),
    }
}

/// `32` (cube) or `32x32x32`.
pub fn parse_dims(key: &str, v: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = v.trim().split(['x', 'X', ',']).map(str::trim).collect();
    let nums: std::result::Result<Vec<usize>, _> =
        parts.iter().map(|p| p.parse::<usize>()).collect();
    match nums.as_deref() {
        Ok([d]) => Ok([*d; 3]),
        Ok([d, h, w]) => Ok([*d, *h, *w]),
        _ => Err(ModelError::Config(format!(
            "{key}: expected N or DxHxW, got {v:?}"
        ))),
    }
}

fn parse_num<F: std::str::FromStr>(key: &str, v: &str) -> Result<F> {
    v.trim()
        .parse()
        .map_err(|_| ModelError::Config(format!("{key}: cannot parse {v:?} as a number")))
}

impl UPetConfig {
    pub const KEYS: &'static [&'static str] = &[
        "levels",
        "base_channels",
        "input_shape",
        "use_attention",
        "use_pet_head",
        "lambda_l1",
        "deep_supervision_weights",
        "aggregation",
        "bottleneck_prediction",
    ];

    /// Sets one field from its text form. Changing `levels` resets the
    /// deep-supervision weights to their default unless they are set later.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "levels" => {
                self.levels = parse_num(key, value)?;
                self.deep_supervision_weights = default_ds_weights(self.levels);
            }
            "base_channels" => self.base_channels = parse_num(key, value)?,
            "input_shape" => self.input_shape = parse_dims(key, value)?,
            "use_attention" => self.use_attention = parse_bool(key, value)?,
            "use_pet_head" => self.use_pet_head = parse_bool(key, value)?,
            "lambda_l1" => self.lambda_l1 = parse_num(key, value)?,
            "deep_supervision_weights" => {
                self.deep_supervision_weights = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "aggregation" => self.aggregation = value.trim().parse()?,
            "bottleneck_prediction" => self.bottleneck_prediction = parse_bool(key, value)?,
            other => return Err(ModelError::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    /// Every field in text form, readable back through [`set`](Self::set).
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let [d, h, w] = self.input_shape;
        vec![
            ("levels", self.levels.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("input_shape", format!("{d}x{h}x{w}")),
            ("use_attention", self.use_attention.to_string()),
            ("use_pet_head", self.use_pet_head.to_string()),
            ("lambda_l1", self.lambda_l1.to_string()),
            (
                "deep_supervision_weights",
                self.deep_supervision_weights
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("aggregation", self.aggregation.as_str().to_string()),
            (
                "bottleneck_prediction",
                self.bottleneck_prediction.to_string(),
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let mut c = UPetConfig::new(3, 4, [16, 24, 32]);
        c.use_attention = false;
        c.lambda_l1 = 0.3;
        c.aggregation = Aggregation::Probabilities;
        let mut r = UPetConfig::default();
        for (k, v) in c.entries() {
            r.set(k, &v).unwrap();
        }
        assert_eq!(r, c);
        assert!(r.set("nope", "1").is_err());
        assert!(r.set("use_attention", "maybe").is_err());
    }
}
