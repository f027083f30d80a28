//! Run configuration: one `key = value` per line, `#` starts a comment.
//! Defaults are overridden by the file, the file by command-line flags.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use upet::data::{PhantomConfig, DEFAULT_RATIOS};
use upet::model::{parse_dims, UPetConfig};
use upet::training::TrainConfig;

use crate::error::{CliError, Result};

const SPLIT_KEYS: &[&str] = &["split_ratios", "split_seed"];
const PATH_KEYS: &[&str] = &["data_dir", "out_dir"];
const PHANTOM_KEYS: &[&str] = &[
    "phantom_dims",
    "subjects",
    "sessions_per_subject",
    "class_probabilities",
    "paired_fraction",
    "noise_sigma",
    "mci_uptake_factor",
    "ad_uptake_factor",
    "phantom_seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: UPetConfig,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    pub train: TrainConfig,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub phantom: PhantomConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: UPetConfig::default(),
            init_seed: 0,
            train: TrainConfig::default(),
            split_ratios: DEFAULT_RATIOS,
            split_seed: 0,
            phantom: PhantomConfig::default(),
            data_dir: PathBuf::from("data/phantom"),
            out_dir: PathBuf::from("runs/upet"),
        }
    }
}

fn num<F: std::str::FromStr>(key: &str, v: &str) -> Result<F> {
    v.trim()
        .parse()
        .map_err(|_| CliError::config(format!("{key}: cannot parse {v:?} as a number")))
}

fn triple(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = v.split(',').map(|p| num(key, p)).collect::<Result<_>>()?;
    parts.try_into().map_err(|_| {
        CliError::config(format!(
            "{key}: expected three comma-separated numbers, got {v:?}"
        ))
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every recognized key.
    pub fn keys() -> Vec<&'static str> {
        let mut k: Vec<&str> = UPetConfig::KEYS.to_vec();
        k.push("init_seed");
        k.extend(TrainConfig::KEYS);
        k.extend(SPLIT_KEYS);
        k.extend(PHANTOM_KEYS);
        k.extend(PATH_KEYS);
        k
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if UPetConfig::KEYS.contains(&key) {
            return self
                .model
                .set(key, value)
                .map_err(|e| CliError::config(e.to_string()));
        }
        if TrainConfig::KEYS.contains(&key) {
            return self
                .train
                .set(key, value)
                .map_err(|e| CliError::config(e.to_string()));
        }
        let p = &mut self.phantom;
        match key {
            "init_seed" => self.init_seed = num(key, value)?,
            "split_ratios" => self.split_ratios = triple(key, value)?,
            "split_seed" => self.split_seed = num(key, value)?,
            "phantom_dims" => {
                p.dims = parse_dims(key, value).map_err(|e| CliError::config(e.to_string()))?
            }
            "subjects" => p.subjects = num(key, value)?,
            "sessions_per_subject" => p.sessions_per_subject = num(key, value)?,
            "class_probabilities" => p.class_probabilities = triple(key, value)?,
            "paired_fraction" => p.paired_fraction = num(key, value)?,
            "noise_sigma" => p.noise_sigma = num(key, value)?,
            "mci_uptake_factor" => p.mci_uptake_factor = num(key, value)?,
            "ad_uptake_factor" => p.ad_uptake_factor = num(key, value)?,
            "phantom_seed" => p.seed = num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(CliError::config(format!(
                    "unknown configuration key {other:?} (known keys: {})",
                    Self::keys().join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            CliError::config(format!("--set expects KEY=VALUE, got {assignment:?}"))
        })?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment of a configuration file, in order.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let at = |m: String| CliError::config(format!("{}:{}: {m}", origin.display(), i + 1));
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(at("missing key before `=`".into()));
            }
            if !seen.insert(k.to_string()) {
                return Err(at(format!("key {k:?} is set twice")));
            }
            self.set(k, v).map_err(|e| at(e.message))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Configuration file text that reproduces `self` when read back.
    pub fn render(&self) -> String {
        let mut s = String::from("# model\n");
        for (k, v) in self.model.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "init_seed = {}", self.init_seed);
        s.push_str("\n# training\n");
        for (k, v) in self.train.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "split_ratios = {}", join(&self.split_ratios));
        let _ = writeln!(s, "split_seed = {}", self.split_seed);
        let p = &self.phantom;
        let [d, h, w] = p.dims;
        s.push_str("\n# phantom data\n");
        for (k, v) in [
            ("phantom_dims", format!("{d}x{h}x{w}")),
            ("subjects", p.subjects.to_string()),
            ("sessions_per_subject", p.sessions_per_subject.to_string()),
            ("class_probabilities", join(&p.class_probabilities)),
            ("paired_fraction", p.paired_fraction.to_string()),
            ("noise_sigma", p.noise_sigma.to_string()),
            ("mci_uptake_factor", p.mci_uptake_factor.to_string()),
            ("ad_uptake_factor", p.ad_uptake_factor.to_string()),
            ("phantom_seed", p.seed.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n# paths\n");
        let _ = writeln!(s, "data_dir = {}", self.data_dir.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }
}
