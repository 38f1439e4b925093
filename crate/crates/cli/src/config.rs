//! Run configuration: UTF-8 text, one `key = value` per line, `#` starts a
//! comment. Unknown keys, duplicate keys, and malformed values are errors.
//! `render` emits the full effective configuration in canonical order;
//! parsing that text reproduces the config exactly.

use aasist_core::model::ModelConfig;
use aasist_core::train::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown config key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate config key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}` (expected {expected})")]
    BadValue { line: usize, key: String, value: String, expected: &'static str },
    #[error("line {line}: unknown preset `{value}` (expected default, small, or debug)")]
    BadPreset { line: usize, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    /// Base preset the explicit keys were applied on top of.
    pub preset: String,
    pub train: TrainConfig,
    /// Seed from the config file, if any; the `--seed` flag overrides it.
    pub seed: Option<u64>,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            preset: "default".to_string(),
            train: TrainConfig { model: ModelConfig::default(), ..TrainConfig::default() },
            seed: None,
        }
    }
}

fn preset_model(name: &str) -> Option<ModelConfig> {
    match name {
        "default" => Some(ModelConfig::default()),
        "small" => Some(ModelConfig::small()),
        "debug" => Some(ModelConfig::debug()),
        _ => None,
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<CliConfig, ConfigError> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ln = i + 1;
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: ln })?;
            let key = k.trim().to_string();
            let value = v.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line: ln });
            }
            if pairs.iter().any(|(_, pk, _)| *pk == key) {
                return Err(ConfigError::DuplicateKey { line: ln, key });
            }
            pairs.push((ln, key, value));
        }

        let mut cfg = CliConfig::default();
        // the preset decides the baseline, so resolve it before other keys
        if let Some((ln, _, v)) = pairs.iter().find(|(_, k, _)| k == "preset") {
            cfg.train.model = preset_model(v)
                .ok_or_else(|| ConfigError::BadPreset { line: *ln, value: v.clone() })?;
            cfg.preset = v.clone();
        }
        for (ln, key, value) in &pairs {
            cfg.apply(*ln, key, value)?;
        }
        cfg.train.model.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    fn apply(&mut self, ln: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        fn int(ln: usize, k: &str, v: &str) -> Result<usize, ConfigError> {
            v.parse().map_err(|_| ConfigError::BadValue {
                line: ln,
                key: k.to_string(),
                value: v.to_string(),
                expected: "a non-negative integer",
            })
        }
        fn num(ln: usize, k: &str, v: &str) -> Result<f64, ConfigError> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ConfigError::BadValue {
                    line: ln,
                    key: k.to_string(),
                    value: v.to_string(),
                    expected: "a finite number",
                })
        }
        fn flag(ln: usize, k: &str, v: &str) -> Result<bool, ConfigError> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    line: ln,
                    key: k.to_string(),
                    value: v.to_string(),
                    expected: "true or false",
                }),
            }
        }

        let m = &mut self.train.model;
        match key {
            "preset" => {} // applied up front
            "seed" => {
                let s = value.parse().map_err(|_| ConfigError::BadValue {
                    line: ln,
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "a non-negative integer",
                })?;
                self.seed = Some(s);
                self.train.seed = s;
            }
            "sample_rate" => m.sample_rate = int(ln, key, value)?,
            "input_samples" => m.input_samples = int(ln, key, value)?,
            "sinc_filters" => m.sinc_filters = int(ln, key, value)?,
            "sinc_kernel_len" => m.sinc_kernel_len = int(ln, key, value)?,
            "channels" => {
                let mut chans = Vec::new();
                for part in value.split(',') {
                    chans.push(int(ln, key, part.trim()).map_err(|_| ConfigError::BadValue {
                        line: ln,
                        key: key.to_string(),
                        value: value.to_string(),
                        expected: "comma-separated positive integers",
                    })?);
                }
                m.channels = chans;
            }
            "gat_dim" => m.gat_dim = int(ln, key, value)?,
            "dst_dim" => m.dst_dim = int(ln, key, value)?,
            "spectral_keep" => m.spectral_keep = num(ln, key, value)?,
            "temporal_keep" => m.temporal_keep = num(ln, key, value)?,
            "branch_keep" => m.branch_keep = num(ln, key, value)?,
            "hetero_attention" => m.hetero_attention = flag(ln, key, value)?,
            "stack_node" => m.stack_node = flag(ln, key, value)?,
            "mgo" => m.mgo = flag(ln, key, value)?,
            "steps" => self.train.steps = int(ln, key, value)?,
            "batch_size" => self.train.batch_size = int(ln, key, value)?,
            "n_per_class" => self.train.n_per_class = int(ln, key, value)?,
            "lr" => self.train.lr = num(ln, key, value)?,
            "lr_min" => self.train.lr_min = num(ln, key, value)?,
            "beta1" => self.train.beta1 = num(ln, key, value)?,
            "beta2" => self.train.beta2 = num(ln, key, value)?,
            "adam_eps" => self.train.adam_eps = num(ln, key, value)?,
            "bn_momentum" => self.train.bn_momentum = num(ln, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey { line: ln, key: key.to_string() });
            }
        }
        Ok(())
    }

    /// Copy with the seed fixed (e.g. from the `--seed` flag).
    pub fn with_seed(&self, seed: u64) -> CliConfig {
        let mut c = self.clone();
        c.seed = Some(seed);
        c.train.seed = seed;
        c
    }

    /// Full effective configuration in canonical key order.
    pub fn render(&self) -> String {
        let m = &self.train.model;
        let t = &self.train;
        let mut s = String::new();
        s.push_str(&format!("preset = {}\n", self.preset));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        s.push_str(&format!("sample_rate = {}\n", m.sample_rate));
        s.push_str(&format!("input_samples = {}\n", m.input_samples));
        s.push_str(&format!("sinc_filters = {}\n", m.sinc_filters));
        s.push_str(&format!("sinc_kernel_len = {}\n", m.sinc_kernel_len));
        let chans: Vec<String> = m.channels.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!("channels = {}\n", chans.join(",")));
        s.push_str(&format!("gat_dim = {}\n", m.gat_dim));
        s.push_str(&format!("dst_dim = {}\n", m.dst_dim));
        s.push_str(&format!("spectral_keep = {}\n", m.spectral_keep));
        s.push_str(&format!("temporal_keep = {}\n", m.temporal_keep));
        s.push_str(&format!("branch_keep = {}\n", m.branch_keep));
        s.push_str(&format!("hetero_attention = {}\n", m.hetero_attention));
        s.push_str(&format!("stack_node = {}\n", m.stack_node));
        s.push_str(&format!("mgo = {}\n", m.mgo));
        s.push_str(&format!("steps = {}\n", t.steps));
        s.push_str(&format!("batch_size = {}\n", t.batch_size));
        s.push_str(&format!("n_per_class = {}\n", t.n_per_class));
        s.push_str(&format!("lr = {}\n", t.lr));
        s.push_str(&format!("lr_min = {}\n", t.lr_min));
        s.push_str(&format!("beta1 = {}\n", t.beta1));
        s.push_str(&format!("beta2 = {}\n", t.beta2));
        s.push_str(&format!("adam_eps = {}\n", t.adam_eps));
        s.push_str(&format!("bn_momentum = {}\n", t.bn_momentum));
        s
    }
}
