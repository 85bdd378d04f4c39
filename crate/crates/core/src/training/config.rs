use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, Dims};

/// The values searched by the grid driver.
pub const GRID_LAMBDAS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
pub const GRID_WORD_DIMS: [usize; 2] = [64, 128];

/// Flat training configuration. Every field can come from a TOML file and be
/// overridden on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset_dir: Option<PathBuf>,
    pub levels: usize,
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// A preset name: `mixatis`, `mixsnips`, `small` or `tiny`.
    pub dims: String,
    /// Overrides the preset's word embedding width.
    pub word_dim: Option<usize>,
    pub dropout: f64,
    pub hierarchy_bce: bool,
    pub hard_bio: bool,
    /// Stop once validation overall accuracy reaches this value.
    pub stop_at_overall: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset_dir: None,
            levels: 2,
            lambda: 0.5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
            batch_size: 32,
            epochs: 100,
            seed: 1,
            ablation: Ablation::Full,
            dims: "mixatis".into(),
            word_dim: None,
            dropout: 0.0,
            hierarchy_bce: false,
            hard_bio: false,
            stop_at_overall: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=2).contains(&self.levels) {
            return bad(format!("levels must be 1 or 2, got {}", self.levels));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.word_dim == Some(0) {
            return bad("word_dim must be positive".into());
        }
        Dims::preset(&self.dims)?;
        Ok(())
    }

    pub fn model_dims(&self) -> Result<Dims> {
        let mut d = Dims::preset(&self.dims)?;
        if let Some(w) = self.word_dim {
            d.word_dim = w;
        }
        Ok(d)
    }

    /// `key=value` lines in field order, for echoing into artifacts.
    pub fn to_key_values(&self) -> Vec<String> {
        let value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object().expect("struct");
        let mut out = Vec::with_capacity(map.len());
        for key in FIELD_ORDER {
            let v = &map[*key];
            let text = match v {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push(format!("{key}={text}"));
        }
        out
    }
}

const FIELD_ORDER: &[&str] = &[
    "dataset_dir",
    "levels",
    "lambda",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "clip_norm",
    "batch_size",
    "epochs",
    "seed",
    "ablation",
    "dims",
    "word_dim",
    "dropout",
    "hierarchy_bce",
    "hard_bio",
    "stop_at_overall",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(TrainConfig::from_toml_str("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn values_and_errors() {
        let c = TrainConfig::from_toml_str("lambda = 0.25\nablation = \"no_coattention\"\nword_dim = 128\n").unwrap();
        assert_eq!(c.lambda, 0.25);
        assert_eq!(c.ablation, Ablation::NoCoattention);
        assert_eq!(c.model_dims().unwrap().word_dim, 128);
        for bad in [
            "lamda = 0.5",
            "ablation = \"no_everything\"",
            "levels = 3",
            "lambda = 1.5",
            "dims = \"huge\"",
            "batch_size = 0",
        ] {
            assert!(matches!(TrainConfig::from_toml_str(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn key_values_cover_every_field() {
        let c = TrainConfig::default();
        let kv = c.to_key_values();
        let value = serde_json::to_value(&c).unwrap();
        assert_eq!(kv.len(), value.as_object().unwrap().len());
        assert!(kv.contains(&"ablation=full".to_string()));
        assert!(kv.contains(&"clip_norm=none".to_string()));
    }
}
