//! Training configuration and its plain `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::subword::SkipgramConfig;
use crate::subword::VocabConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipMode {
    /// Rescale every gradient when the global L2 norm exceeds the threshold.
    #[default]
    GlobalNorm,
    /// Clamp each element to `±threshold`.
    Value,
}

impl ClipMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClipMode::GlobalNorm => "global_norm",
            ClipMode::Value => "value",
        }
    }
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_norm" => Ok(ClipMode::GlobalNorm),
            "value" => Ok(ClipMode::Value),
            other => Err(Error::Config(format!("unknown clip mode `{other}`"))),
        }
    }
}

/// Skipgram settings that are not shared with the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSettings {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub subsample: f64,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        let d = SkipgramConfig::default();
        EmbeddingSettings {
            window: d.window,
            negatives: d.negatives,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            subsample: d.subsample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub vocab: VocabConfig,
    pub embeddings: EmbeddingSettings,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub clip_mode: ClipMode,
    pub step_epochs: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            vocab: VocabConfig::default(),
            embeddings: EmbeddingSettings::default(),
            learning_rate: 5e-4,
            epochs: 15,
            batch_size: 64,
            clip_norm: 0.3,
            clip_mode: ClipMode::GlobalNorm,
            step_epochs: 5,
            gamma: 0.5,
            seed: 0,
        }
    }
}

/// Every key accepted by [`TrainConfig::set`], in text-form order.
pub const CONFIG_KEYS: &[&str] = &[
    "learning_rate",
    "epochs",
    "batch_size",
    "clip_norm",
    "clip_mode",
    "step_epochs",
    "gamma",
    "seed",
    "embed_dim",
    "hidden_size",
    "mlp_hidden",
    "dropout_p",
    "attention_pool",
    "final_state_mode",
    "min_n",
    "max_n",
    "buckets",
    "boundary_markers",
    "min_count",
    "sg_window",
    "sg_negatives",
    "sg_epochs",
    "sg_learning_rate",
    "sg_subsample",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.vocab.validate()?;
        self.skipgram().validate()?;
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config(
                "learning_rate, clip_norm and gamma must be positive".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.step_epochs == 0 {
            return Err(Error::Config(
                "epochs, batch_size and step_epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn skipgram(&self) -> SkipgramConfig {
        SkipgramConfig {
            dim: self.model.embed_dim,
            window: self.embeddings.window,
            negatives: self.embeddings.negatives,
            epochs: self.embeddings.epochs,
            learning_rate: self.embeddings.learning_rate,
            subsample: self.embeddings.subsample,
            seed: self.seed,
        }
    }

    /// Sets one key from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "clip_mode" => self.clip_mode = value.parse()?,
            "step_epochs" => self.step_epochs = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "embed_dim" => self.model.embed_dim = parse(key, value)?,
            "hidden_size" => self.model.hidden_size = parse(key, value)?,
            "mlp_hidden" => {
                self.model.mlp_hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| parse(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "dropout_p" => self.model.dropout_p = parse(key, value)?,
            "attention_pool" => self.model.attention_pool = value.parse()?,
            "final_state_mode" => self.model.final_state_mode = value.parse()?,
            "min_n" => self.vocab.min_n = parse(key, value)?,
            "max_n" => self.vocab.max_n = parse(key, value)?,
            "buckets" => self.vocab.buckets = parse(key, value)?,
            "boundary_markers" => self.vocab.boundary_markers = parse(key, value)?,
            "min_count" => self.vocab.min_count = parse(key, value)?,
            "sg_window" => self.embeddings.window = parse(key, value)?,
            "sg_negatives" => self.embeddings.negatives = parse(key, value)?,
            "sg_epochs" => self.embeddings.epochs = parse(key, value)?,
            "sg_learning_rate" => self.embeddings.learning_rate = parse(key, value)?,
            "sg_subsample" => self.embeddings.subsample = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// The text form of one key. Floats print in shortest round-trip form.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "clip_mode" => self.clip_mode.as_str().to_string(),
            "step_epochs" => self.step_epochs.to_string(),
            "gamma" => self.gamma.to_string(),
            "seed" => self.seed.to_string(),
            "embed_dim" => self.model.embed_dim.to_string(),
            "hidden_size" => self.model.hidden_size.to_string(),
            "mlp_hidden" => self
                .model
                .mlp_hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "dropout_p" => self.model.dropout_p.to_string(),
            "attention_pool" => self.model.attention_pool.as_str().to_string(),
            "final_state_mode" => self.model.final_state_mode.as_str().to_string(),
            "min_n" => self.vocab.min_n.to_string(),
            "max_n" => self.vocab.max_n.to_string(),
            "buckets" => self.vocab.buckets.to_string(),
            "boundary_markers" => self.vocab.boundary_markers.to_string(),
            "min_count" => self.vocab.min_count.to_string(),
            "sg_window" => self.embeddings.window.to_string(),
            "sg_negatives" => self.embeddings.negatives.to_string(),
            "sg_epochs" => self.embeddings.epochs.to_string(),
            "sg_learning_rate" => self.embeddings.learning_rate.to_string(),
            "sg_subsample" => self.embeddings.subsample.to_string(),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Malformed {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = self.get(key).expect("listed keys are known");
            writeln!(out, "{key} = {value}").expect("writing to a String");
        }
        out
    }
}

/// `base_lr × gamma^⌊epoch / step_epochs⌋` for a zero-based epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = (epoch / config.step_epochs.max(1)) as i32;
    config.learning_rate * config.gamma.powi(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionPool;
    use crate::encoder::FinalStateMode;

    #[test]
    fn text_round_trip_is_exact() {
        let mut c = TrainConfig::default();
        c.learning_rate = 0.1 + 0.2;
        c.model.mlp_hidden = vec![7, 3];
        c.model.attention_pool = AttentionPool::Max;
        c.model.final_state_mode = FinalStateMode::LastPosition;
        c.clip_mode = ClipMode::Value;
        c.seed = u64::MAX;
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.learning_rate.to_bits(), c.learning_rate.to_bits());
    }

    #[test]
    fn empty_mlp_hidden_round_trips() {
        let mut c = TrainConfig::default();
        c.model.mlp_hidden.clear();
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_and_malformed_lines_rejected() {
        assert!(matches!(
            TrainConfig::from_text("learning_rat = 0.1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_text("# comment\n\nepochs"),
            Err(Error::Malformed { line: 3, .. })
        ));
        assert!(TrainConfig::from_text("epochs = many").is_err());
        assert!(TrainConfig::from_text("attention_pool = median").is_err());
    }

    #[test]
    fn defaults_validate_and_bad_values_do_not() {
        TrainConfig::default().validate().unwrap();
        for (k, v) in [
            ("learning_rate", "0"),
            ("epochs", "0"),
            ("dropout_p", "1.0"),
            ("batch_size", "0"),
            ("clip_norm", "-1"),
        ] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k} = {v}");
        }
    }

    #[test]
    fn step_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(0, &c), 5e-4);
        assert_eq!(lr_schedule(4, &c), 5e-4);
        assert_eq!(lr_schedule(5, &c), 2.5e-4);
        assert_eq!(lr_schedule(14, &c), 1.25e-4);
        let lrs: Vec<f64> = (0..40).map(|e| lr_schedule(e, &c)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
