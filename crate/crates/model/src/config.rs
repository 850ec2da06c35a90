//! Model and training configuration, plus the `key=value` config file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{origin}:{line}: {reason}")]
    Line { origin: String, line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub gen_encoder_layers: usize,
    pub gen_decoder_layers: usize,
    pub exec_encoder_layers: usize,
    /// Longest accepted sentence or gloss sequence.
    pub l_max: usize,
    /// Largest repetition count the model can emit.
    pub r_max: usize,
    /// 0 means "take it from the vocabulary".
    pub vocab_size: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 160,
            num_heads: 10,
            gen_encoder_layers: 3,
            gen_decoder_layers: 1,
            exec_encoder_layers: 1,
            l_max: 64,
            r_max: 32,
            vocab_size: 0,
            ff_dim: 640,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("gen_encoder_layers", self.gen_encoder_layers),
            ("gen_decoder_layers", self.gen_decoder_layers),
            ("exec_encoder_layers", self.exec_encoder_layers),
            ("l_max", self.l_max),
            ("r_max", self.r_max),
            ("ff_dim", self.ff_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(ConfigError::Invalid(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Rows of the positional table: sentences, glosses and the longest
    /// decodable program (`2·l_max + 8` steps plus the start row).
    pub fn positions(&self) -> usize {
        2 * self.l_max + 9
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardKind {
    Bleu4,
    RougeL,
    /// Mean of BLEU-4 and ROUGE-L, so the reward stays in `[0, 1]`.
    Sum,
}

impl FromStr for RewardKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "BLEU4" => Ok(RewardKind::Bleu4),
            "ROUGE_L" | "ROUGEL" => Ok(RewardKind::RougeL),
            "SUM" => Ok(RewardKind::Sum),
            _ => Err(format!("unknown reward {s:?} (expected BLEU4, ROUGE_L or SUM)")),
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::Bleu4 => "BLEU4",
            RewardKind::RougeL => "ROUGE_L",
            RewardKind::Sum => "SUM",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_il: f64,
    pub k: usize,
    pub il_warmup_epochs: usize,
    pub total_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub reward: RewardKind,
    pub seed: u64,
    /// Epochs without validation BLEU-4 improvement before stopping; 0 disables.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Repetition cap used when deriving target programs; 0 means `r_max`.
    pub derive_max_repeat: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_il: 0.5,
            k: 5,
            il_warmup_epochs: 25,
            total_epochs: 150,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 16,
            reward: RewardKind::Bleu4,
            seed: 0,
            patience: 20,
            grad_clip: 0.0,
            derive_max_repeat: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 2 {
            return Err(ConfigError::Invalid(format!("K = {} but the peer baseline needs K >= 2", self.k)));
        }
        if !(self.lambda_il >= 0.0 && self.lambda_il.is_finite()) {
            return Err(ConfigError::Invalid(format!("lambda_il {} must be a finite value >= 0", self.lambda_il)));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::Invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return Err(ConfigError::Invalid("weight_decay and grad_clip must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything a config file can set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("bad value {value:?} for {key}: {e}"))
}

impl Config {
    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "d_model" => m.d_model = parse_value(key, value)?,
            "num_heads" => m.num_heads = parse_value(key, value)?,
            "gen_encoder_layers" => m.gen_encoder_layers = parse_value(key, value)?,
            "gen_decoder_layers" => m.gen_decoder_layers = parse_value(key, value)?,
            "exec_encoder_layers" => m.exec_encoder_layers = parse_value(key, value)?,
            "l_max" => m.l_max = parse_value(key, value)?,
            "r_max" => m.r_max = parse_value(key, value)?,
            "vocab_size" => m.vocab_size = parse_value(key, value)?,
            "ff_dim" => m.ff_dim = parse_value(key, value)?,
            "dropout" => m.dropout = parse_value(key, value)?,
            "model_seed" => m.seed = parse_value(key, value)?,
            "lambda_il" => t.lambda_il = parse_value(key, value)?,
            "k" | "K" => t.k = parse_value(key, value)?,
            "il_warmup_epochs" => t.il_warmup_epochs = parse_value(key, value)?,
            "total_epochs" => t.total_epochs = parse_value(key, value)?,
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "weight_decay" => t.weight_decay = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "reward" => t.reward = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "patience" => t.patience = parse_value(key, value)?,
            "grad_clip" => t.grad_clip = parse_value(key, value)?,
            "derive_max_repeat" => t.derive_max_repeat = parse_value(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| ConfigError::Line { origin: origin.to_string(), line: i + 1, reason };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Config::parse(&text, &path.display().to_string())
    }

    /// Serializes every field; `Config::parse` reads it back unchanged.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        format!(
            "d_model={}\nnum_heads={}\ngen_encoder_layers={}\ngen_decoder_layers={}\nexec_encoder_layers={}\n\
             l_max={}\nr_max={}\nvocab_size={}\nff_dim={}\ndropout={:?}\nmodel_seed={}\n\
             lambda_il={:?}\nk={}\nil_warmup_epochs={}\ntotal_epochs={}\nlearning_rate={:?}\nweight_decay={:?}\n\
             batch_size={}\nreward={}\nseed={}\npatience={}\ngrad_clip={:?}\nderive_max_repeat={}\n",
            m.d_model,
            m.num_heads,
            m.gen_encoder_layers,
            m.gen_decoder_layers,
            m.exec_encoder_layers,
            m.l_max,
            m.r_max,
            m.vocab_size,
            m.ff_dim,
            m.dropout,
            m.seed,
            t.lambda_il,
            t.k,
            t.il_warmup_epochs,
            t.total_epochs,
            t.learning_rate,
            t.weight_decay,
            t.batch_size,
            t.reward,
            t.seed,
            t.patience,
            t.grad_clip,
            t.derive_max_repeat,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_setup() {
        let c = Config::default();
        assert_eq!((c.model.num_heads, c.model.gen_encoder_layers, c.model.gen_decoder_layers), (10, 3, 1));
        assert_eq!(c.model.exec_encoder_layers, 1);
        assert_eq!((c.train.k, c.train.il_warmup_epochs, c.train.total_epochs), (5, 25, 150));
        assert_eq!((c.train.learning_rate, c.train.weight_decay, c.train.lambda_il), (1e-4, 1e-4, 0.5));
        assert!(c.model.validate().is_ok());
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.model.d_model = 24;
        c.model.num_heads = 3;
        c.train.reward = RewardKind::RougeL;
        c.train.learning_rate = 3e-3;
        assert_eq!(Config::parse(&c.to_text(), "mem").unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_line() {
        let e = Config::parse("d_model=20\nnum_heads=2\n\nbogus=1\n", "c.txt").unwrap_err();
        assert_eq!(e.to_string(), "c.txt:4: unknown key \"bogus\"");
        let e = Config::parse("# comment\nk=x", "c.txt").unwrap_err();
        assert!(e.to_string().starts_with("c.txt:2: bad value"));
        assert!(Config::parse("no equals sign", "c").is_err());
    }

    #[test]
    fn invariants_enforced() {
        assert!(Config::parse("d_model=21\nnum_heads=2", "c").is_err());
        assert!(Config::parse("k=1", "c").is_err());
        assert!(Config::parse("lambda_il=-0.1", "c").is_err());
        assert!(Config::parse("gen_encoder_layers=0", "c").is_err());
        assert!(Config::parse("d_model=20\nnum_heads=2\nlambda_il=0", "c").is_ok());
    }
}
