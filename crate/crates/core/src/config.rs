//! Training configuration and its canonical key=value text form.
//!
//! The same serialization is used for on-disk run configs and for the
//! config echo embedded in checkpoints, so a run is reproducible from
//! either. Keys are emitted in a fixed order; floats use shortest
//! round-trip formatting and reparse exactly.

use std::fmt;

use crate::error::{Error, Result};
use crate::nets::NetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Generator,
    Autoencoder,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Generator => write!(f, "generator"),
            TrainMode::Autoencoder => write!(f, "autoencoder"),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(TrainMode::Generator),
            "autoencoder" => Ok(TrainMode::Autoencoder),
            _ => Err(Error::Config {
                message: format!("unknown mode '{s}'"),
            }),
        }
    }
}

/// Linear-interpolation space used by latent interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpSpace {
    /// Pre-flow base space (interpolate w, map through the flow).
    #[default]
    W,
    /// Latent space directly.
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub seed: u64,
    pub kl_weight: f64,
    pub eval_every: u64,
    /// Checkpoint cadence in steps; 0 writes only the final one.
    pub ckpt_every: u64,
    pub per_point_t: bool,
    pub t_scaled_loss: bool,
    pub reverse_var_gamma: bool,
    pub interp_space: InterpSpace,
    pub nets: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Generator,
            t_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.08,
            batch_size: 8,
            learning_rate: 1e-3,
            steps: 5000,
            seed: 0,
            kl_weight: 1.0,
            eval_every: 100,
            ckpt_every: 0,
            per_point_t: false,
            t_scaled_loss: false,
            reverse_var_gamma: false,
            interp_space: InterpSpace::W,
            nets: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps < 2 {
            return Err(Error::Config {
                message: format!("t_steps must be >= 2, got {}", self.t_steps),
            });
        }
        if self.batch_size == 0 || self.steps == 0 || self.eval_every == 0 {
            return Err(Error::Config {
                message: "batch_size, steps and eval_every must be positive".into(),
            });
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config {
                message: format!("learning_rate must be positive, got {}", self.learning_rate),
            });
        }
        if self.kl_weight < 0.0 {
            return Err(Error::Config {
                message: format!("kl_weight must be non-negative, got {}", self.kl_weight),
            });
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config {
                message: format!(
                    "need 0 < beta_start <= beta_end < 1, got ({}, {})",
                    self.beta_start, self.beta_end
                ),
            });
        }
        self.nets.validate().map_err(|e| Error::Config {
            message: e.to_string(),
        })
    }

    /// Canonical key=value serialization; fixed key order, one pair
    /// per line.
    pub fn to_kv(&self) -> String {
        let b = |v: bool| if v { "true" } else { "false" };
        format!(
            "mode={}\n\
             t_steps={}\n\
             beta_start={}\n\
             beta_end={}\n\
             batch_size={}\n\
             learning_rate={}\n\
             steps={}\n\
             seed={}\n\
             kl_weight={}\n\
             eval_every={}\n\
             ckpt_every={}\n\
             per_point_t={}\n\
             t_scaled_loss={}\n\
             reverse_var_gamma={}\n\
             interp_space={}\n\
             latent_dim={}\n\
             denoiser_width={}\n\
             denoiser_layers={}\n\
             time_embed_dim={}\n\
             encoder_hidden1={}\n\
             encoder_hidden2={}\n\
             flow_layers={}\n\
             flow_width={}\n\
             flow_scale_max={}\n",
            self.mode,
            self.t_steps,
            self.beta_start,
            self.beta_end,
            self.batch_size,
            self.learning_rate,
            self.steps,
            self.seed,
            self.kl_weight,
            self.eval_every,
            self.ckpt_every,
            b(self.per_point_t),
            b(self.t_scaled_loss),
            b(self.reverse_var_gamma),
            match self.interp_space {
                InterpSpace::W => "w",
                InterpSpace::Z => "z",
            },
            self.nets.latent_dim,
            self.nets.denoiser_width,
            self.nets.denoiser_layers,
            self.nets.time_embed_dim,
            self.nets.encoder_hidden.0,
            self.nets.encoder_hidden.1,
            self.nets.flow_layers,
            self.nets.flow_width,
            self.nets.flow_scale_max,
        )
    }

    /// Applies one key=value pair; `Ok(false)` means the key is not a
    /// training knob.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |key: &str, value: &str, what: &str| Error::Config {
            message: format!("bad value '{value}' for {key}: expected {what}"),
        };
        macro_rules! parse {
            ($what:literal) => {
                value.parse().map_err(|_| bad(key, value, $what))?
            };
        }
        match key {
            "mode" => self.mode = value.parse()?,
            "t_steps" => self.t_steps = parse!("integer"),
            "beta_start" => self.beta_start = parse!("float"),
            "beta_end" => self.beta_end = parse!("float"),
            "batch_size" => self.batch_size = parse!("integer"),
            "learning_rate" => self.learning_rate = parse!("float"),
            "steps" => self.steps = parse!("integer"),
            "seed" => self.seed = parse!("integer"),
            "kl_weight" => self.kl_weight = parse!("float"),
            "eval_every" => self.eval_every = parse!("integer"),
            "ckpt_every" => self.ckpt_every = parse!("integer"),
            "per_point_t" => self.per_point_t = parse!("bool"),
            "t_scaled_loss" => self.t_scaled_loss = parse!("bool"),
            "reverse_var_gamma" => self.reverse_var_gamma = parse!("bool"),
            "interp_space" => {
                self.interp_space = match value {
                    "w" => InterpSpace::W,
                    "z" => InterpSpace::Z,
                    _ => return Err(bad(key, value, "'w' or 'z'")),
                }
            }
            "latent_dim" => self.nets.latent_dim = parse!("integer"),
            "denoiser_width" => self.nets.denoiser_width = parse!("integer"),
            "denoiser_layers" => self.nets.denoiser_layers = parse!("integer"),
            "time_embed_dim" => self.nets.time_embed_dim = parse!("integer"),
            "encoder_hidden1" => self.nets.encoder_hidden.0 = parse!("integer"),
            "encoder_hidden2" => self.nets.encoder_hidden.1 = parse!("integer"),
            "flow_layers" => self.nets.flow_layers = parse!("integer"),
            "flow_width" => self.nets.flow_width = parse!("integer"),
            "flow_scale_max" => self.nets.flow_scale_max = parse!("float"),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a full canonical echo (every key must be known).
    pub fn from_kv(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (key, value, line) in parse_kv_lines(text)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Config {
                    message: format!("line {line}: unknown key '{key}'"),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits key=value text into (key, value, line-number) triples.
/// Blank lines and `#` comments are skipped; a line without '=' is an
/// error naming its number.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string(), i + 1)),
            None => {
                return Err(Error::Config {
                    message: format!("line {}: expected key=value, got '{raw}'", i + 1),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_is_exact() {
        let mut cfg = TrainConfig {
            mode: TrainMode::Autoencoder,
            learning_rate: 0.0012345678901234567,
            beta_end: 1.0 / 3.0,
            ..TrainConfig::default()
        };
        cfg.nets.latent_dim = 13;
        let text = cfg.to_kv();
        let back = TrainConfig::from_kv(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let mut text = TrainConfig::default().to_kv();
        text.push_str("wat=1\n");
        let err = TrainConfig::from_kv(&text).unwrap_err().to_string();
        assert!(err.contains("unknown key 'wat'"), "{err}");
        assert!(err.contains("line 25"), "{err}");
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let pairs = parse_kv_lines("# top\n\n a = b \n").unwrap();
        assert_eq!(pairs, vec![("a".into(), "b".into(), 3)]);
        assert!(parse_kv_lines("no equals").is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.beta_end = 1.5;
        assert!(cfg.validate().is_err());
    }
}
