//! Training configuration: flat `key=value` text, unknown keys rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::metrics::{default_n_scales, SsimConfig};
use crate::model::{LossConfig, LossToggles, ModelConfig};

/// Every knob of a training/sampling/evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total diffusion steps T.
    pub t_max: usize,
    /// Reverse-process step count (stride is T / sample_steps).
    pub sample_steps: usize,
    pub epochs: usize,
    /// Hard cap on optimization steps; 0 lets `epochs` govern.
    pub max_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub image_size: usize,
    pub base_channels: usize,
    pub temb_dim: usize,
    pub ssr: bool,
    pub rr: bool,
    pub w2: f64,
    pub w3: f64,
    pub seed: u64,
    pub data_manifest: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    /// The full-scale preset: 256×256, T=500 with 5 sampling steps, 40
    /// epochs of batch 2 at lr 1e-4.
    fn default() -> Self {
        TrainConfig {
            t_max: 500,
            sample_steps: 5,
            epochs: 40,
            max_steps: 0,
            batch: 2,
            lr: 1e-4,
            image_size: 256,
            base_channels: 32,
            temb_dim: 64,
            ssr: true,
            rr: true,
            w2: 1.0,
            w3: 1.0,
            seed: 42,
            data_manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
        }
    }
}

impl TrainConfig {
    /// Laptop-scale preset: 64×64 patches, T=100 (stride 20), halved
    /// channels, 2000 steps.
    pub fn desk() -> Self {
        TrainConfig {
            t_max: 100,
            image_size: 64,
            base_channels: 16,
            max_steps: 2000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max < 2 {
            return Err(Error::Config(format!("T must be >= 2, got {}", self.t_max)));
        }
        if self.sample_steps == 0 || self.t_max % self.sample_steps != 0 {
            return Err(Error::Config(format!(
                "sample_steps {} must evenly divide T={}",
                self.sample_steps, self.t_max
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.image_size < 16 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 4 and at least 16, got {}",
                self.image_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.temb_dim < 2 || self.temb_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "temb_dim must be even and >= 2, got {}",
                self.temb_dim
            )));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            base_channels: self.base_channels,
            temb_dim: self.temb_dim,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        let ssim = SsimConfig::default();
        LossConfig {
            toggles: LossToggles {
                ssr: self.ssr,
                rr: self.rr,
            },
            w2: self.w2,
            w3: self.w3,
            ssim,
            ms_ssim_scales: default_n_scales(self.image_size, ssim.win),
        }
    }

    /// Canonical text form (fixed key order); embedded in checkpoints.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "T={}", self.t_max);
        let _ = writeln!(out, "sample_steps={}", self.sample_steps);
        let _ = writeln!(out, "epochs={}", self.epochs);
        let _ = writeln!(out, "max_steps={}", self.max_steps);
        let _ = writeln!(out, "batch={}", self.batch);
        let _ = writeln!(out, "lr={}", self.lr);
        let _ = writeln!(out, "image_size={}", self.image_size);
        let _ = writeln!(out, "base_channels={}", self.base_channels);
        let _ = writeln!(out, "temb_dim={}", self.temb_dim);
        let _ = writeln!(out, "ssr={}", self.ssr);
        let _ = writeln!(out, "rr={}", self.rr);
        let _ = writeln!(out, "w2={}", self.w2);
        let _ = writeln!(out, "w3={}", self.w3);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "data_manifest={}", self.data_manifest.display());
        let _ = writeln!(out, "out_dir={}", self.out_dir.display());
        out
    }

    /// Parses `key=value` lines over the defaults. Unknown keys are
    /// configuration errors (typo protection); `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(Error::Config(format!(
                    "config line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            let bad = |what: &str| {
                Error::Config(format!(
                    "config line {}: bad {what} value '{value}' for '{key}'",
                    lineno + 1
                ))
            };
            match key {
                "T" => cfg.t_max = value.parse().map_err(|_| bad("integer"))?,
                "sample_steps" => cfg.sample_steps = value.parse().map_err(|_| bad("integer"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("integer"))?,
                "max_steps" => cfg.max_steps = value.parse().map_err(|_| bad("integer"))?,
                "batch" => cfg.batch = value.parse().map_err(|_| bad("integer"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("number"))?,
                "image_size" => cfg.image_size = value.parse().map_err(|_| bad("integer"))?,
                "base_channels" => {
                    cfg.base_channels = value.parse().map_err(|_| bad("integer"))?
                }
                "temb_dim" => cfg.temb_dim = value.parse().map_err(|_| bad("integer"))?,
                "ssr" => cfg.ssr = value.parse().map_err(|_| bad("boolean"))?,
                "rr" => cfg.rr = value.parse().map_err(|_| bad("boolean"))?,
                "w2" => cfg.w2 = value.parse().map_err(|_| bad("number"))?,
                "w3" => cfg.w3 = value.parse().map_err(|_| bad("number"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "data_manifest" => cfg.data_manifest = PathBuf::from(value),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                other => {
                    return Err(Error::Config(format!(
                        "config line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::desk();
        cfg.data_manifest = PathBuf::from("/tmp/ds/manifest.txt");
        cfg.out_dir = PathBuf::from("/tmp/run");
        let parsed = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = TrainConfig::parse("T=100\nsample_steps=5\nlearning_rate=3\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(TrainConfig::parse("T=100\nT=200\n").is_err());
    }

    #[test]
    fn stride_must_divide() {
        assert!(TrainConfig::parse("T=100\nsample_steps=7\n").is_err());
        assert!(TrainConfig::parse("T=100\nsample_steps=5\n").is_ok());
    }

    #[test]
    fn defaults_match_paper_scale_settings() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.t_max, 500);
        assert_eq!(cfg.t_max / cfg.sample_steps, 100);
        assert_eq!(cfg.epochs, 40);
        assert_eq!(cfg.batch, 2);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.image_size, 256);
        assert!(cfg.ssr && cfg.rr);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = TrainConfig::parse("# preset\nT=100 # inline\n\nsample_steps=5\n").unwrap();
        assert_eq!(cfg.t_max, 100);
    }
}
