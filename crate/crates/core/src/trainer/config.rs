use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::LossWeights;

/// Optimization settings. [`Default`] holds the full-scale pretraining
/// values; [`TrainConfig::desk`] is sized for a single CPU core.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_decay: f64,
    pub loss_weights: LossWeights,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub seed: u64,
    /// Return the smallest-validation-loss checkpoint rather than the last one.
    pub select_best_val: bool,
    /// Online augmentation with the default policy.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            batch_size: 24,
            epochs: 400,
            l2_decay: 1e-8,
            loss_weights: LossWeights::default(),
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            seed: 0,
            select_best_val: true,
            augment: true,
        }
    }
}

impl TrainConfig {
    /// Full-scale fine-tuning: as [`Default`] with 100 epochs.
    pub fn finetune() -> Self {
        TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        }
    }

    /// Desk-scale run for the tiny model: larger steps, few epochs.
    pub fn desk(epochs: usize) -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.l2_decay >= 0.0) {
            return Err(Error::Config(format!("l2_decay must be >= 0, got {}", self.l2_decay)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) {
            return Err(Error::Config(format!(
                "rmsprop_alpha must be in [0, 1), got {}",
                self.rmsprop_alpha
            )));
        }
        if !(self.rmsprop_eps > 0.0) {
            return Err(Error::Config(format!(
                "rmsprop_eps must be > 0, got {}",
                self.rmsprop_eps
            )));
        }
        self.loss_weights.validate()
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lr={}\nbatch_size={}\nepochs={}\nl2_decay={}\nlambda1={}\nlambda2={}\ndice_smooth={}\n\
             rmsprop_alpha={}\nrmsprop_eps={}\nseed={}\nselect_best_val={}\naugment={}\n",
            self.lr,
            self.batch_size,
            self.epochs,
            self.l2_decay,
            self.loss_weights.lambda1,
            self.loss_weights.lambda2,
            self.loss_weights.dice_smooth,
            self.rmsprop_alpha,
            self.rmsprop_eps,
            self.seed,
            self.select_best_val,
            self.augment
        )
    }

    /// Sets one field from its `key=value` form. Returns false for unknown keys.
    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "l2_decay" => self.l2_decay = parse(key, value)?,
            "lambda1" => self.loss_weights.lambda1 = parse(key, value)?,
            "lambda2" => self.loss_weights.lambda2 = parse(key, value)?,
            "dice_smooth" => self.loss_weights.dice_smooth = parse(key, value)?,
            "rmsprop_alpha" => self.rmsprop_alpha = parse(key, value)?,
            "rmsprop_eps" => self.rmsprop_eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "select_best_val" => self.select_best_val = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses `key=value` lines on top of `base`. Blank lines and `#`
    /// comments are skipped.
    pub fn from_kv_with(base: TrainConfig, text: &str) -> Result<Self> {
        let mut cfg = base;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            if !cfg.set_kv(k.trim(), v)? {
                return Err(Error::Config(format!("unknown train config key {:?}", k.trim())));
            }
        }
        Ok(cfg)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        Self::from_kv_with(TrainConfig::default(), text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip_and_unknown_key() {
        let mut c = TrainConfig::desk(7);
        c.seed = 42;
        c.augment = false;
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(TrainConfig::from_kv("momentum=0.9").is_err());
        assert!(TrainConfig::from_kv("lr=fast").is_err());
    }

    #[test]
    fn invariants() {
        TrainConfig::default().validate().unwrap();
        for bad in ["lr=0", "batch_size=0", "epochs=0", "rmsprop_alpha=1"] {
            assert!(TrainConfig::from_kv(bad).unwrap().validate().is_err(), "{bad}");
        }
    }
}
