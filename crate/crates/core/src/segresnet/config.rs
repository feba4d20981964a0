use std::fmt;

use crate::error::{Error, Result};

/// Shape of the residual encoder-decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub init_filters: usize,
    /// Residual blocks per encoder level; level `i > 0` starts with a stride-2 conv.
    pub blocks_down: Vec<usize>,
    /// Residual blocks per decoder level, deepest first.
    pub blocks_up: Vec<usize>,
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            out_channels: 1,
            init_filters: 32,
            blocks_down: vec![1, 2, 2, 4],
            blocks_up: vec![1, 1, 1],
            patch_size: 224,
        }
    }
}

impl ModelConfig {
    /// Two-level network on 32×32 patches used for desk-scale runs and checks.
    pub fn tiny() -> Self {
        ModelConfig {
            in_channels: 1,
            out_channels: 1,
            init_filters: 8,
            blocks_down: vec![1, 2],
            blocks_up: vec![1],
            patch_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(format!("invalid model config: {m}")));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in_channels and out_channels must be >= 1".into());
        }
        if self.init_filters == 0 {
            return bad("init_filters must be >= 1".into());
        }
        if self.blocks_down.is_empty() {
            return bad("blocks_down must not be empty".into());
        }
        if self.blocks_up.len() + 1 != self.blocks_down.len() {
            return bad(format!(
                "len(blocks_up) = {} must equal len(blocks_down) - 1 = {}",
                self.blocks_up.len(),
                self.blocks_down.len() - 1
            ));
        }
        let factor = self.downsample_factor();
        if self.patch_size == 0 || self.patch_size % factor != 0 {
            return bad(format!(
                "patch_size {} not divisible by downsampling factor {factor}",
                self.patch_size
            ));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.blocks_down.len()
    }

    /// `2^(levels − 1)`.
    pub fn downsample_factor(&self) -> usize {
        1 << (self.levels().saturating_sub(1))
    }

    /// Channel width at encoder level `i`.
    pub fn channels_at(&self, level: usize) -> usize {
        self.init_filters << level
    }

    /// Number of trainable scalars, in closed form.
    pub fn parameter_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let block = |c: usize| 2 * (2 * c) + 2 * conv(c, c, 3);
        let f = self.init_filters;
        let mut total = conv(self.in_channels, f, 3);
        for (i, &nb) in self.blocks_down.iter().enumerate() {
            let c = self.channels_at(i);
            if i > 0 {
                total += conv(c / 2, c, 3);
            }
            total += nb * block(c);
        }
        for (j, &nb) in self.blocks_up.iter().enumerate() {
            let level = self.levels() - 2 - j;
            let c = self.channels_at(level);
            total += conv(2 * c, c, 1) + nb * block(c);
        }
        total + conv(f, self.out_channels, 1)
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "in_channels={}\nout_channels={}\ninit_filters={}\nblocks_down={}\nblocks_up={}\npatch_size={}\n",
            self.in_channels,
            self.out_channels,
            self.init_filters,
            list(&self.blocks_down),
            list(&self.blocks_up),
            self.patch_size
        )
    }

    /// Sets one field from its `key=value` form. Returns false for unknown keys.
    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
        };
        let list = |v: &str| -> Result<Vec<usize>> {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(num).collect()
        };
        match key {
            "in_channels" => self.in_channels = num(value)?,
            "out_channels" => self.out_channels = num(value)?,
            "init_filters" => self.init_filters = num(value)?,
            "blocks_down" => self.blocks_down = list(value)?,
            "blocks_up" => self.blocks_up = list(value)?,
            "patch_size" => self.patch_size = num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            if !cfg.set_kv(k.trim(), v)? {
                return Err(Error::Config(format!("unknown model config key {k:?}")));
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "F={} down={:?} up={:?} patch={}",
            self.init_filters, self.blocks_down, self.blocks_up, self.patch_size
        )
    }
}
