use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::hdrmath::GAMMA;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel width `C` of the attention trunk; a multiple of 3 so it splits
    /// evenly into one group per exposure.
    pub embed_dim: usize,
    pub window_size: usize,
    /// Number of (spatial block, cross-frame block) pairs.
    pub num_layers: usize,
    /// Heads of the window self-attention.
    pub num_heads: usize,
    /// Heads of the channel cross-attention, dividing `C / 3`.
    pub cross_heads: usize,
    pub mlp_ratio: usize,
    /// Tokenizer patch edge; only per-pixel tokens (1) are supported.
    pub patch_size: usize,
    /// One shallow convolution for all three exposures instead of one each.
    pub shared_shallow: bool,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            embed_dim: 24,
            window_size: 4,
            num_layers: 2,
            num_heads: 3,
            cross_heads: 1,
            mlp_ratio: 4,
            patch_size: 1,
            shared_shallow: false,
            gamma: GAMMA,
        }
    }

    /// Wider configuration at roughly a million parameters.
    pub fn full_size() -> Self {
        Self {
            embed_dim: 60,
            window_size: 8,
            num_layers: 3,
            num_heads: 6,
            ..Self::desk()
        }
    }

    /// Tiny configuration for exhaustive gradient checks.
    pub fn toy() -> Self {
        Self {
            embed_dim: 6,
            window_size: 4,
            num_layers: 1,
            num_heads: 2,
            cross_heads: 1,
            mlp_ratio: 2,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full_size()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!(
                "unknown model preset `{other}` (expected desk, full or toy)"
            ))),
        }
    }

    /// Channels per exposure group, `C / 3`.
    pub fn group_dim(&self) -> usize {
        self.embed_dim / 3
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn cross_head_dim(&self) -> usize {
        self.group_dim() / self.cross_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.embed_dim;
        let fail = |m: String| Err(Error::Config(m));
        if c == 0 || c % 3 != 0 {
            return fail(format!("embed_dim {c} must be a positive multiple of 3"));
        }
        if self.num_heads == 0 || c % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {c} must be divisible by num_heads {}",
                self.num_heads
            ));
        }
        if self.cross_heads == 0 || self.group_dim() % self.cross_heads != 0 {
            return fail(format!(
                "group width {} must be divisible by cross_heads {}",
                self.group_dim(),
                self.cross_heads
            ));
        }
        if self.window_size == 0 {
            return fail("window_size must be ≥ 1".into());
        }
        if self.num_layers == 0 {
            return fail("num_layers must be ≥ 1".into());
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be ≥ 1".into());
        }
        if self.patch_size != 1 {
            return fail(format!(
                "patch_size {} unsupported: tokens are single pixels",
                self.patch_size
            ));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        Ok(())
    }

    /// Flat `key = value` form used in checkpoint headers and config files.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("embed_dim", self.embed_dim.to_string()),
            ("window_size", self.window_size.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("cross_heads", self.cross_heads.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("shared_shallow", self.shared_shallow.to_string()),
            ("gamma", format!("{:?}", self.gamma)),
        ]
    }

    pub const KEYS: [&'static str; 9] = [
        "embed_dim",
        "window_size",
        "num_layers",
        "num_heads",
        "cross_heads",
        "mlp_ratio",
        "patch_size",
        "shared_shallow",
        "gamma",
    ];

    /// Overrides fields of `self` from `pairs`; unknown keys are rejected.
    pub fn apply_pairs<'a>(
        mut self,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{k}`")))
        }
        for (k, v) in pairs {
            match k {
                "embed_dim" => self.embed_dim = num(k, v)?,
                "window_size" => self.window_size = num(k, v)?,
                "num_layers" => self.num_layers = num(k, v)?,
                "num_heads" => self.num_heads = num(k, v)?,
                "cross_heads" => self.cross_heads = num(k, v)?,
                "mlp_ratio" => self.mlp_ratio = num(k, v)?,
                "patch_size" => self.patch_size = num(k, v)?,
                "shared_shallow" => self.shared_shallow = num(k, v)?,
                "gamma" => self.gamma = num(k, v)?,
                other => return Err(Error::Config(format!("unknown model key `{other}`"))),
            }
        }
        Ok(self)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = Self::desk().apply_pairs(map.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
