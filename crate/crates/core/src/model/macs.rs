//! Analytic multiply-accumulate counts for one forward pass.
//!
//! Every figure here counts the products the kernels in [`crate::tensor`]
//! actually execute, so the totals can be checked against
//! [`crate::tensor::counter`]. Softmax, normalisation and activations are
//! not multiply-accumulates and are left out.

use std::fmt;

use super::tokens::WindowLayout;
use super::ModelConfig;
use crate::error::Result;

/// Per-application channel attention cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelAttentionMacs {
    /// `qᵀk` over all heads: `(C/3)²·N / heads`.
    pub score: u64,
    /// Applying the scores to `v`, same size as `score`.
    pub value: u64,
}

impl ChannelAttentionMacs {
    pub fn score_and_value(&self) -> u64 {
        self.score + self.value
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacReport {
    pub height: usize,
    pub width: usize,
    pub embed_dim: usize,
    pub tokens: u64,
    pub padded_tokens: u64,
    pub num_layers: usize,
    pub cross_heads: usize,

    pub shallow: u64,
    pub gsab_qkv: u64,
    pub gsab_attention: u64,
    pub gsab_proj: u64,
    pub gsab_mlp: u64,
    /// q, k, v and output projections of both cross pairs.
    pub cmca_projections: u64,
    pub cmca: ChannelAttentionMacs,
    pub scab_fuse: u64,
    pub scab_mlp: u64,
    pub skip: u64,
    pub head: u64,
}

impl MacReport {
    pub fn gsab(&self) -> u64 {
        self.gsab_qkv + self.gsab_attention + self.gsab_proj + self.gsab_mlp
    }

    /// Both cross pairs of one block, attention only.
    pub fn cmca_per_block(&self) -> u64 {
        2 * self.cmca.score_and_value()
    }

    pub fn scab(&self) -> u64 {
        self.cmca_projections + self.cmca_per_block() + self.scab_fuse + self.scab_mlp
    }

    pub fn per_layer(&self) -> u64 {
        self.gsab() + self.scab()
    }

    pub fn total(&self) -> u64 {
        self.shallow + self.num_layers as u64 * self.per_layer() + self.skip + self.head
    }

    /// `C²·N/9`, the closed form for one channel-attention score product
    /// with a single head.
    pub fn closed_form_per_application(&self) -> u64 {
        let c = self.embed_dim as u64;
        c * c * self.tokens / 9
    }

    /// Flat `key = value` lines for machine consumption.
    pub fn to_pairs(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("tokens", self.tokens),
            ("padded_tokens", self.padded_tokens),
            ("shallow", self.shallow),
            ("gsab.qkv", self.gsab_qkv),
            ("gsab.attention", self.gsab_attention),
            ("gsab.proj", self.gsab_proj),
            ("gsab.mlp", self.gsab_mlp),
            ("gsab.total", self.gsab()),
            ("cmca.projections", self.cmca_projections),
            ("cmca.score_per_application", self.cmca.score),
            ("cmca.value_per_application", self.cmca.value),
            ("cmca.score_value_per_application", self.cmca.score_and_value()),
            ("cmca.per_block", self.cmca_per_block()),
            ("cmca.closed_form_per_application", self.closed_form_per_application()),
            ("scab.fuse", self.scab_fuse),
            ("scab.mlp", self.scab_mlp),
            ("scab.total", self.scab()),
            ("per_layer", self.per_layer()),
            ("skip", self.skip),
            ("head", self.head),
            ("total", self.total()),
        ]
    }
}

pub fn count_macs(cfg: &ModelConfig, height: usize, width: usize) -> Result<MacReport> {
    cfg.validate()?;
    let layout = WindowLayout::new(height, width, cfg.window_size)?;
    let n = (height * width) as u64;
    let np = layout.padded_len() as u64;
    let c = cfg.embed_dim as u64;
    let g = cfg.group_dim() as u64;
    let hid = cfg.hidden_dim() as u64;
    let ws2 = (cfg.window_size * cfg.window_size) as u64;
    let channel = g * g * n / cfg.cross_heads as u64;

    Ok(MacReport {
        height,
        width,
        embed_dim: cfg.embed_dim,
        tokens: n,
        padded_tokens: np,
        num_layers: cfg.num_layers,
        cross_heads: cfg.cross_heads,
        // Each frame is the LDR image stacked with its HDR projection.
        shallow: 3 * g * 6 * 9 * n,
        gsab_qkv: np * c * 3 * c,
        // Scores and value product over every padded window.
        gsab_attention: 2 * np * ws2 * c,
        gsab_proj: n * c * c,
        gsab_mlp: 2 * n * c * hid,
        cmca_projections: 2 * 4 * n * g * g,
        cmca: ChannelAttentionMacs {
            score: channel,
            value: channel,
        },
        scab_fuse: n * c * c,
        scab_mlp: 2 * n * c * hid,
        skip: c * g * 9 * n,
        head: 3 * c * 9 * n,
    })
}

impl fmt::Display for MacReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "input {}x{}  N = {}  padded N = {}  C = {}  layers = {}",
            self.height, self.width, self.tokens, self.padded_tokens, self.embed_dim, self.num_layers
        )?;
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k:<36} {v:>16}")?;
        }
        let closed = self.closed_form_per_application();
        writeln!(f)?;
        writeln!(
            f,
            "C-MCA score product per application: {} (C^2 x N / 9 = {closed}{})",
            self.cmca.score,
            if self.cross_heads == 1 {
                String::new()
            } else {
                format!(", divided by {} heads", self.cross_heads)
            }
        )?;
        writeln!(
            f,
            "C-MCA score + value per application: {} = 2 x {}",
            self.cmca.score_and_value(),
            self.cmca.score
        )?;
        write!(
            f,
            "C-MCA per block (two applications): {} = 4 x {}",
            self.cmca_per_block(),
            self.cmca.score
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::blocks::channel_attention;
    use crate::model::{ModelWeights, NetworkInput, Sctnet};
    use crate::tensor::{counter, Tensor};

    #[test]
    fn six_channels_sixteen_tokens() {
        let cfg = ModelConfig::toy();
        let r = count_macs(&cfg, 4, 4).unwrap();
        assert_eq!(r.cmca.score, 64);
        assert_eq!(r.closed_form_per_application(), 64);
        assert_eq!(r.cmca.score_and_value(), 128);
        assert_eq!(r.cmca_per_block(), 256);
    }

    #[test]
    fn channel_attention_matches_counter() {
        for (g, n, heads) in [(2, 16, 1), (8, 64, 1), (8, 48, 2), (20, 100, 4)] {
            let q = Tensor::<f64>::from_fn([n, g], |i| (i as f64 * 0.37).sin());
            let (_, used) = counter::measure(|| channel_attention(&q, &q, &q, heads).unwrap());
            assert_eq!(used, 2 * (g * g * n / heads) as u64, "g={g} n={n} heads={heads}");
        }
    }

    #[test]
    fn channel_cost_is_linear_in_tokens() {
        let cfg = ModelConfig::desk();
        let a = count_macs(&cfg, 16, 16).unwrap();
        let b = count_macs(&cfg, 16, 32).unwrap();
        assert_eq!(b.cmca.score, 2 * a.cmca.score);
        assert_eq!(b.cmca_projections, 2 * a.cmca_projections);
    }

    #[test]
    fn whole_forward_matches_counter() {
        let sizes = [(8, 8), (6, 7), (12, 5)];
        for cfg in [ModelConfig::toy(), ModelConfig::desk()] {
            let w = ModelWeights::<f32>::init(&cfg, 2).unwrap();
            let net = Sctnet::new(&cfg, &w).unwrap();
            for (h, wd) in sizes {
                let frames = std::array::from_fn(|i| Tensor::full([6, h, wd], 0.2 + 0.3 * i as f32));
                let input = NetworkInput::new(frames).unwrap();
                let (_, used) = counter::measure(|| net.forward(&input).unwrap());
                let r = count_macs(&cfg, h, wd).unwrap();
                assert_eq!(used, r.total(), "{h}x{wd}\n{r}");
            }
        }
    }
}
