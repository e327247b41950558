use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::scene::caption_words;

/// Shape and hyperparameters of the denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_ratio: usize,
    /// Latent channels per token.
    pub channels: usize,
    pub patch: usize,
    pub t_lat: usize,
    pub h_lat: usize,
    pub w_lat: usize,
    /// Maximum number of reference images a sequence may carry.
    pub max_refs: usize,
    pub text_len: usize,
    /// Rotary pairs per axis (t, h, w); `2 * sum == dim / heads`.
    pub rope_pairs: [usize; 3],
    pub rope_theta: f64,
    /// Only `"rectified_flow"` is implemented.
    pub parameterization: String,
    /// Ablation: references enter as extra input channels of every video
    /// token instead of as extra sequence tokens.
    #[serde(default)]
    pub channel_concat: bool,
    /// Divides latents before they enter the network.
    pub latent_scale: f64,
}

impl DenoiserConfig {
    /// A small config for a given latent grid.
    pub fn small(channels: usize, patch: usize, t_lat: usize, h_lat: usize, w_lat: usize) -> Self {
        let dim = 64;
        let heads = 4;
        DenoiserConfig {
            layers: 2,
            heads,
            dim,
            mlp_ratio: 4,
            channels,
            patch,
            t_lat,
            h_lat,
            w_lat,
            max_refs: 2,
            text_len: 12,
            rope_pairs: default_rope_pairs(dim / heads),
            rope_theta: 100.0,
            parameterization: "rectified_flow".into(),
            channel_concat: false,
            latent_scale: 1.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hw_lat(&self) -> usize {
        self.h_lat * self.w_lat
    }

    /// Channels of the input projection.
    pub fn input_channels(&self) -> usize {
        if self.channel_concat {
            self.channels * (1 + self.max_refs)
        } else {
            self.channels
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!("dim {} not divisible by heads {}", self.dim, self.heads)));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::Config("head dim must be even for rotary embedding".into()));
        }
        if 2 * self.rope_pairs.iter().sum::<usize>() != self.head_dim() {
            return Err(Error::Config(format!(
                "rotary split {:?} does not cover head dim {}",
                self.rope_pairs,
                self.head_dim()
            )));
        }
        if self.parameterization != "rectified_flow" {
            return Err(Error::Config(format!("unknown parameterization {:?}", self.parameterization)));
        }
        if self.layers == 0 || self.channels == 0 || self.t_lat == 0 || self.hw_lat() == 0 {
            return Err(Error::Config("layers, channels and latent grid must be positive".into()));
        }
        if !(self.latent_scale > 0.0) {
            return Err(Error::Config("latent_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Split `head_dim / 2` rotary pairs across (t, h, w), spatial axes equal.
pub fn default_rope_pairs(head_dim: usize) -> [usize; 3] {
    let p = head_dim / 2;
    let s = p / 3;
    [p - 2 * s, s, s]
}

pub const PAD: usize = 0;
pub const NULL: usize = 1;
pub const UNK: usize = 2;

/// Closed vocabulary of the caption grammar.
const WORDS: [&str; 35] = [
    "a", "an", "and", "on", "the", "backdrop", "empty", "quiet", "with", "nothing", "it", "at", "dusk",
    "red", "yellow", "green", "cyan", "blue", "magenta", "walker", "sprite", "glyph", "figure", "critter",
    "rests", "drifts", "spins", "squashes", "plain", "striped", "checkered", "gradient", "crosses", "bridge",
    "of",
];

pub fn vocab_size() -> usize {
    3 + WORDS.len()
}

/// Map a caption to exactly `len` token ids (truncate or pad).
pub fn tokenize(caption: &str, len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = caption_words(caption)
        .iter()
        .map(|w| WORDS.iter().position(|v| v == w).map_or(UNK, |i| i + 3))
        .take(len)
        .collect();
    ids.resize(len, PAD);
    ids
}

/// The null text condition.
pub fn null_text(len: usize) -> Vec<usize> {
    vec![NULL; len]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_pads_and_maps() {
        let t = tokenize("a red walker spins on a plain backdrop", 12);
        assert_eq!(t.len(), 12);
        assert!(t[..8].iter().all(|&i| i > UNK));
        assert!(t[8..].iter().all(|&i| i == PAD));
        assert_eq!(tokenize("zebra", 2), vec![UNK, PAD]);
    }

    #[test]
    fn config_validation() {
        let c = DenoiserConfig::small(192, 8, 9, 4, 4);
        c.validate().unwrap();
        assert_eq!(2 * c.rope_pairs.iter().sum::<usize>(), c.head_dim());
        let mut bad = c.clone();
        bad.heads = 5;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.rope_pairs = [1, 1, 1];
        assert!(bad.validate().is_err());
    }
}
