//! Architecture hyperparameters for the backbone and the slimming
//! mechanism. Layer indices are 1-based throughout: layer `t` runs for
//! `t` in `1..=layers`, and a patch with life `tau` participates in
//! every layer `t <= tau`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    /// Transformer depth T.
    pub layers: usize,
    /// Embedding width d.
    pub embed_dim: usize,
    /// Attention head count.
    pub heads: usize,
    /// Patch side in pixels.
    pub patch_size: usize,
    /// Input image side in pixels (square images).
    pub image_side: usize,
    /// Input channels.
    pub channels: usize,
    pub num_classes: usize,
    /// Layer whose block output feeds the one-shot life predictor.
    pub t_base: usize,
    /// Sigmoid steepness for the soft retention weight.
    pub temperature_u: f64,
    /// Layers after which the retained patch count shrinks (ascending).
    pub t_slim: Vec<usize>,
    /// Keep rate applied at each slimming layer, in (0, 1].
    pub rho: f64,
}

impl ViTConfig {
    /// Patches per image, excluding the class token.
    pub fn num_patches(&self) -> usize {
        let grid = self.image_side / self.patch_size;
        grid * grid
    }

    /// Patch grid side.
    pub fn grid(&self) -> usize {
        self.image_side / self.patch_size
    }

    /// Sequence length including the class token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    /// Flattened patch vector length.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.embed_dim == 0 || self.heads == 0 {
            return Err(Error::Config("layers, embed_dim and heads must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.patch_size == 0 || self.image_side % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image side {} must be divisible by patch size {}",
                self.image_side, self.patch_size
            )));
        }
        if self.channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("channels and num_classes must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.temperature_u <= 0.0 {
            return Err(Error::Config(format!(
                "temperature_u must be positive, got {}",
                self.temperature_u
            )));
        }
        if self.t_base < 1 || self.t_base > self.layers {
            return Err(Error::Config(format!(
                "t_base {} must lie in [1, {}]",
                self.t_base, self.layers
            )));
        }
        if !self.t_slim.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "t_slim must be strictly ascending, got {:?}",
                self.t_slim
            )));
        }
        if let Some(&first) = self.t_slim.first() {
            if self.t_base >= first {
                return Err(Error::Config(format!(
                    "t_base {} must precede the first slimming layer {}",
                    self.t_base, first
                )));
            }
        }
        if let Some(&last) = self.t_slim.last() {
            if last > self.layers {
                return Err(Error::Config(format!(
                    "slimming layer {} exceeds depth {}",
                    last, self.layers
                )));
            }
        }
        Ok(())
    }

    /// DeiT-S shape: 12 layers, width 384, 6 heads, 196 patches.
    pub fn deit_small() -> Self {
        ViTConfig {
            layers: 12,
            embed_dim: 384,
            heads: 6,
            patch_size: 16,
            image_side: 224,
            channels: 3,
            num_classes: 1000,
            t_base: 3,
            temperature_u: 1.5,
            t_slim: vec![4, 7, 10],
            rho: 0.7,
        }
    }

    /// ViT-B shape: 12 layers, width 768, 12 heads.
    pub fn vit_base() -> Self {
        ViTConfig {
            embed_dim: 768,
            heads: 12,
            ..Self::deit_small()
        }
    }

    /// Small model for the synthetic-dataset experiments: 16x16 single
    /// channel images in a 4x4 patch grid.
    pub fn desk() -> Self {
        ViTConfig {
            layers: 6,
            embed_dim: 32,
            heads: 4,
            patch_size: 4,
            image_side: 16,
            channels: 1,
            num_classes: 4,
            t_base: 2,
            temperature_u: 1.5,
            t_slim: vec![3, 5],
            rho: 0.7,
        }
    }

    /// Tiny shape for finite-difference checks: 3 layers, width 8,
    /// 4 patches.
    pub fn micro() -> Self {
        ViTConfig {
            layers: 3,
            embed_dim: 8,
            heads: 2,
            patch_size: 2,
            image_side: 4,
            channels: 1,
            num_classes: 2,
            t_base: 1,
            temperature_u: 1.5,
            t_slim: vec![2],
            rho: 0.7,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            ViTConfig::deit_small(),
            ViTConfig::vit_base(),
            ViTConfig::desk(),
            ViTConfig::micro(),
        ] {
            cfg.validate().unwrap();
        }
        assert_eq!(ViTConfig::deit_small().num_patches(), 196);
        assert_eq!(ViTConfig::desk().num_patches(), 16);
        assert_eq!(ViTConfig::micro().num_patches(), 4);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut cfg = ViTConfig::desk();
        cfg.heads = 5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ViTConfig::desk();
        cfg.t_base = 3; // collides with first slimming layer
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ViTConfig::desk();
        cfg.t_slim = vec![3, 3];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ViTConfig::desk();
        cfg.rho = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ViTConfig::desk();
        cfg.t_slim = vec![3, 7];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ViTConfig::deit_small();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ViTConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }
}
