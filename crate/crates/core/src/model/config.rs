use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer-norm epsilon used throughout the network.
pub const LN_EPS: f64 = 1e-6;

/// Number of QP classes of a VVC-style codec (QP 0..=63).
pub const VVC_QP_CLASSES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input side in pixels.
    pub image_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Desk-scale default: 96 px input, 32 px patches (9 patch tokens).
    pub fn toy() -> Self {
        Self {
            image_size: 96,
            patch_size: 32,
            dim: 64,
            depth: 4,
            heads: 4,
            mlp_dim: 128,
            num_classes: VVC_QP_CLASSES,
        }
    }

    /// ViT-Large with 32 px patches at the given input resolution
    /// (224 for the pre-training grid, 384 for fine-tuning).
    pub fn vit_large_32(image_size: usize) -> Self {
        Self {
            image_size,
            patch_size: 32,
            dim: 1024,
            depth: 24,
            heads: 16,
            mlp_dim: 4096,
            num_classes: VVC_QP_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Patch-token count `L`.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Flattened length of one RGB patch.
    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

/// Per-channel input normalization applied after scaling pixels to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_lengths() {
        assert_eq!(ModelConfig::toy().num_patches(), 9);
        assert_eq!(ModelConfig::vit_large_32(224).num_patches(), 49);
        assert_eq!(ModelConfig::vit_large_32(384).num_patches(), 144);
    }

    #[test]
    fn validation_catches_bad_divisibility() {
        let mut c = ModelConfig::toy();
        c.image_size = 100;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
