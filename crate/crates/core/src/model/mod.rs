//! Vision transformer over spectrogram patches.

mod checkpoint;
mod patch;
mod vit;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use patch::{patchify, unpatchify};
pub use vit::{block_forward, init_block, BlockOutput, ForwardOptions, ForwardTrace, VitModel};

use serde::{Deserialize, Serialize};

use crate::dsp::InputShape;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub input: InputShape,
    pub n_classes: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self::vit_tiny_cough()
    }
}

impl VitConfig {
    /// ViT-B/16 at 3x224x224 with a 1000-way head.
    pub fn vit_b() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            n_heads: 12,
            mlp_ratio: 4,
            input: InputShape { channels: 3, height: 224, width: 224 },
            n_classes: 1000,
        }
    }

    /// ViT-L/16 at 3x224x224 with a 1000-way head.
    pub fn vit_l() -> Self {
        Self { embed_dim: 1024, depth: 24, n_heads: 16, ..Self::vit_b() }
    }

    /// Desk-scale default: one second of 128-band log-mel resized to 64 frames.
    pub fn vit_tiny_cough() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 192,
            depth: 4,
            n_heads: 3,
            mlp_ratio: 4,
            input: InputShape { channels: 1, height: 128, width: 64 },
            n_classes: 2,
        }
    }

    pub fn n_patches(&self) -> usize {
        (self.input.height / self.patch_size) * (self.input.width / self.patch_size)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn patch_dim(&self) -> usize {
        self.input.channels * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(invalid(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.patch_size == 0
            || self.input.height % self.patch_size != 0
            || self.input.width % self.patch_size != 0
            || self.n_patches() == 0
        {
            return Err(invalid(format!(
                "input {}x{} is not divisible by patch size {}",
                self.input.height, self.input.width, self.patch_size
            )));
        }
        if self.depth == 0 || self.mlp_ratio == 0 || self.input.channels == 0 || self.n_classes == 0 {
            return Err(invalid("depth, mlp_ratio, channels and n_classes must be positive"));
        }
        Ok(())
    }
}

/// Scalars in one pre-norm transformer block of width `e` and MLP width `hidden`.
pub(crate) fn block_param_count(e: usize, hidden: usize) -> usize {
    let norms = 2 * 2 * e;
    let qkv = e * 3 * e + 3 * e;
    let proj = e * e + e;
    let mlp = e * hidden + hidden + hidden * e + e;
    norms + qkv + proj + mlp
}

/// Exact number of trainable scalars, head included.
pub fn param_count(cfg: &VitConfig) -> usize {
    let e = cfg.embed_dim;
    let patch_embed = cfg.patch_dim() * e + e;
    let cls = e;
    let pos = (cfg.n_patches() + 1) * e;
    let blocks = cfg.depth * block_param_count(e, cfg.mlp_hidden());
    let final_norm = 2 * e;
    let head = e * cfg.n_classes + cfg.n_classes;
    patch_embed + cls + pos + blocks + final_norm + head
}
