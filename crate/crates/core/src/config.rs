use alloc::format;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Tiny,
    Small,
    Base,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Tiny, Variant::Small, Variant::Base];

    /// `(embed_dim, n_heads)`.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Variant::Tiny => (192, 3),
            Variant::Small => (384, 6),
            Variant::Base => (768, 12),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tiny => "tiny",
            Variant::Small => "small",
            Variant::Base => "base",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Tiny => "ViT-T",
            Variant::Small => "ViT-S",
            Variant::Base => "ViT-B",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tiny" | "t" | "vit-t" => Ok(Variant::Tiny),
            "small" | "s" | "vit-s" => Ok(Variant::Small),
            "base" | "b" | "vit-b" => Ok(Variant::Base),
            _ => Err(Error::Config(format!("unknown architecture {s:?} (expected tiny, small or base)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Pooling {
    #[default]
    Mean,
    Cls,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub patch_size: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
    pub pooling: Pooling,
    pub n_mels: usize,
    /// Rows of the time position table; 64 patches cover a 1024-frame clip.
    pub max_time_patches: usize,
    pub layer_norm_eps: f32,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        let (embed_dim, n_heads) = variant.dims();
        Self {
            variant,
            embed_dim,
            n_heads,
            n_layers: 12,
            patch_size: 16,
            mlp_ratio: 4,
            n_classes: crate::N_CLASSES,
            pooling: Pooling::Mean,
            n_mels: 64,
            max_time_patches: 64,
            layer_norm_eps: 1e-6,
        }
    }

    pub fn tiny() -> Self {
        Self::new(Variant::Tiny)
    }

    pub fn small() -> Self {
        Self::new(Variant::Small)
    }

    pub fn base() -> Self {
        Self::new(Variant::Base)
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn n_freq_patches(&self) -> usize {
        self.n_mels / self.patch_size
    }

    /// Mel frames the full-context model sees at once.
    pub fn full_context_frames(&self) -> usize {
        self.max_time_patches * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if (self.embed_dim, self.n_heads) != self.variant.dims() {
            return Err(Error::Config(format!(
                "{} requires (d, heads) = {:?}, got ({}, {})",
                self.variant,
                self.variant.dims(),
                self.embed_dim,
                self.n_heads
            )));
        }
        if self.patch_size == 0 || !self.n_mels.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "patch size {} must divide n_mels {}",
                self.patch_size, self.n_mels
            )));
        }
        if self.n_layers == 0 || self.mlp_ratio == 0 || self.n_classes == 0 || self.max_time_patches == 0 {
            return Err(Error::Config("layer, mlp, class and position counts must be positive".into()));
        }
        Ok(())
    }
}
