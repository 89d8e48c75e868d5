//! Pipeline configuration: network sizes, ablation switches, training
//! hyperparameters. Defaults follow the reference-scale settings; the
//! `desk()` preset shrinks everything for CPU-minutes runs on synthetic
//! data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2D position embedding variant for the attention stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosEmb {
    Mlp,
    Sinusoid,
    None,
}

/// How position/2D/3D features combine into queries and keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Concat,
    Add,
    Gating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    // -- data / preprocessing
    pub crop_size: usize,
    /// Input cloud size cap n.
    pub input_points: usize,
    /// Enriched cloud size m.
    pub enriched_points: usize,
    pub min_points: usize,
    pub min_fg: usize,
    pub bilinear_rgb: bool,

    // -- segmentation
    pub point_seg_widths: Vec<usize>,
    pub point_seg_head: usize,
    pub image_widths: Vec<usize>,
    /// Per-pixel feature width c_i (also the width of Z).
    pub image_feat_dim: usize,
    pub pyramid_grids: Vec<usize>,
    pub fg_threshold: f64,

    // -- attention point generator
    pub attn_layers: usize,
    pub attn_heads: usize,
    pub hidden_dim: usize,
    pub intermediate_dim: usize,
    pub pos_dim: usize,
    pub pos_emb: PosEmb,
    pub fusion: Fusion,
    pub asymmetric: bool,
    /// false = no-generation ablation (box stage consumes the bare
    /// segmented cloud).
    pub generation: bool,
    pub mask_ratio_min: f64,
    pub mask_ratio_max: f64,
    /// Meters-per-unit scale for 3D coordinate normalization; declared in
    /// checkpoints so labels stay frame-consistent.
    pub coord_scale: f64,

    // -- box regression
    pub box_enc_widths: Vec<usize>,
    pub box_head_hidden: usize,
    /// Car-class dimension priors (h, l, w) in meters.
    pub dim_priors: [f64; 3],
    pub direct_box_regression: bool,

    // -- training
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            crop_size: 112,
            input_points: 1024,
            enriched_points: 1024,
            min_points: 30,
            min_fg: 5,
            bilinear_rgb: false,

            point_seg_widths: vec![32, 64, 256],
            point_seg_head: 128,
            image_widths: vec![16, 32, 64],
            image_feat_dim: 64,
            pyramid_grids: vec![1, 2, 4],
            fg_threshold: 0.5,

            attn_layers: 4,
            attn_heads: 8,
            hidden_dim: 512,
            intermediate_dim: 1024,
            pos_dim: 64,
            pos_emb: PosEmb::Mlp,
            fusion: Fusion::Concat,
            asymmetric: true,
            generation: true,
            mask_ratio_min: 0.1,
            mask_ratio_max: 0.5,
            coord_scale: 10.0,

            box_enc_widths: vec![64, 128, 512],
            box_head_hidden: 256,
            dim_priors: [1.5, 3.9, 1.6],
            direct_box_regression: false,

            epochs: 150,
            batch_size: 32,
            lr: 5e-4,
            warmup_frac: 0.05,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Small preset sized for CPU-minutes training on synthetic scenes.
    pub fn desk() -> Self {
        PipelineConfig {
            crop_size: 40,
            input_points: 96,
            enriched_points: 128,

            point_seg_widths: vec![24, 48, 96],
            point_seg_head: 64,
            image_widths: vec![12, 24, 48],
            image_feat_dim: 48,

            attn_layers: 2,
            attn_heads: 4,
            hidden_dim: 64,
            intermediate_dim: 128,
            pos_dim: 16,

            box_enc_widths: vec![48, 96, 256],
            box_head_hidden: 128,

            epochs: 20,
            batch_size: 16,
            lr: 2e-3,
            ..Default::default()
        }
    }

    /// Tiny preset for unit tests and gradient checks.
    pub fn toy() -> Self {
        PipelineConfig {
            crop_size: 16,
            input_points: 24,
            enriched_points: 32,
            min_points: 5,
            min_fg: 2,

            point_seg_widths: vec![8, 16],
            point_seg_head: 16,
            image_widths: vec![4, 8, 8],
            image_feat_dim: 8,

            attn_layers: 1,
            attn_heads: 2,
            hidden_dim: 16,
            intermediate_dim: 24,
            pos_dim: 8,

            box_enc_widths: vec![16, 32],
            box_head_hidden: 24,

            epochs: 2,
            batch_size: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.attn_heads
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "warmup_frac {} outside [0, 1)",
                self.warmup_frac
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.enriched_points == 0 || self.input_points == 0 {
            return Err(Error::Config("cloud sizes must be positive".into()));
        }
        if !(self.mask_ratio_min <= self.mask_ratio_max
            && self.mask_ratio_min >= 0.0
            && self.mask_ratio_max <= 1.0)
        {
            return Err(Error::Config("bad mask ratio range".into()));
        }
        if self.dim_priors.iter().any(|&p| p <= 0.0) {
            return Err(Error::Config("dimension priors must be positive".into()));
        }
        Ok(())
    }

    pub fn load_toml(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a fingerprint of the serialized config (reported by eval).
    pub fn fingerprint(&self) -> u64 {
        let text = self.to_toml();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_settings() {
        let c = PipelineConfig::default();
        assert_eq!(c.attn_layers, 4);
        assert_eq!(c.attn_heads, 8);
        assert_eq!(c.hidden_dim, 512);
        assert_eq!(c.intermediate_dim, 1024);
        assert_eq!(c.input_points, 1024);
        assert_eq!(c.enriched_points, 1024);
        assert_eq!(c.epochs, 150);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.warmup_frac, 0.05);
        assert_eq!(c.min_points, 30);
        assert_eq!(c.min_fg, 5);
        c.validate().unwrap();
        PipelineConfig::desk().validate().unwrap();
        PipelineConfig::toy().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_overrides() {
        let c = PipelineConfig::desk();
        let text = c.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.hidden_dim, c.hidden_dim);
        assert_eq!(back.fingerprint(), c.fingerprint());

        // partial TOML falls back to defaults
        let partial: PipelineConfig = toml::from_str("epochs = 3\nfusion = \"gating\"").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.fusion, Fusion::Gating);
        assert_eq!(partial.hidden_dim, 512);
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = PipelineConfig::default();
        c.attn_heads = 7;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.warmup_frac = 1.0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
    }
}
