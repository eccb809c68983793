//! Architecture hyperparameters and their grid validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::{output_len, SplitSpec};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Rgb,
    Rgbd,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Rgbd => "rgbd",
        })
    }
}

/// Model hyperparameters. Defaults are the full-size RGB model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VstConfig {
    /// Network input `[height, width]`, both divisible by 16.
    pub input_hw: [usize; 2],
    pub modality: Modality,
    /// Low-level token dimension.
    pub c: usize,
    /// Model dimension.
    pub d: usize,
    pub encoder_specs: [SplitSpec; 3],
    pub decoder_specs: [SplitSpec; 3],
    pub l_e: usize,
    pub l_c: usize,
    pub l_d3: usize,
    pub l_d2: usize,
    pub l_d1: usize,
    /// Attention heads at dimension `d`; `max(1, d/64)` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    pub mlp_ratio_backbone: f64,
    pub mlp_ratio_head: f64,
    /// MLP ratio of the two tokens-to-token layers, which run at `c` with one head.
    pub mlp_ratio_token: f64,
    pub seed: u64,
}

impl Default for VstConfig {
    fn default() -> Self {
        VstConfig {
            input_hw: [224, 224],
            modality: Modality::Rgb,
            c: 64,
            d: 384,
            encoder_specs: [SplitSpec::new(7, 3, 2), SplitSpec::new(3, 1, 1), SplitSpec::new(3, 1, 1)],
            decoder_specs: [SplitSpec::new(3, 1, 1), SplitSpec::new(3, 1, 1), SplitSpec::new(7, 3, 3)],
            l_e: 14,
            l_c: 4,
            l_d3: 4,
            l_d2: 2,
            l_d1: 2,
            n_heads: None,
            mlp_ratio_backbone: 3.0,
            mlp_ratio_head: 4.0,
            mlp_ratio_token: 1.0,
            seed: 0,
        }
    }
}

/// Token grids of every encoder and decoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grids {
    pub input: (usize, usize),
    /// `T1`, `T2`, `T3` grids (1/4, 1/8, 1/16).
    pub encoder: [(usize, usize); 3],
    /// Decoder chain from the convertor grid up to the full resolution.
    pub decoder: [(usize, usize); 4],
}

impl VstConfig {
    pub fn rgbd() -> Self {
        VstConfig {
            modality: Modality::Rgbd,
            ..Self::default()
        }
    }

    /// The small end-to-end configuration used by gradient checks.
    pub fn toy() -> Self {
        VstConfig {
            input_hw: [64, 64],
            c: 16,
            d: 48,
            l_e: 1,
            l_c: 1,
            l_d3: 1,
            l_d2: 1,
            l_d1: 1,
            n_heads: Some(2),
            ..Self::default()
        }
    }

    pub fn heads(&self) -> usize {
        self.n_heads.unwrap_or((self.d / 64).max(1))
    }

    /// Heads of the `c`-dimensional fusion layers.
    pub fn heads_c(&self) -> usize {
        (self.c / 64).max(1)
    }

    pub fn validate(&self) -> Result<Grids, ConfigError> {
        let [h, w] = self.input_hw;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(ConfigError::new(format!(
                "input_hw {h}x{w} must be positive multiples of 16"
            )));
        }
        if self.c == 0 || self.d == 0 {
            return Err(ConfigError::new("c and d must be positive"));
        }
        if self.d % 4 != 0 {
            return Err(ConfigError::new(format!(
                "d = {} must be a multiple of 4 for the position embedding",
                self.d
            )));
        }
        let heads = self.heads();
        if heads == 0 || self.d % heads != 0 {
            return Err(ConfigError::new(format!(
                "d = {} is not divisible by n_heads = {heads}",
                self.d
            )));
        }
        for (name, r) in [
            ("mlp_ratio_backbone", self.mlp_ratio_backbone),
            ("mlp_ratio_head", self.mlp_ratio_head),
            ("mlp_ratio_token", self.mlp_ratio_token),
        ] {
            if !(r.is_finite() && r > 0.0) {
                return Err(ConfigError::new(format!("{name} must be positive, got {r}")));
            }
        }

        let mut grid = (h, w);
        let mut encoder = [(0, 0); 3];
        for (i, (spec, div)) in self.encoder_specs.iter().zip([4, 8, 16]).enumerate() {
            grid = output_len(grid.0, grid.1, spec)
                .map_err(|e| ConfigError::new(format!("encoder_specs[{i}]: {e}")))?;
            if grid != (h / div, w / div) {
                return Err(ConfigError::new(format!(
                    "encoder_specs[{i}] {spec} gives a {}x{} grid, expected 1/{div} of the input ({}x{})",
                    grid.0,
                    grid.1,
                    h / div,
                    w / div
                )));
            }
            encoder[i] = grid;
        }

        let mut decoder = [(h / 16, w / 16), (0, 0), (0, 0), (0, 0)];
        for (i, (spec, div)) in self.decoder_specs.iter().zip([8, 4, 1]).enumerate() {
            let target = (h / div, w / div);
            let src = output_len(target.0, target.1, spec)
                .map_err(|e| ConfigError::new(format!("decoder_specs[{i}]: {e}")))?;
            if src != decoder[i] {
                return Err(ConfigError::new(format!(
                    "decoder_specs[{i}] {spec} folds a {}x{} grid onto {}x{}, but the previous level is {}x{}",
                    src.0, src.1, target.0, target.1, decoder[i].0, decoder[i].1
                )));
            }
            decoder[i + 1] = target;
        }
        Ok(Grids {
            input: (h, w),
            encoder,
            decoder,
        })
    }
}
