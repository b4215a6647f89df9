use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FIT_CONFIG_VERSION: u32 = 1;

/// Per-group step sizes. Zero freezes a group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub background_position: f64,
    pub background_rotation: f64,
    pub background_scale: f64,
    pub background_opacity: f64,
    pub background_color: f64,
    pub human_offset: f64,
    pub human_color: f64,
    pub human_scale: f64,
    pub human_opacity: f64,
    pub human_lbs_weights: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            background_position: 1e-3,
            background_rotation: 5e-3,
            background_scale: 1e-2,
            background_opacity: 0.2,
            background_color: 0.2,
            human_offset: 2e-4,
            human_color: 5e-2,
            human_scale: 1e-2,
            human_opacity: 5e-2,
            human_lbs_weights: 1e-3,
        }
    }
}

impl LearningRates {
    /// Everything frozen except the two color groups.
    pub fn colors_only(lr: f64) -> Self {
        LearningRates {
            background_position: 0.0,
            background_rotation: 0.0,
            background_scale: 0.0,
            background_opacity: 0.0,
            background_color: lr,
            human_offset: 0.0,
            human_color: lr,
            human_scale: 0.0,
            human_opacity: 0.0,
            human_lbs_weights: 0.0,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        LearningRates {
            background_position: self.background_position * k,
            background_rotation: self.background_rotation * k,
            background_scale: self.background_scale * k,
            background_opacity: self.background_opacity * k,
            background_color: self.background_color * k,
            human_offset: self.human_offset * k,
            human_color: self.human_color * k,
            human_scale: self.human_scale * k,
            human_opacity: self.human_opacity * k,
            human_lbs_weights: self.human_lbs_weights * k,
        }
    }

    fn all(&self) -> [(&'static str, f64); 10] {
        [
            ("background_position", self.background_position),
            ("background_rotation", self.background_rotation),
            ("background_scale", self.background_scale),
            ("background_opacity", self.background_opacity),
            ("background_color", self.background_color),
            ("human_offset", self.human_offset),
            ("human_color", self.human_color),
            ("human_scale", self.human_scale),
            ("human_opacity", self.human_opacity),
            ("human_lbs_weights", self.human_lbs_weights),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub version: u32,
    /// Photometric L1, applied to the full frame and to the masked human crop.
    pub lambda_l1: f64,
    /// `1 − SSIM`, applied like `lambda_l1`.
    pub lambda_ssim: f64,
    /// Perceptual term. Not implemented; must stay 0.
    pub lambda_lpips: f64,
    /// Mean square of the human color and opacity logits. Off by default: it
    /// pulls every texel toward gray at half opacity.
    pub lambda_geo: f64,
    /// Mean square of the human canonical offsets.
    pub lambda_offset: f64,
    /// Mean square of the human log-scale residuals.
    pub lambda_scale: f64,
    pub iterations: usize,
    pub learning_rates: LearningRates,
    /// Every learning rate decays log-linearly to this fraction by the last iteration.
    pub lr_final_scale: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            version: FIT_CONFIG_VERSION,
            lambda_l1: 0.7,
            lambda_ssim: 0.3,
            lambda_lpips: 0.0,
            lambda_geo: 0.0,
            lambda_offset: 1.0,
            lambda_scale: 1.0,
            iterations: 2000,
            learning_rates: LearningRates::default(),
            lr_final_scale: 0.1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != FIT_CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "fit config version {} is not supported (expected {FIT_CONFIG_VERSION})",
                self.version
            )));
        }
        let lambdas = [
            ("lambda_l1", self.lambda_l1),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_lpips", self.lambda_lpips),
            ("lambda_geo", self.lambda_geo),
            ("lambda_offset", self.lambda_offset),
            ("lambda_scale", self.lambda_scale),
        ];
        for (name, v) in lambdas.into_iter().chain(self.learning_rates.all()) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.lr_final_scale > 0.0 && self.lr_final_scale.is_finite()) {
            return Err(Error::invalid("lr_final_scale must be positive"));
        }
        if self.lambda_lpips != 0.0 {
            return Err(Error::invalid("lambda_lpips must be 0: the perceptual loss is not available"));
        }
        Ok(())
    }
}
