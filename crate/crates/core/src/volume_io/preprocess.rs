//! Intensity windowing and z-score normalization applied before evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CtVolume, VoxelGrid};

/// HU window and normalization switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessParams {
    pub clip_min: f32,
    pub clip_max: f32,
    pub normalize: bool,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            clip_min: -21.0,
            clip_max: 189.0,
            normalize: true,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_min < self.clip_max) {
            return Err(Error::InvalidParameter(format!(
                "clip_min {} must be below clip_max {}",
                self.clip_min, self.clip_max
            )));
        }
        Ok(())
    }
}

/// Clips to `[clip_min, clip_max]`, then optionally rescales to zero mean and unit
/// (population) standard deviation.
pub fn preprocess(volume: &CtVolume, params: &PreprocessParams) -> Result<VoxelGrid<f32>> {
    params.validate()?;
    let clipped = volume.grid().map(|v| v.clamp(params.clip_min, params.clip_max));
    if !params.normalize {
        return Ok(clipped);
    }
    let n = clipped.len() as f64;
    let mean = clipped.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = clipped.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let std = var.sqrt();
    Ok(clipped.map(|v| ((v as f64 - mean) / std) as f32))
}
