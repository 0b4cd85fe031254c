//! Intensity-threshold vessel segmentation inside the liver.
//!
//! Contrast-enhanced vessels are hyperdense relative to parenchyma. The default
//! relative rule marks a liver voxel as vessel when its HU exceeds
//! `mean + k_sigma * std` of the liver, which needs no scanner calibration.

use serde::{Deserialize, Serialize};

use crate::components::{remove_small_components, Connectivity};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CtVolume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    #[default]
    Relative,
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VesselParams {
    pub mode: ThresholdMode,
    pub k_sigma: f64,
    pub absolute_hu: f64,
    pub min_component_voxels: usize,
}

impl Default for VesselParams {
    fn default() -> Self {
        VesselParams {
            mode: ThresholdMode::Relative,
            k_sigma: 2.0,
            absolute_hu: 150.0,
            min_component_voxels: 20,
        }
    }
}

impl VesselParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("k_sigma must be > 0, got {}", self.k_sigma)));
        }
        Ok(())
    }
}

/// Mean and population standard deviation of HU over the liver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiverStats {
    pub mean: f64,
    pub std: f64,
}

pub fn liver_stats(volume: &CtVolume, liver: &BinaryMask) -> Result<LiverStats> {
    volume.grid().check_dims(liver.grid())?;
    let data = volume.grid().data();
    let (mut n, mut sum) = (0usize, 0f64);
    for i in liver.foreground() {
        n += 1;
        sum += data[i] as f64;
    }
    if n == 0 {
        return Err(Error::EmptyLiver);
    }
    let mean = sum / n as f64;
    let var = liver.foreground().map(|i| (data[i] as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(LiverStats { mean, std: var.sqrt() })
}

/// Thresholded liver voxels before small-component removal.
pub fn vessel_candidates(volume: &CtVolume, liver: &BinaryMask, params: &VesselParams) -> Result<BinaryMask> {
    params.validate()?;
    let stats = liver_stats(volume, liver)?;
    let threshold = match params.mode {
        ThresholdMode::Relative => stats.mean + params.k_sigma * stats.std,
        ThresholdMode::Absolute => params.absolute_hu,
    };
    let data = volume.grid().data();
    Ok(BinaryMask::from_indices(
        liver.grid(),
        liver.foreground().filter(|&i| data[i] as f64 > threshold),
    ))
}

pub fn segment_vessels(volume: &CtVolume, liver: &BinaryMask, params: &VesselParams) -> Result<BinaryMask> {
    let candidates = vessel_candidates(volume, liver, params)?;
    Ok(remove_small_components(
        &candidates,
        params.min_component_voxels,
        Connectivity::TwentySix,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn solid_liver(n: usize) -> BinaryMask {
        BinaryMask::from_fn([n; 3], [1.0; 3], |x, y, z| {
            [x, y, z].iter().all(|&c| c >= 2 && c < n - 2)
        })
        .unwrap()
    }

    #[test]
    fn constant_liver_has_no_vessels() {
        let v = CtVolume::new(VoxelGrid::filled([12; 3], [1.0; 3], 90.0).unwrap());
        assert!(segment_vessels(&v, &solid_liver(12), &VesselParams::default()).unwrap().none());
    }

    #[test]
    fn empty_liver_is_an_error() {
        let v = CtVolume::new(VoxelGrid::filled([8; 3], [1.0; 3], 90.0).unwrap());
        let liver = BinaryMask::empty([8; 3], [1.0; 3]).unwrap();
        assert!(matches!(segment_vessels(&v, &liver, &VesselParams::default()), Err(Error::EmptyLiver)));
    }

    #[test]
    fn absolute_threshold_above_max_is_empty() {
        let v = CtVolume::new(VoxelGrid::from_fn([10; 3], [1.0; 3], |x, _, _| x as f32 * 10.0).unwrap());
        let p = VesselParams {
            mode: ThresholdMode::Absolute,
            absolute_hu: 1000.0,
            ..Default::default()
        };
        assert!(segment_vessels(&v, &solid_liver(10), &p).unwrap().none());
    }

    /// Liver parenchyma at 90 ± 5 HU with a straight tube at +200 HU.
    fn tube_phantom(seed: u64) -> (CtVolume, BinaryMask, BinaryMask) {
        let n = 32;
        let mut r = crate::seed::rng(seed);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let in_tube = |_x: usize, y: usize, z: usize| {
            let (dy, dz) = (y as f64 - 15.5, z as f64 - 15.5);
            dy * dy + dz * dz <= 2.5 * 2.5
        };
        let liver = solid_liver(n);
        let tube = BinaryMask::from_fn([n; 3], [1.0; 3], |x, y, z| in_tube(x, y, z) && liver.at(x, y, z)).unwrap();
        let grid = VoxelGrid::from_fn([n; 3], [1.0; 3], |x, y, z| {
            let base = if in_tube(x, y, z) { 290.0 } else { 90.0 };
            (base + noise.sample(&mut r)) as f32 + r.random_range(-0.01..0.01)
        })
        .unwrap();
        (CtVolume::new(grid), liver, tube)
    }

    #[test]
    fn phantom_tube_is_recovered_without_false_positives() {
        let (v, liver, tube) = tube_phantom(11);
        let seg = segment_vessels(&v, &liver, &VesselParams::default()).unwrap();
        assert!(seg.is_subset_of(&liver));
        let hit = seg.intersection(&tube).unwrap().count();
        assert!(hit as f64 >= 0.9 * tube.count() as f64, "{hit} of {}", tube.count());
        assert_eq!(seg.difference(&tube).unwrap().count(), 0);
    }

    #[test]
    fn higher_k_sigma_never_adds_voxels() {
        let (v, liver, _) = tube_phantom(3);
        let mut prev: Option<BinaryMask> = None;
        for k in [0.5, 1.0, 2.0, 3.0, 5.0] {
            let p = VesselParams {
                k_sigma: k,
                ..Default::default()
            };
            let c = vessel_candidates(&v, &liver, &p).unwrap();
            assert!(c.is_subset_of(&liver));
            if let Some(prev) = prev {
                assert!(c.is_subset_of(&prev));
            }
            prev = Some(c);
        }
    }
}
