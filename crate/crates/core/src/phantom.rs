//! Synthetic host volumes for tests, examples and demos.
//!
//! A phantom is an abdomen-like ellipse of fat around an ellipsoidal liver of
//! noisy parenchyma, crossed by two contrast-filled vessel tubes.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CtVolume, Dims, Spacing, VoxelGrid};
use crate::seed::{derive_seed, rng};
use crate::volume_io::nifti::{self, Datatype};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    pub parenchyma_hu: f64,
    pub noise_hu: f64,
    pub vessel_hu: f64,
    /// Vessel tube radius in voxels; 0 leaves the liver vessel-free.
    pub vessel_radius: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 48],
            spacing: [1.0; 3],
            parenchyma_hu: 100.0,
            noise_hu: 8.0,
            vessel_hu: 220.0,
            vessel_radius: 2.0,
            seed: 0,
        }
    }
}

/// Builds a phantom volume and its liver mask.
pub fn liver_phantom(spec: &PhantomSpec) -> Result<(CtVolume, BinaryMask)> {
    let d = spec.dims;
    if d.iter().any(|&n| n < 8) {
        return Err(Error::InvalidGeometry(format!("phantom dims must be >= 8, got {d:?}")));
    }
    let mut r = rng(spec.seed);
    // jitter the liver a little per seed so pool members differ
    let jitter: [f64; 3] = [0; 3].map(|_| r.random_range(-0.03..0.03));
    let c = [0, 1, 2].map(|a| (d[a] as f64 - 1.0) / 2.0);
    let semi = [0, 1, 2].map(|a| d[a] as f64 * (0.36 + jitter[a]));
    let in_liver = |x: usize, y: usize, z: usize| {
        let p = [x, y, z];
        (0..3).map(|a| ((p[a] as f64 - c[a]) / semi[a]).powi(2)).sum::<f64>() <= 1.0
    };
    let in_body = |x: usize, y: usize| {
        let (dx, dy) = ((x as f64 - c[0]) / (0.48 * d[0] as f64), (y as f64 - c[1]) / (0.48 * d[1] as f64));
        dx * dx + dy * dy <= 1.0
    };
    // one tube along x and one along z, both off-centre so large tumors still fit
    let offset_y = c[1] + 0.2 * d[1] as f64;
    let offset_z = c[2] - 0.2 * d[2] as f64;
    let rv = spec.vessel_radius;
    let in_vessel = |x: usize, y: usize, z: usize| {
        let a = (y as f64 - offset_y).powi(2) + (z as f64 - offset_z).powi(2);
        let b = (x as f64 - c[0]).powi(2) + (y as f64 - offset_y).powi(2);
        rv > 0.0 && (a <= rv * rv || b <= rv * rv)
    };

    let liver = BinaryMask::from_fn(d, spec.spacing, in_liver)?;
    let mut noise_rng = rng(derive_seed(spec.seed, "noise", 0));
    let noise = Normal::new(0.0, spec.noise_hu.max(0.0)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let grid = VoxelGrid::from_fn(d, spec.spacing, |x, y, z| {
        let base = if in_liver(x, y, z) {
            if in_vessel(x, y, z) {
                spec.vessel_hu
            } else {
                spec.parenchyma_hu
            }
        } else if in_body(x, y) {
            -100.0
        } else {
            -1000.0
        };
        (base + noise.sample(&mut noise_rng)).round() as f32
    })?;
    Ok((CtVolume::new(grid), liver))
}

/// Writes `n` phantoms as `dir/host_<k>/{image,liver}.nii.gz`, a layout
/// [`Pool::from_dir`](crate::dataset::Pool::from_dir) reads.
pub fn write_phantom_pool(dir: impl AsRef<Path>, n: usize, base: &PhantomSpec) -> Result<()> {
    let dir = dir.as_ref();
    for k in 0..n {
        let spec = PhantomSpec {
            seed: derive_seed(base.seed, "phantom", k as u64),
            ..base.clone()
        };
        let (v, l) = liver_phantom(&spec)?;
        let sub = dir.join(format!("host_{k:03}"));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        nifti::write_volume(sub.join("image.nii.gz"), &v, Datatype::Int16)?;
        nifti::write_binary_mask(sub.join("liver.nii.gz"), &l)?;
    }
    Ok(())
}
