//! Tumor intensity texture.
//!
//! Standard-normal noise is drawn on a grid `coarse_factor` times coarser than
//! the target, upsampled with tricubic Catmull-Rom interpolation, blurred with a
//! Gaussian, and finally mapped to `mu + sigma_g * z`. Working with the zero-mean
//! field keeps `sigma_g == 0` an exact constant.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::blur_buffer;
use crate::grid::{Dims, VoxelGrid};
use crate::seed::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureSpec {
    /// Target mean attenuation, HU.
    pub mu: f64,
    /// Noise standard deviation, HU.
    pub sigma_g: f64,
    pub coarse_factor: usize,
    /// Final blur, in voxels.
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            mu: 60.0,
            sigma_g: 15.0,
            coarse_factor: 4,
            blur_sigma: 1.0,
            seed: 0,
        }
    }
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_g >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "texture needs finite mu and sigma_g >= 0, got mu={} sigma_g={}",
                self.mu, self.sigma_g
            )));
        }
        if self.coarse_factor < 1 {
            return Err(Error::InvalidParameter("coarse_factor must be >= 1".into()));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::InvalidParameter("blur_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Catmull-Rom weights for the four taps around a sample at fraction `t`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Tap indices and weights along one axis, with edge clamping.
fn axis_taps(n_fine: usize, n_coarse: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..n_fine)
        .map(|i| {
            let base = i / factor;
            let t = (i % factor) as f64 / factor as f64;
            let idx = [-1isize, 0, 1, 2].map(|o| (base as isize + o).clamp(0, n_coarse as isize - 1) as usize);
            (idx, catmull_rom(t))
        })
        .collect()
}

/// Separable tricubic upsampling of an x-fastest coarse buffer.
fn upsample(coarse: &[f64], cdims: Dims, dims: Dims, factor: usize) -> Vec<f64> {
    let taps: Vec<_> = (0..3).map(|a| axis_taps(dims[a], cdims[a], factor)).collect();
    // x pass: (dims.x, c.y, c.z)
    let mut sx = vec![0.0; dims[0] * cdims[1] * cdims[2]];
    for z in 0..cdims[2] {
        for y in 0..cdims[1] {
            let row = &coarse[cdims[0] * (y + cdims[1] * z)..];
            for (x, (idx, w)) in taps[0].iter().enumerate() {
                sx[x + dims[0] * (y + cdims[1] * z)] = (0..4).map(|k| w[k] * row[idx[k]]).sum();
            }
        }
    }
    // y pass: (dims.x, dims.y, c.z)
    let mut sy = vec![0.0; dims[0] * dims[1] * cdims[2]];
    for z in 0..cdims[2] {
        for (y, (idx, w)) in taps[1].iter().enumerate() {
            for x in 0..dims[0] {
                sy[x + dims[0] * (y + dims[1] * z)] =
                    (0..4).map(|k| w[k] * sx[x + dims[0] * (idx[k] + cdims[1] * z)]).sum();
            }
        }
    }
    // z pass
    let mut out = vec![0.0; dims[0] * dims[1] * dims[2]];
    let plane = dims[0] * dims[1];
    for (z, (idx, w)) in taps[2].iter().enumerate() {
        for i in 0..plane {
            out[i + plane * z] = (0..4).map(|k| w[k] * sy[i + plane * idx[k]]).sum();
        }
    }
    out
}

/// Zero-mean, unit-scale texture field before the HU mapping.
fn unit_field(dims: Dims, spec: &TextureSpec) -> Vec<f64> {
    let f = spec.coarse_factor;
    let cdims: Dims = [0, 1, 2].map(|a| dims[a].div_ceil(f) + 1);
    let mut r = rng(spec.seed);
    let coarse: Vec<f64> = (0..cdims[0] * cdims[1] * cdims[2])
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    let mut field = upsample(&coarse, cdims, dims, f);
    blur_buffer(&mut field, dims, spec.blur_sigma);
    field
}

/// Generates a texture block of `dims` voxels at the given spacing.
pub fn generate_texture(dims: Dims, spacing: [f64; 3], spec: &TextureSpec) -> Result<VoxelGrid<f32>> {
    spec.validate()?;
    if dims.iter().any(|&n| n == 0) {
        return Err(Error::InvalidGeometry(format!("texture dims must be positive, got {dims:?}")));
    }
    if spec.sigma_g == 0.0 {
        return VoxelGrid::filled(dims, spacing, spec.mu as f32);
    }
    let field = unit_field(dims, spec);
    VoxelGrid::new(
        dims,
        spacing,
        field.into_iter().map(|z| (spec.mu + spec.sigma_g * z) as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(g: &VoxelGrid<f32>) -> (f64, f64) {
        let n = g.len() as f64;
        let m = g.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let v = g.data().iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    fn lag1_autocorr(g: &VoxelGrid<f32>) -> f64 {
        let (m, s) = stats(g);
        let d = g.dims();
        let mut acc = 0.0;
        let mut n = 0usize;
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] - 1 {
                    acc += (g.get(x, y, z) as f64 - m) * (g.get(x + 1, y, z) as f64 - m);
                    n += 1;
                }
            }
        }
        acc / n as f64 / (s * s)
    }

    #[test]
    fn catmull_rom_weights_partition_unity() {
        for t in [0.0, 0.25, 0.5, 0.75] {
            let w = catmull_rom(t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(catmull_rom(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn upsampling_passes_through_coarse_nodes() {
        let cd = [5, 4, 3];
        let coarse: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64).collect();
        let up = upsample(&coarse, cd, [17, 13, 9], 4);
        for z in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    let fine = up[4 * x + 17 * (4 * y + 13 * 4 * z)];
                    let c = coarse[x + 5 * (y + 4 * z)];
                    if 4 * x < 17 && 4 * y < 13 && 4 * z < 9 {
                        assert!((fine - c).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_sigma_is_exact_constant() {
        let spec = TextureSpec {
            mu: 73.5,
            sigma_g: 0.0,
            ..Default::default()
        };
        let g = generate_texture([9, 8, 7], [1.0; 3], &spec).unwrap();
        assert!(g.data().iter().all(|&v| v == 73.5));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = TextureSpec {
            seed: 17,
            ..Default::default()
        };
        let a = generate_texture([20, 20, 20], [1.0; 3], &spec).unwrap();
        let b = generate_texture([20, 20, 20], [1.0; 3], &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_within_band_at_64_cubed() {
        let spec = TextureSpec {
            mu: 90.0,
            sigma_g: 25.0,
            seed: 1,
            ..Default::default()
        };
        let (m, _) = stats(&generate_texture([64; 3], [1.0; 3], &spec).unwrap());
        assert!((88.0..=92.0).contains(&m), "{m}");
    }

    #[test]
    fn blur_reduces_spread() {
        for seed in 0..5 {
            let base = TextureSpec {
                mu: 90.0,
                sigma_g: 25.0,
                seed,
                ..Default::default()
            };
            let sharp = generate_texture([32; 3], [1.0; 3], &TextureSpec { blur_sigma: 0.0, ..base.clone() }).unwrap();
            let blurred = generate_texture([32; 3], [1.0; 3], &TextureSpec { blur_sigma: 1.0, ..base }).unwrap();
            assert!(stats(&blurred).1 < stats(&sharp).1);
        }
    }

    #[test]
    fn stages_preserve_the_mean() {
        // each smoothing stage moves the grid mean by well under 0.5 HU
        let spec = TextureSpec {
            mu: 0.0,
            sigma_g: 25.0,
            seed: 8,
            blur_sigma: 0.0,
            ..Default::default()
        };
        let dims: Dims = [64; 3];
        let f = spec.coarse_factor;
        let cdims: Dims = [0, 1, 2].map(|a| dims[a].div_ceil(f) + 1);
        let mut r = rng(spec.seed);
        let coarse: Vec<f64> = (0..cdims.iter().product::<usize>()).map(|_| StandardNormal.sample(&mut r)).collect();
        // mean over the coarse nodes that the fine grid actually covers
        let covered = |a: usize| (dims[a] - 1) / f + 1;
        let mut cm = 0.0;
        let mut cn = 0.0;
        for z in 0..covered(2) {
            for y in 0..covered(1) {
                for x in 0..covered(0) {
                    cm += coarse[x + cdims[0] * (y + cdims[1] * z)];
                    cn += 1.0;
                }
            }
        }
        let up = upsample(&coarse, cdims, dims, f);
        let um = up.iter().sum::<f64>() / up.len() as f64;
        assert!((25.0 * (um - cm / cn)).abs() < 0.5);
        let mut blurred = up.clone();
        blur_buffer(&mut blurred, dims, 1.0);
        let bm = blurred.iter().sum::<f64>() / blurred.len() as f64;
        assert!((25.0 * (bm - um)).abs() < 0.5);
    }

    #[test]
    fn correlation_grows_with_coarse_factor() {
        let mut prev = f64::MIN;
        for f in [1usize, 2, 4, 8] {
            let mut acc = 0.0;
            for seed in 0..3 {
                let spec = TextureSpec {
                    mu: 0.0,
                    sigma_g: 1.0,
                    coarse_factor: f,
                    blur_sigma: 0.0,
                    seed,
                };
                acc += lag1_autocorr(&generate_texture([32; 3], [1.0; 3], &spec).unwrap());
            }
            assert!(acc >= prev, "factor {f}: {acc} < {prev}");
            prev = acc;
        }
    }
}
