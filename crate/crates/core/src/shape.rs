//! Tumor shapes: voxelized ellipsoids and their elastic deformation.
//!
//! Deformation draws i.i.d. Gaussian 3-vectors (std `sigma_d`) on a coarse
//! control lattice, smooths them, upsamples trilinearly to a dense field and
//! warps the mask with nearest-neighbour sampling. The isotropic part of the
//! field's linear trend over the shape is removed first, so the outline changes
//! while the volume stays close to the input.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::components::{connected_components, Connectivity};
use crate::error::{Error, Result};
use crate::filter::blur_buffer;
use crate::grid::{BinaryMask, BoundingBox, Dims, Spacing, VoxelGrid};
use crate::seed::rng;
use crate::warp::{warp_by_displacement, DisplacementField, Interpolation};

pub const DEFAULT_ECCENTRICITY_CAP: f64 = 3.0;

/// Semi-axis lengths in millimetres along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EllipsoidSpec {
    /// Validates positivity and the default eccentricity cap.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let spec = EllipsoidSpec { a, b, c };
        spec.validate(DEFAULT_ECCENTRICITY_CAP)?;
        Ok(spec)
    }

    pub fn sphere(r: f64) -> Result<Self> {
        Self::new(r, r, r)
    }

    pub fn axes(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn validate(&self, eccentricity_cap: f64) -> Result<()> {
        if self.axes().iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "semi-axes must be positive, got {:?}",
                self.axes()
            )));
        }
        if self.eccentricity() > eccentricity_cap * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "eccentricity {:.3} exceeds cap {eccentricity_cap}",
                self.eccentricity()
            )));
        }
        Ok(())
    }

    /// Ratio of the longest to the shortest semi-axis.
    pub fn eccentricity(&self) -> f64 {
        let ax = self.axes();
        let max = ax.iter().cloned().fold(f64::MIN, f64::max);
        let min = ax.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// Radius of the sphere with the same volume, `(abc)^(1/3)`.
    pub fn equivalent_radius(&self) -> f64 {
        (self.a * self.b * self.c).cbrt()
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.a * self.b * self.c
    }
}

/// Voxelizes an ellipsoid on the tightest odd-sized grid centred on it.
///
/// A voxel is foreground iff its centre satisfies `(x/a)² + (y/b)² + (z/c)² <= 1`.
pub fn make_ellipsoid(spec: &EllipsoidSpec, spacing: Spacing) -> Result<BinaryMask> {
    if spec.axes().iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("semi-axes must be positive, got {:?}", spec.axes())));
    }
    let axes = spec.axes();
    let mut half = [0usize; 3];
    for a in 0..3 {
        if axes[a] < spacing[a] {
            return Err(Error::SubResolution {
                axis_mm: axes[a],
                spacing_mm: spacing[a],
            });
        }
        half[a] = (axes[a] / spacing[a]).floor() as usize;
    }
    let dims = [2 * half[0] + 1, 2 * half[1] + 1, 2 * half[2] + 1];
    BinaryMask::from_fn(dims, spacing, |x, y, z| {
        let p = [x, y, z];
        let mut s = 0.0;
        for a in 0..3 {
            let d = (p[a] as f64 - half[a] as f64) * spacing[a] / axes[a];
            s += d * d;
        }
        s <= 1.0
    })
}

/// Elastic deformation parameters. Distances are in voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformSpec {
    pub sigma_d: f64,
    pub control_spacing: usize,
    /// Gaussian smoothing of the control lattice, in voxels.
    pub smooth_sigma: f64,
    pub seed: u64,
}

impl Default for DeformSpec {
    fn default() -> Self {
        DeformSpec {
            sigma_d: 3.0,
            control_spacing: 8,
            smooth_sigma: 6.0,
            seed: 0,
        }
    }
}

impl DeformSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d >= 0.0) || !self.sigma_d.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma_d must be >= 0, got {}", self.sigma_d)));
        }
        if self.control_spacing < 2 {
            return Err(Error::InvalidParameter(format!(
                "control_spacing must be >= 2, got {}",
                self.control_spacing
            )));
        }
        if !(self.smooth_sigma >= 0.0) {
            return Err(Error::InvalidParameter("smooth_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Padding added on every side of the shape grid, `ceil(3 * sigma_d)`.
    pub fn padding(&self) -> usize {
        (3.0 * self.sigma_d).ceil() as usize
    }
}

/// Smooth random displacement field over a grid of `dims`.
pub fn displacement_field(dims: Dims, spec: &DeformSpec) -> Result<DisplacementField> {
    spec.validate()?;
    let cs = spec.control_spacing;
    let coarse: Dims = [0, 1, 2].map(|a| (dims[a].saturating_sub(1)).div_ceil(cs) + 2);
    let n_coarse = coarse[0] * coarse[1] * coarse[2];

    let mut r = rng(spec.seed);
    let mut comps = [vec![0f64; n_coarse], vec![0f64; n_coarse], vec![0f64; n_coarse]];
    if spec.sigma_d > 0.0 {
        let normal = Normal::new(0.0, spec.sigma_d).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for i in 0..n_coarse {
            for comp in comps.iter_mut() {
                comp[i] = normal.sample(&mut r);
            }
        }
    }
    for comp in comps.iter_mut() {
        blur_buffer(comp, coarse, spec.smooth_sigma / cs as f64);
    }

    let at = |comp: &[f64], x: usize, y: usize, z: usize| comp[x + coarse[0] * (y + coarse[1] * z)];
    Ok(DisplacementField::from_fn(dims, |x, y, z| {
        let p = [x, y, z];
        let mut lo = [0usize; 3];
        let mut t = [0f64; 3];
        for a in 0..3 {
            lo[a] = p[a] / cs;
            t[a] = (p[a] % cs) as f64 / cs as f64;
        }
        let mut out = [0f64; 3];
        for (k, comp) in comps.iter().enumerate() {
            let mut acc = 0.0;
            for corner in 0..8 {
                let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let mut w = 1.0;
                for a in 0..3 {
                    w *= if o[a] == 1 { t[a] } else { 1.0 - t[a] };
                }
                if w != 0.0 {
                    acc += w * at(comp, lo[0] + o[0], lo[1] + o[1], lo[2] + o[2]);
                }
            }
            out[k] = acc;
        }
        out
    }))
}

/// Deforms `mask` on a grid padded by [`DeformSpec::padding`] on every side.
///
/// `sigma_d == 0` returns the input unchanged.
pub fn elastic_deform(mask: &BinaryMask, spec: &DeformSpec) -> Result<BinaryMask> {
    spec.validate()?;
    if mask.none() {
        return Err(Error::EmptyMask);
    }
    if spec.sigma_d == 0.0 {
        return Ok(mask.clone());
    }
    let pad = spec.padding();
    let d = mask.dims();
    let padded_dims = [d[0] + 2 * pad, d[1] + 2 * pad, d[2] + 2 * pad];
    let mut padded = VoxelGrid::filled(padded_dims, mask.spacing(), 0f32)?;
    padded.paste(&mask.grid().map(|v| v as f32), [pad; 3]);

    let mut field = displacement_field(padded_dims, spec)?;
    remove_mean_dilation(&mut field, mask, pad);
    let warped = warp_by_displacement(&padded, &field, Interpolation::Nearest)?;
    BinaryMask::new(warped.map(|v| (v >= 0.5) as u8))
}

/// Subtracts the isotropic part of the field's least-squares linear fit over
/// the shape, so deformation changes the outline rather than the size.
fn remove_mean_dilation(field: &mut DisplacementField, mask: &BinaryMask, pad: usize) {
    let g = mask.grid();
    let dims = field.dims();
    let pts: Vec<[usize; 3]> = mask.foreground().map(|i| g.coords(i).map(|c| c + pad)).collect();
    let n = pts.len() as f64;
    let mut centre = [0f64; 3];
    for p in &pts {
        for a in 0..3 {
            centre[a] += p[a] as f64 / n;
        }
    }
    let mut trace = 0.0;
    for a in 0..3 {
        let (mut num, mut den) = (0.0, 0.0);
        for p in &pts {
            let d = p[a] as f64 - centre[a];
            num += field.data()[p[0] + dims[0] * (p[1] + dims[1] * p[2])][a] * d;
            den += d * d;
        }
        if den > 0.0 {
            trace += num / den;
        }
    }
    let s = trace / 3.0;
    let data = field.data_mut();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let u = &mut data[x + dims[0] * (y + dims[1] * z)];
                for (a, c) in [x, y, z].into_iter().enumerate() {
                    u[a] -= s * (c as f64 - centre[a]);
                }
            }
        }
    }
}

pub fn is_single_component(mask: &BinaryMask) -> bool {
    connected_components(mask, Connectivity::TwentySix).len() == 1
}

/// Crops a mask to the bounding box of its foreground.
pub fn crop_to_foreground(mask: &BinaryMask) -> Result<BinaryMask> {
    let bbox = mask.bounding_box().ok_or(Error::EmptyMask)?;
    Ok(mask.crop(&bbox))
}

/// Outcome of [`deform_until_accepted`].
#[derive(Clone, Debug)]
pub struct AcceptedShape {
    pub mask: BinaryMask,
    pub seed_used: u64,
    pub attempts: usize,
}

/// Deforms with seeds `seed, seed+1, ...` until the result is a single
/// 26-connected component that also satisfies `accept`.
pub fn deform_until_accepted(
    mask: &BinaryMask,
    spec: &DeformSpec,
    max_attempts: usize,
    accept: impl Fn(&BinaryMask) -> bool,
) -> Result<AcceptedShape> {
    for k in 0..max_attempts {
        let trial = DeformSpec {
            seed: spec.seed.wrapping_add(k as u64),
            ..spec.clone()
        };
        let out = elastic_deform(mask, &trial)?;
        if !out.none() && is_single_component(&out) && accept(&out) {
            return Ok(AcceptedShape {
                mask: crop_to_foreground(&out)?,
                seed_used: trial.seed,
                attempts: k + 1,
            });
        }
    }
    Err(Error::ShapeRejected { attempts: max_attempts })
}

/// Equivalent-sphere radius `(3V / 4π)^(1/3)` of a mask's physical volume.
pub fn equivalent_radius_mm(mask: &BinaryMask) -> f64 {
    (3.0 * mask.volume_mm3() / (4.0 * std::f64::consts::PI)).cbrt()
}

/// Centre of the grid of `bbox`, used as the nominal shape centre.
pub fn bbox_center(bbox: &BoundingBox) -> [f64; 3] {
    [0, 1, 2].map(|a| (bbox.lo[a] + bbox.hi[a] - 1) as f64 / 2.0)
}
