//! Backward warping of scalar volumes by dense displacement fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, VoxelGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Trilinear,
}

/// Per-voxel displacement in voxel units, x-fastest like [`VoxelGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    data: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn zeros(dims: Dims) -> Self {
        DisplacementField {
            dims,
            data: vec![[0.0; 3]; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn new(dims: Dims, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidGeometry(format!(
                "displacement field has {} vectors for dims {dims:?}",
                data.len()
            )));
        }
        Ok(DisplacementField { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        DisplacementField { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }
}

/// Samples `volume` at a continuous voxel position, clamping to the grid.
pub fn sample(volume: &VoxelGrid<f32>, pos: [f64; 3], interpolation: Interpolation) -> f32 {
    let dims = volume.dims();
    match interpolation {
        Interpolation::Nearest => {
            let idx = |a: usize| pos[a].round().clamp(0.0, (dims[a] - 1) as f64) as usize;
            volume.get(idx(0), idx(1), idx(2))
        }
        Interpolation::Trilinear => {
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut frac = [0f64; 3];
            for a in 0..3 {
                let p = pos[a].clamp(0.0, (dims[a] - 1) as f64);
                let f = p.floor();
                lo[a] = f as usize;
                hi[a] = (lo[a] + 1).min(dims[a] - 1);
                frac[a] = p - f;
            }
            if frac == [0.0; 3] {
                return volume.get(lo[0], lo[1], lo[2]);
            }
            let v = |x: usize, y: usize, z: usize| volume.get(x, y, z) as f64;
            let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
            let c00 = lerp(v(lo[0], lo[1], lo[2]), v(hi[0], lo[1], lo[2]), frac[0]);
            let c10 = lerp(v(lo[0], hi[1], lo[2]), v(hi[0], hi[1], lo[2]), frac[0]);
            let c01 = lerp(v(lo[0], lo[1], hi[2]), v(hi[0], lo[1], hi[2]), frac[0]);
            let c11 = lerp(v(lo[0], hi[1], hi[2]), v(hi[0], hi[1], hi[2]), frac[0]);
            let c0 = lerp(c00, c10, frac[1]);
            let c1 = lerp(c01, c11, frac[1]);
            lerp(c0, c1, frac[2]) as f32
        }
    }
}

/// `out(p) = volume(p + field(p))`, with out-of-grid positions clamped to the border.
pub fn warp_by_displacement(
    volume: &VoxelGrid<f32>,
    field: &DisplacementField,
    interpolation: Interpolation,
) -> Result<VoxelGrid<f32>> {
    if field.dims != volume.dims() {
        return Err(Error::DimMismatch {
            left: volume.dims(),
            right: field.dims,
        });
    }
    let data = field
        .data
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if *d == [0.0; 3] {
                return volume.data()[i];
            }
            let c = volume.coords(i);
            let pos = [c[0] as f64 + d[0], c[1] as f64 + d[1], c[2] as f64 + d[2]];
            sample(volume, pos, interpolation)
        })
        .collect();
    Ok(volume.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims) -> VoxelGrid<f32> {
        VoxelGrid::from_fn(dims, [1.0; 3], |x, y, z| (3 * x + 5 * y + 7 * z) as f32).unwrap()
    }

    #[test]
    fn zero_field_is_identity() {
        let v = VoxelGrid::from_fn([7, 6, 5], [1.0; 3], |x, y, z| ((x * 31 + y * 17 + z * 13) % 11) as f32 * 0.37).unwrap();
        let f = DisplacementField::zeros(v.dims());
        for interp in [Interpolation::Nearest, Interpolation::Trilinear] {
            let out = warp_by_displacement(&v, &f, interp).unwrap();
            let same = out.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }

    #[test]
    fn unit_shift_on_ramp() {
        let v = ramp([8, 8, 8]);
        let f = DisplacementField::from_fn([8, 8, 8], |_, _, _| [1.0, 0.0, 0.0]);
        for interp in [Interpolation::Nearest, Interpolation::Trilinear] {
            let out = warp_by_displacement(&v, &f, interp).unwrap();
            for z in 0..8 {
                for y in 0..8 {
                    for x in 0..7 {
                        assert_eq!(out.get(x, y, z), v.get(x + 1, y, z));
                    }
                    // clamped at the far face
                    assert_eq!(out.get(7, y, z), v.get(7, y, z));
                }
            }
        }
    }

    #[test]
    fn trilinear_matches_nearest_at_voxel_centres() {
        let v = VoxelGrid::from_fn([5, 5, 5], [1.0; 3], |x, y, z| ((x * y + z) % 7) as f32 - 2.5).unwrap();
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let p = [x as f64, y as f64, z as f64];
                    assert_eq!(sample(&v, p, Interpolation::Trilinear), sample(&v, p, Interpolation::Nearest));
                }
            }
        }
    }

    #[test]
    fn trilinear_is_exact_on_linear_ramps() {
        let v = ramp([6, 6, 6]);
        let p = [1.25, 2.5, 3.75];
        let expect = 3.0 * 1.25 + 5.0 * 2.5 + 7.0 * 3.75;
        assert!((sample(&v, p, Interpolation::Trilinear) as f64 - expect).abs() < 1e-5);
    }

    #[test]
    fn out_of_bounds_clamps() {
        let v = ramp([4, 4, 4]);
        assert_eq!(sample(&v, [-5.0, 1.0, 1.0], Interpolation::Trilinear), v.get(0, 1, 1));
        assert_eq!(sample(&v, [1.0, 9.0, 1.0], Interpolation::Nearest), v.get(1, 3, 1));
    }

    #[test]
    fn dims_must_match() {
        let v = ramp([4, 4, 4]);
        let f = DisplacementField::zeros([4, 4, 5]);
        assert!(matches!(warp_by_displacement(&v, &f, Interpolation::Nearest), Err(Error::DimMismatch { .. })));
    }
}
