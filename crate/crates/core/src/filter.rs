//! Separable Gaussian smoothing with edge clamping.

use crate::grid::{Dims, VoxelGrid};

/// Normalized 1D Gaussian taps, truncated at `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn convolve_axis(data: &[f64], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as isize;
    let mut out = vec![0.0; data.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = ((i / stride) % dims[axis]) as isize;
        let base = i as isize - pos * stride as isize;
        let mut acc = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            let p = (pos + t as isize - radius).clamp(0, n - 1);
            acc += w * data[(base + p * stride as isize) as usize];
        }
        *o = acc;
    }
    out
}

/// Blurs an x-fastest f64 buffer in place; `sigma <= 0` is a no-op.
pub fn blur_buffer(data: &mut Vec<f64>, dims: Dims, sigma: f64) {
    if !(sigma > 0.0) {
        return;
    }
    let kernel = gaussian_kernel(sigma);
    for axis in 0..3 {
        if dims[axis] > 1 {
            *data = convolve_axis(data, dims, axis, &kernel);
        }
    }
}

pub fn gaussian_blur(grid: &VoxelGrid<f32>, sigma: f64) -> VoxelGrid<f32> {
    if !(sigma > 0.0) {
        return grid.clone();
    }
    let mut buf: Vec<f64> = grid.data().iter().map(|&v| v as f64).collect();
    blur_buffer(&mut buf, grid.dims(), sigma);
    grid.with_data(buf.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn constant_field_is_preserved() {
        let g = VoxelGrid::filled([6, 5, 4], [1.0; 3], 42.0f32).unwrap();
        let b = gaussian_blur(&g, 2.0);
        assert!(b.data().iter().all(|&v| (v - 42.0).abs() < 1e-4));
    }

    #[test]
    fn impulse_spreads_and_keeps_mass_away_from_edges() {
        let mut g = VoxelGrid::filled([21, 21, 21], [1.0; 3], 0.0f32).unwrap();
        g.set(10, 10, 10, 1.0);
        let b = gaussian_blur(&g, 1.0);
        let total: f64 = b.data().iter().map(|&v| v as f64).sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert!(b.get(10, 10, 10) < 1.0);
        assert!(b.get(11, 10, 10) > 0.0);
    }
}
