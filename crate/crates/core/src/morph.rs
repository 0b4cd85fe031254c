//! Binary morphology with Euclidean ball structuring elements.
//!
//! Voxels outside the grid are ignored by both operators: dilation is clipped
//! to the grid and erosion only tests in-grid neighbours. With that convention
//! `erode(M) == !dilate(!M)` and `erode(dilate(M)) ⊇ M` hold up to the border.

use crate::error::{Error, Result};
use crate::grid::BinaryMask;

/// Offsets `(dx, dy, dz)` with `dx² + dy² + dz² <= radius²`.
pub fn ball_offsets(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let r2 = r * r;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r2 {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn check_radius(mask: &BinaryMask, radius: usize) -> Result<()> {
    let dims = mask.dims();
    let min_dim = *dims.iter().min().unwrap();
    if radius == 0 {
        return Err(Error::InvalidParameter("morphology radius must be >= 1".into()));
    }
    if 2 * radius >= min_dim {
        return Err(Error::StructuringElementTooLarge { radius, dims });
    }
    Ok(())
}

#[inline]
fn shifted(c: [usize; 3], o: [isize; 3], dims: [usize; 3]) -> Option<[usize; 3]> {
    let x = c[0] as isize + o[0];
    let y = c[1] as isize + o[1];
    let z = c[2] as isize + o[2];
    if x < 0 || y < 0 || z < 0 {
        return None;
    }
    let p = [x as usize, y as usize, z as usize];
    (p[0] < dims[0] && p[1] < dims[1] && p[2] < dims[2]).then_some(p)
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> Result<BinaryMask> {
    check_radius(mask, radius)?;
    let dims = mask.dims();
    let offsets = ball_offsets(radius);
    let grid = mask.grid();
    let mut out = mask.clone();
    for i in mask.foreground() {
        let c = grid.coords(i);
        for &o in &offsets {
            if let Some(p) = shifted(c, o, dims) {
                out.set(p[0], p[1], p[2], true);
            }
        }
    }
    Ok(out)
}

pub fn erode(mask: &BinaryMask, radius: usize) -> Result<BinaryMask> {
    check_radius(mask, radius)?;
    let dims = mask.dims();
    let offsets = ball_offsets(radius);
    let grid = mask.grid();
    let mut out = mask.clone();
    for i in mask.foreground() {
        let c = grid.coords(i);
        let keep = offsets.iter().all(|&o| match shifted(c, o, dims) {
            Some(p) => mask.at(p[0], p[1], p[2]),
            None => true,
        });
        if !keep {
            out.set_index(i, false);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(dims: [usize; 3], p: [usize; 3]) -> BinaryMask {
        let mut m = BinaryMask::empty(dims, [1.0; 3]).unwrap();
        m.set(p[0], p[1], p[2], true);
        m
    }

    #[test]
    fn radius_one_ball_is_six_neighbourhood() {
        assert_eq!(ball_offsets(1).len(), 7);
        let d = dilate(&single([8, 8, 8], [4, 4, 4]), 1).unwrap();
        assert_eq!(d.count(), 7);
    }

    #[test]
    fn empty_stays_empty() {
        let m = BinaryMask::empty([8, 8, 8], [1.0; 3]).unwrap();
        assert!(dilate(&m, 2).unwrap().none());
        assert!(erode(&m, 2).unwrap().none());
    }

    #[test]
    fn erode_single_voxel_vanishes() {
        assert!(erode(&single([8, 8, 8], [4, 4, 4]), 1).unwrap().none());
    }

    #[test]
    fn oversized_element_is_rejected() {
        let m = single([8, 8, 8], [4, 4, 4]);
        assert!(matches!(dilate(&m, 4), Err(Error::StructuringElementTooLarge { .. })));
        assert!(matches!(erode(&m, 5), Err(Error::StructuringElementTooLarge { .. })));
        assert!(dilate(&m, 3).is_ok());
        assert!(dilate(&m, 0).is_err());
    }

    #[test]
    fn opening_keeps_ball_interior() {
        let (n, c, big) = (25usize, 12isize, 8isize);
        let ball = BinaryMask::from_fn([n; 3], [1.0; 3], |x, y, z| {
            let d = [x as isize - c, y as isize - c, z as isize - c];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= big * big
        })
        .unwrap();
        for r in 1..=3usize {
            let opened = dilate(&erode(&ball, r).unwrap(), r).unwrap();
            assert!(opened.is_subset_of(&ball));
            let inner = (big - r as isize) as f64;
            for i in ball.foreground() {
                let p = ball.grid().coords(i);
                let d2: f64 = p.iter().map(|&v| (v as f64 - c as f64).powi(2)).sum();
                if d2.sqrt() <= inner {
                    assert!(opened.contains(i), "interior voxel {p:?} lost at r={r}");
                }
            }
        }
    }

    #[test]
    fn erosion_is_dual_of_dilation() {
        let m = BinaryMask::from_fn([10, 9, 8], [1.0; 3], |x, y, z| (x * 7 + y * 3 + z * 5) % 4 != 0).unwrap();
        let lhs = erode(&m, 1).unwrap();
        let rhs = dilate(&m.complement(), 1).unwrap().complement();
        assert_eq!(lhs, rhs);
    }

    fn random_mask() -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(prop::bool::weighted(0.2), 12 * 12 * 12)
            .prop_map(|v| BinaryMask::from_indices(
                &crate::grid::VoxelGrid::filled([12; 3], [1.0; 3], 0u8).unwrap(),
                v.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i),
            ))
    }

    proptest! {
        #[test]
        fn dilate_extensive_erode_antiextensive(m in random_mask(), r in 1usize..=3) {
            let d = dilate(&m, r).unwrap();
            let e = erode(&m, r).unwrap();
            prop_assert!(m.is_subset_of(&d));
            prop_assert!(e.is_subset_of(&m));
        }

        #[test]
        fn closing_adjunction(m in random_mask(), r in 1usize..=2) {
            let closed = erode(&dilate(&m, r).unwrap(), r).unwrap();
            prop_assert!(m.is_subset_of(&closed));
        }
    }
}
