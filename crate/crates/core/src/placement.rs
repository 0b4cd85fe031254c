//! Tumor location sampling inside the liver, avoiding vessels.
//!
//! Candidate centres are drawn uniformly from liver voxels rather than the
//! liver bounding box, so thin lobes are sampled in proportion to their size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::morph::dilate;
use crate::seed::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementParams {
    pub max_attempts: usize,
    /// Vessels are dilated by this many voxels before the collision test.
    pub vessel_safety_margin_voxels: usize,
    /// Required fraction of tumor voxels inside the liver.
    pub containment: f64,
    pub seed: u64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        PlacementParams {
            max_attempts: 200,
            vessel_safety_margin_voxels: 1,
            containment: 1.0,
            seed: 0,
        }
    }
}

impl PlacementParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts < 1 {
            return Err(Error::InvalidParameter("max_attempts must be >= 1".into()));
        }
        if !(self.containment > 0.0 && self.containment <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "containment must be in (0, 1], got {}",
                self.containment
            )));
        }
        Ok(())
    }
}

/// A successful placement: shape voxel `(i, j, k)` lands on volume voxel
/// `(i + ox, j + oy, k + oz)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub offset: [isize; 3],
    pub attempts: usize,
}

/// Vessel mask grown by the safety margin; the forbidden region for tumors.
pub fn forbidden_region(vessels: &BinaryMask, margin: usize) -> Result<BinaryMask> {
    if margin == 0 || vessels.none() {
        return Ok(vessels.clone());
    }
    dilate(vessels, margin)
}

/// Finds an offset for `shape` that keeps it inside the liver and off the
/// dilated vessels.
pub fn select_location(
    liver: &BinaryMask,
    vessels: &BinaryMask,
    shape: &BinaryMask,
    params: &PlacementParams,
) -> Result<Placement> {
    liver.grid().check_dims(vessels.grid())?;
    let forbidden = forbidden_region(vessels, params.vessel_safety_margin_voxels)?;
    select_location_avoiding(liver, &forbidden, shape, params)
}

/// Like [`select_location`] with a precomputed forbidden region.
pub fn select_location_avoiding(
    liver: &BinaryMask,
    forbidden: &BinaryMask,
    shape: &BinaryMask,
    params: &PlacementParams,
) -> Result<Placement> {
    params.validate()?;
    liver.grid().check_dims(forbidden.grid())?;
    let liver_bbox = liver.bounding_box().ok_or(Error::EmptyLiver)?;
    let shape_bbox = shape.bounding_box().ok_or(Error::EmptyMask)?;
    let (ld, sd) = (liver_bbox.dims(), shape_bbox.dims());
    if (0..3).any(|a| sd[a] > ld[a]) {
        return Err(Error::ShapeTooLarge { shape: sd, liver: ld });
    }

    let dims = liver.dims();
    let shape_grid = shape.grid();
    let centre = shape.dims().map(|n| (n / 2) as isize);
    let points: Vec<[isize; 3]> = shape
        .foreground()
        .map(|i| shape_grid.coords(i).map(|c| c as isize))
        .collect();
    let total = points.len();
    let allowed_outside = total - (params.containment * total as f64).ceil() as usize;
    let sites: Vec<usize> = liver.foreground().collect();
    let liver_grid = liver.grid();

    let mut r = rng(params.seed);
    for attempt in 0..params.max_attempts {
        let c = liver_grid.coords(sites[r.random_range(0..sites.len())]);
        let offset = [0, 1, 2].map(|a| c[a] as isize - centre[a]);
        let mut outside = 0usize;
        let mut ok = true;
        for p in &points {
            let q = [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
            if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as isize) {
                ok = false;
                break;
            }
            let i = liver_grid.index(q[0] as usize, q[1] as usize, q[2] as usize);
            if forbidden.contains(i) {
                ok = false;
                break;
            }
            if !liver.contains(i) {
                outside += 1;
                if outside > allowed_outside {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(Placement {
                offset,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::PlacementExhausted {
        attempts: params.max_attempts,
    })
}

/// Linear indices in the host grid covered by `shape` at `offset`.
///
/// Panics if any shape voxel falls outside the host grid, which a
/// [`Placement`] never produces.
pub fn placed_indices(shape: &BinaryMask, offset: [isize; 3], host_dims: [usize; 3]) -> Vec<usize> {
    let g = shape.grid();
    shape
        .foreground()
        .map(|i| {
            let c = g.coords(i);
            let q = [0, 1, 2].map(|a| {
                let v = c[a] as isize + offset[a];
                assert!(v >= 0 && (v as usize) < host_dims[a], "placed shape leaves the grid");
                v as usize
            });
            q[0] + host_dims[0] * (q[1] + host_dims[1] * q[2])
        })
        .collect()
}
