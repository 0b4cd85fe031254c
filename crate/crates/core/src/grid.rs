//! Dense 3D grids with physical spacing, and the mask/volume newtypes built on them.
//!
//! All grids store voxels in x-fastest linear order: `index = x + nx * (y + ny * z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

/// Lowest and highest representable CT intensities, in HU.
pub const HU_MIN: f32 = -1024.0;
pub const HU_MAX: f32 = 3071.0;

/// Raw orientation fields carried through from a NIfTI header.
///
/// The generator never resamples; these are recorded on read and written back
/// unchanged so outputs stay aligned with their source volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub qfac: f32,
    pub srow: [[f32; 4]; 3],
    pub xyzt_units: u8,
}

impl Default for Orientation {
    fn default() -> Self {
        Orientation {
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            qfac: 1.0,
            srow: [[0.0; 4]; 3],
            // NIFTI_UNITS_MM
            xyzt_units: 2,
        }
    }
}

/// Half-open axis-aligned box of voxel indices, `lo <= p < hi` on every axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn of_dims(dims: Dims) -> Self {
        BoundingBox {
            lo: [0; 3],
            hi: dims,
        }
    }

    pub fn dims(&self) -> Dims {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }

    /// Grow by `pad` voxels on every side, clipped to `[0, dims)`.
    pub fn expand(&self, pad: usize, dims: Dims) -> Self {
        let mut out = *self;
        for a in 0..3 {
            out.lo[a] = self.lo[a].saturating_sub(pad);
            out.hi[a] = (self.hi[a] + pad).min(dims[a]);
        }
        out
    }

    pub fn union(&self, other: &BoundingBox) -> Self {
        let mut out = *self;
        for a in 0..3 {
            out.lo[a] = self.lo[a].min(other.lo[a]);
            out.hi[a] = self.hi[a].max(other.hi[a]);
        }
        out
    }
}

/// A 3D scalar field with physical voxel spacing in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    dims: Dims,
    spacing: Spacing,
    orientation: Orientation,
    data: Vec<T>,
}

fn check_geometry(dims: Dims, spacing: Spacing) -> Result<()> {
    if dims.iter().any(|&n| n == 0) {
        return Err(Error::InvalidGeometry(format!(
            "dims must be positive, got {dims:?}"
        )));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "spacing must be positive, got {spacing:?}"
        )));
    }
    Ok(())
}

impl<T: Copy> VoxelGrid<T> {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::InvalidGeometry(format!(
                "data length {} does not match dims {dims:?} ({len} voxels)",
                data.len()
            )));
        }
        Ok(VoxelGrid {
            dims,
            spacing,
            orientation: Orientation::default(),
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Result<Self> {
        check_geometry(dims, spacing)?;
        Ok(VoxelGrid {
            dims,
            spacing,
            orientation: Orientation::default(),
            data: vec![value; dims[0] * dims[1] * dims[2]],
        })
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Ok(VoxelGrid {
            dims,
            spacing,
            orientation: Orientation::default(),
            data,
        })
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn same_geometry<U>(&self, other: &VoxelGrid<U>) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn check_dims<U>(&self, other: &VoxelGrid<U>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    /// Same geometry, new voxel values.
    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> VoxelGrid<U> {
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            orientation: self.orientation.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the voxels inside `bbox` into a new grid of the same spacing.
    pub fn crop(&self, bbox: &BoundingBox) -> VoxelGrid<T> {
        let d = bbox.dims();
        let mut data = Vec::with_capacity(d[0] * d[1] * d[2]);
        for z in bbox.lo[2]..bbox.hi[2] {
            for y in bbox.lo[1]..bbox.hi[1] {
                let start = self.index(bbox.lo[0], y, z);
                data.extend_from_slice(&self.data[start..start + d[0]]);
            }
        }
        VoxelGrid {
            dims: d,
            spacing: self.spacing,
            orientation: self.orientation.clone(),
            data,
        }
    }

    /// Writes `patch` back at `origin`; the patch must fit entirely.
    pub fn paste(&mut self, patch: &VoxelGrid<T>, origin: [usize; 3]) {
        let d = patch.dims;
        for a in 0..3 {
            assert!(origin[a] + d[a] <= self.dims[a], "patch exceeds grid");
        }
        for z in 0..d[2] {
            for y in 0..d[1] {
                let dst = self.index(origin[0], origin[1] + y, origin[2] + z);
                let src = patch.index(0, y, z);
                self.data[dst..dst + d[0]].copy_from_slice(&patch.data[src..src + d[0]]);
            }
        }
    }

    pub(crate) fn with_data<U>(&self, data: Vec<U>) -> VoxelGrid<U> {
        debug_assert_eq!(data.len(), self.data.len());
        VoxelGrid {
            dims: self.dims,
            spacing: self.spacing,
            orientation: self.orientation.clone(),
            data,
        }
    }
}

/// A mask with values restricted to `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask(VoxelGrid<u8>);

impl BinaryMask {
    pub fn new(grid: VoxelGrid<u8>) -> Result<Self> {
        if let Some(&v) = grid.data().iter().find(|&&v| v > 1) {
            return Err(Error::InvalidParameter(format!(
                "binary mask contains value {v}"
            )));
        }
        Ok(BinaryMask(grid))
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Ok(BinaryMask(VoxelGrid::filled(dims, spacing, 0)?))
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        Ok(BinaryMask(VoxelGrid::from_fn(dims, spacing, |x, y, z| {
            f(x, y, z) as u8
        })?))
    }

    /// Mask with the geometry of `like` and the given linear indices set.
    pub fn from_indices<T: Copy>(like: &VoxelGrid<T>, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut data = vec![0u8; like.len()];
        for i in indices {
            data[i] = 1;
        }
        BinaryMask(like.with_data(data))
    }

    pub fn grid(&self) -> &VoxelGrid<u8> {
        &self.0
    }

    pub fn into_grid(self) -> VoxelGrid<u8> {
        self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.0.data()[index] != 0
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> bool {
        self.0.get(x, y, z) != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, on: bool) {
        self.0.set(x, y, z, on as u8);
    }

    #[inline]
    pub(crate) fn set_index(&mut self, index: usize, on: bool) {
        self.0.data_mut()[index] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v != 0).count()
    }

    pub fn none(&self) -> bool {
        self.0.data().iter().all(|&v| v == 0)
    }

    /// Linear indices of foreground voxels, ascending.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i)
    }

    /// Tight bounding box of the foreground, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for i in self.foreground() {
            let c = self.0.coords(i);
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a] + 1);
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }

    pub fn crop(&self, bbox: &BoundingBox) -> BinaryMask {
        BinaryMask(self.0.crop(bbox))
    }

    pub fn paste(&mut self, patch: &BinaryMask, origin: [usize; 3]) {
        self.0.paste(&patch.0, origin);
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.0.check_dims(&other.0)?;
        let data = self
            .0
            .data()
            .iter()
            .zip(other.0.data())
            .map(|(&a, &b)| f(a != 0, b != 0) as u8)
            .collect();
        Ok(BinaryMask(self.0.with_data(data)))
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask(self.0.map(|v| (v == 0) as u8))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .0
                .data()
                .iter()
                .zip(other.0.data())
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Physical foreground volume in mm³.
    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.0.voxel_volume()
    }
}

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LIVER: u8 = 1;
pub const LABEL_TUMOR: u8 = 2;

/// Integer label map: 0 background, 1 liver, 2 tumor.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMask(VoxelGrid<u8>);

impl LabelMask {
    pub fn new(grid: VoxelGrid<u8>) -> Result<Self> {
        if let Some(&v) = grid.data().iter().find(|&&v| v > LABEL_TUMOR) {
            return Err(Error::InvalidLabel(v));
        }
        Ok(LabelMask(grid))
    }

    /// Liver voxels labelled 1, everything else background.
    pub fn from_liver(liver: &BinaryMask) -> Self {
        LabelMask(liver.grid().map(|v| if v != 0 { LABEL_LIVER } else { LABEL_BACKGROUND }))
    }

    pub fn grid(&self) -> &VoxelGrid<u8> {
        &self.0
    }

    pub fn into_grid(self) -> VoxelGrid<u8> {
        self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    /// Voxels carrying label `value`.
    pub fn select(&self, value: u8) -> BinaryMask {
        BinaryMask(self.0.map(|v| (v == value) as u8))
    }

    pub fn tumor(&self) -> BinaryMask {
        self.select(LABEL_TUMOR)
    }

    /// Liver including any tumor inside it.
    pub fn organ(&self) -> BinaryMask {
        BinaryMask(self.0.map(|v| (v != LABEL_BACKGROUND) as u8))
    }

    pub(crate) fn mark_tumor(&mut self, index: usize) {
        self.0.data_mut()[index] = LABEL_TUMOR;
    }
}

/// CT volume in Hounsfield units, clamped to `[HU_MIN, HU_MAX]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CtVolume(VoxelGrid<f32>);

impl CtVolume {
    /// Wraps a grid, clamping every voxel into the representable HU range.
    pub fn new(mut grid: VoxelGrid<f32>) -> Self {
        for v in grid.data_mut() {
            *v = v.clamp(HU_MIN, HU_MAX);
        }
        CtVolume(grid)
    }

    pub fn grid(&self) -> &VoxelGrid<f32> {
        &self.0
    }

    pub(crate) fn grid_mut(&mut self) -> &mut VoxelGrid<f32> {
        &mut self.0
    }

    pub fn into_grid(self) -> VoxelGrid<f32> {
        self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing()
    }
}
