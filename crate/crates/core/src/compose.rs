//! Inserting a synthetic tumor into a host CT volume.
//!
//! A tumor is produced in four steps: a location is chosen away from vessels,
//! an ellipsoid is deformed into the tumor shape, a texture is generated, and
//! post-processing adds mass effect and a bright capsule rim. Inside one call the
//! order is fixed: shape, placement, mass-effect warp of the host tissue,
//! feathered texture carving, capsule brightening. All edits happen in a local
//! crop around the tumor; everything outside [`influence_region`] is left
//! bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::grid::{BinaryMask, BoundingBox, CtVolume, LabelMask, VoxelGrid};
use crate::morph::{dilate, erode};
use crate::placement::{forbidden_region, placed_indices, select_location_avoiding, Placement, PlacementParams};
use crate::shape::{deform_until_accepted, equivalent_radius_mm, make_ellipsoid, DeformSpec, EllipsoidSpec};
use crate::texture::{generate_texture, TextureSpec};
use crate::vessels::{liver_stats, segment_vessels, LiverStats, VesselParams};
use crate::warp::{sample, Interpolation};

/// Later tumors keep this distance (ball radius, voxels) from earlier ones so
/// they never touch under 26-connectivity.
const TUMOR_SEPARATION_VOXELS: usize = 2;

/// Every generator parameter for a single tumor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TumorSpec {
    pub ellipsoid: EllipsoidSpec,
    #[serde(default)]
    pub deform: DeformSpec,
    #[serde(default)]
    pub texture: TextureSpec,
    /// Local-scaling strength λ in `[0, 0.5]`.
    #[serde(default = "defaults::mass_effect_strength")]
    pub mass_effect_strength: f64,
    /// Influence radius as a multiple α of the equivalent radius.
    #[serde(default = "defaults::influence_factor")]
    pub influence_factor: f64,
    #[serde(default = "defaults::capsule_width_voxels")]
    pub capsule_width_voxels: usize,
    #[serde(default = "defaults::capsule_delta_hu")]
    pub capsule_delta_hu: f64,
    #[serde(default = "defaults::edge_blend_sigma")]
    pub edge_blend_sigma: f64,
    /// Accepted equivalent-radius range `[lo, hi)` of the deformed shape, mm.
    #[serde(default)]
    pub radius_bounds_mm: Option<[f64; 2]>,
    #[serde(default = "defaults::max_shape_attempts")]
    pub max_shape_attempts: usize,
}

mod defaults {
    pub fn mass_effect_strength() -> f64 {
        0.2
    }
    pub fn influence_factor() -> f64 {
        1.5
    }
    pub fn capsule_width_voxels() -> usize {
        2
    }
    pub fn capsule_delta_hu() -> f64 {
        20.0
    }
    pub fn edge_blend_sigma() -> f64 {
        1.0
    }
    pub fn max_shape_attempts() -> usize {
        20
    }
}

impl TumorSpec {
    /// Default post-processing around the given shape.
    pub fn new(ellipsoid: EllipsoidSpec) -> Self {
        TumorSpec {
            ellipsoid,
            deform: DeformSpec::default(),
            texture: TextureSpec::default(),
            mass_effect_strength: defaults::mass_effect_strength(),
            influence_factor: defaults::influence_factor(),
            capsule_width_voxels: defaults::capsule_width_voxels(),
            capsule_delta_hu: defaults::capsule_delta_hu(),
            edge_blend_sigma: defaults::edge_blend_sigma(),
            radius_bounds_mm: None,
            max_shape_attempts: defaults::max_shape_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.deform.validate()?;
        self.texture.validate()?;
        if !(0.0..=0.5).contains(&self.mass_effect_strength) {
            return Err(Error::InvalidParameter(format!(
                "mass_effect_strength must be in [0, 0.5], got {}",
                self.mass_effect_strength
            )));
        }
        if !(self.influence_factor >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "influence_factor must be >= 1, got {}",
                self.influence_factor
            )));
        }
        if !(self.edge_blend_sigma >= 0.0) || !self.capsule_delta_hu.is_finite() {
            return Err(Error::InvalidParameter("edge_blend_sigma must be >= 0 and capsule_delta_hu finite".into()));
        }
        if self.max_shape_attempts == 0 {
            return Err(Error::InvalidParameter("max_shape_attempts must be >= 1".into()));
        }
        Ok(())
    }

    /// Feathering reach in voxels, `ceil(3 * edge_blend_sigma)`.
    pub fn blend_margin(&self) -> usize {
        (3.0 * self.edge_blend_sigma).ceil() as usize
    }
}

/// What was generated, and where, for one tumor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorRecord {
    pub spec: TumorSpec,
    pub deform_seed_used: u64,
    pub shape_attempts: usize,
    pub placement_seed: u64,
    pub placement: Placement,
    /// Centroid of the placed tumor, host voxel coordinates.
    pub center_voxel: [f64; 3],
    pub voxel_count: usize,
    pub volume_mm3: f64,
    pub equivalent_radius_mm: f64,
    pub influence_radius_mm: f64,
    /// Dilation radius (voxels) of the tumor covering feathering and capsule.
    pub margin_voxels: usize,
    pub bbox: BoundingBox,
}

/// Voxel bounding box of the physical ball `|p - center| < radius_mm`.
fn ball_bbox(center: [f64; 3], radius_mm: f64, spacing: [f64; 3], dims: [usize; 3]) -> BoundingBox {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let r = radius_mm / spacing[a];
        lo[a] = (center[a] - r).floor().max(0.0) as usize;
        hi[a] = ((center[a] + r).ceil() as usize + 1).min(dims[a]);
        lo[a] = lo[a].min(hi[a]);
    }
    BoundingBox { lo, hi }
}

/// Radial local-scaling warp around `center` (voxel coordinates).
///
/// A voxel at physical distance `d < radius_mm` takes the value found at
/// distance `d * (1 - strength * (1 - d / radius_mm)²)` along the same ray,
/// which pushes tissue outward. Voxels at `d >= radius_mm` are untouched.
pub fn apply_radial_warp(volume: &CtVolume, center: [f64; 3], strength: f64, radius_mm: f64) -> Result<CtVolume> {
    if !(0.0..=0.5).contains(&strength) {
        return Err(Error::InvalidParameter(format!("mass-effect strength {strength} outside [0, 0.5]")));
    }
    if strength == 0.0 || !(radius_mm > 0.0) {
        return Ok(volume.clone());
    }
    let src = volume.grid();
    let spacing = src.spacing();
    let bbox = ball_bbox(center, radius_mm, spacing, src.dims());
    let mut out = src.clone();
    for z in bbox.lo[2]..bbox.hi[2] {
        for y in bbox.lo[1]..bbox.hi[1] {
            for x in bbox.lo[0]..bbox.hi[0] {
                let v = [
                    (x as f64 - center[0]) * spacing[0],
                    (y as f64 - center[1]) * spacing[1],
                    (z as f64 - center[2]) * spacing[2],
                ];
                let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if d >= radius_mm || d == 0.0 {
                    continue;
                }
                let u = 1.0 - d / radius_mm;
                let scale = 1.0 - strength * u * u;
                let pos = [0, 1, 2].map(|a| center[a] + v[a] * scale / spacing[a]);
                out.set(x, y, z, sample(src, pos, Interpolation::Trilinear));
            }
        }
    }
    Ok(CtVolume::new(out))
}

/// Centroid of a mask's foreground in voxel coordinates.
pub fn centroid(mask: &BinaryMask) -> Option<[f64; 3]> {
    let g = mask.grid();
    let mut acc = [0f64; 3];
    let mut n = 0usize;
    for i in mask.foreground() {
        let c = g.coords(i);
        for a in 0..3 {
            acc[a] += c[a] as f64;
        }
        n += 1;
    }
    (n > 0).then(|| acc.map(|s| s / n as f64))
}

/// Mass effect: radial warp with influence radius `influence_factor * r_eq`,
/// where `r_eq` is the equivalent-sphere radius of `tumor`.
pub fn apply_mass_effect(
    volume: &CtVolume,
    tumor: &BinaryMask,
    center: [f64; 3],
    strength: f64,
    influence_factor: f64,
) -> Result<CtVolume> {
    volume.grid().check_dims(tumor.grid())?;
    if !(influence_factor >= 1.0) {
        return Err(Error::InvalidParameter(format!("influence_factor {influence_factor} < 1")));
    }
    let radius = influence_factor * equivalent_radius_mm(tumor);
    apply_radial_warp(volume, center, strength, radius)
}

/// `dilate(tumor, width) \ erode(tumor, width)`.
pub fn capsule_rim(tumor: &BinaryMask, width: usize) -> Result<BinaryMask> {
    if width == 0 {
        return BinaryMask::empty(tumor.dims(), tumor.spacing());
    }
    let Some(bbox) = tumor.bounding_box() else {
        return BinaryMask::empty(tumor.dims(), tumor.spacing());
    };
    let region = bbox.expand(width + 1, tumor.dims());
    let local = tumor.crop(&region);
    let rim = dilate(&local, width)?.difference(&erode(&local, width)?)?;
    let mut out = BinaryMask::empty(tumor.dims(), tumor.spacing())?;
    out.paste(&rim, region.lo);
    Ok(out)
}

/// Adds `delta` HU to every voxel of the capsule rim.
pub fn apply_capsule(volume: &CtVolume, tumor: &BinaryMask, width: usize, delta: f64) -> Result<CtVolume> {
    volume.grid().check_dims(tumor.grid())?;
    if width == 0 || delta == 0.0 {
        return Ok(volume.clone());
    }
    let rim = capsule_rim(tumor, width)?;
    let mut out = volume.grid().clone();
    let d = delta as f32;
    for i in rim.foreground() {
        out.data_mut()[i] += d;
    }
    Ok(CtVolume::new(out))
}

/// Blends `texture` into `volume` with a Gaussian-feathered tumor indicator.
///
/// `texture` and `tumor_padded` share a grid whose voxel `(0,0,0)` sits at
/// `origin` (possibly negative) in `volume`. Writes are restricted to
/// `dilate(tumor, margin)`.
fn carve(
    volume: &mut VoxelGrid<f32>,
    texture: &VoxelGrid<f32>,
    tumor_padded: &BinaryMask,
    origin: [isize; 3],
    blend_sigma: f64,
    margin: usize,
) -> Result<()> {
    let indicator = tumor_padded.grid().map(|v| v as f32);
    let weights = gaussian_blur(&indicator, blend_sigma);
    let support = if margin > 0 {
        dilate(tumor_padded, margin)?
    } else {
        tumor_padded.clone()
    };
    let dims = volume.dims();
    let tg = texture;
    for j in support.foreground() {
        let w = weights.data()[j] as f64;
        if w <= 0.0 {
            continue;
        }
        let c = tg.coords(j);
        let q = [0, 1, 2].map(|a| c[a] as isize + origin[a]);
        if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as isize) {
            continue;
        }
        let i = volume.index(q[0] as usize, q[1] as usize, q[2] as usize);
        let host = volume.data()[i] as f64;
        let tex = tg.data()[j] as f64;
        volume.data_mut()[i] = (host + w * (tex - host)) as f32;
    }
    Ok(())
}

/// Union of the mass-effect ball and `dilate(tumor, margin_voxels)`: the only
/// voxels a tumor insertion may modify.
pub fn influence_region(tumor: &BinaryMask, record: &TumorRecord) -> Result<BinaryMask> {
    let mut region = if record.margin_voxels > 0 {
        dilate(tumor, record.margin_voxels)?
    } else {
        tumor.clone()
    };
    if record.spec.mass_effect_strength > 0.0 {
        let g = tumor.grid();
        let s = g.spacing();
        let bbox = ball_bbox(record.center_voxel, record.influence_radius_mm, s, g.dims());
        for z in bbox.lo[2]..bbox.hi[2] {
            for y in bbox.lo[1]..bbox.hi[1] {
                for x in bbox.lo[0]..bbox.hi[0] {
                    let p = [x, y, z];
                    let d2: f64 = (0..3).map(|a| ((p[a] as f64 - record.center_voxel[a]) * s[a]).powi(2)).sum();
                    if d2.sqrt() < record.influence_radius_mm {
                        region.set(x, y, z, true);
                    }
                }
            }
        }
    }
    Ok(region)
}

/// A host volume receiving one or more synthetic tumors.
#[derive(Clone, Debug)]
pub struct Host {
    volume: CtVolume,
    liver: BinaryMask,
    label: LabelMask,
    vessels: BinaryMask,
    forbidden: BinaryMask,
    stats: LiverStats,
}

impl Host {
    pub fn new(
        volume: CtVolume,
        liver: BinaryMask,
        vessel_params: &VesselParams,
        vessel_margin_voxels: usize,
    ) -> Result<Self> {
        volume.grid().check_dims(liver.grid())?;
        let stats = liver_stats(&volume, &liver)?;
        let vessels = segment_vessels(&volume, &liver, vessel_params)?;
        let forbidden = forbidden_region(&vessels, vessel_margin_voxels)?;
        let label = LabelMask::from_liver(&liver);
        Ok(Host {
            volume,
            liver,
            label,
            vessels,
            forbidden,
            stats,
        })
    }

    pub fn volume(&self) -> &CtVolume {
        &self.volume
    }

    pub fn label(&self) -> &LabelMask {
        &self.label
    }

    pub fn vessels(&self) -> &BinaryMask {
        &self.vessels
    }

    /// Dilated vessels plus the surroundings of tumors already inserted.
    pub fn forbidden(&self) -> &BinaryMask {
        &self.forbidden
    }

    /// Parenchyma statistics of the original host.
    pub fn liver_stats(&self) -> LiverStats {
        self.stats
    }

    pub fn into_parts(self) -> (CtVolume, LabelMask) {
        (self.volume, self.label)
    }

    /// Generates one tumor and composites it into the host.
    pub fn insert_tumor(&mut self, spec: &TumorSpec, placement: &PlacementParams) -> Result<TumorRecord> {
        spec.validate()?;
        let dims = self.volume.dims();
        let spacing = self.volume.spacing();

        let base = make_ellipsoid(&spec.ellipsoid, spacing)?;
        let bounds = spec.radius_bounds_mm;
        let shape = deform_until_accepted(&base, &spec.deform, spec.max_shape_attempts, |m| match bounds {
            Some([lo, hi]) => {
                let r = equivalent_radius_mm(m);
                r >= lo && r < hi
            }
            None => true,
        })?;
        let placed = select_location_avoiding(&self.liver, &self.forbidden, &shape.mask, placement)?;
        let indices = placed_indices(&shape.mask, placed.offset, dims);

        let grid = self.volume.grid();
        let mut center = [0f64; 3];
        for &i in &indices {
            let c = grid.coords(i);
            for a in 0..3 {
                center[a] += c[a] as f64;
            }
        }
        let center = center.map(|s| s / indices.len() as f64);
        let volume_mm3 = indices.len() as f64 * grid.voxel_volume();
        let r_eq = (3.0 * volume_mm3 / (4.0 * std::f64::consts::PI)).cbrt();
        let influence_radius = spec.influence_factor * r_eq;
        let blend_margin = if spec.edge_blend_sigma > 0.0 { spec.blend_margin() } else { 0 };
        let margin = blend_margin.max(spec.capsule_width_voxels);

        let sd = shape.mask.dims();
        let shape_box = BoundingBox {
            lo: [0, 1, 2].map(|a| placed.offset[a] as usize),
            hi: [0, 1, 2].map(|a| placed.offset[a] as usize + sd[a]),
        };
        let pad = margin.max(TUMOR_SEPARATION_VOXELS) + 1;
        let region = shape_box
            .expand(pad, dims)
            .union(&ball_bbox(center, influence_radius, spacing, dims));

        let mut local = CtVolume::new(grid.crop(&region));
        let local_dims = region.dims();
        let to_local = |i: usize| {
            let c = grid.coords(i);
            (c[0] - region.lo[0]) + local_dims[0] * ((c[1] - region.lo[1]) + local_dims[1] * (c[2] - region.lo[2]))
        };
        let local_tumor = BinaryMask::from_indices(local.grid(), indices.iter().map(|&i| to_local(i)));
        let local_center = [0, 1, 2].map(|a| center[a] - region.lo[a] as f64);

        // Tissue is displaced before the tumor is drawn so the texture stays
        // registered with the label.
        if spec.mass_effect_strength > 0.0 {
            local = apply_radial_warp(&local, local_center, spec.mass_effect_strength, influence_radius)?;
        }

        // Texture and feathering weights live on the shape grid padded by the
        // blend margin, independent of where the tumor lands.
        let tex_dims = sd.map(|n| n + 2 * blend_margin);
        let texture = generate_texture(tex_dims, spacing, &spec.texture)?;
        let mut tumor_padded = BinaryMask::empty(tex_dims, spacing)?;
        tumor_padded.paste(&shape.mask, [blend_margin; 3]);
        let origin = [0, 1, 2].map(|a| placed.offset[a] - region.lo[a] as isize - blend_margin as isize);
        let mut carved = local.into_grid();
        carve(&mut carved, &texture, &tumor_padded, origin, spec.edge_blend_sigma, blend_margin)?;
        let local = apply_capsule(
            &CtVolume::new(carved),
            &local_tumor,
            spec.capsule_width_voxels,
            spec.capsule_delta_hu,
        )?;

        let separation = dilate(&local_tumor, TUMOR_SEPARATION_VOXELS)?;
        let forbidden_local = self.forbidden.crop(&region).union(&separation)?;
        self.forbidden.paste(&forbidden_local, region.lo);
        self.volume.grid_mut().paste(local.grid(), region.lo);
        for &i in &indices {
            self.label.mark_tumor(i);
        }

        Ok(TumorRecord {
            spec: spec.clone(),
            deform_seed_used: shape.seed_used,
            shape_attempts: shape.attempts,
            placement_seed: placement.seed,
            placement: placed,
            center_voxel: center,
            voxel_count: indices.len(),
            volume_mm3,
            equivalent_radius_mm: r_eq,
            influence_radius_mm: influence_radius,
            margin_voxels: margin,
            bbox: shape_box,
        })
    }
}

/// One-shot pipeline: segment vessels, insert a single tumor.
pub fn synthesize_tumor(
    volume: &CtVolume,
    liver: &BinaryMask,
    spec: &TumorSpec,
    placement: &PlacementParams,
    vessel_params: &VesselParams,
) -> Result<(CtVolume, LabelMask, TumorRecord)> {
    let mut host = Host::new(
        volume.clone(),
        liver.clone(),
        vessel_params,
        placement.vessel_safety_margin_voxels,
    )?;
    let record = host.insert_tumor(spec, placement)?;
    let (v, l) = host.into_parts();
    Ok((v, l, record))
}
