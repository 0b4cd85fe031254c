//! Tumor-spec sampling, offline validation sets and the continual training stream.
//!
//! Every generated item is a pure function of the pool, the generator config,
//! the global seed and the item index: per-item seeds come from
//! [`derive_seed`], so items can be produced by any number of workers in any
//! order and a single item can be regenerated from its manifest entry.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{Host, TumorRecord, TumorSpec};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CtVolume, LabelMask};
use crate::placement::PlacementParams;
use crate::seed::{derive_seed, rng, sha256_hex};
use crate::shape::{DeformSpec, EllipsoidSpec};
use crate::texture::TextureSpec;
use crate::vessels::{LiverStats, VesselParams};
use crate::volume_io::nifti::{self, Datatype};

pub const GENERATOR_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A named tumor size range by equivalent-sphere radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeClass {
    pub name: String,
    /// `[lo, hi)` in mm; `hi` is included when `inclusive_hi` is set.
    pub radius_range_mm: [f64; 2],
    #[serde(default)]
    pub inclusive_hi: bool,
    /// Largest allowed ratio between the longest and shortest semi-axis.
    pub max_eccentricity: f64,
}

impl SizeClass {
    pub fn new(name: &str, lo: f64, hi: f64, max_eccentricity: f64) -> Self {
        SizeClass {
            name: name.to_string(),
            radius_range_mm: [lo, hi],
            inclusive_hi: false,
            max_eccentricity,
        }
    }

    pub fn tiny() -> Self {
        Self::new("tiny", 2.0, 5.0, 1.0)
    }

    pub fn small() -> Self {
        Self::new("small", 5.0, 10.0, 1.5)
    }

    pub fn medium() -> Self {
        Self::new("medium", 10.0, 25.0, 2.0)
    }

    pub fn large() -> Self {
        SizeClass {
            inclusive_hi: true,
            ..Self::new("large", 25.0, 44.0, 3.0)
        }
    }

    /// tiny, small, medium, large.
    pub fn defaults() -> Vec<SizeClass> {
        vec![Self::tiny(), Self::small(), Self::medium(), Self::large()]
    }

    pub fn by_name(name: &str) -> Option<SizeClass> {
        Self::defaults().into_iter().find(|c| c.name == name)
    }

    pub fn contains(&self, radius_mm: f64) -> bool {
        let [lo, hi] = self.radius_range_mm;
        radius_mm >= lo && (radius_mm < hi || (self.inclusive_hi && radius_mm == hi))
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.radius_range_mm;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "size class {:?} needs 0 < lo < hi, got [{lo}, {hi}]",
                self.name
            )));
        }
        if !(1.0..=3.0).contains(&self.max_eccentricity) {
            return Err(Error::InvalidParameter(format!(
                "size class {:?} eccentricity cap must be in [1, 3], got {}",
                self.name, self.max_eccentricity
            )));
        }
        Ok(())
    }
}

/// Index of the first class containing `radius_mm`.
pub fn classify(radius_mm: f64, classes: &[SizeClass]) -> Option<usize> {
    classes.iter().position(|c| c.contains(radius_mm))
}

/// Knobs for turning a size class and host statistics into a [`TumorSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    /// Tumor mean is the liver mean minus a uniform draw from this range, HU.
    pub hypodensity_hu: [f64; 2],
    /// Elastic displacement `sigma_d` is `sigma_d_per_radius * r` (voxels),
    /// clamped to this range.
    pub sigma_d_range_voxels: [f64; 2],
    pub sigma_d_per_radius: f64,
    pub control_spacing: usize,
    pub smooth_sigma: f64,
    pub coarse_factor: usize,
    pub texture_blur_sigma: f64,
    /// Overrides the texture std; `None` uses the host liver std.
    pub sigma_g: Option<f64>,
    pub mass_effect_strength: f64,
    pub influence_factor: f64,
    pub capsule_width_voxels: usize,
    pub capsule_delta_hu: f64,
    pub edge_blend_sigma: f64,
    pub max_shape_attempts: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            hypodensity_hu: [30.0, 60.0],
            sigma_d_range_voxels: [2.0, 5.0],
            sigma_d_per_radius: 0.25,
            control_spacing: 8,
            smooth_sigma: 6.0,
            coarse_factor: 4,
            texture_blur_sigma: 1.0,
            sigma_g: None,
            mass_effect_strength: 0.2,
            influence_factor: 1.5,
            capsule_width_voxels: 2,
            capsule_delta_hu: 20.0,
            edge_blend_sigma: 1.0,
            max_shape_attempts: 20,
        }
    }
}

/// What [`sample_spec`] needs to know about the host.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HostInfo {
    pub liver: LiverStats,
    /// Smallest voxel spacing, mm; converts radii to voxels.
    pub min_spacing_mm: f64,
}

fn uniform(r: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        r.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a tumor spec for one size class.
///
/// The radius is log-uniform inside the class range; semi-axes are
/// `r * exp(l_i)` with zero-sum log offsets spread over at most `ln(cap)`, so
/// `(abc)^(1/3) == r` and the longest/shortest ratio stays under the cap.
pub fn sample_spec(class: &SizeClass, host: &HostInfo, params: &SamplingParams, seed: u64) -> Result<TumorSpec> {
    class.validate()?;
    let mut r = rng(seed);
    let [lo, hi] = class.radius_range_mm;
    // keep strictly inside so rounding never leaves the class
    let (llo, lhi) = ((lo * (1.0 + 1e-9)).ln(), (hi * (1.0 - 1e-9)).ln());
    let radius = r.random_range(llo..lhi).exp();

    let cap = class.max_eccentricity.ln();
    let logs: [f64; 3] = if cap > 0.0 {
        let u: [f64; 3] = [0; 3].map(|_| r.random_range(0.0..cap));
        let mean = u.iter().sum::<f64>() / 3.0;
        u.map(|v| v - mean)
    } else {
        [0.0; 3]
    };
    let axes = logs.map(|l| radius * l.exp());
    let ellipsoid = EllipsoidSpec::new(axes[0], axes[1], axes[2])?;

    let r_vox = radius / host.min_spacing_mm;
    let [dlo, dhi] = params.sigma_d_range_voxels;
    let deform = DeformSpec {
        sigma_d: (params.sigma_d_per_radius * r_vox).clamp(dlo, dhi),
        control_spacing: params.control_spacing,
        smooth_sigma: params.smooth_sigma,
        seed: derive_seed(seed, "deform", 0),
    };
    let texture = TextureSpec {
        mu: host.liver.mean - uniform(&mut r, params.hypodensity_hu),
        sigma_g: params.sigma_g.unwrap_or(host.liver.std),
        coarse_factor: params.coarse_factor,
        blur_sigma: params.texture_blur_sigma,
        seed: derive_seed(seed, "texture", 0),
    };
    let bound_hi = if class.inclusive_hi { hi * (1.0 + 1e-9) } else { hi };
    Ok(TumorSpec {
        ellipsoid,
        deform,
        texture,
        mass_effect_strength: params.mass_effect_strength,
        influence_factor: params.influence_factor,
        capsule_width_voxels: params.capsule_width_voxels,
        capsule_delta_hu: params.capsule_delta_hu,
        edge_blend_sigma: params.edge_blend_sigma,
        // the voxelized, deformed lesion must not leave its class upward
        radius_bounds_mm: Some([0.0, bound_hi]),
        max_shape_attempts: params.max_shape_attempts,
    })
}

/// Everything needed to turn a host and a list of size classes into an item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub vessels: VesselParams,
    /// `seed` is ignored; placement seeds are derived per tumor.
    pub placement: PlacementParams,
    pub sampling: SamplingParams,
    /// Fresh spec draws allowed per tumor when shape or placement fails.
    pub spec_retries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            vessels: VesselParams::default(),
            placement: PlacementParams::default(),
            sampling: SamplingParams::default(),
            spec_retries: 5,
        }
    }
}

/// Image, label and per-tumor records of one generated item.
#[derive(Clone, Debug)]
pub struct Generated {
    pub volume: CtVolume,
    pub label: LabelMask,
    pub tumors: Vec<TumorRecord>,
}

/// Inserts one tumor per entry of `classes` into the host.
///
/// A tumor whose shape or location cannot be found is redrawn with a fresh
/// spec up to `spec_retries` times before the item fails.
pub fn generate_item(
    volume: CtVolume,
    liver: BinaryMask,
    classes: &[SizeClass],
    config: &GeneratorConfig,
    item_seed: u64,
) -> Result<Generated> {
    let mut host = Host::new(
        volume,
        liver,
        &config.vessels,
        config.placement.vessel_safety_margin_voxels,
    )?;
    let spacing = host.volume().spacing();
    let info = HostInfo {
        liver: host.liver_stats(),
        min_spacing_mm: spacing.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    let retries = config.spec_retries.max(1);
    let mut tumors = Vec::with_capacity(classes.len());
    for (k, class) in classes.iter().enumerate() {
        let mut last_err = None;
        for attempt in 0..retries {
            let s = derive_seed(item_seed, "tumor", (k * retries + attempt) as u64);
            let spec = sample_spec(class, &info, &config.sampling, derive_seed(s, "spec", 0))?;
            let placement = PlacementParams {
                seed: derive_seed(s, "placement", 0),
                ..config.placement.clone()
            };
            match host.insert_tumor(&spec, &placement) {
                Ok(rec) => {
                    tumors.push(rec);
                    last_err = None;
                    break;
                }
                Err(
                    e @ (Error::PlacementExhausted { .. }
                    | Error::ShapeRejected { .. }
                    | Error::ShapeTooLarge { .. }
                    | Error::SubResolution { .. }),
                ) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = last_err {
            return Err(e);
        }
    }
    let (volume, label) = host.into_parts();
    Ok(Generated { volume, label, tumors })
}

/// A host image with its liver mask on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub image: PathBuf,
    pub liver: PathBuf,
}

/// Healthy host volumes, ordered by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pool {
    entries: Vec<PoolEntry>,
}

fn find_volume(dir: &Path, stem: &str) -> Option<PathBuf> {
    [".nii.gz", ".nii"]
        .iter()
        .map(|ext| dir.join(format!("{stem}{ext}")))
        .find(|p| p.is_file())
}

impl Pool {
    pub fn new(mut entries: Vec<PoolEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput);
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Pool { entries })
    }

    /// Scans `dir/<id>/image.nii[.gz]` + `dir/<id>/liver.nii[.gz]`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut entries = Vec::new();
        for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let e = e.map_err(|e| Error::io(dir, e))?;
            let path = e.path();
            if !path.is_dir() {
                continue;
            }
            if let (Some(image), Some(liver)) = (find_volume(&path, "image"), find_volume(&path, "liver")) {
                entries.push(PoolEntry {
                    id: e.file_name().to_string_lossy().into_owned(),
                    image,
                    liver,
                });
            }
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<(CtVolume, BinaryMask)> {
        let e = &self.entries[index];
        let volume = nifti::read_volume(&e.image)?;
        let liver = nifti::read_binary_mask(&e.liver)?;
        volume.grid().check_dims(liver.grid())?;
        Ok((volume, liver))
    }

    fn describe(&self) -> Result<Vec<SourceEntry>> {
        self.entries
            .par_iter()
            .map(|e| {
                Ok(SourceEntry {
                    id: e.id.clone(),
                    image: e.image.clone(),
                    liver: e.liver.clone(),
                    image_sha256: file_sha256(&e.image)?,
                    liver_sha256: file_sha256(&e.liver)?,
                })
            })
            .collect()
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub id: String,
    pub image: PathBuf,
    pub liver: PathBuf,
    pub image_sha256: String,
    pub liver_sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub index: u64,
    pub source: usize,
    pub source_id: String,
    pub classes: Vec<String>,
    pub seed: u64,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub tumors: Vec<TumorRecord>,
    /// Paths relative to the manifest's directory.
    pub image: Option<PathBuf>,
    pub label: Option<PathBuf>,
    pub image_sha256: Option<String>,
    pub label_sha256: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Validation,
    Stream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: ManifestKind,
    pub generator_version: String,
    pub global_seed: u64,
    pub config: GeneratorConfig,
    /// Validation sets: the class list. Streams: the class mix.
    pub classes: Vec<SizeClass>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_weights: Vec<f64>,
    #[serde(default)]
    pub tumors_per_item: [usize; 2],
    pub sources: Vec<SourceEntry>,
    pub items: Vec<ManifestItem>,
    /// Full configuration of the producing tool, when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_config: Option<serde_json::Value>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn ok_count(&self) -> usize {
        self.items.iter().filter(|i| i.status == ItemStatus::Ok).count()
    }

    fn pool(&self) -> Result<Pool> {
        Pool::new(
            self.sources
                .iter()
                .map(|s| PoolEntry {
                    id: s.id.clone(),
                    image: s.image.clone(),
                    liver: s.liver.clone(),
                })
                .collect(),
        )
    }

    fn item_classes(&self, item: &ManifestItem) -> Result<Vec<SizeClass>> {
        item.classes
            .iter()
            .map(|n| {
                self.classes
                    .iter()
                    .find(|c| &c.name == n)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("manifest item uses unknown class {n:?}")))
            })
            .collect()
    }
}

/// Outcome of [`regenerate_item`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegenerationCheck {
    pub sources_match: bool,
    pub image_matches: bool,
    pub label_matches: bool,
}

impl RegenerationCheck {
    pub fn is_exact(&self) -> bool {
        self.sources_match && self.image_matches && self.label_matches
    }
}

/// Rebuilds one item from its manifest entry and compares content hashes
/// with the recorded ones, without touching the files on disk.
pub fn regenerate_item(manifest: &DatasetManifest, position: usize) -> Result<RegenerationCheck> {
    let item = manifest
        .items
        .get(position)
        .ok_or_else(|| Error::InvalidParameter(format!("manifest has no item at position {position}")))?;
    let src = &manifest.sources[item.source];
    let sources_match =
        file_sha256(&src.image)? == src.image_sha256 && file_sha256(&src.liver)? == src.liver_sha256;
    let pool = manifest.pool()?;
    let (volume, liver) = pool.load(item.source)?;
    let classes = manifest.item_classes(item)?;
    let g = generate_item(volume, liver, &classes, &manifest.config, item.seed)?;
    let (Some(image), Some(label)) = (&item.image, &item.label) else {
        return Err(Error::InvalidParameter("item was not generated successfully".into()));
    };
    let image_bytes = nifti::volume_bytes_for(image, &g.volume, Datatype::Int16)?;
    let label_bytes = nifti::mask_bytes_for(label, &g.label)?;
    Ok(RegenerationCheck {
        sources_match,
        image_matches: item.image_sha256.as_deref() == Some(sha256_hex(&image_bytes).as_str()),
        label_matches: item.label_sha256.as_deref() == Some(sha256_hex(&label_bytes).as_str()),
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))
}

/// Generates, writes and describes one item. Failures are recorded, not raised,
/// except for I/O errors on the output directory.
fn produce(
    pool: &Pool,
    config: &GeneratorConfig,
    index: u64,
    source: usize,
    classes: &[SizeClass],
    seed: u64,
    out_dir: &Path,
    rel_dir: PathBuf,
) -> Result<ManifestItem> {
    let mut item = ManifestItem {
        index,
        source,
        source_id: pool.entries[source].id.clone(),
        classes: classes.iter().map(|c| c.name.clone()).collect(),
        seed,
        status: ItemStatus::Failed,
        error: None,
        tumors: Vec::new(),
        image: None,
        label: None,
        image_sha256: None,
        label_sha256: None,
    };
    let generated = pool
        .load(source)
        .and_then(|(v, l)| generate_item(v, l, classes, config, seed));
    let g = match generated {
        Ok(g) => g,
        Err(e) => {
            item.error = Some(e.to_string());
            return Ok(item);
        }
    };
    let image = rel_dir.join("image.nii.gz");
    let label = rel_dir.join("label.nii.gz");
    let dir = out_dir.join(&rel_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let image_bytes = nifti::volume_bytes_for(&image, &g.volume, Datatype::Int16)?;
    let label_bytes = nifti::mask_bytes_for(&label, &g.label)?;
    for (rel, bytes) in [(&image, &image_bytes), (&label, &label_bytes)] {
        let path = out_dir.join(rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    item.status = ItemStatus::Ok;
    item.tumors = g.tumors;
    item.image_sha256 = Some(sha256_hex(&image_bytes));
    item.label_sha256 = Some(sha256_hex(&label_bytes));
    item.image = Some(image);
    item.label = Some(label);
    Ok(item)
}

/// Offline validation set: one item per (host, class), each with one tumor.
///
/// Item `v * classes.len() + c` uses host `v` and class `c`. Outputs go to
/// `out_dir/<host id>_<class>/{image,label}.nii.gz` plus `out_dir/manifest.json`.
/// Results do not depend on `workers`.
pub fn make_validation_set(
    pool: &Pool,
    classes: &[SizeClass],
    config: &GeneratorConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
    workers: usize,
) -> Result<DatasetManifest> {
    if pool.is_empty() || classes.is_empty() {
        return Err(Error::EmptyInput);
    }
    for c in classes {
        c.validate()?;
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sources = pool.describe()?;
    let n = (pool.len() * classes.len()) as u64;
    let items: Result<Vec<ManifestItem>> = thread_pool(workers)?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|index| {
                let v = index as usize / classes.len();
                let c = &classes[index as usize % classes.len()];
                let rel = PathBuf::from(format!("{}_{}", pool.entries[v].id, c.name));
                produce(
                    pool,
                    config,
                    index,
                    v,
                    std::slice::from_ref(c),
                    derive_seed(seed, "validation", index),
                    out_dir,
                    rel,
                )
            })
            .collect()
    });
    let manifest = DatasetManifest {
        kind: ManifestKind::Validation,
        generator_version: GENERATOR_VERSION.to_string(),
        global_seed: seed,
        config: config.clone(),
        classes: classes.to_vec(),
        class_weights: Vec::new(),
        tumors_per_item: [1, 1],
        sources,
        items: items?,
        effective_config: None,
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Probabilities over size classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    classes: Vec<SizeClass>,
    weights: Vec<f64>,
}

impl ClassMix {
    pub fn new(entries: Vec<(SizeClass, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput);
        }
        let (classes, weights): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        for c in &classes {
            c.validate()?;
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!("class_mix must be non-negative and sum to 1, got {sum}")));
        }
        Ok(ClassMix { classes, weights })
    }

    /// Every class drawn with probability one.
    pub fn only(class: SizeClass) -> Result<Self> {
        Self::new(vec![(class, 1.0)])
    }

    pub fn classes(&self) -> &[SizeClass] {
        &self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn draw(&self, r: &mut impl Rng) -> usize {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // rounding slack: last class with positive weight
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

/// Which host and which tumor classes a stream item uses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemPlan {
    pub index: u64,
    pub seed: u64,
    pub source: usize,
    /// Indices into the stream's class list, one per tumor.
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct StreamItem {
    pub plan: ItemPlan,
    pub volume: CtVolume,
    pub label: LabelMask,
    pub tumors: Vec<TumorRecord>,
}

/// Endless, random-access sequence of synthetic training pairs.
#[derive(Clone, Debug)]
pub struct TrainingStream {
    pool: Pool,
    mix: ClassMix,
    config: GeneratorConfig,
    seed: u64,
    tumors_per_item: [usize; 2],
}

impl TrainingStream {
    pub fn new(pool: Pool, mix: ClassMix, config: GeneratorConfig, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(TrainingStream {
            pool,
            mix,
            config,
            seed,
            tumors_per_item: [1, 3],
        })
    }

    /// Inclusive range for the uniform tumor count per item (default 1..=3).
    pub fn with_tumors_per_item(mut self, lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || hi < lo {
            return Err(Error::InvalidParameter(format!("tumors_per_item needs 1 <= lo <= hi, got [{lo}, {hi}]")));
        }
        self.tumors_per_item = [lo, hi];
        Ok(self)
    }

    pub fn mix(&self) -> &ClassMix {
        &self.mix
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    /// Host and classes for item `index`, without synthesizing anything.
    pub fn plan(&self, index: u64) -> ItemPlan {
        let seed = derive_seed(self.seed, "item", index);
        let mut r = rng(derive_seed(seed, "plan", 0));
        let source = r.random_range(0..self.pool.len());
        let [lo, hi] = self.tumors_per_item;
        let k = r.random_range(lo..=hi);
        let classes = (0..k).map(|_| self.mix.draw(&mut r)).collect();
        ItemPlan {
            index,
            seed,
            source,
            classes,
        }
    }

    pub fn item(&self, index: u64) -> Result<StreamItem> {
        let plan = self.plan(index);
        let (volume, liver) = self.pool.load(plan.source)?;
        let classes: Vec<SizeClass> = plan.classes.iter().map(|&c| self.mix.classes[c].clone()).collect();
        let g = generate_item(volume, liver, &classes, &self.config, plan.seed)?;
        Ok(StreamItem {
            plan,
            volume: g.volume,
            label: g.label,
            tumors: g.tumors,
        })
    }

    /// Items `0, 1, 2, ...` in order.
    pub fn iter(&self) -> impl Iterator<Item = Result<StreamItem>> + '_ {
        (0u64..).map(move |i| self.item(i))
    }

    /// Writes items `start..start+count` to `out_dir/item_<index>/`, plus a
    /// manifest and `records.jsonl` with one line per item in index order.
    pub fn write(&self, start: u64, count: u64, out_dir: impl AsRef<Path>, workers: usize) -> Result<DatasetManifest> {
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let sources = self.pool.describe()?;
        let items: Result<Vec<ManifestItem>> = thread_pool(workers)?.install(|| {
            (start..start + count)
                .into_par_iter()
                .map(|index| {
                    let plan = self.plan(index);
                    let classes: Vec<SizeClass> =
                        plan.classes.iter().map(|&c| self.mix.classes[c].clone()).collect();
                    produce(
                        &self.pool,
                        &self.config,
                        index,
                        plan.source,
                        &classes,
                        plan.seed,
                        out_dir,
                        PathBuf::from(format!("item_{index:06}")),
                    )
                })
                .collect()
        });
        let items = items?;
        let mut lines = String::new();
        for item in &items {
            lines.push_str(&serde_json::to_string(item)?);
            lines.push('\n');
        }
        let records = out_dir.join("records.jsonl");
        fs::write(&records, lines).map_err(|e| Error::io(&records, e))?;
        let manifest = DatasetManifest {
            kind: ManifestKind::Stream,
            generator_version: GENERATOR_VERSION.to_string(),
            global_seed: self.seed,
            config: self.config.clone(),
            classes: self.mix.classes.clone(),
            class_weights: self.mix.weights.clone(),
            tumors_per_item: self.tumors_per_item,
            sources,
            items,
            effective_config: None,
        };
        manifest.write(out_dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn host() -> HostInfo {
        HostInfo {
            liver: LiverStats { mean: 100.0, std: 12.0 },
            min_spacing_mm: 1.0,
        }
    }

    #[test]
    fn default_classes_tile_the_radius_span() {
        let c = SizeClass::defaults();
        assert_eq!(classify(1.9, &c), None);
        assert_eq!(classify(2.0, &c), Some(0));
        assert_eq!(classify(4.999, &c), Some(0));
        assert_eq!(classify(5.0, &c), Some(1));
        assert_eq!(classify(25.0, &c), Some(3));
        assert_eq!(classify(44.0, &c), Some(3));
        assert_eq!(classify(44.1, &c), None);
    }

    #[test]
    fn tiny_specs_are_spheres_in_range() {
        for seed in 0..200 {
            let s = sample_spec(&SizeClass::tiny(), &host(), &SamplingParams::default(), seed).unwrap();
            let [a, b, c] = s.ellipsoid.axes();
            assert!(a == b && b == c);
            assert!((2.0..5.0).contains(&a));
        }
    }

    #[test]
    fn eccentricity_respects_class_cap() {
        for class in SizeClass::defaults() {
            for seed in 0..200 {
                let s = sample_spec(&class, &host(), &SamplingParams::default(), seed).unwrap();
                assert!(s.ellipsoid.eccentricity() <= class.max_eccentricity + 1e-9);
                assert!(class.contains(s.ellipsoid.equivalent_radius()));
            }
        }
    }

    #[test]
    fn texture_is_hypodense_with_host_spread() {
        let s = sample_spec(&SizeClass::medium(), &host(), &SamplingParams::default(), 3).unwrap();
        assert!((40.0..=70.0).contains(&s.texture.mu));
        assert_eq!(s.texture.sigma_g, 12.0);
        assert!((2.0..=5.0).contains(&s.deform.sigma_d));
    }

    #[test]
    fn class_mix_must_sum_to_one() {
        assert!(ClassMix::new(vec![(SizeClass::tiny(), 0.5), (SizeClass::small(), 0.4)]).is_err());
        assert!(ClassMix::new(vec![(SizeClass::tiny(), 0.5), (SizeClass::small(), 0.5)]).is_ok());
        assert!(ClassMix::new(vec![(SizeClass::tiny(), -0.5), (SizeClass::small(), 1.5)]).is_err());
    }

    #[test]
    fn draw_never_picks_zero_weight_class() {
        let mix = ClassMix::new(vec![(SizeClass::tiny(), 0.0), (SizeClass::small(), 1.0)]).unwrap();
        let mut r = rng(5);
        assert!((0..1000).all(|_| mix.draw(&mut r) == 1));
    }
}
