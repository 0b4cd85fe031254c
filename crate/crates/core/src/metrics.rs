//! Segmentation and detection metrics: Dice, per-lesion sensitivity by size,
//! and percentile-bootstrap confidence intervals.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::{connected_components, Connectivity};
use crate::dataset::{classify, SizeClass};
use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::seed::rng;
use crate::volume_io::nifti;

/// `2|pred ∩ gt| / (|pred| + |gt|)`, with two empty masks scoring 1.0.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.grid().check_dims(gt.grid())?;
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.grid().data().iter().zip(gt.grid().data()) {
        np += p as usize;
        ng += g as usize;
        inter += (p & g) as usize;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// Equivalent-sphere radius `(3V / 4π)^(1/3)` of a physical volume in mm³.
pub fn equivalent_radius(volume_mm3: f64) -> f64 {
    (3.0 * volume_mm3 / (4.0 * std::f64::consts::PI)).cbrt()
}

/// One ground-truth lesion and whether the prediction found it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub voxels: usize,
    pub radius_mm: f64,
    /// Fraction of lesion voxels covered by the prediction.
    pub overlap: f64,
    pub detected: bool,
    /// Index into the bin list, `None` when no bin contains the radius.
    pub bin: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCount {
    pub name: String,
    pub total: usize,
    pub detected: usize,
}

impl BinCount {
    /// `detected / total`, or `None` for an empty bin.
    pub fn sensitivity(&self) -> Option<f64> {
        (self.total > 0).then(|| self.detected as f64 / self.total as f64)
    }
}

/// Ground-truth lesions (26-connected components) of `gt`, scored against `pred`.
pub fn find_lesions(pred: &BinaryMask, gt: &BinaryMask, bins: &[SizeClass], overlap_frac: f64) -> Result<Vec<Lesion>> {
    pred.grid().check_dims(gt.grid())?;
    let voxel_volume = gt.grid().voxel_volume();
    Ok(connected_components(gt, Connectivity::TwentySix)
        .into_iter()
        .map(|c| {
            let voxels = c.voxel_count();
            let hit = c.indices.iter().filter(|&&i| pred.contains(i)).count();
            let overlap = hit as f64 / voxels as f64;
            let radius_mm = equivalent_radius(voxels as f64 * voxel_volume);
            Lesion {
                voxels,
                radius_mm,
                overlap,
                detected: overlap >= overlap_frac,
                bin: classify(radius_mm, bins),
            }
        })
        .collect())
}

/// Per-bin lesion totals and detections, plus an `unbinned` row for lesions
/// outside every bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub bins: Vec<BinCount>,
    pub unbinned: BinCount,
}

impl SensitivityTable {
    fn empty(bins: &[SizeClass]) -> Self {
        SensitivityTable {
            bins: bins
                .iter()
                .map(|b| BinCount {
                    name: b.name.clone(),
                    total: 0,
                    detected: 0,
                })
                .collect(),
            unbinned: BinCount {
                name: "unbinned".into(),
                total: 0,
                detected: 0,
            },
        }
    }

    fn add(&mut self, lesion: &Lesion) {
        let row = match lesion.bin {
            Some(b) => &mut self.bins[b],
            None => &mut self.unbinned,
        };
        row.total += 1;
        row.detected += lesion.detected as usize;
    }

    pub fn overall(&self) -> BinCount {
        let rows = self.bins.iter().chain(std::iter::once(&self.unbinned));
        BinCount {
            name: "all".into(),
            total: rows.clone().map(|r| r.total).sum(),
            detected: rows.map(|r| r.detected).sum(),
        }
    }
}

pub fn lesion_sensitivity(
    pred: &BinaryMask,
    gt: &BinaryMask,
    bins: &[SizeClass],
    overlap_frac: f64,
) -> Result<SensitivityTable> {
    let mut t = SensitivityTable::empty(bins);
    for l in find_lesions(pred, gt, bins, overlap_frac)? {
        t.add(&l);
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Percentile bootstrap of the mean over case-level resamples.
///
/// The interval is widened if needed so that `lo <= mean <= hi`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<ConfidenceInterval> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs level in (0, 1) and resamples >= 1, got {level} and {resamples}"
        )));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if values.iter().all(|&v| v == values[0]) {
        return Ok(ConfidenceInterval {
            mean: values[0],
            lo: values[0],
            hi: values[0],
            level,
        });
    }
    let mut r = rng(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[r.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let pick = |q: f64| {
        let k = (q * (resamples - 1) as f64).round() as usize;
        means[k.min(resamples - 1)]
    };
    Ok(ConfidenceInterval {
        mean,
        lo: pick(alpha).min(mean),
        hi: pick(1.0 - alpha).max(mean),
        level,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub bins: Vec<SizeClass>,
    /// Minimum covered fraction of a lesion for it to count as detected.
    pub overlap_frac: f64,
    /// Label value marking tumor voxels in both prediction and ground truth.
    pub tumor_label: u8,
    pub ci_level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            bins: SizeClass::defaults(),
            overlap_frac: 0.1,
            tumor_label: 2,
            ci_level: 0.95,
            resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub dsc: f64,
    pub lesions: Vec<Lesion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: Vec<CaseResult>,
    pub dsc: ConfidenceInterval,
    pub sensitivity: SensitivityTable,
    /// Sensitivity counts lesions, not cases.
    pub sensitivity_unit: String,
    pub overlap_frac: f64,
    pub params: EvalParams,
}

impl EvalReport {
    /// Aggregates per-case scores.
    pub fn from_cases(cases: Vec<CaseResult>, params: &EvalParams) -> Result<Self> {
        let scores: Vec<f64> = cases.iter().map(|c| c.dsc).collect();
        let ci = bootstrap_ci(&scores, params.ci_level, params.resamples, params.seed)?;
        let mut sensitivity = SensitivityTable::empty(&params.bins);
        for l in cases.iter().flat_map(|c| &c.lesions) {
            sensitivity.add(l);
        }
        Ok(EvalReport {
            cases,
            dsc: ci,
            sensitivity,
            sensitivity_unit: "per-lesion".into(),
            overlap_frac: params.overlap_frac,
            params: params.clone(),
        })
    }

    /// Plain-text summary.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "cases: {}   mean DSC: {:.4}   {:.0}% CI [{:.4}, {:.4}]",
            self.cases.len(),
            self.dsc.mean,
            self.dsc.level * 100.0,
            self.dsc.lo,
            self.dsc.hi
        );
        let _ = writeln!(
            s,
            "sensitivity ({}, detected iff overlap >= {}):",
            self.sensitivity_unit, self.overlap_frac
        );
        let _ = writeln!(s, "{:<10} {:>7} {:>9} {:>12}", "bin", "total", "detected", "sensitivity");
        let mut rows: Vec<BinCount> = self.sensitivity.bins.clone();
        rows.push(self.sensitivity.unbinned.clone());
        rows.push(self.sensitivity.overall());
        for r in rows {
            let sens = r.sensitivity().map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "{:<10} {:>7} {:>9} {:>12}", r.name, r.total, r.detected, sens);
        }
        s
    }
}

pub fn evaluate_case(name: &str, pred: &BinaryMask, gt: &BinaryMask, params: &EvalParams) -> Result<CaseResult> {
    Ok(CaseResult {
        name: name.to_string(),
        dsc: dsc(pred, gt)?,
        lesions: find_lesions(pred, gt, &params.bins, params.overlap_frac)?,
    })
}

fn is_nifti(p: &Path) -> bool {
    let name = p.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn list_masks(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_nifti(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read_tumor(path: &Path, label: u8) -> Result<BinaryMask> {
    Ok(nifti::read_mask(path)?.select(label))
}

/// Scores every ground-truth file in `gt_dir` against the same-named file in
/// `pred_dir`.
pub fn evaluate_dirs(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>, params: &EvalParams) -> Result<EvalReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let gts = list_masks(gt_dir)?;
    if gts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cases: Result<Vec<CaseResult>> = gts
        .par_iter()
        .map(|gt_path| {
            let name = gt_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let pred_path = pred_dir.join(&name);
            let gt = read_tumor(gt_path, params.tumor_label)?;
            let pred = read_tumor(&pred_path, params.tumor_label)?;
            evaluate_case(&name, &pred, &gt, params)
        })
        .collect();
    EvalReport::from_cases(cases?, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(f: impl FnMut(usize, usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn([8; 3], [1.0; 3], f).unwrap()
    }

    #[test]
    fn dsc_trivial_cases() {
        let a = mask(|x, _, _| x < 3);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &mask(|x, _, _| x > 5)).unwrap(), 0.0);
        let e = mask(|_, _, _| false);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn dsc_half_overlap() {
        // 8 voxels each, 4 shared
        let a = mask(|x, y, z| x < 2 && y < 2 && z < 2);
        let b = mask(|x, y, z| (1..3).contains(&x) && y < 2 && z < 2);
        assert_eq!(dsc(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn sixty_five_voxels_is_tiny() {
        let r = equivalent_radius(65.0);
        assert!((r - 2.494).abs() < 1e-3);
        assert_eq!(classify(r, &SizeClass::defaults()), Some(0));
    }

    #[test]
    fn bootstrap_degenerate_inputs() {
        assert!(bootstrap_ci(&[], 0.95, 1000, 0).is_err());
        let c = bootstrap_ci(&[0.7; 12], 0.95, 1000, 0).unwrap();
        assert_eq!((c.mean, c.lo, c.hi), (0.7, 0.7, 0.7));
        let c = bootstrap_ci(&[0.3], 0.95, 1000, 0).unwrap();
        assert_eq!((c.mean, c.lo, c.hi), (0.3, 0.3, 0.3));
    }

    #[test]
    fn bootstrap_balanced_binary() {
        let v: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let c = bootstrap_ci(&v, 0.95, 1000, 7).unwrap();
        assert_eq!(c.mean, 0.5);
        assert!(c.lo > 0.3 && c.hi < 0.7 && c.lo <= 0.5 && c.hi >= 0.5);
        assert_eq!(c, bootstrap_ci(&v, 0.95, 1000, 7).unwrap());
    }

    #[test]
    fn unbinned_lesions_are_counted_separately() {
        let gt = mask(|x, y, z| x == 0 && y == 0 && z == 0);
        let t = lesion_sensitivity(&gt, &gt, &SizeClass::defaults(), 0.1).unwrap();
        assert_eq!(t.unbinned.total, 1);
        assert_eq!(t.overall().detected, 1);
    }
}
