//! CSV tables and PNG figures for `report`, plus slice galleries.
//!
//! Figures carry no text: axis ranges and series order are in the CSVs
//! written alongside.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use tumorgen::error::{Error, Result};
use tumorgen::grid::{BinaryMask, VoxelGrid};
use tumorgen::metrics::EvalReport;
use tumorgen::selection::{read_jsonl, StudyResult};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 30;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One grayscale 2-D slice.
pub struct Slice {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

fn middle_slice<T: Copy>(grid: &VoxelGrid<T>, f: impl Fn(T) -> u8) -> Slice {
    let [nx, ny, nz] = grid.dims();
    let z = nz / 2;
    let mut pixels = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            pixels.push(f(grid.get(x, y, z)));
        }
    }
    Slice {
        width: nx,
        height: ny,
        pixels,
    }
}

/// Central axial slice of a mask, foreground white.
pub fn mask_slice(mask: &BinaryMask) -> Slice {
    middle_slice(mask.grid(), |v| if v != 0 { 255 } else { 0 })
}

/// Central axial slice of a grid, `[lo, hi]` mapped to black..white.
pub fn grid_slice(grid: &VoxelGrid<f32>, lo: f64, hi: f64) -> Slice {
    let span = (hi - lo).max(f64::EPSILON);
    middle_slice(grid, |v| ((v as f64 - lo) / span * 255.0).clamp(0.0, 255.0) as u8)
}

/// Tiles slices left to right, upscaled so small shapes stay visible.
pub fn write_gallery(path: &Path, slices: &[Slice]) -> Result<()> {
    let side = slices.iter().map(|s| s.width.max(s.height)).max().unwrap_or(1).max(1);
    let scale = (128 / side).max(1);
    let gap = 4;
    let cell = side * scale;
    let w = slices.len() * (cell + gap) + gap;
    let h = cell + 2 * gap;
    let mut img = GrayImage::from_pixel(w as u32, h as u32, Luma([64]));
    for (k, s) in slices.iter().enumerate() {
        let ox = gap + k * (cell + gap) + (side - s.width) * scale / 2;
        let oy = gap + (side - s.height) * scale / 2;
        for y in 0..s.height * scale {
            for x in 0..s.width * scale {
                let v = s.pixels[(y / scale) * s.width + x / scale];
                img.put_pixel((ox + x) as u32, (oy + y) as u32, Luma([v]));
            }
        }
    }
    img.save(path).map_err(|e| image_err(path, e))
}

/// A white canvas with an axis box mapping data ranges to pixels.
struct Canvas {
    img: RgbImage,
    x_range: [f64; 2],
    y_range: [f64; 2],
}

impl Canvas {
    fn new(x_range: [f64; 2], y_range: [f64; 2]) -> Self {
        let pad = |[lo, hi]: [f64; 2]| if hi > lo { [lo, hi] } else { [lo - 0.5, hi + 0.5] };
        let mut c = Canvas {
            img: RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255])),
            x_range: pad(x_range),
            y_range: pad(y_range),
        };
        let black = Rgb([0, 0, 0]);
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        c.segment_px((l as i64, b as i64), (r as i64, b as i64), black);
        c.segment_px((l as i64, t as i64), (l as i64, b as i64), black);
        c
    }

    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let [x0, x1] = self.x_range;
        let [y0, y1] = self.y_range;
        let w = (WIDTH - 2 * MARGIN) as f64;
        let h = (HEIGHT - 2 * MARGIN) as f64;
        let px = MARGIN as f64 + (x - x0) / (x1 - x0) * w;
        let py = (HEIGHT - MARGIN) as f64 - (y - y0) / (y1 - y0) * h;
        (px.round() as i64, py.round() as i64)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    // Bresenham
    fn segment_px(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn polyline(&mut self, points: &[(f64, f64)], c: Rgb<u8>) {
        for w in points.windows(2) {
            let a = self.to_px(w[0].0, w[0].1);
            let b = self.to_px(w[1].0, w[1].1);
            self.segment_px(a, b, c);
        }
        if let [p] = points {
            let (x, y) = self.to_px(p.0, p.1);
            self.put(x, y, c);
        }
    }

    fn bar(&mut self, x_lo: f64, x_hi: f64, y: f64, c: Rgb<u8>) {
        let (l, top) = self.to_px(x_lo, y);
        let (r, bottom) = self.to_px(x_hi, self.y_range[0]);
        for px in l..r {
            for py in top..bottom {
                self.put(px, py, c);
            }
        }
    }

    fn save(self, path: &Path) -> Result<()> {
        self.img.save(path).map_err(|e| image_err(path, e))
    }
}

fn range(values: impl Iterator<Item = f64>) -> [f64; 2] {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
}

fn color(k: usize) -> Rgb<u8> {
    Rgb(PALETTE[k % PALETTE.len()])
}

/// `eval_cases.csv`, `eval_sensitivity.csv` and a per-bin sensitivity bar chart.
pub fn report_eval(path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report: EvalReport = read_json(path)?;
    let cases = out_dir.join("eval_cases.csv");
    write_csv(
        &cases,
        &["case", "dsc", "lesions", "detected"],
        report.cases.iter().map(|c| {
            vec![
                c.name.clone(),
                c.dsc.to_string(),
                c.lesions.len().to_string(),
                c.lesions.iter().filter(|l| l.detected).count().to_string(),
            ]
        }),
    )?;
    let mut rows = report.sensitivity.bins.clone();
    rows.push(report.sensitivity.unbinned.clone());
    rows.push(report.sensitivity.overall());
    let sens = out_dir.join("eval_sensitivity.csv");
    write_csv(
        &sens,
        &["bin", "total", "detected", "sensitivity"],
        rows.iter().map(|r| {
            vec![
                r.name.clone(),
                r.total.to_string(),
                r.detected.to_string(),
                r.sensitivity().map_or(String::new(), |s| s.to_string()),
            ]
        }),
    )?;
    let png = out_dir.join("eval_sensitivity.png");
    let mut canvas = Canvas::new([0.0, rows.len() as f64], [0.0, 1.0]);
    for (k, r) in rows.iter().enumerate() {
        if let Some(s) = r.sensitivity() {
            canvas.bar(k as f64 + 0.15, k as f64 + 0.85, s, color(k));
        }
    }
    canvas.save(&png)?;
    Ok(vec![cases, sens, png])
}

/// `trajectory.csv` and one line per (run, metric) against epoch.
pub fn report_trajectory(path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records = read_jsonl(BufReader::new(file))?;
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let csv_path = out_dir.join("trajectory.csv");
    write_csv(
        &csv_path,
        &["run", "epoch", "metric", "value"],
        records
            .iter()
            .map(|r| vec![r.run.to_string(), r.epoch.to_string(), r.metric.clone(), r.value.to_string()]),
    )?;
    let mut series: BTreeMap<(u64, &str), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &records {
        series.entry((r.run, &r.metric)).or_default().push((r.epoch as f64, r.value));
    }
    let xr = range(records.iter().map(|r| r.epoch as f64));
    let yr = range(records.iter().map(|r| r.value));
    let mut canvas = Canvas::new(xr, yr);
    for (k, pts) in series.values_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        canvas.polyline(pts, color(k));
    }
    let png = out_dir.join("trajectory.png");
    canvas.save(&png)?;
    Ok(vec![csv_path, png])
}

/// `study.csv` (every regret), `study_summary.csv`, and the sorted regret
/// curve of each validation-set size.
pub fn report_study(path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let study: StudyResult = read_json(path)?;
    let all = out_dir.join("study.csv");
    write_csv(
        &all,
        &["trial", "n_val", "regret"],
        study.arms.iter().flat_map(|a| {
            a.regrets
                .iter()
                .enumerate()
                .map(move |(t, r)| vec![t.to_string(), a.n_val.to_string(), r.to_string()])
        }),
    )?;
    let summary = out_dir.join("study_summary.csv");
    write_csv(
        &summary,
        &["n_val", "median_regret", "mean_regret", "zero_regret_fraction"],
        study.arms.iter().map(|a| {
            vec![
                a.n_val.to_string(),
                a.median.to_string(),
                a.mean.to_string(),
                a.zero_fraction.to_string(),
            ]
        }),
    )?;
    let yr = range(study.arms.iter().flat_map(|a| a.regrets.iter().copied()));
    let mut canvas = Canvas::new([0.0, 1.0], [0.0, yr[1].max(0.0)]);
    for (k, a) in study.arms.iter().enumerate() {
        let mut r = a.regrets.clone();
        r.sort_by(f64::total_cmp);
        let n = r.len().max(1) as f64;
        let pts: Vec<(f64, f64)> = r.iter().enumerate().map(|(i, &v)| ((i as f64 + 0.5) / n, v)).collect();
        canvas.polyline(&pts, color(k));
    }
    let png = out_dir.join("study.png");
    canvas.save(&png)?;
    Ok(vec![all, summary, png])
}
