use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use tumorgen::compose::Host;
use tumorgen::config::Config;
use tumorgen::dataset::{
    generate_item, make_validation_set, sample_spec, DatasetManifest, HostInfo, Pool, TrainingStream,
    GENERATOR_VERSION, MANIFEST_FILE,
};
use tumorgen::error::{Error, Result};
use tumorgen::metrics::evaluate_dirs;
use tumorgen::phantom::{write_phantom_pool, PhantomSpec};
use tumorgen::seed::{derive_seed, sha256_hex};
use tumorgen::selection::{read_jsonl, select_best, simulate_selection_study, Direction, MetricTrajectory};
use tumorgen::shape::{deform_until_accepted, make_ellipsoid};
use tumorgen::texture::{generate_texture, TextureSpec};
use tumorgen::vessels::{liver_stats, segment_vessels, LiverStats};
use tumorgen::volume_io::{self, preprocess, Datatype};

use crate::plot;
use crate::{Command, Common};

pub const RECORD_FILE: &str = "record.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
        })
    }
}

/// Config from `--config` (or defaults) with `--seed` applied.
fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => {
            require_file(p)?;
            Config::load(p)?
        }
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// What was run and what it produced; written next to every output.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    generator_version: &'a str,
    seed: u64,
    effective_config: Option<&'a Config>,
    details: Value,
    outputs: Vec<Output>,
}

#[derive(Serialize)]
struct Output {
    path: String,
    sha256: String,
}

fn outputs(base: &Path, files: &[PathBuf]) -> Result<Vec<Output>> {
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(io_err(f))?;
            let rel = f.strip_prefix(base).unwrap_or(f);
            Ok(Output {
                path: rel.to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

fn write_record(
    record_path: &Path,
    command: &str,
    seed: u64,
    cfg: Option<&Config>,
    details: Value,
    files: &[PathBuf],
) -> Result<()> {
    let base = record_path.parent().unwrap_or(Path::new("."));
    let record = RunRecord {
        command,
        generator_version: GENERATOR_VERSION,
        seed,
        effective_config: cfg,
        details,
        outputs: outputs(base, files)?,
    };
    write_json(record_path, &record)
}

/// `out.nii.gz` -> `out.nii.gz.record.json`, for single-file outputs.
fn sibling_record(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".record.json");
    out.with_file_name(name)
}

fn host_stats_placeholder() -> LiverStats {
    LiverStats { mean: 100.0, std: 15.0 }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Vessels {
            volume,
            liver,
            out_dir,
            common,
        } => {
            let cfg = load_config(&common)?;
            require_file(&volume)?;
            require_file(&liver)?;
            let v = volume_io::read_volume(&volume)?;
            let l = volume_io::read_binary_mask(&liver)?;
            let vessels = segment_vessels(&v, &l, &cfg.vessels)?;
            create_dir(&out_dir)?;
            let out = out_dir.join("vessels.nii.gz");
            volume_io::write_binary_mask(&out, &vessels)?;
            let stats = liver_stats(&v, &l)?;
            let details = json!({"volume": volume, "liver": liver, "liver_stats": stats, "vessel_voxels": vessels.count()});
            write_record(&out_dir.join(RECORD_FILE), "vessels", cfg.seed, Some(&cfg), details, &[out])
        }

        Command::Shapes {
            count,
            class,
            spacing,
            out_dir,
            common,
        } => {
            let cfg = load_config(&common)?;
            let class = cfg.class(&class)?;
            if !(spacing > 0.0) {
                return Err(Error::InvalidParameter(format!("spacing must be > 0, got {spacing}")));
            }
            let host = HostInfo {
                liver: host_stats_placeholder(),
                min_spacing_mm: spacing,
            };
            create_dir(&out_dir)?;
            let mut files = Vec::new();
            let mut shapes = Vec::new();
            let mut slices = Vec::new();
            for k in 0..count {
                let spec = sample_spec(&class, &host, &cfg.sampling, derive_seed(cfg.seed, "shape", k as u64))?;
                let base = make_ellipsoid(&spec.ellipsoid, [spacing; 3])?;
                let shape = deform_until_accepted(&base, &spec.deform, spec.max_shape_attempts, |_| true)?;
                let path = out_dir.join(format!("shape_{k:03}.nii.gz"));
                volume_io::write_binary_mask(&path, &shape.mask)?;
                slices.push(plot::mask_slice(&shape.mask));
                shapes.push(json!({
                    "file": path.file_name().map(|f| f.to_string_lossy().into_owned()),
                    "ellipsoid": spec.ellipsoid,
                    "deform": spec.deform,
                    "seed_used": shape.seed_used,
                    "attempts": shape.attempts,
                    "voxels": shape.mask.count(),
                }));
                files.push(path);
            }
            if !slices.is_empty() {
                let png = out_dir.join("gallery.png");
                plot::write_gallery(&png, &slices)?;
                files.push(png);
            }
            let details = json!({"class": class, "spacing_mm": spacing, "shapes": shapes});
            write_record(&out_dir.join(RECORD_FILE), "shapes", cfg.seed, Some(&cfg), details, &files)
        }

        Command::Textures {
            count,
            size,
            mu,
            sigma_g,
            coarse_factor,
            blur_sigma,
            out_dir,
            common,
        } => {
            let cfg = load_config(&common)?;
            if size == 0 {
                return Err(Error::InvalidParameter("size must be >= 1".into()));
            }
            create_dir(&out_dir)?;
            let mut files = Vec::new();
            let mut specs = Vec::new();
            let mut slices = Vec::new();
            for k in 0..count {
                let spec = TextureSpec {
                    mu,
                    sigma_g,
                    coarse_factor,
                    blur_sigma,
                    seed: derive_seed(cfg.seed, "texture", k as u64),
                };
                let tex = generate_texture([size; 3], [1.0; 3], &spec)?;
                let path = out_dir.join(format!("texture_{k:03}.nii.gz"));
                volume_io::write_grid(&path, &tex, Datatype::Float32)?;
                slices.push(plot::grid_slice(&tex, mu - 3.0 * sigma_g, mu + 3.0 * sigma_g));
                specs.push(spec);
                files.push(path);
            }
            if !slices.is_empty() {
                let png = out_dir.join("gallery.png");
                plot::write_gallery(&png, &slices)?;
                files.push(png);
            }
            let details = json!({"size": size, "textures": specs});
            write_record(&out_dir.join(RECORD_FILE), "textures", cfg.seed, Some(&cfg), details, &files)
        }

        Command::Synth {
            volume,
            liver,
            classes,
            out_dir,
            common,
        } => {
            let cfg = load_config(&common)?;
            require_file(&volume)?;
            require_file(&liver)?;
            let v = volume_io::read_volume(&volume)?;
            let l = volume_io::read_binary_mask(&liver)?;
            let generated = match (&cfg.synth.tumor, classes.is_empty()) {
                (Some(spec), true) => {
                    // every stage's seed follows --seed, not the file
                    let mut spec = spec.clone();
                    spec.deform.seed = derive_seed(cfg.seed, "deform", 0);
                    spec.texture.seed = derive_seed(cfg.seed, "texture", 0);
                    let placement = tumorgen::placement::PlacementParams {
                        seed: derive_seed(cfg.seed, "placement", 0),
                        ..cfg.placement.clone()
                    };
                    let mut host = Host::new(v, l, &cfg.vessels, cfg.placement.vessel_safety_margin_voxels)?;
                    let record = host.insert_tumor(&spec, &placement)?;
                    let (volume, label) = host.into_parts();
                    tumorgen::dataset::Generated {
                        volume,
                        label,
                        tumors: vec![record],
                    }
                }
                _ => {
                    let names = if classes.is_empty() { &cfg.synth.classes } else { &classes };
                    let classes = cfg.classes_named(names)?;
                    generate_item(v, l, &classes, &cfg.generator(), cfg.seed)?
                }
            };
            create_dir(&out_dir)?;
            let image = out_dir.join("image.nii.gz");
            let label = out_dir.join("label.nii.gz");
            volume_io::write_volume(&image, &generated.volume, Datatype::Int16)?;
            volume_io::write_mask(&label, &generated.label)?;
            let details = json!({"volume": volume, "liver": liver, "tumors": generated.tumors});
            write_record(
                &out_dir.join(RECORD_FILE),
                "synth",
                cfg.seed,
                Some(&cfg),
                details,
                &[image, label],
            )
        }

        Command::MakeValidation {
            pool,
            classes,
            out_dir,
            workers,
            common,
        } => {
            let cfg = load_config(&common)?;
            require_dir(&pool)?;
            let names = if classes.is_empty() { &cfg.validation.classes } else { &classes };
            let classes = cfg.classes_named(names)?;
            let pool = Pool::from_dir(&pool)?;
            let mut manifest =
                make_validation_set(&pool, &classes, &cfg.generator(), cfg.seed, &out_dir, workers.max(1))?;
            finish_manifest(&mut manifest, &cfg, &out_dir)?;
            println!(
                "{}",
                json!({"items": manifest.items.len(), "ok": manifest.ok_count(), "manifest": out_dir.join(MANIFEST_FILE)})
            );
            Ok(())
        }

        Command::Stream {
            pool,
            count,
            start,
            out_dir,
            workers,
            common,
        } => {
            let cfg = load_config(&common)?;
            require_dir(&pool)?;
            let pool = Pool::from_dir(&pool)?;
            let [lo, hi] = cfg.stream.tumors_per_item;
            let stream =
                TrainingStream::new(pool, cfg.class_mix()?, cfg.generator(), cfg.seed)?.with_tumors_per_item(lo, hi)?;
            let mut manifest = stream.write(start, count, &out_dir, workers.max(1))?;
            finish_manifest(&mut manifest, &cfg, &out_dir)?;
            println!(
                "{}",
                json!({"items": manifest.items.len(), "ok": manifest.ok_count(), "manifest": out_dir.join(MANIFEST_FILE)})
            );
            Ok(())
        }

        Command::Evaluate {
            pred,
            gt,
            out,
            overlap_frac,
            label,
            common,
        } => {
            let cfg = load_config(&common)?;
            require_dir(&pred)?;
            require_dir(&gt)?;
            let mut params = cfg.evaluation.clone();
            if let Some(f) = overlap_frac {
                params.overlap_frac = f;
            }
            if let Some(l) = label {
                params.tumor_label = l;
            }
            if common.seed.is_some() {
                params.seed = cfg.seed;
            }
            let report = evaluate_dirs(&pred, &gt, &params)?;
            print!("{}", report.table());
            if let Some(out) = out {
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    create_dir(parent)?;
                }
                write_json(&out, &report)?;
                let details = json!({"pred": pred, "gt": gt});
                write_record(&sibling_record(&out), "evaluate", params.seed, Some(&cfg), details, &[out])?;
            }
            Ok(())
        }

        Command::SelectCheckpoint {
            trajectory,
            metric,
            maximize: _,
            minimize,
            run,
        } => {
            require_file(&trajectory)?;
            let file = fs::File::open(&trajectory).map_err(io_err(&trajectory))?;
            let records = read_jsonl(BufReader::new(file))?;
            let direction = if minimize { Direction::Minimize } else { Direction::Maximize };
            let mut runs = MetricTrajectory::group(records)?;
            if let Some(r) = run {
                runs.retain(|t| t.run() == r);
                if runs.is_empty() {
                    return Err(Error::InvalidTrajectory(format!("run {r} not present")));
                }
            }
            if runs.is_empty() {
                return Err(Error::EmptyInput);
            }
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for t in &runs {
                let best = select_best(t, &metric, direction)?;
                writeln!(lock, "{}", serde_json::to_string(&best)?).map_err(io_err(Path::new("<stdout>")))?;
            }
            Ok(())
        }

        Command::SimulateStudy {
            trials,
            out_dir,
            common,
        } => {
            let cfg = load_config(&common)?;
            let mut study = cfg.study.clone();
            if common.seed.is_some() {
                study.seed = cfg.seed;
            }
            if let Some(t) = trials {
                study.trials = t;
            }
            let result = simulate_selection_study(&study)?;
            let arms: Vec<Value> = result
                .arms
                .iter()
                .map(|a| json!({"n_val": a.n_val, "median_regret": a.median, "mean_regret": a.mean, "zero_regret_fraction": a.zero_fraction}))
                .collect();
            println!("{}", json!({"trials": study.trials, "seed": study.seed, "arms": arms}));
            if let Some(dir) = out_dir {
                create_dir(&dir)?;
                let path = dir.join("study.json");
                write_json(&path, &result)?;
                write_record(&dir.join(RECORD_FILE), "simulate-study", study.seed, Some(&cfg), json!({}), &[path])?;
            }
            Ok(())
        }

        Command::Report {
            eval,
            trajectory,
            study,
            out_dir,
        } => {
            create_dir(&out_dir)?;
            let mut files = Vec::new();
            if let Some(p) = &eval {
                require_file(p)?;
                files.extend(plot::report_eval(p, &out_dir)?);
            }
            if let Some(p) = &trajectory {
                require_file(p)?;
                files.extend(plot::report_trajectory(p, &out_dir)?);
            }
            if let Some(p) = &study {
                require_file(p)?;
                files.extend(plot::report_study(p, &out_dir)?);
            }
            let details = json!({"eval": eval, "trajectory": trajectory, "study": study});
            write_record(&out_dir.join(RECORD_FILE), "report", 0, None, details, &files)
        }

        Command::Preprocess { volume, out, common } => {
            let cfg = load_config(&common)?;
            require_file(&volume)?;
            let v = volume_io::read_volume(&volume)?;
            let g = preprocess(&v, &cfg.preprocess)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            volume_io::write_grid(&out, &g, Datatype::Float32)?;
            let details = json!({"volume": volume, "params": cfg.preprocess});
            write_record(&sibling_record(&out), "preprocess", cfg.seed, Some(&cfg), details, &[out])
        }

        Command::Phantom {
            out_dir,
            count,
            dims,
            spacing,
            seed,
        } => {
            if !(spacing > 0.0) {
                return Err(Error::InvalidParameter(format!("spacing must be > 0, got {spacing}")));
            }
            if dims.len() != 3 {
                return Err(Error::InvalidParameter(format!("--dims needs three values, got {}", dims.len())));
            }
            let spec = PhantomSpec {
                dims: [dims[0], dims[1], dims[2]],
                spacing: [spacing; 3],
                seed,
                ..PhantomSpec::default()
            };
            write_phantom_pool(&out_dir, count, &spec)?;
            let files: Vec<PathBuf> = (0..count)
                .flat_map(|k| {
                    let sub = out_dir.join(format!("host_{k:03}"));
                    [sub.join("image.nii.gz"), sub.join("liver.nii.gz")]
                })
                .collect();
            let details = json!({"count": count, "dims": dims, "spacing_mm": spacing});
            write_record(&out_dir.join(RECORD_FILE), "phantom", seed, None, details, &files)
        }
    }
}

/// Echoes the effective config into a dataset manifest and rewrites it.
fn finish_manifest(manifest: &mut DatasetManifest, cfg: &Config, out_dir: &Path) -> Result<()> {
    manifest.effective_config = Some(serde_json::to_value(cfg)?);
    manifest.write(out_dir.join(MANIFEST_FILE))
}
