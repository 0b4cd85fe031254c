use std::path::Path;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use tumorgen::dataset::{
    make_validation_set, regenerate_item, sample_spec, ClassMix, DatasetManifest, GeneratorConfig, HostInfo,
    ItemStatus, Pool, SamplingParams, SizeClass, TrainingStream, MANIFEST_FILE,
};
use tumorgen::metrics::equivalent_radius;
use tumorgen::phantom::{write_phantom_pool, PhantomSpec};
use tumorgen::seed::sha256_hex;
use tumorgen::vessels::LiverStats;

fn pool(dir: &Path, n: usize) -> Pool {
    write_phantom_pool(dir, n, &PhantomSpec::default()).unwrap();
    Pool::from_dir(dir).unwrap()
}

fn host() -> HostInfo {
    HostInfo { liver: LiverStats { mean: 100.0, std: 10.0 }, min_spacing_mm: 1.0 }
}

fn tree_hashes(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, sha256_hex(&std::fs::read(&p).unwrap())));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn tiny_validation_over_two_hosts_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pool(&tmp.path().join("pool"), 2);
    let classes = [SizeClass::tiny()];
    let cfg = GeneratorConfig::default();
    let a = make_validation_set(&p, &classes, &cfg, 17, tmp.path().join("a"), 1).unwrap();
    let b = make_validation_set(&p, &classes, &cfg, 17, tmp.path().join("b"), 2).unwrap();
    assert_eq!(a.items.len(), 2);
    assert_eq!(a.ok_count(), 2);
    assert_eq!(a.items, b.items);
    assert_eq!(tree_hashes(&tmp.path().join("a")), tree_hashes(&tmp.path().join("b")));

    let read = DatasetManifest::read(tmp.path().join("a").join(MANIFEST_FILE)).unwrap();
    assert_eq!(read, a);
    for pos in 0..read.items.len() {
        assert!(regenerate_item(&read, pos).unwrap().is_exact());
    }
    // labels on disk hash to the manifest value
    for item in &read.items {
        let bytes = std::fs::read(tmp.path().join("a").join(item.label.as_ref().unwrap())).unwrap();
        assert_eq!(Some(sha256_hex(&bytes)), item.label_sha256);
    }
}

#[test]
fn stream_is_random_access_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pool(tmp.path(), 3);
    let mix = ClassMix::new(vec![(SizeClass::tiny(), 0.5), (SizeClass::small(), 0.5)]).unwrap();
    let s = TrainingStream::new(p, mix, GeneratorConfig::default(), 5).unwrap();
    let first: Vec<_> = s.iter().take(10).map(|r| r.unwrap()).collect();
    let again: Vec<_> = s.iter().take(10).map(|r| r.unwrap()).collect();
    for (x, y) in first.iter().zip(&again) {
        assert_eq!(x.plan, y.plan);
        assert_eq!(x.volume, y.volume);
        assert_eq!(x.label, y.label);
    }
    let seventh = s.item(7).unwrap();
    assert_eq!(seventh.plan, first[7].plan);
    assert_eq!(seventh.volume, first[7].volume);
    assert_eq!(seventh.label, first[7].label);
}

#[test]
fn stream_class_frequencies_match_the_mix() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pool(tmp.path(), 2);
    let weights = [0.1, 0.4, 0.3, 0.2];
    let mix = ClassMix::new(SizeClass::defaults().into_iter().zip(weights).collect()).unwrap();
    let s = TrainingStream::new(p, mix, GeneratorConfig::default(), 123)
        .unwrap()
        .with_tumors_per_item(1, 1)
        .unwrap();
    let n = 2000u64;
    let mut counts = [0f64; 4];
    for i in 0..n {
        counts[s.plan(i).classes[0]] += 1.0;
    }
    let stat: f64 = counts
        .iter()
        .zip(weights)
        .map(|(o, w)| {
            let e = w * n as f64;
            (o - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi2 {stat}, p {p_value}, counts {counts:?}");
}

#[test]
fn tiny_mix_only_emits_tiny_tumors() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pool(tmp.path(), 2);
    let s = TrainingStream::new(p, ClassMix::only(SizeClass::tiny()).unwrap(), GeneratorConfig::default(), 9).unwrap();
    for item in s.iter().take(25) {
        let item = item.unwrap();
        for rec in &item.tumors {
            assert!(rec.equivalent_radius_mm < 5.0, "{}", rec.equivalent_radius_mm);
        }
        let gt = item.label.tumor();
        for c in tumorgen::components::connected_components(&gt, tumorgen::components::Connectivity::TwentySix) {
            assert!(equivalent_radius(c.voxel_count() as f64) < 5.0);
        }
    }
}

#[test]
fn large_class_specs_stay_in_range() {
    let class = SizeClass::large();
    for seed in 0..10_000 {
        let s = sample_spec(&class, &host(), &SamplingParams::default(), seed).unwrap();
        let [a, b, c] = s.ellipsoid.axes();
        let r = (a * b * c).cbrt();
        assert!((25.0..=44.0).contains(&r), "seed {seed}: {r}");
        assert!(s.ellipsoid.eccentricity() <= 3.0 + 1e-9);
    }
}

#[test]
fn same_seed_same_spec() {
    for class in SizeClass::defaults() {
        let a = sample_spec(&class, &host(), &SamplingParams::default(), 44).unwrap();
        assert_eq!(a, sample_spec(&class, &host(), &SamplingParams::default(), 44).unwrap());
    }
}

#[test]
fn stream_manifest_round_trips_and_regenerates() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pool(&tmp.path().join("pool"), 2);
    let s = TrainingStream::new(p, ClassMix::only(SizeClass::small()).unwrap(), GeneratorConfig::default(), 3).unwrap();
    let out = tmp.path().join("stream");
    let m = s.write(4, 3, &out, 2).unwrap();
    assert_eq!(m.items.iter().map(|i| i.index).collect::<Vec<_>>(), vec![4, 5, 6]);
    assert!(m.items.iter().all(|i| i.status == ItemStatus::Ok));
    let text = std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    let back: DatasetManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(std::fs::read_to_string(out.join("records.jsonl")).unwrap().lines().count(), 3);
    assert!(regenerate_item(&back, 1).unwrap().is_exact());
}

#[test]
fn class_mix_must_sum_to_one() {
    assert!(ClassMix::new(vec![(SizeClass::tiny(), 0.5), (SizeClass::small(), 0.4)]).is_err());
    assert!(ClassMix::new(vec![]).is_err());
}
