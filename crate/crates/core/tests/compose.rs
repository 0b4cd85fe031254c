use proptest::prelude::*;
use tumorgen::components::{connected_components, Connectivity};
use tumorgen::compose::{
    apply_capsule, apply_mass_effect, influence_region, synthesize_tumor, Host, TumorRecord, TumorSpec,
};
use tumorgen::dataset::{sample_spec, HostInfo, SamplingParams, SizeClass};
use tumorgen::grid::{BinaryMask, CtVolume, VoxelGrid};
use tumorgen::morph::{dilate, erode};
use tumorgen::phantom::{liver_phantom, PhantomSpec};
use tumorgen::placement::{placed_indices, PlacementParams};
use tumorgen::shape::{crop_to_foreground, elastic_deform, make_ellipsoid, DeformSpec, EllipsoidSpec};
use tumorgen::texture::{generate_texture, TextureSpec};
use tumorgen::vessels::VesselParams;

fn host(seed: u64) -> (CtVolume, BinaryMask) {
    liver_phantom(&PhantomSpec { seed, ..Default::default() }).unwrap()
}

fn spec(r: f64, seed: u64) -> TumorSpec {
    let mut s = TumorSpec::new(EllipsoidSpec::new(r * 1.2, r, r / 1.2).unwrap());
    s.deform = DeformSpec { sigma_d: 2.0, seed, ..Default::default() };
    s.texture = TextureSpec { mu: 55.0, sigma_g: 12.0, seed: seed ^ 0xABCD, ..Default::default() };
    s
}

fn placement(seed: u64) -> PlacementParams {
    PlacementParams { seed, ..Default::default() }
}

/// The deformed shape rebuilt from the record alone.
fn rebuilt_shape(record: &TumorRecord, spacing: [f64; 3]) -> BinaryMask {
    let base = make_ellipsoid(&record.spec.ellipsoid, spacing).unwrap();
    let deform = DeformSpec { seed: record.deform_seed_used, ..record.spec.deform.clone() };
    crop_to_foreground(&elastic_deform(&base, &deform).unwrap()).unwrap()
}

fn changed(a: &CtVolume, b: &CtVolume) -> Vec<usize> {
    (0..a.grid().len()).filter(|&i| a.grid().data()[i].to_bits() != b.grid().data()[i].to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nothing_outside_the_influence_region_changes(seed in any::<u64>(), r in 3.0f64..7.0, lambda in 0.0f64..0.5) {
        let (v, liver) = host(seed % 7);
        let mut s = spec(r, seed);
        s.mass_effect_strength = lambda;
        let (out, label, rec) = synthesize_tumor(&v, &liver, &s, &placement(seed), &VesselParams::default()).unwrap();
        let region = influence_region(&label.tumor(), &rec).unwrap();
        for i in changed(&v, &out) {
            prop_assert!(region.contains(i), "voxel {i} changed outside the region");
        }
    }

    #[test]
    fn label_is_exactly_the_placed_shape(seed in any::<u64>(), r in 3.0f64..7.0) {
        let (v, liver) = host(seed % 5);
        let (_, label, rec) = synthesize_tumor(&v, &liver, &spec(r, seed), &placement(seed), &VesselParams::default()).unwrap();
        let shape = rebuilt_shape(&rec, v.spacing());
        let mut expected = placed_indices(&shape, rec.placement.offset, v.dims());
        expected.sort_unstable();
        prop_assert_eq!(label.tumor().foreground().collect::<Vec<_>>(), expected);
        prop_assert!(label.organ().is_subset_of(&liver.union(&label.tumor()).unwrap()));
        prop_assert_eq!(rec.voxel_count, label.tumor().count());
    }
}

#[test]
fn capsule_on_a_cube_matches_face_neighbour_oracle() {
    let n = 16;
    let cube = |x: usize, y: usize, z: usize| [x, y, z].iter().all(|c| (3..13).contains(c));
    let tumor = BinaryMask::from_fn([n; 3], [1.0; 3], cube).unwrap();
    assert_eq!(tumor.count(), 1000);
    let base = CtVolume::new(VoxelGrid::from_fn([n; 3], [1.0; 3], |x, y, z| (x + 2 * y + 3 * z) as f32).unwrap());
    let out = apply_capsule(&base, &tumor, 1, 20.0).unwrap();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as isize, y as isize, z as isize];
                let inside = cube(x, y, z);
                // rim: a face neighbour on the other side of the boundary
                let rim = (0..3).any(|a| {
                    [-1isize, 1].iter().any(|d| {
                        let mut q = p;
                        q[a] += d;
                        let nb = q.iter().all(|&c| c >= 0 && c < n as isize)
                            && cube(q[0] as usize, q[1] as usize, q[2] as usize);
                        nb != inside
                    })
                });
                let expect = base.grid().get(x, y, z) + if rim { 20.0 } else { 0.0 };
                assert_eq!(out.grid().get(x, y, z), expect, "({x},{y},{z})");
            }
        }
    }
}

#[test]
fn zero_parameters_are_identities_for_their_stage() {
    let (v, liver) = host(3);
    let tumor = BinaryMask::from_fn(v.dims(), v.spacing(), |x, y, z| {
        (x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2) + (z as f64 - 24.0).powi(2) < 25.0
    })
    .unwrap();
    assert_eq!(apply_mass_effect(&v, &tumor, [32.0, 32.0, 24.0], 0.0, 1.5).unwrap(), v);
    assert_eq!(apply_capsule(&v, &tumor, 0, 20.0).unwrap(), v);
    assert_eq!(apply_capsule(&v, &tumor, 2, 0.0).unwrap(), v);

    // with every post-processing stage off, only tumor voxels change
    let mut s = spec(5.0, 11);
    s.mass_effect_strength = 0.0;
    s.capsule_width_voxels = 0;
    s.edge_blend_sigma = 0.0;
    let (out, label, _) = synthesize_tumor(&v, &liver, &s, &placement(4), &VesselParams::default()).unwrap();
    let t = label.tumor();
    assert!(changed(&v, &out).into_iter().all(|i| t.contains(i)));
}

#[test]
fn mass_effect_only_reaches_the_ball() {
    let (v, liver) = host(5);
    let mut s = spec(5.0, 21);
    s.capsule_width_voxels = 0;
    s.edge_blend_sigma = 0.0;
    let (out, label, rec) = synthesize_tumor(&v, &liver, &s, &placement(8), &VesselParams::default()).unwrap();
    let t = label.tumor();
    let c = rec.center_voxel;
    let r = rec.influence_radius_mm;
    for i in changed(&v, &out) {
        let p = v.grid().coords(i);
        let d = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum::<f64>().sqrt();
        assert!(t.contains(i) || d < r, "voxel at distance {d} >= {r} changed");
    }
}

#[test]
fn interior_values_are_the_generated_texture() {
    let (v, liver) = host(2);
    let s = spec(8.0, 99);
    let (out, label, rec) = synthesize_tumor(&v, &liver, &s, &placement(1), &VesselParams::default()).unwrap();
    let shape = rebuilt_shape(&rec, v.spacing());
    let bm = s.blend_margin();
    let tex = generate_texture(shape.dims().map(|n| n + 2 * bm), v.spacing(), &s.texture).unwrap();
    let interior = erode(&label.tumor(), rec.margin_voxels).unwrap();
    assert!(interior.count() > 100);
    let grid = v.grid();
    for i in interior.foreground() {
        let p = grid.coords(i);
        let q = [0, 1, 2].map(|a| (p[a] as isize - rec.placement.offset[a]) as usize + bm);
        let expected = tex.get(q[0], q[1], q[2]);
        let got = out.grid().get(p[0], p[1], p[2]);
        // feather weight at the margin is 1 - Φ(-3) of the host-texture contrast
        assert!((got - expected).abs() < 0.01 * (1.0 + (grid.data()[i] - expected).abs()), "{got} vs {expected}");
    }
}

fn interior_mean(out: &CtVolume, label: &tumorgen::grid::LabelMask, rec: &TumorRecord) -> f64 {
    let interior = erode(&label.tumor(), rec.margin_voxels).unwrap();
    interior.foreground().map(|i| out.grid().data()[i] as f64).sum::<f64>() / interior.count() as f64
}

/// Uniform 100 HU ellipsoidal liver with no vessels, big enough for a 20 mm tumor.
fn plain_host() -> (CtVolume, BinaryMask) {
    let d = [72, 72, 64];
    let liver = BinaryMask::from_fn(d, [1.0; 3], |x, y, z| {
        let p = [x as f64 - 35.5, y as f64 - 35.5, (z as f64 - 31.5) * 1.1];
        p.iter().map(|v| v * v).sum::<f64>() <= 33.0 * 33.0
    })
    .unwrap();
    (CtVolume::new(VoxelGrid::filled(d, [1.0; 3], 100.0f32).unwrap()), liver)
}

#[test]
fn interior_mean_is_within_three_hu_of_the_target() {
    let (v, liver) = plain_host();
    let mut means = Vec::new();
    for seed in 0..10 {
        let mut s = TumorSpec::new(EllipsoidSpec::sphere(20.0).unwrap());
        s.deform = DeformSpec { seed, ..Default::default() };
        s.texture = TextureSpec { seed: seed + 1000, ..Default::default() };
        let (out, label, rec) = synthesize_tumor(&v, &liver, &s, &placement(seed), &VesselParams::default()).unwrap();
        means.push(interior_mean(&out, &label, &rec));
    }
    for m in &means {
        assert!((m - 60.0).abs() <= 3.0, "interior means {means:?}");
    }
}

#[test]
fn small_tumor_interior_means_are_unbiased() {
    // a single small tumor averages too few coarse noise nodes for a per-tumor bound
    let (v, liver) = host(0);
    let means: Vec<f64> = (0..20)
        .map(|seed| {
            let (out, label, rec) =
                synthesize_tumor(&v, &liver, &spec(8.0, seed), &placement(seed), &VesselParams::default()).unwrap();
            interior_mean(&out, &label, &rec)
        })
        .collect();
    let pooled = means.iter().sum::<f64>() / means.len() as f64;
    assert!((pooled - 55.0).abs() <= 3.0, "pooled {pooled} from {means:?}");
}

#[test]
fn several_tumors_stay_disjoint() {
    let (v, liver) = host(9);
    let mut h = Host::new(v, liver, &VesselParams::default(), 1).unwrap();
    let mut recs = Vec::new();
    for k in 0..4 {
        recs.push(h.insert_tumor(&spec(4.0, 100 + k), &placement(200 + k)).unwrap());
    }
    let tumors = h.label().tumor();
    let comps = connected_components(&tumors, Connectivity::TwentySix);
    assert_eq!(comps.len(), 4);
    let mut counts: Vec<usize> = comps.iter().map(|c| c.voxel_count()).collect();
    let mut expected: Vec<usize> = recs.iter().map(|r| r.voxel_count).collect();
    counts.sort_unstable();
    expected.sort_unstable();
    assert_eq!(counts, expected);
    // earlier tumors are kept out of each other's 2-voxel neighbourhood
    let first = comps[0].to_mask(tumors.grid());
    let rest = tumors.difference(&first).unwrap();
    assert!(dilate(&first, 1).unwrap().intersection(&rest).unwrap().none());
}

#[test]
fn tiny_class_tumors_are_below_five_millimetres() {
    let (v, liver) = host(4);
    let info = HostInfo { liver: tumorgen::vessels::liver_stats(&v, &liver).unwrap(), min_spacing_mm: 1.0 };
    for seed in 0..40 {
        let s = sample_spec(&SizeClass::tiny(), &info, &SamplingParams::default(), seed).unwrap();
        let (_, label, rec) = synthesize_tumor(&v, &liver, &s, &placement(seed), &VesselParams::default()).unwrap();
        let t = label.tumor();
        let r = (3.0 * t.volume_mm3() / (4.0 * std::f64::consts::PI)).cbrt();
        assert!(r < 5.0, "seed {seed}: r = {r}");
        assert!((r - rec.equivalent_radius_mm).abs() < 1e-9);
    }
}

#[test]
fn pipeline_is_deterministic() {
    let (v, liver) = host(1);
    let s = spec(6.0, 5);
    let a = synthesize_tumor(&v, &liver, &s, &placement(3), &VesselParams::default()).unwrap();
    let b = synthesize_tumor(&v, &liver, &s, &placement(3), &VesselParams::default()).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}
