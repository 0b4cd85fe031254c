use proptest::prelude::*;
use tumorgen::error::Error;
use tumorgen::grid::{BinaryMask, CtVolume, VoxelGrid};
use tumorgen::morph::dilate;
use tumorgen::phantom::{liver_phantom, PhantomSpec};
use tumorgen::placement::{placed_indices, select_location, PlacementParams};
use tumorgen::shape::{make_ellipsoid, EllipsoidSpec};
use tumorgen::vessels::{segment_vessels, ThresholdMode, VesselParams};

/// 48³ ellipsoidal liver cut by a 3-voxel slab of vessel at z = 22..25.
fn slab_phantom() -> (BinaryMask, BinaryMask) {
    let d = [48, 48, 48];
    let liver = BinaryMask::from_fn(d, [1.0; 3], |x, y, z| {
        let p = [x as f64 - 23.5, y as f64 - 23.5, (z as f64 - 23.5) * 1.2];
        p.iter().map(|v| v * v).sum::<f64>() <= 21.0 * 21.0
    })
    .unwrap();
    let vessels = BinaryMask::from_fn(d, [1.0; 3], |x, y, z| (22..25).contains(&z) && liver.at(x, y, z)).unwrap();
    (liver, vessels)
}

#[test]
fn thousand_slab_placements_never_touch_vessels() {
    let (liver, vessels) = slab_phantom();
    let shape = make_ellipsoid(&EllipsoidSpec::sphere(5.0).unwrap(), [1.0; 3]).unwrap();
    let margin = 1;
    let forbidden = dilate(&vessels, margin).unwrap();
    for seed in 0..1000 {
        let params = PlacementParams { seed, vessel_safety_margin_voxels: margin, ..Default::default() };
        let p = select_location(&liver, &vessels, &shape, &params).unwrap();
        for i in placed_indices(&shape, p.offset, liver.dims()) {
            assert!(liver.contains(i), "seed {seed} leaves the liver");
            assert!(!forbidden.contains(i), "seed {seed} hits the dilated slab");
        }
    }
}

#[test]
fn fully_obstructed_liver_exhausts_within_max_attempts() {
    let (liver, _) = slab_phantom();
    let shape = make_ellipsoid(&EllipsoidSpec::sphere(3.0).unwrap(), [1.0; 3]).unwrap();
    let params = PlacementParams { max_attempts: 37, ..Default::default() };
    match select_location(&liver, &liver, &shape, &params) {
        Err(Error::PlacementExhausted { attempts }) => assert_eq!(attempts, 37),
        other => panic!("expected exhaustion, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn successful_placements_meet_containment_and_clearance(
        seed in any::<u64>(),
        containment in prop::sample::select(vec![0.8, 0.95, 1.0]),
        r in 2.0f64..6.0,
        margin in 0usize..3,
    ) {
        let (liver, vessels) = slab_phantom();
        let shape = make_ellipsoid(&EllipsoidSpec::sphere(r).unwrap(), [1.0; 3]).unwrap();
        let params = PlacementParams { seed, containment, vessel_safety_margin_voxels: margin, ..Default::default() };
        let forbidden = if margin > 0 { dilate(&vessels, margin).unwrap() } else { vessels.clone() };
        if let Ok(p) = select_location(&liver, &vessels, &shape, &params) {
            let idx = placed_indices(&shape, p.offset, liver.dims());
            let inside = idx.iter().filter(|&&i| liver.contains(i)).count();
            prop_assert!(inside as f64 >= containment * idx.len() as f64 - 1e-9);
            prop_assert!(idx.iter().all(|&i| !forbidden.contains(i)));
            let again = select_location(&liver, &vessels, &shape, &params).unwrap();
            prop_assert_eq!(p, again);
        }
    }

    #[test]
    fn vessels_stay_inside_the_liver_and_shrink_with_k(seed in 0u64..1000, k in 0.5f64..3.0) {
        let (v, liver) = liver_phantom(&PhantomSpec { dims: [32, 32, 24], seed, ..Default::default() }).unwrap();
        let lo = VesselParams { k_sigma: k, min_component_voxels: 0, ..Default::default() };
        let hi = VesselParams { k_sigma: k + 0.5, ..lo.clone() };
        let a = segment_vessels(&v, &liver, &lo).unwrap();
        let b = segment_vessels(&v, &liver, &hi).unwrap();
        prop_assert!(a.is_subset_of(&liver));
        prop_assert!(b.is_subset_of(&a));
    }
}

#[test]
fn tube_phantom_vessels_are_recovered() {
    // parenchyma 90 ± 5 HU with a +200 HU tube along x
    let d = [40, 40, 40];
    let liver = BinaryMask::from_fn(d, [1.0; 3], |x, y, z| {
        [x, y, z].iter().map(|&c| (c as f64 - 19.5).powi(2)).sum::<f64>() <= 17.0 * 17.0
    })
    .unwrap();
    let tube = |y: usize, z: usize| (y as f64 - 19.5).powi(2) + (z as f64 - 19.5).powi(2) <= 2.5 * 2.5;
    let mut state = 0x2545F4914F6CDD1Du64;
    let mut noise = || {
        // xorshift, mapped to a uniform in [-5, 5]
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 10_001) as f32 / 1000.0 - 5.0
    };
    let grid = VoxelGrid::from_fn(d, [1.0; 3], |x, y, z| {
        let base = if liver.at(x, y, z) && tube(y, z) { 290.0 } else { 90.0 };
        base + noise()
    })
    .unwrap();
    let vol = CtVolume::new(grid);
    let found = segment_vessels(&vol, &liver, &VesselParams::default()).unwrap();
    let truth = BinaryMask::from_fn(d, [1.0; 3], |x, y, z| liver.at(x, y, z) && tube(y, z)).unwrap();
    let hit = found.intersection(&truth).unwrap().count();
    assert!(hit as f64 >= 0.9 * truth.count() as f64);
    assert!(found.is_subset_of(&truth));
    let absolute = VesselParams { mode: ThresholdMode::Absolute, absolute_hu: 1000.0, ..Default::default() };
    assert!(segment_vessels(&vol, &liver, &absolute).unwrap().none());
}
