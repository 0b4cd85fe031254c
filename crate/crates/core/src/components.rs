//! Connected-component labelling of binary masks.

use serde::{Deserialize, Serialize};

use crate::grid::{BinaryMask, BoundingBox, VoxelGrid};

/// Voxel adjacency used for component labelling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// One connected component: the sorted linear indices of its voxels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub indices: Vec<usize>,
}

impl Component {
    pub fn voxel_count(&self) -> usize {
        self.indices.len()
    }

    /// Renders the component as a mask with the geometry of `like`.
    pub fn to_mask<T: Copy>(&self, like: &VoxelGrid<T>) -> BinaryMask {
        BinaryMask::from_indices(like, self.indices.iter().copied())
    }

    pub fn bounding_box<T: Copy>(&self, like: &VoxelGrid<T>) -> BoundingBox {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for &i in &self.indices {
            let c = like.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a] + 1);
            }
        }
        BoundingBox { lo, hi }
    }
}

/// Labels the foreground of `mask` into disjoint components.
///
/// Components are ordered by their minimum linear voxel index.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let grid = mask.grid();
    let dims = grid.dims();
    let offsets = connectivity.offsets();
    let mut visited = vec![false; grid.len()];
    let mut stack = Vec::new();
    let mut out = Vec::new();

    for seed in mask.foreground() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        stack.push(seed);
        let mut indices = Vec::new();
        while let Some(i) = stack.pop() {
            indices.push(i);
            let c = grid.coords(i);
            for o in &offsets {
                let x = c[0] as isize + o[0];
                let y = c[1] as isize + o[1];
                let z = c[2] as isize + o[2];
                if x < 0 || y < 0 || z < 0 {
                    continue;
                }
                let (x, y, z) = (x as usize, y as usize, z as usize);
                if x >= dims[0] || y >= dims[1] || z >= dims[2] {
                    continue;
                }
                let j = grid.index(x, y, z);
                if !visited[j] && mask.contains(j) {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        indices.sort_unstable();
        out.push(Component { indices });
    }
    out
}

/// Drops components with fewer than `min_voxels` voxels.
pub fn remove_small_components(mask: &BinaryMask, min_voxels: usize, connectivity: Connectivity) -> BinaryMask {
    if min_voxels <= 1 {
        return mask.clone();
    }
    let kept = connected_components(mask, connectivity)
        .into_iter()
        .filter(|c| c.voxel_count() >= min_voxels)
        .flat_map(|c| c.indices);
    BinaryMask::from_indices(mask.grid(), kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_mask_has_no_components() {
        let m = BinaryMask::empty([8, 8, 8], [1.0; 3]).unwrap();
        assert!(connected_components(&m, Connectivity::TwentySix).is_empty());
    }

    #[test]
    fn solid_block_is_one_component() {
        let m = BinaryMask::from_fn([8, 8, 8], [1.0; 3], |x, y, z| {
            (3..5).contains(&x) && (3..5).contains(&y) && (3..5).contains(&z)
        })
        .unwrap();
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.len(), 1);
        assert_eq!(cc[0].voxel_count(), 8);
    }

    #[test]
    fn diagonal_voxels_depend_on_connectivity() {
        let mut m = BinaryMask::empty([4, 4, 4], [1.0; 3]).unwrap();
        m.set(1, 1, 1, true);
        m.set(2, 2, 2, true);
        assert_eq!(connected_components(&m, Connectivity::Six).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).len(), 1);
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
    }

    #[test]
    fn ordering_follows_minimum_index() {
        let mut m = BinaryMask::empty([6, 6, 6], [1.0; 3]).unwrap();
        m.set(5, 5, 5, true);
        m.set(0, 0, 0, true);
        m.set(3, 0, 0, true);
        let cc = connected_components(&m, Connectivity::TwentySix);
        let firsts: Vec<usize> = cc.iter().map(|c| c.indices[0]).collect();
        assert_eq!(firsts, vec![0, 3, 215]);
    }

    #[test]
    fn small_components_are_removed() {
        let mut m = BinaryMask::from_fn([10, 10, 10], [1.0; 3], |x, y, z| x < 3 && y < 3 && z < 3).unwrap();
        m.set(8, 8, 8, true);
        let cleaned = remove_small_components(&m, 5, Connectivity::TwentySix);
        assert_eq!(cleaned.count(), 27);
        assert!(!cleaned.at(8, 8, 8));
    }

    /// Label propagation by repeated relaxation, independent of the stack walk.
    fn relaxation_labels(m: &BinaryMask, conn: Connectivity) -> Vec<usize> {
        let g = m.grid();
        let dims = g.dims();
        let mut label: Vec<usize> = (0..g.len()).map(|i| if m.contains(i) { i } else { usize::MAX }).collect();
        loop {
            let mut changed = false;
            for i in 0..g.len() {
                if label[i] == usize::MAX {
                    continue;
                }
                let c = g.coords(i);
                for o in conn.offsets() {
                    let p = [c[0] as isize + o[0], c[1] as isize + o[1], c[2] as isize + o[2]];
                    if (0..3).any(|a| p[a] < 0 || p[a] >= dims[a] as isize) {
                        continue;
                    }
                    let j = g.index(p[0] as usize, p[1] as usize, p[2] as usize);
                    if label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                return label;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn components_match_relaxation_oracle(bits in proptest::collection::vec(prop::bool::weighted(0.3), 16 * 16 * 16), six in any::<bool>()) {
            let like = VoxelGrid::filled([16; 3], [1.0; 3], 0u8).unwrap();
            let m = BinaryMask::from_indices(&like, bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i));
            let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
            let cc = connected_components(&m, conn);
            let total: usize = cc.iter().map(|c| c.voxel_count()).sum();
            prop_assert_eq!(total, m.count());

            let labels = relaxation_labels(&m, conn);
            for c in &cc {
                // Every voxel of a component shares the oracle label, which is its minimum index.
                for &i in &c.indices {
                    prop_assert_eq!(labels[i], c.indices[0]);
                }
            }
            let mut roots: Vec<usize> = labels.iter().copied().filter(|&l| l != usize::MAX).collect();
            roots.sort_unstable();
            roots.dedup();
            prop_assert_eq!(roots.len(), cc.len());
        }
    }
}
