//! Voxel-hash spatial index over the moving cloud.
//!
//! The domain is cut into voxels of edge h (the interaction radius), so all
//! neighbors of a particle within the closed ball of radius h lie in its own
//! voxel or the 3^dims - 1 adjacent ones. The cloud moves every step, so the
//! index is rebuilt every step.
//!
//! Voxel assignment is a pure parallel map; the cell fill is a serial
//! counting sort in ascending particle order, which makes the index
//! deterministic regardless of worker count.

use crate::error::{Error, Result};
use crate::phase_space::ParticleCloud;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct VoxelIndex {
    cell_size: f64,
    dims: usize,
    /// Per-axis voxel counts; unused axes hold 1.
    grid_dims: [usize; 3],
    cell_offsets: Vec<u32>,
    /// Particle indices grouped by cell, ascending within each cell.
    cell_entries: Vec<u32>,
    particle_voxel: Vec<u32>,
}

impl VoxelIndex {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid_dims
    }

    pub fn voxel_of(&self, i: usize) -> u32 {
        self.particle_voxel[i]
    }

    pub fn cell(&self, c: usize) -> &[u32] {
        let lo = self.cell_offsets[c] as usize;
        let hi = self.cell_offsets[c + 1] as usize;
        &self.cell_entries[lo..hi]
    }

    fn coords_of_cell(&self, c: u32) -> [usize; 3] {
        let gz = self.grid_dims[2];
        let gy = self.grid_dims[1];
        let c = c as usize;
        [c / (gy * gz), (c / gz) % gy, c % gz]
    }

    fn cell_of_coords(&self, c: [usize; 3]) -> usize {
        (c[0] * self.grid_dims[1] + c[1]) * self.grid_dims[2] + c[2]
    }
}

fn voxel_coords(
    position: &[f64; 3],
    length: f64,
    cell_size: f64,
    grid_dims: [usize; 3],
    dims: usize,
) -> Option<[usize; 3]> {
    let mut out = [0usize; 3];
    for axis in 0..dims {
        let x = position[axis];
        if !(0.0..=length).contains(&x) {
            return None;
        }
        let c = (x / cell_size) as usize;
        out[axis] = c.min(grid_dims[axis] - 1);
    }
    Some(out)
}

/// Build the voxel index for the current cloud positions.
///
/// Voxel edge equals h and voxel counts are max(1, floor(L/h)); positions in
/// the sliver beyond the last voxel boundary are clamped into the last
/// voxel, which keeps the adjacent-cell sweep sufficient.
pub fn build_voxel_index(cloud: &ParticleCloud) -> Result<VoxelIndex> {
    let cell_size = cloud.h;
    let mut grid_dims = [1usize; 3];
    for g in grid_dims.iter_mut().take(cloud.dims) {
        *g = ((cloud.length / cell_size) as usize).max(1);
    }
    let n_cells = grid_dims[0] * grid_dims[1] * grid_dims[2];

    let coords: Vec<Option<[usize; 3]>> = cloud
        .positions
        .par_iter()
        .map(|p| voxel_coords(p, cloud.length, cell_size, grid_dims, cloud.dims))
        .collect();
    if let Some(bad) = coords.iter().position(|c| c.is_none()) {
        return Err(Error::OutOfDomain {
            particle: bad,
            position: cloud.positions[bad],
        });
    }

    let flat = |c: [usize; 3]| (c[0] * grid_dims[1] + c[1]) * grid_dims[2] + c[2];
    let particle_voxel: Vec<u32> = coords.iter().map(|c| flat(c.unwrap()) as u32).collect();

    let mut counts = vec![0u32; n_cells + 1];
    for &v in &particle_voxel {
        counts[v as usize + 1] += 1;
    }
    for c in 1..counts.len() {
        counts[c] += counts[c - 1];
    }
    let cell_offsets = counts.clone();
    let mut cursor: Vec<u32> = cell_offsets[..n_cells].to_vec();
    let mut cell_entries = vec![0u32; cloud.len()];
    for (i, &v) in particle_voxel.iter().enumerate() {
        cell_entries[cursor[v as usize] as usize] = i as u32;
        cursor[v as usize] += 1;
    }

    Ok(VoxelIndex {
        cell_size,
        dims: cloud.dims,
        grid_dims,
        cell_offsets,
        cell_entries,
        particle_voxel,
    })
}

fn collect_candidates(
    idx: &VoxelIndex,
    cloud: &ParticleCloud,
    center: &[f64; 3],
    home: [usize; 3],
    skip: Option<usize>,
    out: &mut Vec<u32>,
) {
    let h_sq = cloud.h * cloud.h;
    let dims = idx.dims;
    let lo = |c: usize| c.saturating_sub(1);
    let hi = |c: usize, g: usize| (c + 1).min(g - 1);
    let (x0, x1) = (lo(home[0]), hi(home[0], idx.grid_dims[0]));
    let (y0, y1) = (lo(home[1]), hi(home[1], idx.grid_dims[1]));
    let (z0, z1) = if dims == 3 {
        (lo(home[2]), hi(home[2], idx.grid_dims[2]))
    } else {
        (0, 0)
    };
    for cx in x0..=x1 {
        for cy in y0..=y1 {
            for cz in z0..=z1 {
                for &j in idx.cell(idx.cell_of_coords([cx, cy, cz])) {
                    if Some(j as usize) == skip {
                        continue;
                    }
                    let q = &cloud.positions[j as usize];
                    let mut d = 0.0;
                    for a in 0..dims {
                        let t = q[a] - center[a];
                        d += t * t;
                    }
                    if d <= h_sq {
                        out.push(j);
                    }
                }
            }
        }
    }
    out.sort_unstable();
}

/// All particles within the closed ball of radius h around particle `i`,
/// excluding `i` itself, in ascending index order.
pub fn query_neighbors(idx: &VoxelIndex, cloud: &ParticleCloud, i: usize) -> Vec<u32> {
    let mut out = Vec::new();
    query_neighbors_into(idx, cloud, i, &mut out);
    out
}

pub fn query_neighbors_into(
    idx: &VoxelIndex,
    cloud: &ParticleCloud,
    i: usize,
    out: &mut Vec<u32>,
) {
    out.clear();
    let home = idx.coords_of_cell(idx.particle_voxel[i]);
    collect_candidates(idx, cloud, &cloud.positions[i], home, Some(i), out);
}

/// Per-particle neighbor lists in compressed sparse rows; rebuilt from the
/// voxel index every step.
#[derive(Debug, Clone, Default)]
pub struct NeighborLists {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl NeighborLists {
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn n_particles(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total_entries(&self) -> usize {
        self.indices.len()
    }
}

/// Query every particle's neighbors in parallel and flatten the result.
pub fn build_neighbor_lists(
    idx: &VoxelIndex,
    cloud: &ParticleCloud,
    backend: &crate::parallel_backend::Backend,
) -> NeighborLists {
    let per_particle: Vec<Vec<u32>> =
        backend.map_collect(cloud.len(), |i| query_neighbors(idx, cloud, i));
    let mut offsets = Vec::with_capacity(cloud.len() + 1);
    offsets.push(0);
    let mut total = 0;
    for list in &per_particle {
        total += list.len();
        offsets.push(total);
    }
    let mut indices = Vec::with_capacity(total);
    for list in &per_particle {
        indices.extend_from_slice(list);
    }
    NeighborLists { offsets, indices }
}

/// All particles within the closed ball of radius h around an arbitrary
/// position (used when probing candidate insertion sites).
pub fn query_neighbors_at(idx: &VoxelIndex, cloud: &ParticleCloud, position: &[f64; 3]) -> Vec<u32> {
    let mut out = Vec::new();
    let home = match voxel_coords(
        position,
        cloud.length,
        idx.cell_size,
        idx.grid_dims,
        idx.dims,
    ) {
        Some(c) => c,
        None => return out,
    };
    collect_candidates(idx, cloud, position, home, None, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{seed_cavity_cloud, MacroState, ParticleKind};
    use proptest::prelude::*;

    fn cloud_from_positions(positions: Vec<[f64; 3]>, length: f64, dims: usize, h: f64) -> ParticleCloud {
        let n = positions.len();
        ParticleCloud {
            dims,
            length,
            dx: h / crate::phase_space::H_FACTOR,
            h,
            positions,
            kinds: vec![ParticleKind::Interior; n],
            wall_ids: vec![None; n],
            macro_states: vec![MacroState::from_primitive(1.0, [0.0; 3], 1.0, 1.0); n],
        }
    }

    fn brute_force(cloud: &ParticleCloud, i: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for j in 0..cloud.len() {
            if j == i {
                continue;
            }
            let mut d = 0.0;
            for a in 0..cloud.dims {
                let t = cloud.positions[j][a] - cloud.positions[i][a];
                d += t * t;
            }
            if d <= cloud.h * cloud.h {
                out.push(j as u32);
            }
        }
        out
    }

    #[test]
    fn voxel_arithmetic() {
        let cloud = cloud_from_positions(vec![[0.1, 0.1, 0.0]], 1.0, 2, 0.34);
        let idx = build_voxel_index(&cloud).unwrap();
        assert_eq!(idx.grid_dims(), [2, 2, 1]);
        assert_eq!(idx.voxel_of(0), 0);
    }

    #[test]
    fn single_particle_has_no_neighbors() {
        let cloud = cloud_from_positions(vec![[0.5, 0.5, 0.0]], 1.0, 2, 0.3);
        let idx = build_voxel_index(&cloud).unwrap();
        assert!(query_neighbors(&idx, &cloud, 0).is_empty());
    }

    #[test]
    fn closed_ball_convention() {
        let h = 0.25;
        let cloud = cloud_from_positions(vec![[0.1, 0.5, 0.0], [0.1 + h, 0.5, 0.0]], 1.0, 2, h);
        let idx = build_voxel_index(&cloud).unwrap();
        assert_eq!(query_neighbors(&idx, &cloud, 0), vec![1]);
        assert_eq!(query_neighbors(&idx, &cloud, 1), vec![0]);

        let far = cloud_from_positions(
            vec![[0.1, 0.5, 0.0], [0.1 + h * (1.0 + 1e-9), 0.5, 0.0]],
            1.0,
            2,
            h,
        );
        let idx = build_voxel_index(&far).unwrap();
        assert!(query_neighbors(&idx, &far, 0).is_empty());
    }

    #[test]
    fn lattice_interior_candidate_count() {
        // On the regular lattice with h = 3.1 dx every interior particle has
        // at least the 28 two-dimensional stencil partners; cross-checked
        // against the O(N^2) oracle.
        let cloud = seed_cavity_cloud(1.0, 10, 2).unwrap();
        let idx = build_voxel_index(&cloud).unwrap();
        for i in 0..cloud.len() {
            let fast = query_neighbors(&idx, &cloud, i);
            assert_eq!(fast, brute_force(&cloud, i));
            let interior = !cloud.is_boundary(i);
            let deep = (0..2).all(|a| {
                let x = cloud.positions[i][a];
                x >= 3.0 * cloud.dx - 1e-12 && x <= 1.0 - 3.0 * cloud.dx + 1e-12
            });
            if interior && deep {
                assert!(fast.len() >= 28, "got {}", fast.len());
            }
        }
    }

    #[test]
    fn out_of_domain_detected() {
        let cloud = cloud_from_positions(vec![[0.5, 1.5, 0.0]], 1.0, 2, 0.3);
        match build_voxel_index(&cloud) {
            Err(Error::OutOfDomain { particle, .. }) => assert_eq!(particle, 0),
            other => panic!("expected OutOfDomain, got {other:?}"),
        }
    }

    #[test]
    fn rebuild_is_idempotent() {
        let cloud = seed_cavity_cloud(1.0, 7, 3).unwrap();
        let a = build_voxel_index(&cloud).unwrap();
        let b = build_voxel_index(&cloud).unwrap();
        assert_eq!(a.cell_offsets, b.cell_offsets);
        assert_eq!(a.cell_entries, b.cell_entries);
        assert_eq!(a.particle_voxel, b.particle_voxel);
    }

    #[test]
    fn query_at_position_matches_brute_force() {
        let cloud = seed_cavity_cloud(1.0, 9, 2).unwrap();
        let idx = build_voxel_index(&cloud).unwrap();
        let probe = [0.43, 0.61, 0.0];
        let mut expect = Vec::new();
        for j in 0..cloud.len() {
            let d: f64 = (0..2)
                .map(|a| (cloud.positions[j][a] - probe[a]).powi(2))
                .sum();
            if d <= cloud.h * cloud.h {
                expect.push(j as u32);
            }
        }
        assert_eq!(query_neighbors_at(&idx, &cloud, &probe), expect);
    }

    proptest! {
        #[test]
        fn equivalence_with_brute_force(
            seed in 0u64..500,
            n in 2usize..160,
            dims in 2usize..4,
        ) {
            let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(13);
            let mut next = || {
                state ^= state >> 30;
                state = state.wrapping_mul(0xbf58476d1ce4e5b9);
                state ^= state >> 27;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let positions: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for a in p.iter_mut().take(dims) {
                        *a = next();
                    }
                    p
                })
                .collect();
            let cloud = cloud_from_positions(positions, 1.0, dims, 0.21);
            let idx = build_voxel_index(&cloud).unwrap();
            for i in 0..n {
                prop_assert_eq!(query_neighbors(&idx, &cloud, i), brute_force(&cloud, i));
            }
            // symmetry
            for i in 0..n.min(30) {
                for j in query_neighbors(&idx, &cloud, i) {
                    let back = query_neighbors(&idx, &cloud, j as usize);
                    prop_assert!(back.contains(&(i as u32)));
                }
            }
        }
    }
}
