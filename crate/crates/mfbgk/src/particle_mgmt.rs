//! Keeps the moving cloud well-conditioned: merges clustered particle pairs
//! into their midpoint and fills holes next to neighbor-starved particles,
//! re-initializing distributions by least-squares interpolation.
//!
//! Management mutates cloud topology and therefore runs as a serial phase;
//! merges and insertions are rare in the cavity runs. Both passes scan in
//! ascending particle index, so the outcome is deterministic. Boundary
//! particles are never merged, moved or removed.

use crate::error::{Error, Result};
use crate::gfdm::{build_interpolation, InterpolationOperator};
use crate::kinetic_core::moments_of;
use crate::neighbor_search::{query_neighbors_at, NeighborLists, VoxelIndex};
use crate::phase_space::{MacroState, ParticleKind, ParticleSystem, VelocityGrid};

/// Default merge radius as a fraction of the nominal spacing.
pub const R_MERGE_FACTOR: f64 = 0.2;

/// Minimum clearance of an inserted particle from existing ones, as a
/// fraction of the nominal spacing.
pub const FILL_CLEARANCE_FACTOR: f64 = 0.45;

/// Candidate offsets for hole filling sit at +-0.5 h along each axis.
pub const FILL_OFFSET_FACTOR: f64 = 0.5;

/// Default neighbor-count target, one above the deficiency bound dims + 2.
pub fn default_m_min(dims: usize) -> usize {
    dims + 3
}

#[derive(Debug, Clone, Default)]
pub struct MergeOutcome {
    /// Pairs replaced by a midpoint particle.
    pub merged_pairs: Vec<(u32, u32)>,
    /// Pairs kept because interpolation or moment recovery failed.
    pub failed_pairs: Vec<(u32, u32)>,
    /// Largest |rho_new - mean(rho_i, rho_j)| / mean over the merges, the
    /// monitored mass-locality defect.
    pub max_density_defect: f64,
}

impl MergeOutcome {
    pub fn changed(&self) -> bool {
        !self.merged_pairs.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FillOutcome {
    pub inserted: Vec<[f64; 3]>,
    /// Candidates rejected by the clearance rule (not an error).
    pub rejected_candidates: usize,
    /// Candidates skipped because interpolation was deficient.
    pub deficient_candidates: usize,
}

impl FillOutcome {
    pub fn changed(&self) -> bool {
        !self.inserted.is_empty()
    }
}

struct NewParticle {
    position: [f64; 3],
    rows: Vec<Vec<f64>>,
    state: MacroState,
}

/// Interpolate every distribution row of the system at `interp`'s target.
fn interpolate_rows(interp: &InterpolationOperator, system: &ParticleSystem) -> Vec<Vec<f64>> {
    system
        .stores
        .iter()
        .map(|store| {
            let mut row = vec![0.0; store.n_nodes()];
            for (&j, &c) in interp.neighbor_ids.iter().zip(&interp.coeffs) {
                for (o, s) in row.iter_mut().zip(store.row(j as usize)) {
                    *o += c * s;
                }
            }
            row
        })
        .collect()
}

fn try_new_particle(
    target: [f64; 3],
    candidates: &[u32],
    system: &ParticleSystem,
    grid: &VelocityGrid,
    r_specific: f64,
    tag: usize,
) -> Result<NewParticle> {
    let cloud = &system.cloud;
    let interp = build_interpolation(
        target,
        &cloud.positions,
        cloud.dims,
        cloud.h,
        candidates,
        tag,
    )?;
    let rows = interpolate_rows(&interp, system);
    let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    // single source of truth: the macroscopic state comes from the moments
    // of the interpolated distribution
    let state = moments_of(&row_refs, grid, r_specific)?;
    Ok(NewParticle {
        position: target,
        rows,
        state,
    })
}

fn apply_changes(system: &mut ParticleSystem, keep: &[bool], additions: Vec<NewParticle>) {
    let cloud = &mut system.cloud;
    let mut write = 0;
    for i in 0..keep.len() {
        if keep[i] {
            if write != i {
                cloud.positions[write] = cloud.positions[i];
                cloud.kinds[write] = cloud.kinds[i];
                cloud.wall_ids[write] = cloud.wall_ids[i];
                cloud.macro_states[write] = cloud.macro_states[i];
            }
            write += 1;
        }
    }
    cloud.positions.truncate(write);
    cloud.kinds.truncate(write);
    cloud.wall_ids.truncate(write);
    cloud.macro_states.truncate(write);
    for store in system.stores.iter_mut().chain(system.tilde.iter_mut()) {
        store.retain_rows(keep);
    }

    let zero_row: Vec<Vec<f64>> = system
        .tilde
        .iter()
        .map(|s| vec![0.0; s.n_nodes()])
        .collect();
    for p in additions {
        let cloud = &mut system.cloud;
        cloud.positions.push(p.position);
        cloud.kinds.push(ParticleKind::Interior);
        cloud.wall_ids.push(None);
        cloud.macro_states.push(p.state);
        for (store, row) in system.stores.iter_mut().zip(&p.rows) {
            store.push_row(row);
        }
        for (store, row) in system.tilde.iter_mut().zip(&zero_row) {
            store.push_row(row);
        }
    }
}

/// Greedy ascending-index pass that replaces interior pairs closer than
/// `r_merge` by one particle at the midpoint. The new distribution is
/// interpolated over the union of the pair's neighbor lists (which contains
/// the pair itself); an interpolation or moment failure keeps the pair.
pub fn merge_close_pairs(
    system: &mut ParticleSystem,
    lists: &NeighborLists,
    grid: &VelocityGrid,
    r_specific: f64,
    r_merge: f64,
) -> MergeOutcome {
    let n = system.len();
    let dims = system.cloud.dims;
    let mut processed = vec![false; n];
    let mut keep = vec![true; n];
    let mut additions = Vec::new();
    let mut outcome = MergeOutcome::default();

    for i in 0..n {
        if processed[i] || system.cloud.kinds[i] != ParticleKind::Interior {
            continue;
        }
        let pi = system.cloud.positions[i];
        for &j_u in lists.neighbors(i) {
            let j = j_u as usize;
            if j <= i || processed[j] || system.cloud.kinds[j] != ParticleKind::Interior {
                continue;
            }
            let pj = system.cloud.positions[j];
            let dist_sq: f64 = (0..dims).map(|a| (pj[a] - pi[a]).powi(2)).sum();
            if dist_sq >= r_merge * r_merge {
                continue;
            }
            let mut midpoint = [0.0; 3];
            for a in 0..dims {
                midpoint[a] = 0.5 * (pi[a] + pj[a]);
            }
            let mut union: Vec<u32> = lists
                .neighbors(i)
                .iter()
                .chain(lists.neighbors(j))
                .copied()
                .collect();
            union.sort_unstable();
            union.dedup();
            match try_new_particle(midpoint, &union, system, grid, r_specific, i) {
                Ok(p) => {
                    let mean = 0.5 * (system.cloud.macro_states[i].rho
                        + system.cloud.macro_states[j].rho);
                    let defect = (p.state.rho - mean).abs() / mean;
                    outcome.max_density_defect = outcome.max_density_defect.max(defect);
                    additions.push(p);
                    processed[i] = true;
                    processed[j] = true;
                    keep[i] = false;
                    keep[j] = false;
                    outcome.merged_pairs.push((i as u32, j_u));
                    break;
                }
                Err(_) => {
                    outcome.failed_pairs.push((i as u32, j_u));
                }
            }
        }
    }

    if !additions.is_empty() {
        apply_changes(system, &keep, additions);
    }
    outcome
}

/// Insert particles next to interior particles with fewer than `m_min`
/// neighbors. Candidates sit at +-0.5 h along each axis; a candidate is
/// accepted when it lies strictly inside the domain, clears every existing
/// and pending particle by more than 0.45 dx, and supports interpolation.
pub fn fill_holes(
    system: &mut ParticleSystem,
    voxel: &VoxelIndex,
    lists: &NeighborLists,
    grid: &VelocityGrid,
    r_specific: f64,
    m_min: usize,
) -> Result<FillOutcome> {
    let n = system.len();
    let dims = system.cloud.dims;
    let clearance = FILL_CLEARANCE_FACTOR * system.cloud.dx;
    let offset = FILL_OFFSET_FACTOR * system.cloud.h;
    let length = system.cloud.length;
    let mut additions: Vec<NewParticle> = Vec::new();
    let mut outcome = FillOutcome::default();

    for i in 0..n {
        if system.cloud.kinds[i] != ParticleKind::Interior || lists.count(i) >= m_min {
            continue;
        }
        let pi = system.cloud.positions[i];
        for axis in 0..dims {
            for sign in [-1.0, 1.0] {
                let mut cand = pi;
                cand[axis] += sign * offset;
                if !(0.0..length).contains(&cand[axis]) || cand[axis] == 0.0 {
                    continue;
                }
                let near = query_neighbors_at(voxel, &system.cloud, &cand);
                let clear_existing = near.iter().all(|&j| {
                    let q = system.cloud.positions[j as usize];
                    let d_sq: f64 = (0..dims).map(|a| (q[a] - cand[a]).powi(2)).sum();
                    d_sq > clearance * clearance
                });
                let clear_pending = additions.iter().all(|p| {
                    let d_sq: f64 = (0..dims).map(|a| (p.position[a] - cand[a]).powi(2)).sum();
                    d_sq > clearance * clearance
                });
                if !clear_existing || !clear_pending {
                    outcome.rejected_candidates += 1;
                    continue;
                }
                match try_new_particle(cand, &near, system, grid, r_specific, i) {
                    Ok(p) => additions.push(p),
                    Err(Error::DeficientStencil { .. }) | Err(Error::DegenerateState(_)) => {
                        outcome.deficient_candidates += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    outcome.inserted = additions.iter().map(|p| p.position).collect();
    if !additions.is_empty() {
        let keep = vec![true; n];
        apply_changes(system, &keep, additions);
    }
    Ok(outcome)
}
