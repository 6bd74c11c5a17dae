//! Discrete velocity grid, particle records, particle cloud and gas constants.
//!
//! Particle storage is a structure-of-arrays: positions, kinds, macroscopic
//! states and distribution values live in separate contiguous blocks so the
//! phase-space sweep stays cache-friendly. A "particle" is a moving grid
//! point; boundary particles never move.

use crate::error::{Error, Result};

/// Ratio of interaction radius to nominal spacing, h = 3.1 dx.
pub const H_FACTOR: f64 = 3.1;

/// Material constants of the simulated gas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasProperties {
    /// Molecular diameter in meters.
    pub diameter: f64,
    /// Boltzmann constant in J/K.
    pub k_boltzmann: f64,
    /// Specific gas constant in J/(kg K).
    pub r_specific: f64,
}

impl GasProperties {
    pub fn new(diameter: f64, k_boltzmann: f64, r_specific: f64) -> Result<Self> {
        if diameter <= 0.0 || k_boltzmann <= 0.0 || r_specific <= 0.0 {
            return Err(Error::InvalidParam(
                "gas properties must be strictly positive".into(),
            ));
        }
        Ok(Self {
            diameter,
            k_boltzmann,
            r_specific,
        })
    }

    /// Argon, the working gas of the driven-cavity benchmarks.
    pub fn argon() -> Self {
        Self {
            diameter: 0.368e-9,
            k_boltzmann: 1.3806e-23,
            r_specific: 208.0,
        }
    }
}

/// Uniform tensor grid of discrete microscopic velocities.
///
/// Per axis the nodes are `v_j = -v_max + j * dv` for `j = 0..=n_v` with
/// `dv = 2 v_max / n_v`. Nodes are stored with exact mirror symmetry about 0
/// (requires even `n_v`), so `sum(nodes) == 0` holds bitwise.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    dims: usize,
    v_max: f64,
    n_v: usize,
    dv: f64,
    axis_nodes: Vec<f64>,
    node_velocities: Vec<[f64; 3]>,
}

impl VelocityGrid {
    pub fn new(dims: usize, v_max: f64, n_v: usize) -> Result<Self> {
        if dims != 2 && dims != 3 {
            return Err(Error::InvalidParam(format!(
                "velocity grid dims must be 2 or 3, got {dims}"
            )));
        }
        if v_max <= 0.0 || !v_max.is_finite() {
            return Err(Error::InvalidParam(format!(
                "v_max must be positive and finite, got {v_max}"
            )));
        }
        if n_v < 2 || n_v % 2 != 0 {
            return Err(Error::InvalidParam(format!(
                "n_v must be an even integer >= 2, got {n_v}"
            )));
        }
        let dv = 2.0 * v_max / n_v as f64;
        let mut axis_nodes = vec![0.0; n_v + 1];
        for j in 0..n_v / 2 {
            let v = -v_max + j as f64 * dv;
            axis_nodes[j] = v;
            axis_nodes[n_v - j] = -v;
        }
        axis_nodes[n_v / 2] = 0.0;

        let per_axis = n_v + 1;
        let mut node_velocities = Vec::with_capacity(per_axis.pow(dims as u32));
        if dims == 2 {
            for &vx in &axis_nodes {
                for &vy in &axis_nodes {
                    node_velocities.push([vx, vy, 0.0]);
                }
            }
        } else {
            for &vx in &axis_nodes {
                for &vy in &axis_nodes {
                    for &vz in &axis_nodes {
                        node_velocities.push([vx, vy, vz]);
                    }
                }
            }
        }

        Ok(Self {
            dims,
            v_max,
            n_v,
            dv,
            axis_nodes,
            node_velocities,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    /// Grid spacing dv = 2 v_max / n_v.
    pub fn dv(&self) -> f64 {
        self.dv
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n_v + 1
    }

    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis_nodes
    }

    /// Total node count (n_v + 1)^dims.
    pub fn total_nodes(&self) -> usize {
        self.node_velocities.len()
    }

    /// Flattened node velocities, x-major; the z component is 0 in 2D.
    pub fn velocities(&self) -> &[[f64; 3]] {
        &self.node_velocities
    }

    /// Quadrature cell volume dv^dims.
    pub fn cell_volume(&self) -> f64 {
        self.dv.powi(self.dims as i32)
    }

    /// The 2^dims corner velocities of the box [-v_max, v_max]^dims.
    ///
    /// The dissipation-coefficient sum of the upwind scheme is convex in the
    /// convective velocity, so its maximum over all grid nodes is attained at
    /// one of these corners; the stability bound only needs them.
    pub fn corner_velocities(&self) -> Vec<[f64; 3]> {
        let v = self.v_max;
        if self.dims == 2 {
            vec![[v, v, 0.0], [v, -v, 0.0], [-v, v, 0.0], [-v, -v, 0.0]]
        } else {
            let mut out = Vec::with_capacity(8);
            for &sx in &[v, -v] {
                for &sy in &[v, -v] {
                    for &sz in &[v, -v] {
                        out.push([sx, sy, sz]);
                    }
                }
            }
            out
        }
    }
}

/// Macroscopic state (density, mean velocity, temperature, total energy
/// density) at one particle. The internal energy closure is e = 3/2 R T in
/// both the full and the Chu-reduced setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroState {
    /// Density in kg/m^3.
    pub rho: f64,
    /// Mean velocity in m/s; unused trailing components are 0.
    pub u: [f64; 3],
    /// Temperature in kelvin.
    pub temp: f64,
    /// Total energy density in J/m^3.
    pub energy: f64,
}

impl MacroState {
    /// Build a state from primitive variables; the energy field is filled in
    /// from rho e = E - 1/2 rho |U|^2 with e = 3/2 R T.
    pub fn from_primitive(rho: f64, u: [f64; 3], temp: f64, r_specific: f64) -> Self {
        let speed_sq = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        let energy = rho * (1.5 * r_specific * temp) + 0.5 * rho * speed_sq;
        Self {
            rho,
            u,
            temp,
            energy,
        }
    }

    pub fn speed_sq(&self) -> f64 {
        self.u[0] * self.u[0] + self.u[1] * self.u[1] + self.u[2] * self.u[2]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidState(format!(
                "density must be positive, got {}",
                self.rho
            )));
        }
        if !(self.temp > 0.0) || !self.temp.is_finite() {
            return Err(Error::InvalidState(format!(
                "temperature must be positive, got {}",
                self.temp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleKind {
    Interior,
    Boundary,
}

/// Face index of an axis-aligned box wall: 2*axis for the coordinate-0 face,
/// 2*axis + 1 for the coordinate-L face. In 2D the lid (y = L) is wall 3, in
/// 3D the lid (z = L) is wall 5.
pub fn wall_inward_normal(wall_id: u8, dims: usize) -> [f64; 3] {
    let axis = (wall_id / 2) as usize;
    debug_assert!(axis < dims);
    let mut n = [0.0; 3];
    n[axis] = if wall_id % 2 == 0 { 1.0 } else { -1.0 };
    n
}

/// All box faces a position lies on (exact coordinate match with 0 or L).
pub fn faces_of(position: &[f64; 3], length: f64, dims: usize) -> Vec<u8> {
    let mut faces = Vec::new();
    for axis in 0..dims {
        if position[axis] == 0.0 {
            faces.push(2 * axis as u8);
        } else if position[axis] == length {
            faces.push(2 * axis as u8 + 1);
        }
    }
    faces
}

/// The full set of interior + boundary particles plus domain geometry,
/// stored as separate contiguous arrays.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    /// Spatial dimension (2 or 3).
    pub dims: usize,
    /// Domain edge length; the domain is the box [0, L]^dims.
    pub length: f64,
    /// Nominal initial spacing.
    pub dx: f64,
    /// Interaction radius, h = 3.1 dx by default.
    pub h: f64,
    pub positions: Vec<[f64; 3]>,
    pub kinds: Vec<ParticleKind>,
    pub wall_ids: Vec<Option<u8>>,
    pub macro_states: Vec<MacroState>,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.kinds[i] == ParticleKind::Boundary
    }

    pub fn boundary_count(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| **k == ParticleKind::Boundary)
            .count()
    }
}

/// Seed a regular lattice over the cavity [0, L]^dims with `n_per_axis`
/// points per axis. Lattice points on the box faces are tagged boundary; a
/// point on several faces (corner/edge) gets the lowest face index, which in
/// the standard cavity setup prefers stationary walls over the lid (the lid
/// is always the highest face index). Macroscopic states are placeholders
/// until the solver applies its initial condition.
pub fn seed_cavity_cloud(length: f64, n_per_axis: usize, dims: usize) -> Result<ParticleCloud> {
    if dims != 2 && dims != 3 {
        return Err(Error::InvalidParam(format!(
            "cloud dims must be 2 or 3, got {dims}"
        )));
    }
    if n_per_axis < 3 {
        return Err(Error::InvalidParam(format!(
            "n_per_axis must be >= 3, got {n_per_axis}"
        )));
    }
    if length <= 0.0 || !length.is_finite() {
        return Err(Error::InvalidParam(format!(
            "domain length must be positive, got {length}"
        )));
    }

    let n = n_per_axis;
    let count = n.pow(dims as u32);
    let denom = (n - 1) as f64;
    let dx = length / denom;
    // i/ (n-1) is exactly 0 and 1 at the faces, so face tests below are exact.
    let coord = |i: usize| length * (i as f64 / denom);

    let mut positions = Vec::with_capacity(count);
    if dims == 2 {
        for ix in 0..n {
            for iy in 0..n {
                positions.push([coord(ix), coord(iy), 0.0]);
            }
        }
    } else {
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    positions.push([coord(ix), coord(iy), coord(iz)]);
                }
            }
        }
    }

    let mut kinds = Vec::with_capacity(count);
    let mut wall_ids = Vec::with_capacity(count);
    for p in &positions {
        let faces = faces_of(p, length, dims);
        if faces.is_empty() {
            kinds.push(ParticleKind::Interior);
            wall_ids.push(None);
        } else {
            kinds.push(ParticleKind::Boundary);
            wall_ids.push(Some(faces[0]));
        }
    }

    let placeholder = MacroState::from_primitive(1.0, [0.0; 3], 1.0, 1.0);
    Ok(ParticleCloud {
        dims,
        length,
        dx,
        h: H_FACTOR * dx,
        positions,
        kinds,
        wall_ids,
        macro_states: vec![placeholder; count],
    })
}

/// Distribution values for every particle over every velocity node, one
/// contiguous row of `n_nodes` values per particle.
#[derive(Debug, Clone)]
pub struct DistributionStore {
    n_nodes: usize,
    data: Vec<f64>,
}

impl DistributionStore {
    pub fn new(n_particles: usize, n_nodes: usize) -> Self {
        Self {
            n_nodes,
            data: vec![0.0; n_particles * n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_particles(&self) -> usize {
        self.data.len() / self.n_nodes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_nodes, "distribution row length mismatch");
        self.data.extend_from_slice(row);
    }

    /// Drop the rows whose `keep` flag is false, preserving order.
    pub fn retain_rows(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.n_particles());
        let n = self.n_nodes;
        let mut write = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                if write != i {
                    self.data.copy_within(i * n..(i + 1) * n, write * n);
                }
                write += 1;
            }
        }
        self.data.truncate(write * n);
    }
}

/// Cloud plus its distribution buffers. `stores` holds the current-step
/// distributions (one store for the full 3D model, the (g1, g2) pair for the
/// reduced model); `tilde` are the same-shaped intermediate buffers written
/// by the explicit advection step.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub cloud: ParticleCloud,
    pub stores: Vec<DistributionStore>,
    pub tilde: Vec<DistributionStore>,
}

impl ParticleSystem {
    pub fn new(cloud: ParticleCloud, n_stores: usize, n_nodes: usize) -> Self {
        let n = cloud.len();
        Self {
            cloud,
            stores: (0..n_stores)
                .map(|_| DistributionStore::new(n, n_nodes))
                .collect(),
            tilde: (0..n_stores)
                .map(|_| DistributionStore::new(n, n_nodes))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}
