//! Python bindings: velocity grids, Maxwellians and moments, relaxation
//! time, and a driven-cavity simulation wrapper.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mfbgk::cli_io::{parse_config, serialize_config, snapshot_csv};
use mfbgk::kinetic_core;
use mfbgk::phase_space::{GasProperties, MacroState, ParticleKind};
use mfbgk::solver::{Mode, RunConfig, Solver};

fn err(e: mfbgk::Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        4 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Uniform discrete velocity grid.
#[pyclass(name = "VelocityGrid")]
struct PyVelocityGrid {
    inner: mfbgk::phase_space::VelocityGrid,
}

#[pymethods]
impl PyVelocityGrid {
    #[new]
    fn new(dims: usize, v_max: f64, n_v: usize) -> PyResult<Self> {
        Ok(Self {
            inner: mfbgk::phase_space::VelocityGrid::new(dims, v_max, n_v).map_err(err)?,
        })
    }

    #[getter]
    fn dims(&self) -> usize {
        self.inner.dims()
    }

    #[getter]
    fn v_max(&self) -> f64 {
        self.inner.v_max()
    }

    #[getter]
    fn n_v(&self) -> usize {
        self.inner.n_v()
    }

    #[getter]
    fn dv(&self) -> f64 {
        self.inner.dv()
    }

    #[getter]
    fn total_nodes(&self) -> usize {
        self.inner.total_nodes()
    }

    fn axis_nodes(&self) -> Vec<f64> {
        self.inner.axis_nodes().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "VelocityGrid(dims={}, v_max={}, n_v={})",
            self.inner.dims(),
            self.inner.v_max(),
            self.inner.n_v()
        )
    }
}

/// Macroscopic state (density, velocity, temperature, energy density).
#[pyclass(name = "MacroState", skip_from_py_object)]
#[derive(Clone)]
struct PyMacroState {
    #[pyo3(get)]
    rho: f64,
    #[pyo3(get)]
    u: (f64, f64, f64),
    #[pyo3(get)]
    temp: f64,
    #[pyo3(get)]
    energy: f64,
}

impl From<MacroState> for PyMacroState {
    fn from(m: MacroState) -> Self {
        Self {
            rho: m.rho,
            u: (m.u[0], m.u[1], m.u[2]),
            temp: m.temp,
            energy: m.energy,
        }
    }
}

#[pymethods]
impl PyMacroState {
    fn __repr__(&self) -> String {
        format!(
            "MacroState(rho={}, u=({}, {}, {}), temp={})",
            self.rho, self.u.0, self.u.1, self.u.2, self.temp
        )
    }
}

/// Local equilibrium on a 3D grid for the state (rho, u, temp).
#[pyfunction]
fn maxwellian_3d(
    rho: f64,
    u: (f64, f64, f64),
    temp: f64,
    r_specific: f64,
    grid: &PyVelocityGrid,
) -> PyResult<Vec<f64>> {
    let m = MacroState::from_primitive(rho, [u.0, u.1, u.2], temp, r_specific);
    kinetic_core::maxwellian_3d(&m, &grid.inner, r_specific).map_err(err)
}

/// Chu-reduced equilibria (G1, G2) on a 2D grid.
#[pyfunction]
fn reduced_maxwellians(
    rho: f64,
    u: (f64, f64),
    temp: f64,
    r_specific: f64,
    grid: &PyVelocityGrid,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = MacroState::from_primitive(rho, [u.0, u.1, 0.0], temp, r_specific);
    kinetic_core::reduced_maxwellians(&m, &grid.inner, r_specific).map_err(err)
}

/// Discrete moments of a full 3D distribution.
#[pyfunction]
fn moments_3d(f: Vec<f64>, grid: &PyVelocityGrid, r_specific: f64) -> PyResult<PyMacroState> {
    kinetic_core::moments_3d(&f, &grid.inner, r_specific)
        .map(PyMacroState::from)
        .map_err(err)
}

/// Discrete moments of a reduced (g1, g2) pair.
#[pyfunction]
fn moments_reduced(
    g1: Vec<f64>,
    g2: Vec<f64>,
    grid: &PyVelocityGrid,
    r_specific: f64,
) -> PyResult<PyMacroState> {
    kinetic_core::moments_reduced(&g1, &g2, &grid.inner, r_specific)
        .map(PyMacroState::from)
        .map_err(err)
}

/// (tau, lambda) for the given state and gas constants.
#[pyfunction]
#[pyo3(signature = (rho, temp, r_specific=208.0, diameter=0.368e-9, k_boltzmann=1.3806e-23))]
fn relaxation_time(
    rho: f64,
    temp: f64,
    r_specific: f64,
    diameter: f64,
    k_boltzmann: f64,
) -> PyResult<(f64, f64)> {
    let gas = GasProperties::new(diameter, k_boltzmann, r_specific).map_err(err)?;
    let m = MacroState::from_primitive(rho, [0.0; 3], temp, r_specific);
    Ok(kinetic_core::relaxation_time(&m, &gas))
}

/// Closed-form implicit relaxation toward the equilibrium values.
#[pyfunction]
fn relax_implicit(f_tilde: Vec<f64>, m_eq: Vec<f64>, tau: f64, dt: f64) -> PyResult<Vec<f64>> {
    if f_tilde.len() != m_eq.len() {
        return Err(PyValueError::new_err("shape mismatch"));
    }
    Ok(kinetic_core::relax_implicit(&f_tilde, &m_eq, tau, dt))
}

/// A driven-cavity simulation in reduced-2D or full-3D mode.
#[pyclass(name = "Simulation")]
struct PySimulation {
    solver: Solver,
}

#[pymethods]
impl PySimulation {
    /// Cavity benchmark preset: argon in a micrometer box at 270 K.
    #[staticmethod]
    #[pyo3(signature = (mode, n_per_axis, n_v, rho0=1.0, lid_speed=1.0, dt=1e-11, steps=100, v_max=None, workers=0))]
    #[allow(clippy::too_many_arguments)]
    fn cavity(
        mode: &str,
        n_per_axis: usize,
        n_v: usize,
        rho0: f64,
        lid_speed: f64,
        dt: f64,
        steps: u64,
        v_max: Option<f64>,
        workers: usize,
    ) -> PyResult<Self> {
        let mode = match mode {
            "reduced-2d" => Mode::Reduced2D,
            "full-3d" => Mode::Full3D,
            other => {
                return Err(PyValueError::new_err(format!(
                    "mode must be reduced-2d or full-3d, got {other}"
                )))
            }
        };
        let mut cfg = RunConfig::cavity(mode, n_per_axis, n_v, rho0, lid_speed);
        cfg.dt = dt;
        cfg.n_steps = steps;
        cfg.v_max = v_max;
        cfg.workers = workers;
        Ok(Self {
            solver: Solver::new(cfg).map_err(err)?,
        })
    }

    /// Build a simulation from configuration text (same format as the CLI).
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let cfg = parse_config(text).map_err(err)?;
        Ok(Self {
            solver: Solver::new(cfg).map_err(err)?,
        })
    }

    /// Advance `n` time steps.
    #[pyo3(signature = (n=1))]
    fn step(&mut self, n: u64) -> PyResult<()> {
        for _ in 0..n {
            self.solver.step().map_err(err)?;
        }
        Ok(())
    }

    /// Run the configured number of steps.
    fn run(&mut self) -> PyResult<u64> {
        let summary = self.solver.run().map_err(err)?;
        Ok(summary.steps)
    }

    #[getter]
    fn step_index(&self) -> u64 {
        self.solver.step_index()
    }

    #[getter]
    fn particle_count(&self) -> usize {
        self.solver.system.len()
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.solver
            .system
            .cloud
            .positions
            .iter()
            .map(|p| (p[0], p[1], p[2]))
            .collect()
    }

    fn velocities(&self) -> Vec<(f64, f64, f64)> {
        self.solver
            .system
            .cloud
            .macro_states
            .iter()
            .map(|m| (m.u[0], m.u[1], m.u[2]))
            .collect()
    }

    fn density(&self) -> Vec<f64> {
        self.solver
            .system
            .cloud
            .macro_states
            .iter()
            .map(|m| m.rho)
            .collect()
    }

    fn temperature(&self) -> Vec<f64> {
        self.solver
            .system
            .cloud
            .macro_states
            .iter()
            .map(|m| m.temp)
            .collect()
    }

    fn kinds(&self) -> Vec<&'static str> {
        self.solver
            .system
            .cloud
            .kinds
            .iter()
            .map(|k| match k {
                ParticleKind::Interior => "interior",
                ParticleKind::Boundary => "boundary",
            })
            .collect()
    }

    fn macro_state(&self, i: usize) -> PyResult<PyMacroState> {
        if i >= self.solver.system.len() {
            return Err(PyValueError::new_err("particle index out of range"));
        }
        Ok(self.solver.system.cloud.macro_states[i].into())
    }

    /// (step, mean_density, stable_dt, max_wall_flux_rel, min_distribution)
    /// of the most recent step, or None before the first step.
    fn last_diagnostics(&self) -> Option<(u64, f64, f64, f64, f64)> {
        self.solver.diagnostics().last().map(|d| {
            (
                d.step,
                d.mean_density,
                d.stable_dt,
                d.max_wall_flux_rel,
                d.min_distribution,
            )
        })
    }

    fn snapshot_csv(&self) -> String {
        snapshot_csv(&self.solver)
    }

    fn config_text(&self) -> String {
        serialize_config(self.solver.config())
    }

    fn __repr__(&self) -> String {
        format!(
            "Simulation(particles={}, step={})",
            self.solver.system.len(),
            self.solver.step_index()
        )
    }
}

#[pymodule]
fn mfbgk_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVelocityGrid>()?;
    m.add_class::<PyMacroState>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(maxwellian_3d, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_maxwellians, m)?)?;
    m.add_function(wrap_pyfunction!(moments_3d, m)?)?;
    m.add_function(wrap_pyfunction!(moments_reduced, m)?)?;
    m.add_function(wrap_pyfunction!(relaxation_time, m)?)?;
    m.add_function(wrap_pyfunction!(relax_implicit, m)?)?;
    Ok(())
}
