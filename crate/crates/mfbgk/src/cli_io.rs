//! Configuration loading, snapshot/diagnostic emission, and the
//! bench/profile harnesses behind the command-line front end.
//!
//! The config format is sectioned key-value text:
//!
//! ```text
//! [run]
//! mode = reduced-2d        # reduced-2d | full-3d
//! length = 1e-6
//! n_per_axis = 50
//! n_v = 20
//! dt = 1e-11
//! steps = 1000
//! snapshot_every = 50      # optional, default 50
//! workers = 8              # optional, default: hardware threads
//! v_max = 948.9            # optional, default |U_wall|max + 4 sqrt(R T0)
//!
//! [gas]
//! r = 208.0
//! d = 0.368e-9
//! k_b = 1.3806e-23
//!
//! [initial]
//! rho = 1.0
//! t = 270.0
//! u = 0 0                  # optional, dims components
//!
//! [management]             # optional
//! r_merge_factor = 0.2
//! m_min = 5
//!
//! [wall.top]               # omitted walls are stationary at the initial t
//! t = 270.0
//! u = 1 0
//! ```
//!
//! Wall names: 2D left/right (x faces), bottom/top (y faces); 3D adds
//! front/back (y faces) and moves bottom/top to the z faces. `top` is the
//! lid in both cases. Unknown keys are errors.

use crate::error::{Error, Result};
use crate::parallel_backend::labels;
use crate::phase_space::{GasProperties, ParticleKind};
use crate::solver::{cavity_walls, Mode, RunConfig, Solver};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

const WALL_NAMES_2D: [&str; 4] = ["left", "right", "bottom", "top"];
const WALL_NAMES_3D: [&str; 6] = ["left", "right", "front", "back", "bottom", "top"];

fn wall_names(dims: usize) -> &'static [&'static str] {
    if dims == 2 {
        &WALL_NAMES_2D
    } else {
        &WALL_NAMES_3D
    }
}

#[derive(Debug, Default)]
struct RawSections {
    /// section -> key -> (line, value)
    entries: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

fn parse_sections(text: &str) -> Result<RawSections> {
    let mut raw = RawSections::default();
    let mut section = String::new();
    for (idx, line_raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match line_raw.find('#') {
            Some(cut) => &line_raw[..cut],
            None => line_raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(Error::ConfigParse {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            raw.entries.entry(section.clone()).or_default();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::ConfigParse {
            line: line_no,
            message: "expected `key = value`".into(),
        })?;
        if section.is_empty() {
            return Err(Error::ConfigParse {
                line: line_no,
                message: "key outside of any [section]".into(),
            });
        }
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let sec = raw.entries.get_mut(&section).unwrap();
        if sec.contains_key(&key) {
            return Err(Error::ConfigParse {
                line: line_no,
                message: format!("duplicate key `{key}`"),
            });
        }
        sec.insert(key, (line_no, value));
    }
    Ok(raw)
}

struct SectionReader {
    name: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl SectionReader {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key).ok_or_else(|| Error::ConfigMissing {
            key: format!("{}.{}", self.name, key),
        })
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::ConfigUnknown {
                line,
                key: format!("{}.{}", self.name, key),
            });
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, line: usize, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::ConfigParse {
        line,
        message: format!("cannot parse value `{raw}` for `{key}`"),
    })
}

fn parse_vector(key: &str, line: usize, raw: &str, dims: usize) -> Result<[f64; 3]> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    if parts.len() != dims {
        return Err(Error::ConfigParse {
            line,
            message: format!("`{key}` needs {dims} components, got {}", parts.len()),
        });
    }
    let mut out = [0.0; 3];
    for (a, p) in parts.iter().enumerate() {
        out[a] = parse_value(key, line, p)?;
    }
    Ok(out)
}

/// Parse a configuration from its text form; defaults are applied and the
/// resulting config is validated.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut raw = parse_sections(text)?;
    let mut reader = |name: &str| -> Option<SectionReader> {
        raw.entries.remove(name).map(|entries| SectionReader {
            name: name.to_string(),
            entries,
        })
    };

    let mut run = reader("run").ok_or(Error::ConfigMissing { key: "run".into() })?;
    let (line, mode_raw) = run.require("mode")?;
    let mode = match mode_raw.as_str() {
        "reduced-2d" => Mode::Reduced2D,
        "full-3d" => Mode::Full3D,
        other => {
            return Err(Error::ConfigParse {
                line,
                message: format!("mode must be reduced-2d or full-3d, got `{other}`"),
            })
        }
    };
    let dims = mode.dims();
    let length: f64 = {
        let (l, v) = run.require("length")?;
        parse_value("length", l, &v)?
    };
    let n_per_axis: usize = {
        let (l, v) = run.require("n_per_axis")?;
        parse_value("n_per_axis", l, &v)?
    };
    let n_v: i64 = {
        let (l, v) = run.require("n_v")?;
        parse_value("n_v", l, &v)?
    };
    if n_v < 2 {
        return Err(Error::ConfigInvalid {
            key: "run.n_v".into(),
            message: format!("must be an even integer >= 2, got {n_v}"),
        });
    }
    let dt: f64 = {
        let (l, v) = run.require("dt")?;
        parse_value("dt", l, &v)?
    };
    let n_steps: u64 = {
        let (l, v) = run.require("steps")?;
        parse_value("steps", l, &v)?
    };
    let snapshot_every = match run.take("snapshot_every") {
        Some((l, v)) => parse_value("snapshot_every", l, &v)?,
        None => 50,
    };
    let workers = match run.take("workers") {
        Some((l, v)) => parse_value("workers", l, &v)?,
        None => 0,
    };
    let v_max = match run.take("v_max") {
        Some((l, v)) => Some(parse_value("v_max", l, &v)?),
        None => None,
    };
    run.finish()?;

    let mut gas_sec = reader("gas").ok_or(Error::ConfigMissing { key: "gas".into() })?;
    let r_specific: f64 = {
        let (l, v) = gas_sec.require("r")?;
        parse_value("r", l, &v)?
    };
    let diameter: f64 = {
        let (l, v) = gas_sec.require("d")?;
        parse_value("d", l, &v)?
    };
    let k_boltzmann: f64 = {
        let (l, v) = gas_sec.require("k_b")?;
        parse_value("k_b", l, &v)?
    };
    gas_sec.finish()?;

    let mut init = reader("initial").ok_or(Error::ConfigMissing {
        key: "initial".into(),
    })?;
    let rho0: f64 = {
        let (l, v) = init.require("rho")?;
        parse_value("rho", l, &v)?
    };
    let t0: f64 = {
        let (l, v) = init.require("t")?;
        parse_value("t", l, &v)?
    };
    let u0 = match init.take("u") {
        Some((l, v)) => parse_vector("initial.u", l, &v, dims)?,
        None => [0.0; 3],
    };
    init.finish()?;

    let (mut r_merge_factor, mut m_min) = (crate::particle_mgmt::R_MERGE_FACTOR, None);
    if let Some(mut mgmt) = reader("management") {
        if let Some((l, v)) = mgmt.take("r_merge_factor") {
            r_merge_factor = parse_value("r_merge_factor", l, &v)?;
        }
        if let Some((l, v)) = mgmt.take("m_min") {
            m_min = Some(parse_value("m_min", l, &v)?);
        }
        mgmt.finish()?;
    }

    let mut walls = cavity_walls(dims, t0, [0.0; 3]);
    for w in walls.iter_mut() {
        w.velocity = [0.0; 3]; // all stationary unless a section overrides
    }
    let names = wall_names(dims);
    for (id, name) in names.iter().enumerate() {
        if let Some(mut sec) = reader(&format!("wall.{name}")) {
            if let Some((l, v)) = sec.take("t") {
                walls[id].temperature = parse_value("t", l, &v)?;
            }
            if let Some((l, v)) = sec.take("u") {
                walls[id].velocity = parse_vector(&format!("wall.{name}.u"), l, &v, dims)?;
            }
            sec.finish()?;
        }
    }

    if let Some((section, entries)) = raw.entries.into_iter().next() {
        let line = entries.values().map(|(l, _)| *l).min().unwrap_or(0);
        return Err(Error::ConfigUnknown { line, key: section });
    }

    let cfg = RunConfig {
        mode,
        length,
        n_per_axis,
        n_v: n_v as usize,
        v_max,
        dt,
        n_steps,
        gas: GasProperties {
            diameter,
            k_boltzmann,
            r_specific,
        },
        rho0,
        u0,
        t0,
        walls,
        r_merge_factor,
        m_min,
        snapshot_every,
        workers,
    };
    cfg.validate().map_err(|e| Error::ConfigInvalid {
        key: "config".into(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

/// Load and parse a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Canonical text form; parse(serialize(parse(t))) == parse(t).
pub fn serialize_config(cfg: &RunConfig) -> String {
    let dims = cfg.dims();
    let mut out = String::new();
    let mode = match cfg.mode {
        Mode::Reduced2D => "reduced-2d",
        Mode::Full3D => "full-3d",
    };
    let _ = writeln!(out, "[run]");
    let _ = writeln!(out, "mode = {mode}");
    let _ = writeln!(out, "length = {}", cfg.length);
    let _ = writeln!(out, "n_per_axis = {}", cfg.n_per_axis);
    let _ = writeln!(out, "n_v = {}", cfg.n_v);
    let _ = writeln!(out, "dt = {}", cfg.dt);
    let _ = writeln!(out, "steps = {}", cfg.n_steps);
    let _ = writeln!(out, "snapshot_every = {}", cfg.snapshot_every);
    let _ = writeln!(out, "workers = {}", cfg.workers);
    if let Some(v) = cfg.v_max {
        let _ = writeln!(out, "v_max = {v}");
    }
    let _ = writeln!(out, "\n[gas]");
    let _ = writeln!(out, "r = {}", cfg.gas.r_specific);
    let _ = writeln!(out, "d = {}", cfg.gas.diameter);
    let _ = writeln!(out, "k_b = {}", cfg.gas.k_boltzmann);
    let _ = writeln!(out, "\n[initial]");
    let _ = writeln!(out, "rho = {}", cfg.rho0);
    let _ = writeln!(out, "t = {}", cfg.t0);
    let u: Vec<String> = (0..dims).map(|a| cfg.u0[a].to_string()).collect();
    let _ = writeln!(out, "u = {}", u.join(" "));
    let _ = writeln!(out, "\n[management]");
    let _ = writeln!(out, "r_merge_factor = {}", cfg.r_merge_factor);
    if let Some(m) = cfg.m_min {
        let _ = writeln!(out, "m_min = {m}");
    }
    for (w, name) in cfg.walls.iter().zip(wall_names(dims)) {
        let _ = writeln!(out, "\n[wall.{name}]");
        let _ = writeln!(out, "t = {}", w.temperature);
        let u: Vec<String> = (0..dims).map(|a| w.velocity[a].to_string()).collect();
        let _ = writeln!(out, "u = {}", u.join(" "));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Csv,
    VtkLegacyPoints,
}

/// One row/point per particle with position, kind, density, velocity and
/// temperature. Floats use the shortest round-trip scientific form, so
/// identical states produce byte-identical files.
pub fn write_snapshot(solver: &Solver, path: &Path, format: SnapshotFormat) -> Result<()> {
    let text = match format {
        SnapshotFormat::Csv => snapshot_csv(solver),
        SnapshotFormat::VtkLegacyPoints => snapshot_vtk(solver),
    };
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn snapshot_csv(solver: &Solver) -> String {
    let cloud = &solver.system.cloud;
    let dims = cloud.dims;
    let mut out = String::new();
    if dims == 2 {
        out.push_str("x,y,kind,rho,u,v,T\n");
    } else {
        out.push_str("x,y,z,kind,rho,u,v,w,T\n");
    }
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let m = &cloud.macro_states[i];
        let kind = match cloud.kinds[i] {
            ParticleKind::Interior => "interior",
            ParticleKind::Boundary => "boundary",
        };
        for a in 0..dims {
            let _ = write!(out, "{:e},", p[a]);
        }
        let _ = write!(out, "{kind},{:e},", m.rho);
        for a in 0..dims {
            let _ = write!(out, "{:e},", m.u[a]);
        }
        let _ = writeln!(out, "{:e}", m.temp);
    }
    out
}

pub fn snapshot_vtk(solver: &Solver) -> String {
    let cloud = &solver.system.cloud;
    let n = cloud.len();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("meshfree BGK particle snapshot\n");
    out.push_str("ASCII\nDATASET POLYDATA\n");
    let _ = writeln!(out, "POINTS {n} double");
    for p in &cloud.positions {
        let _ = writeln!(out, "{:e} {:e} {:e}", p[0], p[1], p[2]);
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    out.push_str("VECTORS velocity double\n");
    for m in &cloud.macro_states {
        let _ = writeln!(out, "{:e} {:e} {:e}", m.u[0], m.u[1], m.u[2]);
    }
    out.push_str("SCALARS rho double 1\nLOOKUP_TABLE default\n");
    for m in &cloud.macro_states {
        let _ = writeln!(out, "{:e}", m.rho);
    }
    out.push_str("SCALARS temperature double 1\nLOOKUP_TABLE default\n");
    for m in &cloud.macro_states {
        let _ = writeln!(out, "{:e}", m.temp);
    }
    out
}

/// Per-step diagnostics as csv.
pub fn diagnostics_csv(solver: &Solver) -> String {
    let mut out = String::from(
        "step,time,mean_density,momentum_x,momentum_y,momentum_z,min_distribution,\
         stable_dt,max_wall_flux_rel,merged,inserted,deficient_stencils,\
         deficient_boundary,clamped_moves\n",
    );
    for d in solver.diagnostics() {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{},{}",
            d.step,
            d.time,
            d.mean_density,
            d.momentum[0],
            d.momentum[1],
            d.momentum[2],
            d.min_distribution,
            d.stable_dt,
            d.max_wall_flux_rel,
            d.merged_pairs,
            d.inserted_particles,
            d.deficient_stencils,
            d.deficient_boundary,
            d.clamped_moves,
        );
    }
    out
}

/// Analytic allocation accounting for one run configuration.
#[derive(Debug, Clone, Copy)]
pub struct MemoryEstimate {
    /// Current + intermediate distribution buffers over all stores.
    pub distribution_bytes: u64,
    pub operator_bytes: u64,
    pub neighbor_list_bytes: u64,
    pub total_bytes: u64,
}

/// Expected lattice neighbor count inside the ball of radius 3.1 dx.
fn lattice_neighbor_count(dims: usize) -> u64 {
    let r_sq = crate::phase_space::H_FACTOR * crate::phase_space::H_FACTOR;
    let mut count = 0u64;
    let range: Vec<i64> = (-3..=3).collect();
    if dims == 2 {
        for &i in &range {
            for &j in &range {
                if (i, j) != (0, 0) && (i * i + j * j) as f64 <= r_sq {
                    count += 1;
                }
            }
        }
    } else {
        for &i in &range {
            for &j in &range {
                for &k in &range {
                    if (i, j, k) != (0, 0, 0) && (i * i + j * j + k * k) as f64 <= r_sq {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

pub fn estimate_memory(cfg: &RunConfig, n_per_axis: usize) -> MemoryEstimate {
    let dims = cfg.dims();
    let n = (n_per_axis as u64).pow(dims as u32);
    let nodes = ((cfg.n_v + 1) as u64).pow(dims as u32);
    let stores = cfg.mode.n_stores() as u64;
    let distribution_bytes = 2 * stores * n * nodes * 8;
    let m = lattice_neighbor_count(dims);
    // per neighbor: frame (9 f64) + rotated coefficients (3 f64) + index
    let operator_bytes = n * m * (12 * 8 + 4);
    let neighbor_list_bytes = n * m * 4;
    MemoryEstimate {
        distribution_bytes,
        operator_bytes,
        neighbor_list_bytes,
        total_bytes: distribution_bytes + operator_bytes + neighbor_list_bytes,
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub n_per_axis: usize,
    pub particles: usize,
    /// Wall time per worker count in seconds.
    pub wall_times: Vec<f64>,
    /// Speedup against the first worker count.
    pub speedups: Vec<f64>,
    /// Advection-phase time per worker count in seconds.
    pub advection_times: Vec<f64>,
    pub memory: MemoryEstimate,
}

#[derive(Debug, Clone)]
pub struct BenchTable {
    pub worker_counts: Vec<usize>,
    pub n_v: usize,
    pub steps: u64,
    pub rows: Vec<BenchRow>,
}

/// Run the configured number of steps at each resolution and worker count,
/// reporting wall time, speedup against the first worker count, and the
/// analytic memory estimate.
pub fn bench(cfg: &RunConfig, worker_counts: &[usize], resolutions: &[usize]) -> Result<BenchTable> {
    if worker_counts.is_empty() {
        return Err(Error::InvalidParam("bench needs at least one worker count".into()));
    }
    let mut rows = Vec::new();
    for &res in resolutions {
        let mut wall_times = Vec::new();
        let mut advection_times = Vec::new();
        let mut particles = 0;
        for &w in worker_counts {
            let mut run_cfg = cfg.clone();
            run_cfg.n_per_axis = res;
            run_cfg.workers = w;
            run_cfg.snapshot_every = 0;
            let mut solver = Solver::new(run_cfg)?;
            particles = solver.system.len();
            let start = Instant::now();
            solver.run()?;
            wall_times.push(start.elapsed().as_secs_f64());
            advection_times.push(
                solver
                    .timings()
                    .get(labels::SPATIAL_DERIVATIVE)
                    .as_secs_f64(),
            );
        }
        let base = wall_times[0];
        let speedups = wall_times.iter().map(|t| base / t).collect();
        rows.push(BenchRow {
            n_per_axis: res,
            particles,
            wall_times,
            speedups,
            advection_times,
            memory: estimate_memory(cfg, res),
        });
    }
    Ok(BenchTable {
        worker_counts: worker_counts.to_vec(),
        n_v: cfg.n_v,
        steps: cfg.n_steps,
        rows,
    })
}

impl BenchTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "bench: {} steps, N_v = {}, workers = {:?}",
            self.steps, self.n_v, self.worker_counts
        );
        let _ = write!(out, "{:>12} {:>10}", "resolution", "particles");
        for w in &self.worker_counts {
            let _ = write!(out, " {:>10}", format!("t[{w}] s"));
        }
        for w in &self.worker_counts {
            let _ = write!(out, " {:>9}", format!("su[{w}]"));
        }
        let _ = writeln!(out, " {:>10}", "mem MB");
        for row in &self.rows {
            let _ = write!(
                out,
                "{:>12} {:>10}",
                format!("{0}^d", row.n_per_axis),
                row.particles
            );
            for t in &row.wall_times {
                let _ = write!(out, " {:>10.3}", t);
            }
            for s in &row.speedups {
                let _ = write!(out, " {:>9.2}", s);
            }
            let _ = writeln!(
                out,
                " {:>10.1}",
                row.memory.total_bytes as f64 / (1024.0 * 1024.0)
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_per_axis,particles,workers,wall_time_s,speedup,advection_s,memory_bytes\n");
        for row in &self.rows {
            for (k, &w) in self.worker_counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{:e},{:e},{:e},{}",
                    row.n_per_axis,
                    row.particles,
                    w,
                    row.wall_times[k],
                    row.speedups[k],
                    row.advection_times[k],
                    row.memory.total_bytes,
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ProfileReport {
    pub steps: u64,
    /// Percentage of step time per phase label.
    pub shares: Vec<(&'static str, f64)>,
    pub dominant: Option<&'static str>,
}

/// Run the configured steps and report the per-phase time breakdown.
pub fn profile(cfg: &RunConfig) -> Result<ProfileReport> {
    let mut run_cfg = cfg.clone();
    run_cfg.snapshot_every = 0;
    let mut solver = Solver::new(run_cfg)?;
    solver.run()?;
    let shares = solver.timings().shares();
    let dominant = shares
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, _)| *l);
    Ok(ProfileReport {
        steps: solver.step_index(),
        shares,
        dominant,
    })
}

impl std::fmt::Display for ProfileReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "profile over {} steps", self.steps)?;
        if self.shares.is_empty() {
            writeln!(f, "(no phases timed)")?;
            return Ok(());
        }
        for (label, pct) in &self.shares {
            let flag = if Some(*label) == self.dominant { "  <- dominant" } else { "" };
            writeln!(f, "{pct:6.2}%  {label}{flag}")?;
        }
        Ok(())
    }
}

/// Write `text` to `path`, mapping failures onto io errors with the path.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Snapshot file name at a given step.
pub fn snapshot_path(out_dir: &Path, step: u64, format: SnapshotFormat) -> PathBuf {
    let ext = match format {
        SnapshotFormat::Csv => "csv",
        SnapshotFormat::VtkLegacyPoints => "vtk",
    };
    out_dir.join(format!("snapshot_{step:06}.{ext}"))
}

/// Reference configuration of the 2D driven cavity at the benchmark state
/// (rho0 = 1, Kn ~ 0.11).
pub fn reference_cavity_2d_text() -> &'static str {
    "\
# 2D driven cavity, argon, rho0 = 1 (Kn ~ 0.11)
[run]
mode = reduced-2d
length = 1e-6
n_per_axis = 50
n_v = 20
dt = 1e-11
steps = 1000
snapshot_every = 50

[gas]
r = 208.0
d = 0.368e-9
k_b = 1.3806e-23

[initial]
rho = 1.0
t = 270.0
u = 0 0

[wall.top]
t = 270.0
u = 1 0
"
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_config_parses() {
        let cfg = parse_config(reference_cavity_2d_text()).unwrap();
        assert_eq!(cfg.mode, Mode::Reduced2D);
        assert_eq!(cfg.n_per_axis, 50);
        assert_eq!(cfg.n_v, 20);
        assert_relative_eq!(cfg.dt, 1e-11);
        assert_relative_eq!(cfg.length, 1e-6);
        assert_relative_eq!(cfg.gas.diameter, 0.368e-9);
        assert_relative_eq!(cfg.rho0, 1.0);
        assert_relative_eq!(cfg.t0, 270.0);
        // lid on the top wall, side walls stationary
        assert_eq!(cfg.walls[3].velocity[0], 1.0);
        assert_eq!(cfg.walls[0].velocity, [0.0; 3]);
        assert_eq!(cfg.walls[3].temperature, 270.0);
    }

    #[test]
    fn missing_dt_names_the_key() {
        let text = reference_cavity_2d_text().replace("dt = 1e-11\n", "");
        match parse_config(&text) {
            Err(Error::ConfigMissing { key }) => assert_eq!(key, "run.dt"),
            other => panic!("expected ConfigMissing, got {other:?}"),
        }
    }

    #[test]
    fn negative_n_v_is_invalid() {
        let text = reference_cavity_2d_text().replace("n_v = 20", "n_v = -1");
        match parse_config(&text) {
            Err(Error::ConfigInvalid { key, .. }) => assert_eq!(key, "run.n_v"),
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = format!("{}\ntypo_key = 3\n", reference_cavity_2d_text());
        match parse_config(&text) {
            Err(Error::ConfigUnknown { key, line }) => {
                assert!(key.contains("typo_key"), "key = {key}");
                assert!(line > 0);
            }
            other => panic!("expected ConfigUnknown, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_is_rejected() {
        let text = format!("{}\n[mystery]\nx = 1\n", reference_cavity_2d_text());
        assert!(matches!(
            parse_config(&text),
            Err(Error::ConfigUnknown { .. })
        ));
    }

    #[test]
    fn serialize_parse_is_idempotent() {
        let cfg = parse_config(reference_cavity_2d_text()).unwrap();
        let text1 = serialize_config(&cfg);
        let cfg2 = parse_config(&text1).unwrap();
        let text2 = serialize_config(&cfg2);
        assert_eq!(text1, text2);
    }

    #[test]
    fn snapshot_has_one_row_per_particle() {
        let mut cfg = RunConfig::cavity(Mode::Reduced2D, 3, 4, 1.0, 0.0);
        cfg.workers = 1;
        let solver = Solver::new(cfg).unwrap();
        let csv = snapshot_csv(&solver);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 9);
        assert_eq!(lines[0], "x,y,kind,rho,u,v,T");
    }

    #[test]
    fn snapshot_roundtrips_exactly() {
        let mut cfg = RunConfig::cavity(Mode::Reduced2D, 4, 4, 1.3, 0.0);
        cfg.workers = 1;
        let solver = Solver::new(cfg).unwrap();
        let csv = snapshot_csv(&solver);
        for (i, line) in csv.lines().skip(1).enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 7);
            let x: f64 = cols[0].parse().unwrap();
            let y: f64 = cols[1].parse().unwrap();
            assert_eq!(x, solver.system.cloud.positions[i][0]);
            assert_eq!(y, solver.system.cloud.positions[i][1]);
            let rho: f64 = cols[3].parse().unwrap();
            assert_eq!(rho, solver.system.cloud.macro_states[i].rho);
            let t: f64 = cols[6].parse().unwrap();
            assert_eq!(t, solver.system.cloud.macro_states[i].temp);
        }
    }

    #[test]
    fn vtk_layout_conforms_to_legacy_point_format() {
        let mut cfg = RunConfig::cavity(Mode::Full3D, 3, 4, 1.0, 0.0);
        cfg.workers = 1;
        let solver = Solver::new(cfg).unwrap();
        let vtk = snapshot_vtk(&solver);
        let lines: Vec<&str> = vtk.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[2], "ASCII");
        assert_eq!(lines[3], "DATASET POLYDATA");
        assert_eq!(lines[4], "POINTS 27 double");
        assert!(lines.contains(&"POINT_DATA 27"));
        assert!(lines.contains(&"VECTORS velocity double"));
        assert!(lines.contains(&"SCALARS rho double 1"));
    }

    #[test]
    fn bench_single_worker_speedup_is_one() {
        let mut cfg = RunConfig::cavity(Mode::Reduced2D, 8, 4, 1.0, 1.0);
        cfg.n_steps = 2;
        let table = bench(&cfg, &[1], &[8]).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].speedups, vec![1.0]);
        let text = table.to_text();
        assert!(text.contains("su[1]"));
    }

    #[test]
    fn memory_estimate_tracks_buffer_formula() {
        // reduced mode, 200^2 particles, N_v = 20: one buffer set (g1, g2)
        // is 2 (N_v+1)^2 * 8 B * N; the estimate counts current + tilde and
        // must stay within 2x of that total.
        let cfg = RunConfig::cavity(Mode::Reduced2D, 200, 20, 1.0, 1.0);
        let est = estimate_memory(&cfg, 200);
        let n = 200u64 * 200;
        let per_set = 2 * 21 * 21 * 8 * n;
        let sets = 2;
        let formula = per_set * sets;
        assert!(est.total_bytes >= formula / 2);
        assert!(est.total_bytes <= formula * 2);
        assert_eq!(est.distribution_bytes, formula);
    }

    #[test]
    fn zero_step_profile_is_empty() {
        let mut cfg = RunConfig::cavity(Mode::Reduced2D, 6, 4, 1.0, 0.0);
        cfg.n_steps = 0;
        cfg.workers = 1;
        let report = profile(&cfg).unwrap();
        assert_eq!(report.steps, 0);
        assert!(report.shares.is_empty());
        assert!(report.dominant.is_none());
    }

    #[test]
    fn profile_shares_sum_to_100() {
        let mut cfg = RunConfig::cavity(Mode::Reduced2D, 10, 4, 1.0, 1.0);
        cfg.n_steps = 2;
        cfg.workers = 1;
        let report = profile(&cfg).unwrap();
        let sum: f64 = report.shares.iter().map(|(_, s)| s).sum();
        assert!((sum - 100.0).abs() < 1.0);
    }

    #[test]
    fn exit_codes_match_error_classes() {
        assert_eq!(
            Error::ConfigMissing { key: "x".into() }.exit_code(),
            2
        );
        assert_eq!(
            Error::Io {
                path: "/nope".into(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "x"),
            }
            .exit_code(),
            4
        );
        assert_eq!(
            Error::DegenerateState("vacuum".into()).exit_code(),
            3
        );
    }
}
