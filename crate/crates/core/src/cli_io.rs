//! Scenario files, validation, snapshots, probe series, run manifest and
//! the batch driver behind the command-line tool.
//!
//! Exit codes: 0 ok, 2 parse or validation error, 3 divergence.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use crate::constitutive::MaterialParams;
use crate::engine::{Counters, DtRecord, ProbeSample, Simulation};
use crate::error::{Result, SphError};
use crate::momentum::{DampingParams, PoreWaterForm, StressForm, MAX_XI};
use crate::particles::{Particle, ParticleKind};
use crate::scenarios::{
    gravity_load_phase, run_phase, ColumnOracle, LoadingMethod, PhaseControl, PhaseSummary, ScenarioConfig,
    SCHEMA_VERSION,
};
use crate::tensor::{Stress, Vec2};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a TOML scenario. Errors carry the 1-based line of the offending
/// field.
pub fn parse_scenario(text: &str, path: &str) -> Result<ScenarioConfig> {
    let parse_err = |line, message: String| SphError::Parse {
        path: path.to_string(),
        line,
        message,
    };
    if text.trim().is_empty() {
        return Err(parse_err(1, "empty scenario file".into()));
    }
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of(text, s.start));
        parse_err(line, e.message().to_string())
    })?;
    if config.schema_version != SCHEMA_VERSION {
        let line = text
            .lines()
            .position(|l| l.trim_start().starts_with("schema_version"))
            .map_or(1, |i| i + 1);
        return Err(parse_err(
            line,
            format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            ),
        ));
    }
    Ok(config)
}

pub fn emit_scenario(config: &ScenarioConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| SphError::Validation(format!("cannot serialize scenario: {e}")))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    parse_scenario(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            writeln!(f, "ok")?;
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

fn check_material(m: &MaterialParams, report: &mut ValidationReport) {
    if m.poisson >= 0.5 {
        report
            .violations
            .push(format!("Poisson ratio singular (nu = {})", m.poisson));
    } else if let Err(e) = m.validate() {
        report.violations.push(e.to_string());
    }
}

/// Schema and physics checks that do not need a run.
pub fn validate_config(c: &ScenarioConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    check_material(&c.material, &mut r);
    if !(c.lattice.spacing > 0.0) || !c.lattice.spacing.is_finite() {
        r.violations
            .push(format!("lattice spacing must be positive, got {}", c.lattice.spacing));
    }
    if !(c.lattice.h_ratio > 0.0) || !c.lattice.h_ratio.is_finite() {
        r.violations
            .push(format!("h_ratio must be positive, got {}", c.lattice.h_ratio));
    }
    let (lo, hi) = c.geometry.bounds();
    if !(hi.x > lo.x && hi.y > lo.y) {
        r.violations.push("geometry is empty".into());
    }
    if let Some(h) = c.water_level {
        if !h.is_finite() {
            r.violations.push("water level must be finite".into());
        } else if h < lo.y {
            r.warnings.push(format!("water level {h} lies below the soil body"));
        }
    }
    if let Err(e) = c.solver.validate() {
        r.violations.push(e.to_string());
    }
    if c.lattice.spacing > 0.0 && c.lattice.h_ratio > 0.0 {
        let support = 2.0 * c.lattice.smoothing_length();
        if let Err(e) = c.boundary_spec().validate(support) {
            r.violations.push(e.to_string());
        }
    }
    let xi = c.loading.xi;
    if !(xi >= 0.0) || !xi.is_finite() {
        r.violations
            .push(format!("damping coefficient xi must be non-negative, got {xi}"));
    } else {
        if xi > MAX_XI {
            r.violations
                .push(format!("damping coefficient xi = {xi} exceeds {MAX_XI}"));
        }
        let d = DampingParams { xi, active: true };
        if let Some(w) = d.range_warning() {
            r.warnings.push(w);
        }
    }
    if c.loading.duration < 0.0 || c.analysis.duration < 0.0 {
        r.violations.push("phase durations must be non-negative".into());
    }
    if c.loading.method == LoadingMethod::K0 && c.loading.friction_angle.is_none() {
        r.violations.push("K0 loading needs loading.friction_angle".into());
    }
    if c.output.probe_interval <= 0.0 && !c.probes.is_empty() {
        r.violations.push("probe_interval must be positive".into());
    }
    for p in &c.probes {
        if !c.geometry.contains(&Vec2::new(p.x, p.y)) {
            r.warnings.push(format!("probe {} lies outside the soil body", p.label));
        }
    }
    r
}

/// Parses and validates a scenario file; parse errors become violations.
pub fn validate_file(path: &Path) -> ValidationReport {
    match load_scenario(path) {
        Ok(c) => validate_config(&c),
        Err(e) => ValidationReport {
            violations: vec![e.to_string()],
            warnings: Vec::new(),
        },
    }
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

pub const SNAPSHOT_HEADER: &str = "id,kind,material,x[m],y[m],vx[m/s],vy[m/s],rho[kg/m3],rho0[kg/m3],mass[kg/m],\
sxx_eff[Pa],syy_eff[Pa],sxy_eff[Pa],szz_eff[Pa],p_w[Pa],sxx[Pa],syy[Pa],sxy[Pa],szz[Pa]";

/// Delimited-text snapshot. Total stress is derived from the effective
/// stress and the pore pressure at write time.
pub fn write_snapshot_csv<W: Write>(w: &mut W, time: f64, particles: &[Particle]) -> io::Result<()> {
    writeln!(w, "# time[s]={time}")?;
    writeln!(w, "{SNAPSHOT_HEADER}")?;
    for (i, p) in particles.iter().enumerate() {
        let s = p.stress;
        let t = p.total_stress();
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.kind.as_str(),
            p.material,
            p.x.x,
            p.x.y,
            p.v.x,
            p.v.y,
            p.rho,
            p.rho0,
            p.mass,
            s.xx,
            s.yy,
            s.xy,
            s.zz,
            p.p_w,
            t.xx,
            t.yy,
            t.xy,
            t.zz
        )?;
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot_csv`].
pub fn read_snapshot_csv<R: BufRead>(r: R, path: &str) -> Result<(f64, Vec<Particle>)> {
    let err = |line, message: String| SphError::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut time = None;
    let mut particles = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if let Some(rest) = line.strip_prefix("# time[s]=") {
            time = Some(rest.trim().parse::<f64>().map_err(|e| err(n, e.to_string()))?);
            continue;
        }
        if line.starts_with('#') || line.starts_with("id,") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 19 {
            return Err(err(n, format!("expected 19 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(n, format!("field {k}: {e}")));
        let kind = ParticleKind::parse(f[1]).ok_or_else(|| err(n, format!("unknown particle kind {}", f[1])))?;
        let material = f[2].parse::<usize>().map_err(|e| err(n, e.to_string()))?;
        particles.push(Particle {
            x: Vec2::new(num(3)?, num(4)?),
            v: Vec2::new(num(5)?, num(6)?),
            rho: num(7)?,
            rho0: num(8)?,
            mass: num(9)?,
            stress: Stress::new(num(10)?, num(11)?, num(12)?, num(13)?),
            p_w: num(14)?,
            kind,
            material,
        });
    }
    let time = time.ok_or_else(|| err(1, "missing time line".into()))?;
    Ok((time, particles))
}

/// Legacy ASCII VTK polydata with one vertex per particle.
pub fn write_vtk<W: Write>(w: &mut W, time: f64, particles: &[Particle]) -> io::Result<()> {
    let n = particles.len();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "particles t={time}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET POLYDATA")?;
    writeln!(w, "POINTS {n} double")?;
    for p in particles {
        writeln!(w, "{} {} 0", p.x.x, p.x.y)?;
    }
    writeln!(w, "VERTICES {n} {}", 2 * n)?;
    for i in 0..n {
        writeln!(w, "1 {i}")?;
    }
    writeln!(w, "POINT_DATA {n}")?;
    let scalar = |w: &mut W, name: &str, f: &dyn Fn(&Particle) -> f64| -> io::Result<()> {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for p in particles {
            writeln!(w, "{}", f(p))?;
        }
        Ok(())
    };
    scalar(w, "kind", &|p| match p.kind {
        ParticleKind::Soil => 0.0,
        ParticleKind::VirtualBoundary => 1.0,
        ParticleKind::Ghost => 2.0,
    })?;
    scalar(w, "rho", &|p| p.rho)?;
    scalar(w, "p_w", &|p| p.p_w)?;
    scalar(w, "sxx_eff", &|p| p.stress.xx)?;
    scalar(w, "syy_eff", &|p| p.stress.yy)?;
    scalar(w, "sxy_eff", &|p| p.stress.xy)?;
    scalar(w, "szz_eff", &|p| p.stress.zz)?;
    scalar(w, "syy_total", &|p| p.total_stress().yy)?;
    writeln!(w, "VECTORS velocity double")?;
    for p in particles {
        writeln!(w, "{} {} 0", p.v.x, p.v.y)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSeries {
    pub label: String,
    pub position: Vec2,
    pub samples: Vec<(f64, ProbeSample)>,
}

impl ProbeSeries {
    pub fn new(label: impl Into<String>, position: Vec2) -> Self {
        ProbeSeries {
            label: label.into(),
            position,
            samples: Vec::new(),
        }
    }

    pub fn record(&mut self, sim: &Simulation) {
        if let Some(s) = sim.probe(&self.position) {
            self.samples.push((sim.time(), s));
        }
    }

    pub fn last(&self) -> Option<&ProbeSample> {
        self.samples.last().map(|(_, s)| s)
    }
}

pub const PROBE_HEADER: &str = "label,t[s],x[m],y[m],sxx_eff[Pa],syy_eff[Pa],sxy_eff[Pa],szz_eff[Pa],\
sxx[Pa],syy[Pa],sxy[Pa],szz[Pa],p_w[Pa],vx[m/s],vy[m/s]";

pub fn write_probes_csv<W: Write>(w: &mut W, series: &[ProbeSeries]) -> io::Result<()> {
    writeln!(w, "{PROBE_HEADER}")?;
    for s in series {
        for (t, p) in &s.samples {
            let e = p.stress;
            let tot = p.total_stress();
            writeln!(
                w,
                "{},{t},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.label,
                s.position.x,
                s.position.y,
                e.xx,
                e.yy,
                e.xy,
                e.zz,
                tot.xx,
                tot.yy,
                tot.xy,
                tot.zz,
                p.p_w,
                p.v.x,
                p.v.y
            )?;
        }
    }
    Ok(())
}

/// Samples probes at a uniform cadence: the first step at or past each
/// multiple of `interval`.
#[derive(Clone, Debug)]
pub struct ProbeRecorder {
    pub series: Vec<ProbeSeries>,
    interval: f64,
    next: u64,
}

impl ProbeRecorder {
    pub fn new(series: Vec<ProbeSeries>, interval: f64) -> Self {
        ProbeRecorder {
            series,
            interval,
            next: 0,
        }
    }

    pub fn for_config(c: &ScenarioConfig) -> Self {
        let series = c
            .probes
            .iter()
            .map(|p| ProbeSeries::new(p.label.clone(), Vec2::new(p.x, p.y)))
            .collect();
        ProbeRecorder::new(series, c.output.probe_interval)
    }

    pub fn observe(&mut self, sim: &Simulation) {
        if self.interval <= 0.0 {
            return;
        }
        if sim.time() + 1e-12 >= self.next as f64 * self.interval {
            for s in &mut self.series {
                s.record(sim);
            }
            self.next = (sim.time() / self.interval + 1e-9).floor() as u64 + 1;
        }
    }

    /// Records the final state unless it was just sampled.
    pub fn finish(&mut self, sim: &Simulation) {
        for s in &mut self.series {
            if s.samples.last().is_none_or(|(t, _)| *t != sim.time()) {
                s.record(sim);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub syy_eff: f64,
    pub syy_eff_target: Option<f64>,
    pub syy_eff_rel_error: Option<f64>,
    pub syy_total: f64,
    pub syy_total_target: Option<f64>,
    pub syy_total_rel_error: Option<f64>,
}

fn rel_err(value: f64, target: f64) -> Option<f64> {
    (target != 0.0).then(|| ((value - target) / target).abs())
}

/// Final probe values against the layered-column oracle, or without
/// targets when `oracle` is `None`.
pub fn probe_report(series: &[ProbeSeries], oracle: Option<&dyn Fn(f64) -> Option<ColumnOracle>>) -> Vec<ReportRow> {
    series
        .iter()
        .filter_map(|s| {
            let last = s.last()?;
            let col = oracle.and_then(|o| o(s.position.x));
            let eff_t = col.map(|c| c.effective_vertical(s.position.y));
            let tot_t = col.map(|c| c.total_vertical(s.position.y));
            let eff = last.stress.yy;
            let tot = last.total_stress().yy;
            Some(ReportRow {
                label: s.label.clone(),
                x: s.position.x,
                y: s.position.y,
                syy_eff: eff,
                syy_eff_target: eff_t,
                syy_eff_rel_error: eff_t.and_then(|t| rel_err(eff, t)),
                syy_total: tot,
                syy_total_target: tot_t,
                syy_total_rel_error: tot_t.and_then(|t| rel_err(tot, t)),
            })
        })
        .collect()
}

pub fn write_report_csv<W: Write>(w: &mut W, rows: &[ReportRow]) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    writeln!(
        w,
        "label,x[m],y[m],syy_eff[Pa],syy_eff_target[Pa],syy_eff_rel_error,syy[Pa],syy_target[Pa],syy_rel_error"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.label,
            r.x,
            r.y,
            r.syy_eff,
            opt(r.syy_eff_target),
            opt(r.syy_eff_rel_error),
            r.syy_total,
            opt(r.syy_total_target),
            opt(r.syy_total_rel_error)
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Run driver
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Overrides {
    pub pore_water: Option<PoreWaterForm>,
    pub stress_form: Option<StressForm>,
    pub no_kernel_correction: bool,
    pub xi: Option<f64>,
    pub deterministic: bool,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ScenarioConfig) {
        if let Some(f) = self.pore_water {
            c.solver.pore_water = f;
        }
        if let Some(f) = self.stress_form {
            c.solver.stress_form = f;
        }
        if self.no_kernel_correction {
            c.solver.kernel_correction = false;
        }
        if let Some(xi) = self.xi {
            c.loading.xi = xi;
        }
        if self.deterministic {
            c.solver.deterministic = true;
        }
        if let (Some(seed), Some(p)) = (self.seed, c.perturbation.as_mut()) {
            p.seed = seed;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Divergence {
    pub step: u64,
    pub particle: usize,
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub name: String,
    pub steps: u64,
    pub end_time: f64,
    pub converged: bool,
}

impl PhaseRecord {
    fn new(name: &str, s: &PhaseSummary) -> Self {
        PhaseRecord {
            name: name.into(),
            steps: s.steps,
            end_time: s.end_time,
            converged: s.converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub status: String,
    pub config: ScenarioConfig,
    pub overrides: Overrides,
    pub soil_particles: usize,
    pub virtual_particles: usize,
    pub ghost_particles: usize,
    pub steps: u64,
    pub time: f64,
    pub phases: Vec<PhaseRecord>,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Time step whenever it moved by more than 0.1% since the last entry.
    pub dt_history: Vec<DtRecord>,
    pub counters: Counters,
    /// Largest outward displacement of an initial free-surface particle
    /// over the run, m.
    pub surface_expulsion: f64,
    pub surface_expulsion_final: f64,
    /// Largest total displacement of an initial free-surface particle, m.
    pub surface_max_displacement: f64,
    /// Surface particle displaced by more than five spacings.
    pub surface_expelled: bool,
    pub divergence: Option<Divergence>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Option<Manifest>,
    pub message: String,
}

fn io_err(path: &Path, e: io::Error) -> SphError {
    SphError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

struct Outputs {
    dir: PathBuf,
    vtk: bool,
    snapshot_interval: f64,
    next_snapshot: u64,
    error: Option<SphError>,
}

impl Outputs {
    fn snapshot(&mut self, sim: &Simulation, name: &str) -> Result<()> {
        let csv = self.dir.join(format!("{name}.csv"));
        write_file(&csv, |w| write_snapshot_csv(w, sim.time(), sim.particles()))?;
        if self.vtk {
            let vtk = self.dir.join(format!("{name}.vtk"));
            write_file(&vtk, |w| write_vtk(w, sim.time(), sim.particles()))?;
        }
        Ok(())
    }

    fn observe(&mut self, sim: &Simulation) {
        if self.snapshot_interval <= 0.0 || self.error.is_some() {
            return;
        }
        if sim.time() + 1e-12 >= self.next_snapshot as f64 * self.snapshot_interval {
            let name = format!("snapshot_{:06}", sim.steps());
            if let Err(e) = self.snapshot(sim, &name) {
                self.error = Some(e);
            }
            self.next_snapshot = (sim.time() / self.snapshot_interval + 1e-9).floor() as u64 + 1;
        }
    }
}

fn surface_displacement(sim: &Simulation, initial: &[(usize, Vec2)]) -> f64 {
    initial
        .iter()
        .map(|(i, x0)| (sim.soil()[*i].x - x0).norm())
        .fold(0.0, f64::max)
}

/// Loads, validates and runs a scenario, writing snapshots, `probes.csv`,
/// `report.csv` and `manifest.json` into `out_dir`.
pub fn run(scenario: &Path, out_dir: &Path, overrides: &Overrides) -> RunOutcome {
    let mut config = match load_scenario(scenario) {
        Ok(c) => c,
        Err(e) => {
            return RunOutcome {
                exit_code: EXIT_INVALID,
                manifest: None,
                message: e.to_string(),
            }
        }
    };
    overrides.apply(&mut config);
    run_config(config, out_dir, overrides)
}

pub fn run_config(config: ScenarioConfig, out_dir: &Path, overrides: &Overrides) -> RunOutcome {
    let invalid = |message: String| RunOutcome {
        exit_code: EXIT_INVALID,
        manifest: None,
        message,
    };
    let report = validate_config(&config);
    for w in &report.warnings {
        warn!("{w}");
    }
    if !report.is_ok() {
        return invalid(report.to_string());
    }
    let mut sim = match config.build_simulation() {
        Ok(s) => s,
        Err(e) => return invalid(e.to_string()),
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        return invalid(io_err(out_dir, e).to_string());
    }
    info!(
        "{}: {} soil, {} virtual, {} ghost particles, dt = {} s",
        config.name,
        sim.soil().len(),
        sim.n_virtual(),
        sim.n_ghosts(),
        sim.dt()
    );

    let initial_surface: Vec<(usize, Vec2)> = sim
        .surface_particles()
        .into_iter()
        .map(|i| (i, sim.soil()[i].x))
        .collect();
    let mut probes = ProbeRecorder::for_config(&config);
    let mut outputs = Outputs {
        dir: out_dir.to_path_buf(),
        vtk: config.output.vtk,
        snapshot_interval: config.output.snapshot_interval,
        next_snapshot: 0,
        error: None,
    };
    let mut max_surface_disp = 0.0f64;
    let mut phases = Vec::new();
    let mut observer = |s: &Simulation| {
        probes.observe(s);
        outputs.observe(s);
        max_surface_disp = max_surface_disp.max(surface_displacement(s, &initial_surface));
    };
    observer(&sim);

    let mut result: Result<()> = Ok(());
    if config.loading.method == LoadingMethod::GravityDamped && config.loading.duration > 0.0 {
        let control = PhaseControl::from(&config.loading);
        match gravity_load_phase(&mut sim, config.loading.xi, &control, &mut observer) {
            Ok(s) => phases.push(PhaseRecord::new("loading", &s)),
            Err(e) => result = Err(e),
        }
    }
    if result.is_ok() && config.analysis.duration > 0.0 {
        sim.set_damping(DampingParams::off());
        match run_phase(&mut sim, &PhaseControl::fixed(config.analysis.duration), &mut observer) {
            Ok(s) => phases.push(PhaseRecord::new("analysis", &s)),
            Err(e) => result = Err(e),
        }
    }
    probes.finish(&sim);

    let divergence = match &result {
        Err(SphError::Diverged { step, particle, field }) => Some(Divergence {
            step: *step,
            particle: *particle,
            field: field.to_string(),
            message: result.as_ref().unwrap_err().to_string(),
        }),
        _ => None,
    };
    if let Err(e) = &result {
        if divergence.is_none() {
            return invalid(e.to_string());
        }
    }
    let status = if divergence.is_some() { "diverged" } else { "ok" };
    let counters = sim.counters();
    let manifest = Manifest {
        status: status.into(),
        config: config.clone(),
        overrides: *overrides,
        soil_particles: sim.soil().len(),
        virtual_particles: sim.n_virtual(),
        ghost_particles: sim.n_ghosts(),
        steps: sim.steps(),
        time: sim.time(),
        phases,
        dt_min: sim.dt_range().0,
        dt_max: sim.dt_range().1,
        dt_history: sim.dt_history().to_vec(),
        counters,
        surface_expulsion: sim.max_expulsion(),
        surface_expulsion_final: sim.expulsion_now(),
        surface_max_displacement: max_surface_disp,
        surface_expelled: max_surface_disp > 5.0 * config.lattice.spacing,
        divergence,
    };

    let oracle = |x: f64| config.column_oracle(x);
    let rows = probe_report(&probes.series, Some(&oracle));
    let written = outputs
        .error
        .take()
        .map_or(Ok(()), Err)
        .and_then(|_| outputs.snapshot(&sim, if status == "ok" { "final" } else { "last_good" }))
        .and_then(|_| write_file(&out_dir.join("probes.csv"), |w| write_probes_csv(w, &probes.series)))
        .and_then(|_| write_file(&out_dir.join("report.csv"), |w| write_report_csv(w, &rows)))
        .and_then(|_| {
            let json = serde_json::to_string_pretty(&manifest)
                .map_err(|e| SphError::Validation(format!("cannot serialize manifest: {e}")))?;
            write_file(&out_dir.join("manifest.json"), |w| writeln!(w, "{json}"))
        });
    if let Err(e) = written {
        return RunOutcome {
            exit_code: EXIT_INVALID,
            manifest: Some(manifest),
            message: e.to_string(),
        };
    }
    let (exit_code, message) = match &manifest.divergence {
        Some(d) => (EXIT_DIVERGED, d.message.clone()),
        None => (
            EXIT_OK,
            format!(
                "{} finished at t = {} s after {} steps",
                config.name,
                sim.time(),
                sim.steps()
            ),
        ),
    };
    RunOutcome {
        exit_code,
        manifest: Some(manifest),
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn presets_round_trip() {
        for c in [ScenarioConfig::submerged_foundation(), ScenarioConfig::embankment()] {
            let text = emit_scenario(&c).unwrap();
            assert_eq!(parse_scenario(&text, "x.toml").unwrap(), c);
        }
    }

    #[test]
    fn empty_file_is_parse_error() {
        let e = parse_scenario("  \n", "empty.toml").unwrap_err();
        assert!(matches!(e, SphError::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_error_reports_line() {
        let mut text = emit_scenario(&ScenarioConfig::submerged_foundation()).unwrap();
        let line = text.lines().position(|l| l.starts_with("name")).unwrap() + 1;
        text = text.replacen("name = ", "nmae = ", 1);
        match parse_scenario(&text, "bad.toml").unwrap_err() {
            SphError::Parse { line: l, message, .. } => {
                assert_eq!(l, line, "{message}");
                assert!(message.contains("nmae"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn wrong_schema_version() {
        let text = emit_scenario(&ScenarioConfig::submerged_foundation())
            .unwrap()
            .replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(parse_scenario(&text, "v.toml"), Err(SphError::Parse { .. })));
    }

    #[test]
    fn validate_examples() {
        let c = ScenarioConfig::submerged_foundation();
        let r = validate_config(&c);
        assert!(r.is_ok() && r.warnings.is_empty(), "{r}");
        assert_eq!(r.to_string(), "ok\n");

        let mut bad = c.clone();
        bad.material.poisson = 0.5;
        let r = validate_config(&bad);
        assert!(r.violations.iter().any(|v| v.contains("Poisson ratio singular")), "{r}");

        let mut wide = c.clone();
        wide.loading.xi = 0.05;
        let r = validate_config(&wide);
        assert!(
            r.warnings
                .iter()
                .any(|w| w.contains("outside recommended range 0.001–0.005")),
            "{r}"
        );

        let mut narrow = c;
        narrow.lattice.h_ratio = -1.0;
        assert!(!validate_config(&narrow).is_ok());
    }

    #[test]
    fn snapshot_round_trip_is_bitwise() {
        let c = ScenarioConfig::submerged_foundation();
        let mut ps = c.build_particles().unwrap();
        ps[3].stress = Stress::new(-1.0 / 3.0, 2e-310, 1e300, -0.1);
        ps[4].v = Vec2::new(std::f64::consts::PI, -1e-17);
        ps[5].kind = ParticleKind::Ghost;
        let mut buf = Vec::new();
        write_snapshot_csv(&mut buf, 0.1 + 0.2, &ps).unwrap();
        let (t, back) = read_snapshot_csv(Cursor::new(buf), "mem").unwrap();
        assert_eq!(t.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back, ps);
    }

    #[test]
    fn snapshot_header_has_units() {
        let mut buf = Vec::new();
        write_snapshot_csv(&mut buf, 0.0, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("syy_eff[Pa]"));
    }

    #[test]
    fn report_without_oracle_has_blank_targets() {
        let mut s = ProbeSeries::new("A", Vec2::new(1.0, 3.0));
        s.samples.push((
            1.0,
            ProbeSample {
                stress: Stress::new(0.0, -30570.0, 0.0, 0.0),
                p_w: -1.0,
                v: Vec2::zeros(),
            },
        ));
        let rows = probe_report(std::slice::from_ref(&s), None);
        assert_eq!(rows[0].syy_eff_target, None);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("A,1,3,-30570,,,"));
    }

    #[test]
    fn report_targets_submerged_probe() {
        let c = ScenarioConfig::submerged_foundation();
        let s = {
            let mut s = ProbeSeries::new("mid", Vec2::new(12.5, 3.0));
            s.samples.push((
                0.0,
                ProbeSample {
                    stress: Stress::ZERO,
                    p_w: 0.0,
                    v: Vec2::zeros(),
                },
            ));
            s
        };
        let oracle = |x: f64| c.column_oracle(x);
        let rows = probe_report(&[s], Some(&oracle));
        assert!((rows[0].syy_eff_target.unwrap() + 30_570.0).abs() < 1e-9);
    }

    #[test]
    fn vtk_counts() {
        let ps = ScenarioConfig::submerged_foundation().build_particles().unwrap();
        let mut buf = Vec::new();
        write_vtk(&mut buf, 0.0, &ps[..10]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("POINTS 10 double"));
        assert!(text.contains("VERTICES 10 20"));
        assert!(text.contains("POINT_DATA 10"));
    }

    #[test]
    fn recorder_cadence_is_uniform() {
        let mut c = ScenarioConfig::submerged_foundation();
        c.geometry = crate::scenarios::Geometry::Rectangle {
            x0: 0.0,
            y0: 0.0,
            width: 2.0,
            height: 1.0,
        };
        c.probes[0].x = 1.0;
        c.probes[0].y = 0.5;
        c.probes.truncate(1);
        c.output.probe_interval = 0.005;
        let mut sim = c.build_simulation().unwrap();
        let mut rec = ProbeRecorder::for_config(&c);
        rec.observe(&sim);
        for _ in 0..100 {
            sim.step().unwrap();
            rec.observe(&sim);
        }
        let ts: Vec<f64> = rec.series[0].samples.iter().map(|s| s.0).collect();
        assert_eq!(ts[0], 0.0);
        for (k, t) in ts.iter().enumerate() {
            assert!(
                *t >= k as f64 * 0.005 - 1e-12 && *t < k as f64 * 0.005 + sim.dt(),
                "{k} {t}"
            );
        }
    }
}
