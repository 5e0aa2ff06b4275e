//! Geometry builders, pore-pressure assignment, initial-stress procedures
//! and the scenario file schema.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryCondition, BoundarySpec, Side, Wall};
use crate::constitutive::{MaterialParams, GRAVITY};
use crate::engine::{Simulation, SolverSettings};
use crate::error::{Result, SphError};
use crate::kernel::Kernel;
use crate::momentum::DampingParams;
use crate::particles::{Particle, ParticleKind};
use crate::tensor::{Stress, Vec2};

pub const SCHEMA_VERSION: u32 = 1;

/// Horizontal free water surface with hydrostatic pore pressure below it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterTable {
    pub level: f64,
    pub gamma_w: f64,
}

impl WaterTable {
    /// `-gamma_w (level - y)` below the water surface, zero above.
    pub fn pressure_at(&self, y: f64) -> f64 {
        if y <= self.level {
            -self.gamma_w * (self.level - y)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Rectangle {
        x0: f64,
        y0: f64,
        width: f64,
        height: f64,
    },
    /// Simple polygon, vertices in order (either orientation).
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

impl Geometry {
    /// `(min, max)` corners of the bounding box.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        match self {
            Geometry::Rectangle { x0, y0, width, height } => (Vec2::new(*x0, *y0), Vec2::new(x0 + width, y0 + height)),
            Geometry::Polygon { vertices } => {
                let mut lo = Vec2::repeat(f64::INFINITY);
                let mut hi = Vec2::repeat(f64::NEG_INFINITY);
                for v in vertices {
                    lo = lo.inf(&Vec2::new(v[0], v[1]));
                    hi = hi.sup(&Vec2::new(v[0], v[1]));
                }
                (lo, hi)
            }
        }
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        match self {
            Geometry::Rectangle { .. } => {
                let (lo, hi) = self.bounds();
                p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
            }
            Geometry::Polygon { vertices } => {
                // even-odd ray casting
                let mut inside = false;
                let n = vertices.len();
                let mut j = n.wrapping_sub(1);
                for i in 0..n {
                    let (xi, yi) = (vertices[i][0], vertices[i][1]);
                    let (xj, yj) = (vertices[j][0], vertices[j][1]);
                    if (yi > p.y) != (yj > p.y) && p.x < (xj - xi) * (p.y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }

    /// Ground-surface elevation above `x` (top of the geometry along a
    /// vertical line), if the line meets the geometry.
    pub fn surface_at(&self, x: f64) -> Option<f64> {
        match self {
            Geometry::Rectangle { .. } => {
                let (lo, hi) = self.bounds();
                (x >= lo.x && x <= hi.x).then_some(hi.y)
            }
            Geometry::Polygon { vertices } => {
                let n = vertices.len();
                let mut best: Option<f64> = None;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let (x0, x1) = (a[0].min(b[0]), a[0].max(b[0]));
                    if x < x0 || x > x1 {
                        continue;
                    }
                    let y = if (b[0] - a[0]).abs() < 1e-15 {
                        a[1].max(b[1])
                    } else {
                        a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
                    };
                    best = Some(best.map_or(y, |v: f64| v.max(y)));
                }
                best
            }
        }
    }

    fn area(&self) -> f64 {
        match self {
            Geometry::Rectangle { width, height, .. } => width * height,
            Geometry::Polygon { vertices } => {
                let n = vertices.len();
                0.5 * (0..n)
                    .map(|i| {
                        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                        a[0] * b[1] - b[0] * a[1]
                    })
                    .sum::<f64>()
                    .abs()
            }
        }
    }
}

/// Uniform lattice of soil particles filling `geometry`, spacing `spacing`.
/// Density follows the saturated unit weight below the water table and the
/// unsaturated one above it; mass is `rho0 * spacing^2`.
pub fn build_lattice(
    geometry: &Geometry,
    spacing: f64,
    material: &MaterialParams,
    water: Option<&WaterTable>,
) -> Result<Vec<Particle>> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(SphError::invalid(format!(
            "particle spacing must be positive, got {spacing}"
        )));
    }
    if let Geometry::Polygon { vertices } = geometry {
        if vertices.len() < 3 {
            return Err(SphError::invalid("polygon needs at least three vertices"));
        }
    }
    let (lo, hi) = geometry.bounds();
    if !(geometry.area() > 0.0) || !(hi.x > lo.x && hi.y > lo.y) {
        return Err(SphError::invalid("empty geometry"));
    }
    let nx = ((hi.x - lo.x) / spacing + 1e-9).floor() as usize;
    let ny = ((hi.y - lo.y) / spacing + 1e-9).floor() as usize;
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let x = lo + Vec2::new((i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing);
            if !geometry.contains(&x) {
                continue;
            }
            let gamma = match water {
                Some(w) if x.y <= w.level => material.gamma_sat,
                Some(_) => material.unit_weight_dry(),
                None => material.unit_weight_dry(),
            };
            let rho = gamma / GRAVITY;
            out.push(Particle::soil(x, rho, rho * spacing * spacing));
        }
    }
    if out.is_empty() {
        return Err(SphError::invalid("empty geometry: no lattice points inside"));
    }
    Ok(out)
}

pub fn assign_pore_pressure(particles: &mut [Particle], water: Option<&WaterTable>) {
    for p in particles.iter_mut() {
        p.p_w = water.map_or(0.0, |w| w.pressure_at(p.x.y));
    }
}

/// Vertical stresses of a horizontally layered column with its ground
/// surface at `surface`: unsaturated unit weight above the water table,
/// buoyant unit weight below it.
#[derive(Clone, Copy, Debug)]
pub struct ColumnOracle {
    pub surface: f64,
    pub water: Option<WaterTable>,
    pub material: MaterialParams,
}

impl ColumnOracle {
    pub fn effective_vertical(&self, y: f64) -> f64 {
        if y >= self.surface {
            return 0.0;
        }
        let m = &self.material;
        match self.water {
            None => -m.unit_weight_dry() * (self.surface - y),
            Some(w) => {
                let dry = (self.surface - y.max(w.level)).max(0.0);
                let wet = (self.surface.min(w.level) - y).max(0.0);
                -(m.unit_weight_dry() * dry + m.unit_weight_submerged() * wet)
            }
        }
    }

    pub fn pore_pressure(&self, y: f64) -> f64 {
        self.water.map_or(0.0, |w| w.pressure_at(y))
    }

    pub fn total_vertical(&self, y: f64) -> f64 {
        self.effective_vertical(y) + self.pore_pressure(y)
    }
}

/// Jaky's earth-pressure coefficient at rest, `1 - sin(phi)`.
pub fn k0_coefficient(friction_angle_deg: f64) -> f64 {
    1.0 - friction_angle_deg.to_radians().sin()
}

/// K0 initial stresses. Only horizontally layered ground is supported.
pub fn k0_initialize(
    particles: &mut [Particle],
    geometry: &Geometry,
    material: &MaterialParams,
    water: Option<&WaterTable>,
    friction_angle_deg: f64,
) -> Result<()> {
    let (lo, hi) = geometry.bounds();
    let surface = hi.y;
    let flat = particles.iter().filter(|p| p.kind == ParticleKind::Soil).all(|p| {
        geometry
            .surface_at(p.x.x)
            .is_some_and(|s| (s - surface).abs() <= 1e-9 * (hi.y - lo.y).max(1.0))
    });
    if !flat {
        return Err(SphError::UnsupportedGeometry(
            "K0 initialization requires a horizontal ground surface".into(),
        ));
    }
    let oracle = ColumnOracle {
        surface,
        water: water.copied(),
        material: *material,
    };
    let k0 = k0_coefficient(friction_angle_deg);
    for p in particles.iter_mut().filter(|p| p.kind == ParticleKind::Soil) {
        let syy = oracle.effective_vertical(p.x.y);
        p.stress = Stress::new(k0 * syy, syy, 0.0, k0 * syy);
    }
    Ok(())
}

/// Small seeded random displacement of every particle, a fraction
/// `amplitude` of the spacing in each direction.
pub fn perturb(particles: &mut [Particle], spacing: f64, amplitude: f64, seed: u64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = amplitude * spacing;
    if a <= 0.0 {
        return;
    }
    for p in particles.iter_mut() {
        p.x += Vec2::new(rng.gen_range(-a..a), rng.gen_range(-a..a));
    }
}

// ---------------------------------------------------------------------------
// Scenario schema
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub spacing: f64,
    /// Smoothing length as a multiple of the spacing.
    #[serde(default = "default_h_ratio")]
    pub h_ratio: f64,
}

fn default_h_ratio() -> f64 {
    1.2
}

impl LatticeConfig {
    pub fn smoothing_length(&self) -> f64 {
        self.h_ratio * self.spacing
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub bottom: BoundaryCondition,
    #[serde(default = "free")]
    pub top: BoundaryCondition,
}

fn free() -> BoundaryCondition {
    BoundaryCondition::Free
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadingMethod {
    GravityDamped,
    K0,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingConfig {
    pub method: LoadingMethod,
    #[serde(default = "default_xi")]
    pub xi: f64,
    /// Maximum duration of the loading phase, s.
    #[serde(default = "default_loading_duration")]
    pub duration: f64,
    /// Early exit once the peak speed stays below this for `converge_steps`.
    #[serde(default = "default_converge_velocity")]
    pub converge_velocity: f64,
    #[serde(default = "default_converge_steps")]
    pub converge_steps: u64,
    /// Friction angle for the K0 method, degrees.
    #[serde(default)]
    pub friction_angle: Option<f64>,
}

fn default_xi() -> f64 {
    0.002
}
fn default_loading_duration() -> f64 {
    4.0
}
fn default_converge_velocity() -> f64 {
    1e-4
}
fn default_converge_steps() -> u64 {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Probe sampling interval, s.
    pub probe_interval: f64,
    /// Snapshot interval, s; zero writes only the final state.
    pub snapshot_interval: f64,
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            probe_interval: 0.01,
            snapshot_interval: 0.0,
            vtk: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Fraction of the spacing.
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub geometry: Geometry,
    pub lattice: LatticeConfig,
    pub material: MaterialParams,
    #[serde(default)]
    pub water_level: Option<f64>,
    pub boundaries: BoundaryConfig,
    pub loading: LoadingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub probes: Vec<ProbeConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
}

impl ScenarioConfig {
    pub fn water_table(&self) -> Option<WaterTable> {
        self.water_level.map(|level| WaterTable {
            level,
            gamma_w: self.material.gamma_w,
        })
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::new(self.lattice.smoothing_length())
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        let (lo, hi) = self.geometry.bounds();
        let b = &self.boundaries;
        let walls = vec![
            Wall {
                side: Side::Left,
                position: lo.x,
                span: (lo.y, hi.y),
                condition: b.left,
            },
            Wall {
                side: Side::Right,
                position: hi.x,
                span: (lo.y, hi.y),
                condition: b.right,
            },
            Wall {
                side: Side::Bottom,
                position: lo.y,
                span: (lo.x, hi.x),
                condition: b.bottom,
            },
            Wall {
                side: Side::Top,
                position: hi.y,
                span: (lo.x, hi.x),
                condition: b.top,
            },
        ];
        BoundarySpec {
            walls: walls
                .into_iter()
                .filter(|w| w.condition != BoundaryCondition::Free)
                .collect(),
            band_width: 2.0 * self.lattice.smoothing_length(),
            spacing: self.lattice.spacing,
            origin: lo,
        }
    }

    /// Analytic layered column at horizontal position `x`.
    pub fn column_oracle(&self, x: f64) -> Option<ColumnOracle> {
        self.geometry.surface_at(x).map(|surface| ColumnOracle {
            surface,
            water: self.water_table(),
            material: self.material,
        })
    }

    /// Initial soil particles: lattice, optional perturbation, pore pressure.
    pub fn build_particles(&self) -> Result<Vec<Particle>> {
        let water = self.water_table();
        let mut ps = build_lattice(&self.geometry, self.lattice.spacing, &self.material, water.as_ref())?;
        if let Some(p) = &self.perturbation {
            perturb(&mut ps, self.lattice.spacing, p.amplitude, p.seed);
        }
        assign_pore_pressure(&mut ps, water.as_ref());
        if self.loading.method == LoadingMethod::K0 {
            let phi = self
                .loading
                .friction_angle
                .ok_or_else(|| SphError::invalid("K0 loading needs loading.friction_angle"))?;
            k0_initialize(&mut ps, &self.geometry, &self.material, water.as_ref(), phi)?;
        }
        Ok(ps)
    }

    pub fn build_simulation(&self) -> Result<Simulation> {
        self.material.validate()?;
        let particles = self.build_particles()?;
        Simulation::new(
            particles,
            vec![self.material],
            self.boundary_spec(),
            self.water_table(),
            self.kernel()?,
            self.lattice.spacing,
            self.solver.clone(),
        )
    }

    /// Submerged elastic foundation: a 25 m x 6 m stratum under 1 m of
    /// water, roller sides and a fixed base, 3750 particles at 0.2 m.
    pub fn submerged_foundation() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            name: "submerged-foundation".into(),
            geometry: Geometry::Rectangle {
                x0: 0.0,
                y0: 0.0,
                width: 25.0,
                height: 6.0,
            },
            lattice: LatticeConfig {
                spacing: 0.2,
                h_ratio: 1.2,
            },
            material: MaterialParams {
                young: 15e6,
                poisson: 0.33,
                gamma_sat: 20e3,
                gamma_unsat: None,
                gamma_w: 9.81e3,
            },
            water_level: Some(7.0),
            boundaries: BoundaryConfig {
                left: BoundaryCondition::FreeRoller,
                right: BoundaryCondition::FreeRoller,
                bottom: BoundaryCondition::FullFixity,
                top: BoundaryCondition::Free,
            },
            loading: LoadingConfig {
                method: LoadingMethod::GravityDamped,
                xi: 0.002,
                duration: 4.0,
                converge_velocity: default_converge_velocity(),
                converge_steps: default_converge_steps(),
                friction_angle: None,
            },
            analysis: AnalysisConfig::default(),
            solver: SolverSettings::default(),
            probes: vec![
                ProbeConfig {
                    label: "A".into(),
                    x: 12.5,
                    y: 4.5,
                },
                ProbeConfig {
                    label: "B".into(),
                    x: 12.5,
                    y: 1.5,
                },
            ],
            output: OutputConfig::default(),
            perturbation: None,
        }
    }

    /// Two-sided embankment on a submerged foundation; steeper left slope.
    /// Sized to give about 8450 particles at 0.2 m spacing.
    pub fn embankment() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            name: "two-side-embankment".into(),
            geometry: Geometry::Polygon {
                vertices: vec![
                    [0.0, 0.0],
                    [60.0, 0.0],
                    [60.0, 4.0],
                    [45.0, 4.0],
                    [37.0, 8.0],
                    [19.0, 8.0],
                    [15.0, 4.0],
                    [0.0, 4.0],
                ],
            },
            lattice: LatticeConfig {
                spacing: 0.2,
                h_ratio: 1.2,
            },
            material: MaterialParams {
                young: 15e6,
                poisson: 0.25,
                gamma_sat: 20e3,
                gamma_unsat: Some(18.6e3),
                gamma_w: 9.81e3,
            },
            water_level: Some(5.0),
            boundaries: BoundaryConfig {
                left: BoundaryCondition::FreeRoller,
                right: BoundaryCondition::FreeRoller,
                bottom: BoundaryCondition::FullFixity,
                top: BoundaryCondition::Free,
            },
            loading: LoadingConfig {
                method: LoadingMethod::GravityDamped,
                xi: 0.002,
                duration: 4.0,
                converge_velocity: default_converge_velocity(),
                converge_steps: default_converge_steps(),
                friction_angle: None,
            },
            analysis: AnalysisConfig::default(),
            solver: SolverSettings::default(),
            probes: vec![
                ProbeConfig {
                    label: "far-left-upper".into(),
                    x: 4.1,
                    y: 2.1,
                },
                ProbeConfig {
                    label: "far-left-lower".into(),
                    x: 4.1,
                    y: 1.1,
                },
                ProbeConfig {
                    label: "far-right-upper".into(),
                    x: 55.9,
                    y: 2.1,
                },
                ProbeConfig {
                    label: "far-right-lower".into(),
                    x: 55.9,
                    y: 1.1,
                },
                ProbeConfig {
                    label: "crest".into(),
                    x: 28.1,
                    y: 4.1,
                },
            ],
            output: OutputConfig::default(),
            perturbation: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Gravity loading
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseControl {
    pub duration: f64,
    pub converge_velocity: f64,
    pub converge_steps: u64,
}

impl PhaseControl {
    pub fn fixed(duration: f64) -> Self {
        PhaseControl {
            duration,
            converge_velocity: 0.0,
            converge_steps: u64::MAX,
        }
    }
}

impl From<&LoadingConfig> for PhaseControl {
    fn from(c: &LoadingConfig) -> Self {
        PhaseControl {
            duration: c.duration,
            converge_velocity: c.converge_velocity,
            converge_steps: c.converge_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSummary {
    pub steps: u64,
    pub end_time: f64,
    pub converged: bool,
}

/// Runs `sim` until `control.duration` has elapsed or the peak speed has
/// stayed below the convergence threshold for the required number of steps.
/// `observer` is called after every step.
pub fn run_phase(
    sim: &mut Simulation,
    control: &PhaseControl,
    observer: &mut dyn FnMut(&Simulation),
) -> Result<PhaseSummary> {
    let start = sim.time();
    let mut calm = 0u64;
    let mut steps = 0u64;
    let mut converged = false;
    while sim.time() - start < control.duration - 1e-12 {
        let report = sim.step()?;
        steps += 1;
        observer(sim);
        if report.max_speed < control.converge_velocity {
            calm += 1;
            if calm >= control.converge_steps {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    Ok(PhaseSummary {
        steps,
        end_time: sim.time(),
        converged,
    })
}

/// Gravity loading in a single increment with damping `xi`, from a
/// stress-free state. Damping is switched off afterwards.
pub fn gravity_load_phase(
    sim: &mut Simulation,
    xi: f64,
    control: &PhaseControl,
    observer: &mut dyn FnMut(&Simulation),
) -> Result<PhaseSummary> {
    if sim.soil().iter().any(|p| p.stress != Stress::ZERO) {
        return Err(SphError::invalid(
            "gravity loading must start from zero effective stress",
        ));
    }
    sim.set_damping(DampingParams::new(xi)?);
    let summary = run_phase(sim, control, observer);
    sim.set_damping(DampingParams::off());
    summary
}
