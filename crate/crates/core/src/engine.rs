//! Kick-drift-kick leapfrog integration and step orchestration.
//!
//! Particle storage is `[soil | virtual | ghosts]`. Only soil particles are
//! integrated; virtual particles are static and copy their state from a
//! fixed soil source, ghosts are regenerated from the soil every step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{
    generate_fixed_boundary, generate_ghosts, ghost_signature, sync_ghosts, sync_virtual, BoundarySpec, GhostLink,
};
use crate::constitutive::{integrate_stress, sound_speed, MaterialParams, GRAVITY};
use crate::error::{Result, SphError};
use crate::kernel::{CorrectionMatrix, Kernel};
use crate::momentum::{
    artificial_stress_tensor, kernel_sum, surface_deficiency, total_acceleration, DampingParams, ForceModel,
    FormulationSwitch, PoreWaterForm, StabilizationParams, StressForm,
};
use crate::particles::{density_rate, NeighborCache, NeighborTable, Particle, ParticleKind};
use crate::scenarios::WaterTable;
use crate::sph_ops::{antisymmetric_part, correction_matrices, symmetric_part, velocity_gradient, SphContext};
use crate::tensor::{Mat2, Stress, Vec2};

/// Particles whose initial Shepard sum falls below this are free-surface
/// particles for the expulsion metric.
pub const SURFACE_SHEPARD_THRESHOLD: f64 = 0.95;

/// Relative change in the time step that earns a new dt history entry.
pub const DT_LOG_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Courant factor.
    pub cfl: f64,
    /// Steps between time-step recomputations.
    pub dt_interval: u64,
    /// Fixed time step overriding the CFL bound.
    pub fixed_dt: Option<f64>,
    pub kernel_correction: bool,
    /// Evolve density by the continuity equation.
    pub continuity: bool,
    pub stress_form: StressForm,
    pub pore_water: PoreWaterForm,
    pub stabilization: StabilizationParams,
    /// Gravitational acceleration magnitude, m/s^2.
    pub gravity: f64,
    /// Neighbor skin as a fraction of the particle spacing.
    pub skin: f64,
    /// Sequential, index-ordered evaluation everywhere.
    pub deterministic: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            cfl: 0.1,
            dt_interval: 10,
            fixed_dt: None,
            kernel_correction: true,
            continuity: true,
            stress_form: StressForm::RhoAb,
            pore_water: PoreWaterForm::CorrectedDifference,
            stabilization: StabilizationParams::default(),
            gravity: GRAVITY,
            skin: 0.1,
            deterministic: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SphError::invalid(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if self.dt_interval == 0 {
            return Err(SphError::invalid("dt_interval must be at least 1"));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(SphError::invalid(format!("fixed_dt must be positive, got {dt}")));
            }
        }
        if !(self.skin >= 0.0) || !self.gravity.is_finite() {
            return Err(SphError::invalid("skin must be non-negative and gravity finite"));
        }
        self.stabilization.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Counters {
    /// Correction matrices replaced by the identity, summed over steps.
    pub degenerate_corrections: u64,
    /// Largest number of fallbacks in a single step.
    pub max_degenerate_per_step: u64,
    pub neighbor_rebuilds: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DtRecord {
    pub step: u64,
    pub time: f64,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub time: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub kinetic_energy: f64,
}

/// Shepard-interpolated field values at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSample {
    pub stress: Stress,
    pub p_w: f64,
    pub v: Vec2,
}

impl ProbeSample {
    pub fn total_stress(&self) -> Stress {
        self.stress.plus_isotropic(self.p_w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct SurfaceParticle {
    index: usize,
    x0: Vec2,
    normal: Vec2,
    max_outward: f64,
}

/// Outward motion of one initial free-surface particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceRecord {
    pub index: usize,
    pub x0: Vec2,
    pub normal: Vec2,
    /// Running maximum of the outward normal displacement, m.
    pub max_outward: f64,
}

#[derive(Clone)]
pub struct Simulation {
    particles: Vec<Particle>,
    accel: Vec<Vec2>,
    n_soil: usize,
    n_virtual: usize,
    virtual_sources: Vec<usize>,
    ghost_links: Vec<GhostLink>,
    materials: Vec<MaterialParams>,
    boundary: BoundarySpec,
    water: Option<WaterTable>,
    kernel: Kernel,
    spacing: f64,
    settings: SolverSettings,
    damping: DampingParams,
    cache: NeighborCache,
    time: f64,
    steps: u64,
    dt: f64,
    dt_history: Vec<DtRecord>,
    dt_range: (f64, f64),
    counters: Counters,
    surface: Vec<SurfaceParticle>,
    max_expulsion: f64,
}

fn map_indices<T, F>(n: usize, sequential: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if sequential {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

impl Simulation {
    /// Sets up boundary particles, primes accelerations at `t = 0` and
    /// records the free-surface particles.
    pub fn new(
        soil: Vec<Particle>,
        materials: Vec<MaterialParams>,
        boundary: BoundarySpec,
        water: Option<WaterTable>,
        kernel: Kernel,
        spacing: f64,
        settings: SolverSettings,
    ) -> Result<Self> {
        if soil.is_empty() {
            return Err(SphError::invalid("no soil particles"));
        }
        if !(spacing > 0.0) {
            return Err(SphError::invalid(format!("spacing must be positive, got {spacing}")));
        }
        settings.validate()?;
        boundary.validate(kernel.support_radius())?;
        for m in &materials {
            m.validate()?;
        }
        for (i, p) in soil.iter().enumerate() {
            if p.kind != ParticleKind::Soil {
                return Err(SphError::invalid(format!("particle {i} is not a soil particle")));
            }
            if p.material >= materials.len() {
                return Err(SphError::invalid(format!(
                    "particle {i} refers to missing material {}",
                    p.material
                )));
            }
            if !(p.rho > 0.0 && p.mass > 0.0) {
                return Err(SphError::invalid(format!(
                    "particle {i} has non-positive mass or density"
                )));
            }
        }
        let n_soil = soil.len();
        let (virtuals, virtual_sources) = generate_fixed_boundary(&boundary, &soil, water.as_ref());
        let n_virtual = virtuals.len();
        let mut particles = soil;
        particles.extend(virtuals);
        let (ghosts, ghost_links) = generate_ghosts(&particles[..n_soil], &boundary);
        particles.extend(ghosts);

        let mut sim = Simulation {
            particles,
            accel: vec![Vec2::zeros(); n_soil],
            n_soil,
            n_virtual,
            virtual_sources,
            ghost_links,
            materials,
            boundary,
            water,
            kernel,
            spacing,
            cache: NeighborCache::new(settings.skin * spacing),
            settings,
            damping: DampingParams::off(),
            time: 0.0,
            steps: 0,
            dt: 0.0,
            dt_history: Vec::new(),
            dt_range: (f64::INFINITY, 0.0),
            counters: Counters::default(),
            surface: Vec::new(),
            max_expulsion: 0.0,
        };
        sim.dt = sim.next_dt();
        let table = sim.neighbor_table_for(&sim.particles.clone());
        sim.surface = sim.find_surface(&table);
        let (accel, _) = sim.accelerations(&sim.particles, &table, sim.dt)?;
        sim.accel = accel;
        Ok(sim)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn soil(&self) -> &[Particle] {
        &self.particles[..self.n_soil]
    }

    pub fn soil_mut(&mut self) -> &mut [Particle] {
        &mut self.particles[..self.n_soil]
    }

    pub fn n_virtual(&self) -> usize {
        self.n_virtual
    }

    pub fn n_ghosts(&self) -> usize {
        self.particles.len() - self.n_soil - self.n_virtual
    }

    /// Accelerations of the soil particles at the current time.
    pub fn accelerations_now(&self) -> &[Vec2] {
        &self.accel
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn materials(&self) -> &[MaterialParams] {
        &self.materials
    }

    pub fn water(&self) -> Option<&WaterTable> {
        self.water.as_ref()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dt_history(&self) -> &[DtRecord] {
        &self.dt_history
    }

    /// Smallest and largest time step used so far.
    pub fn dt_range(&self) -> (f64, f64) {
        self.dt_range
    }

    pub fn counters(&self) -> Counters {
        Counters {
            neighbor_rebuilds: self.cache.rebuilds(),
            ..self.counters
        }
    }

    pub fn damping(&self) -> DampingParams {
        self.damping
    }

    pub fn set_damping(&mut self, damping: DampingParams) {
        self.damping = damping;
    }

    /// Indices of the soil particles flagged as free surface at setup.
    pub fn surface_particles(&self) -> Vec<usize> {
        self.surface.iter().map(|s| s.index).collect()
    }

    pub fn surface_records(&self) -> Vec<SurfaceRecord> {
        self.surface
            .iter()
            .map(|s| SurfaceRecord {
                index: s.index,
                x0: s.x0,
                normal: s.normal,
                max_outward: s.max_outward,
            })
            .collect()
    }

    fn outward(&self, s: &SurfaceParticle) -> f64 {
        (self.particles[s.index].x - s.x0).dot(&s.normal).max(0.0)
    }

    /// Largest outward normal displacement of any free-surface particle
    /// from its initial position, at the current time.
    pub fn expulsion_now(&self) -> f64 {
        self.surface.iter().map(|s| self.outward(s)).fold(0.0, f64::max)
    }

    /// Running maximum of [`Simulation::expulsion_now`] over all steps.
    pub fn max_expulsion(&self) -> f64 {
        self.max_expulsion
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.soil().iter().map(|p| 0.5 * p.mass * p.v.norm_squared()).sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.soil().iter().map(|p| p.v.norm()).fold(0.0, f64::max)
    }

    pub fn total_mass(&self) -> f64 {
        self.soil().iter().map(|p| p.mass).sum()
    }

    pub fn momentum(&self) -> Vec2 {
        self.soil().iter().fold(Vec2::zeros(), |s, p| s + p.v * p.mass)
    }

    /// `cfl h / max(c_a + |v_a|)` over the soil particles.
    pub fn stable_dt(&self) -> f64 {
        stable_dt(self.soil(), &self.materials, self.kernel.h(), self.settings.cfl)
    }

    fn next_dt(&mut self) -> f64 {
        let dt = self.settings.fixed_dt.unwrap_or_else(|| self.stable_dt());
        self.dt_range = (self.dt_range.0.min(dt), self.dt_range.1.max(dt));
        if self
            .dt_history
            .last()
            .is_none_or(|r| (r.dt - dt).abs() > DT_LOG_TOLERANCE * r.dt)
        {
            self.dt_history.push(DtRecord {
                step: self.steps,
                time: self.time,
                dt,
            });
        }
        dt
    }

    fn gravity_vector(&self) -> Vec2 {
        Vec2::new(0.0, -self.settings.gravity)
    }

    fn neighbor_table_for(&mut self, ps: &[Particle]) -> NeighborTable {
        let positions: Vec<Vec2> = ps.iter().map(|p| p.x).collect();
        let sig = ghost_signature(&self.ghost_links);
        self.cache.table(&positions, &self.kernel, sig, self.n_soil)
    }

    fn corrections(&self, ps: &[Particle], table: &NeighborTable) -> (Option<Vec<CorrectionMatrix>>, usize) {
        if !self.settings.kernel_correction {
            return (None, 0);
        }
        let (m, bad) = correction_matrices(&self.kernel, ps, table, self.n_soil);
        (Some(m), bad)
    }

    fn find_surface(&self, table: &NeighborTable) -> Vec<SurfaceParticle> {
        let ctx = SphContext::new(&self.particles, table, None);
        (0..self.n_soil)
            .filter_map(|a| {
                let shepard = kernel_sum(&ctx, &self.kernel, a);
                if shepard >= SURFACE_SHEPARD_THRESHOLD {
                    return None;
                }
                let d = surface_deficiency(&ctx, a);
                let n = d.norm();
                (n > 0.0).then(|| SurfaceParticle {
                    index: a,
                    x0: self.particles[a].x,
                    normal: -d / n,
                    max_outward: 0.0,
                })
            })
            .collect()
    }

    /// Soil accelerations for the state `ps` and the number of degenerate
    /// correction matrices.
    fn accelerations(&self, ps: &[Particle], table: &NeighborTable, dt: f64) -> Result<(Vec<Vec2>, usize)> {
        let (corr, bad) = self.corrections(ps, table);
        let ctx = SphContext::new(ps, table, corr.as_deref());
        let seq = self.settings.deterministic;
        let art: Option<Vec<Mat2>> = self.settings.stabilization.artificial_stress.then(|| {
            let eps = self.settings.stabilization.eps_as;
            map_indices(ps.len(), seq, |i| {
                artificial_stress_tensor(&ps[i].stress, ps[i].rho, eps)
            })
        });
        let model = ForceModel {
            ctx,
            kernel: self.kernel,
            materials: &self.materials,
            stabilization: self.settings.stabilization,
            artificial_stress: art.as_deref(),
            spacing: self.spacing,
        };
        let switch = FormulationSwitch {
            stress_form: self.settings.stress_form,
            pore_water: self.settings.pore_water,
            damping_on: self.damping.active,
        };
        let g = self.gravity_vector();
        let damping = self.damping;
        let acc: Vec<Result<Vec2>> = map_indices(self.n_soil, seq, |a| {
            total_acceleration(&model, a, &switch, &damping, dt, &g)
        });
        let mut out = Vec::with_capacity(self.n_soil);
        for r in acc {
            out.push(r.map_err(|e| self.tag_step(e))?);
        }
        Ok((out, bad))
    }

    fn tag_step(&self, e: SphError) -> SphError {
        match e {
            SphError::Diverged { particle, field, .. } => SphError::Diverged {
                step: self.steps + 1,
                particle,
                field,
            },
            other => other,
        }
    }

    /// One kick-drift-kick step. On error the state is left untouched.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.steps > 0 && self.steps % self.settings.dt_interval == 0 {
            self.dt = self.next_dt();
        }
        let dt = self.dt;
        let n = self.n_soil;
        let seq = self.settings.deterministic;
        let mut ps = self.particles.clone();

        // kick + drift
        for (p, a) in ps[..n].iter_mut().zip(&self.accel) {
            p.v += *a * (0.5 * dt);
            p.x += p.v * dt;
        }
        if let Some(a) = ps[..n].iter().position(|p| !(p.x.x.is_finite() && p.x.y.is_finite())) {
            return Err(self.diverged(a, "position"));
        }

        // boundary particles follow the moved soil
        ps.truncate(n + self.n_virtual);
        let (ghosts, links) = generate_ghosts(&ps[..n], &self.boundary);
        ps.extend(ghosts);
        let (soil, rest) = ps.split_at_mut(n);
        sync_virtual(
            &mut rest[..self.n_virtual],
            &self.virtual_sources,
            soil,
            self.water.as_ref(),
        );
        let old_links = std::mem::replace(&mut self.ghost_links, links);

        let table = self.neighbor_table_for(&ps);
        let (corr, _) = self.corrections(&ps, &table);

        // constitutive update and continuity from the half-step velocities
        let updates: Vec<(Stress, f64)> = {
            let ctx = SphContext::new(&ps, &table, corr.as_deref());
            let materials = &self.materials;
            let continuity = self.settings.continuity;
            map_indices(n, seq, |a| {
                let p = &ps[a];
                let l = velocity_gradient(&ctx, a);
                let d = symmetric_part(&l);
                let w = antisymmetric_part(&l);
                let stress = integrate_stress(&materials[p.material], &p.stress, &d, &w, dt);
                let rho = if continuity {
                    p.rho + dt * density_rate(&ps, a, ctx.pairs(a), |pair| ctx.grad(a, pair))
                } else {
                    p.rho
                };
                (stress, rho)
            })
        };
        for (a, (stress, rho)) in updates.into_iter().enumerate() {
            if !(rho > 0.0) || !rho.is_finite() {
                self.ghost_links = old_links;
                return Err(self.diverged(a, "density"));
            }
            if !stress.is_finite() {
                self.ghost_links = old_links;
                return Err(self.diverged(a, "stress"));
            }
            ps[a].stress = stress;
            ps[a].rho = rho;
        }
        let (soil, rest) = ps.split_at_mut(n);
        let (virt, ghosts) = rest.split_at_mut(self.n_virtual);
        sync_virtual(virt, &self.virtual_sources, soil, self.water.as_ref());
        sync_ghosts(ghosts, &self.ghost_links, soil);

        let (accel, bad) = match self.accelerations(&ps, &table, dt) {
            Ok(r) => r,
            Err(e) => {
                self.ghost_links = old_links;
                return Err(e);
            }
        };

        // second kick
        for (a, (p, acc)) in ps[..n].iter_mut().zip(&accel).enumerate() {
            p.v += *acc * (0.5 * dt);
            if !(p.v.x.is_finite() && p.v.y.is_finite()) {
                self.ghost_links = old_links;
                return Err(self.diverged(a, "velocity"));
            }
            if !(p.x.x.is_finite() && p.x.y.is_finite()) {
                self.ghost_links = old_links;
                return Err(self.diverged(a, "position"));
            }
        }
        let (soil, ghosts) = ps.split_at_mut(n + self.n_virtual);
        sync_ghosts(ghosts, &self.ghost_links, &soil[..n]);

        self.particles = ps;
        self.accel = accel;
        self.steps += 1;
        self.time += dt;
        self.counters.degenerate_corrections += bad as u64;
        self.counters.max_degenerate_per_step = self.counters.max_degenerate_per_step.max(bad as u64);
        for k in 0..self.surface.len() {
            let d = self.outward(&self.surface[k]);
            let s = &mut self.surface[k];
            s.max_outward = s.max_outward.max(d);
            self.max_expulsion = self.max_expulsion.max(d);
        }
        Ok(StepReport {
            step: self.steps,
            time: self.time,
            dt,
            max_speed: self.max_speed(),
            kinetic_energy: self.kinetic_energy(),
        })
    }

    fn diverged(&self, particle: usize, field: &'static str) -> SphError {
        SphError::Diverged {
            step: self.steps + 1,
            particle,
            field,
        }
    }

    /// Advances until `time() >= t_end`, calling `observer` after each step.
    pub fn run_until(&mut self, t_end: f64, observer: &mut dyn FnMut(&Simulation, &StepReport)) -> Result<()> {
        while self.time < t_end - 1e-12 {
            let r = self.step()?;
            observer(self, &r);
        }
        Ok(())
    }

    /// Shepard-normalized kernel interpolation over the soil particles.
    /// Returns `None` when no soil particle lies within the kernel support.
    pub fn probe(&self, x: &Vec2) -> Option<ProbeSample> {
        let mut wsum = 0.0;
        let mut stress = Stress::ZERO;
        let mut p_w = 0.0;
        let mut v = Vec2::zeros();
        let r2 = self.kernel.support_radius().powi(2);
        for p in self.soil() {
            let d2 = (p.x - x).norm_squared();
            if d2 >= r2 {
                continue;
            }
            let w = p.volume() * self.kernel.w(d2.sqrt());
            wsum += w;
            stress += p.stress * w;
            p_w += p.p_w * w;
            v += p.v * w;
        }
        (wsum > 0.0).then(|| {
            let inv = 1.0 / wsum;
            ProbeSample {
                stress: stress * inv,
                p_w: p_w * inv,
                v: v * inv,
            }
        })
    }
}

/// `cfl h / max_a(c_a + |v_a|)` with `c` the shear wave speed.
pub fn stable_dt(particles: &[Particle], materials: &[MaterialParams], h: f64, cfl: f64) -> f64 {
    let cmax = particles
        .iter()
        .map(|p| sound_speed(&materials[p.material], p.rho) + p.v.norm())
        .fold(0.0, f64::max);
    cfl * h / cmax
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{build_lattice, Geometry};

    fn material() -> MaterialParams {
        MaterialParams::new(15e6, 0.33, 20e3)
    }

    fn block(nx: usize, ny: usize, dx: f64) -> Vec<Particle> {
        let g = Geometry::Rectangle {
            x0: 0.0,
            y0: 0.0,
            width: nx as f64 * dx,
            height: ny as f64 * dx,
        };
        build_lattice(&g, dx, &material(), None).unwrap()
    }

    fn sim(ps: Vec<Particle>, settings: SolverSettings) -> Simulation {
        let dx = 0.2;
        Simulation::new(
            ps,
            vec![material()],
            BoundarySpec::none(),
            None,
            Kernel::new(1.2 * dx).unwrap(),
            dx,
            settings,
        )
        .unwrap()
    }

    #[test]
    fn stable_dt_examples() {
        let ps = block(4, 4, 0.2);
        let m = material();
        let c = sound_speed(&m, ps[0].rho);
        let dt = stable_dt(&ps, &[m], 0.24, 0.1);
        assert!((dt - 0.1 * 0.24 / c).abs() < 1e-18);
        assert!((dt - 4.56e-4).abs() < 1e-5, "{dt}");
        let mut stiff = m;
        stiff.young *= 2.0;
        let dt2 = stable_dt(&ps, &[stiff], 0.24, 0.1);
        assert!((dt / dt2 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_gravity_rest_is_fixed_point() {
        let ps = block(6, 5, 0.2);
        let settings = SolverSettings {
            gravity: 0.0,
            ..Default::default()
        };
        let mut s = sim(ps.clone(), settings);
        for _ in 0..20 {
            s.step().unwrap();
        }
        assert_eq!(s.soil(), &ps[..]);
    }

    #[test]
    fn single_particle_free_fall() {
        let p = Particle::soil(Vec2::new(0.0, 10.0), 2000.0, 80.0);
        let settings = SolverSettings {
            fixed_dt: Some(1e-3),
            ..Default::default()
        };
        let mut s = sim(vec![p], settings);
        for _ in 0..1000 {
            s.step().unwrap();
        }
        let t = s.time();
        let y = s.soil()[0].x.y;
        assert!((t - 1.0).abs() < 1e-9);
        assert!((y - (10.0 - 0.5 * GRAVITY * t * t)).abs() < 1e-9, "{y}");
        assert!((s.soil()[0].v.y + GRAVITY * t).abs() < 1e-9);
    }

    #[test]
    fn divergence_keeps_last_good_state() {
        let mut ps = block(4, 4, 0.2);
        ps[5].stress = Stress::new(f64::NAN, 0.0, 0.0, 0.0);
        let r = Simulation::new(
            ps,
            vec![material()],
            BoundarySpec::none(),
            None,
            Kernel::new(0.24).unwrap(),
            0.2,
            SolverSettings::default(),
        );
        assert!(matches!(
            r,
            Err(SphError::Diverged {
                field: "acceleration",
                ..
            })
        ));

        let mut s = sim(block(4, 4, 0.2), SolverSettings::default());
        s.step().unwrap();
        let before = s.particles().to_vec();
        s.soil_mut()[3].v.x = f64::INFINITY;
        let snapshot = s.particles().to_vec();
        let err = s.step().unwrap_err();
        assert!(matches!(err, SphError::Diverged { step: 2, .. }), "{err}");
        assert_eq!(s.particles(), &snapshot[..]);
        assert_ne!(before, snapshot);
    }

    #[test]
    fn dt_history_records_changes() {
        let s = sim(block(3, 3, 0.2), SolverSettings::default());
        assert_eq!(s.dt_history().len(), 1);
        assert_eq!(s.dt_history()[0].step, 0);
        assert!(s.dt() > 0.0);
    }

    #[test]
    fn surface_flags_on_block() {
        let s = sim(block(10, 6, 0.2), SolverSettings::default());
        // no walls: the whole perimeter is free surface
        let surf = s.surface_particles();
        assert_eq!(surf.len(), 2 * 10 + 2 * 4);
        assert_eq!(s.expulsion_now(), 0.0);
    }

    #[test]
    fn probe_interpolates_constant_field() {
        let mut ps = block(10, 10, 0.2);
        for p in &mut ps {
            p.stress = Stress::isotropic(-5.0);
            p.p_w = -3.0;
        }
        let s = sim(ps, SolverSettings::default());
        let sample = s.probe(&Vec2::new(1.03, 0.97)).unwrap();
        assert!((sample.stress.yy + 5.0).abs() < 1e-12);
        assert!((sample.total_stress().yy + 8.0).abs() < 1e-12);
        assert!(s.probe(&Vec2::new(50.0, 50.0)).is_none());
    }
}
