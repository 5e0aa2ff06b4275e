//! Particle acceleration assembly: effective-stress divergence, pore-water
//! pressure gradient, stabilization, damping and gravity.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::constitutive::{sound_speed, MaterialParams, GRAVITY};
use crate::error::{Result, SphError};
use crate::kernel::Kernel;
use crate::particles::{Pair, Particle};
use crate::sph_ops::SphContext;
use crate::tensor::{Mat2, Stress, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StressForm {
    /// `sigma_a / rho_a^2 + sigma_b / rho_b^2`
    Rho2,
    /// `(sigma_a + sigma_b) / (rho_a rho_b)`
    #[default]
    RhoAb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoreWaterForm {
    /// `(p_b + p_a)`: does not vanish for constant pressure at free surfaces.
    ConventionalSum,
    /// `(p_b - p_a)`: vanishes termwise for constant pressure.
    #[default]
    CorrectedDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulationSwitch {
    pub stress_form: StressForm,
    pub pore_water: PoreWaterForm,
    pub damping_on: bool,
}

impl Default for FormulationSwitch {
    fn default() -> Self {
        FormulationSwitch {
            stress_form: StressForm::RhoAb,
            pore_water: PoreWaterForm::CorrectedDifference,
            damping_on: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilizationParams {
    pub viscosity: bool,
    pub alpha_visc: f64,
    pub beta_visc: f64,
    pub artificial_stress: bool,
    pub eps_as: f64,
    pub n_as: f64,
}

impl Default for StabilizationParams {
    fn default() -> Self {
        StabilizationParams {
            viscosity: true,
            alpha_visc: 0.1,
            beta_visc: 0.1,
            artificial_stress: false,
            eps_as: 0.3,
            n_as: 2.55,
        }
    }
}

impl StabilizationParams {
    pub fn disabled() -> Self {
        StabilizationParams {
            viscosity: false,
            artificial_stress: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_visc", self.alpha_visc),
            ("beta_visc", self.beta_visc),
            ("eps_as", self.eps_as),
            ("n_as", self.n_as),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SphError::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Lower and upper bound of the recommended damping coefficient range.
pub const RECOMMENDED_XI: (f64, f64) = (0.001, 0.005);
pub const MAX_XI: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingParams {
    pub xi: f64,
    pub active: bool,
}

impl DampingParams {
    pub fn new(xi: f64) -> Result<Self> {
        let d = DampingParams { xi, active: true };
        d.validate()?;
        if let Some(w) = d.range_warning() {
            warn!("{w}");
        }
        Ok(d)
    }

    pub fn off() -> Self {
        DampingParams { xi: 0.0, active: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_XI).contains(&self.xi) {
            return Err(SphError::invalid(format!(
                "damping coefficient xi must lie in [0, {MAX_XI}], got {}",
                self.xi
            )));
        }
        Ok(())
    }

    pub fn range_warning(&self) -> Option<String> {
        let (lo, hi) = RECOMMENDED_XI;
        (self.xi != 0.0 && !(lo..=hi).contains(&self.xi))
            .then(|| format!("xi = {} outside recommended range 0.001–0.005", self.xi))
    }
}

/// Everything needed to evaluate pairwise forces on a frozen state.
#[derive(Clone, Copy)]
pub struct ForceModel<'a> {
    pub ctx: SphContext<'a>,
    pub kernel: Kernel,
    pub materials: &'a [MaterialParams],
    pub stabilization: StabilizationParams,
    /// Per-particle artificial-stress tensors, present when enabled.
    pub artificial_stress: Option<&'a [Mat2]>,
    /// Initial particle spacing; the artificial-stress weight is `W(r) / W(spacing)`.
    pub spacing: f64,
}

impl<'a> ForceModel<'a> {
    fn sound_speed(&self, p: &Particle) -> f64 {
        sound_speed(&self.materials[p.material], p.rho)
    }

    /// Stabilization tensor `C_ab` for one pair.
    pub fn stabilization_term(&self, a: usize, pair: &Pair) -> Mat2 {
        let ps = self.ctx.particles;
        let (pa, pb) = (&ps[a], &ps[pair.j]);
        let mut c = Mat2::zeros();
        if self.stabilization.viscosity {
            let pi = artificial_viscosity(
                pa,
                pb,
                &pair.r,
                self.kernel.h(),
                self.sound_speed(pa),
                self.sound_speed(pb),
                self.stabilization.alpha_visc,
                self.stabilization.beta_visc,
            );
            c -= Mat2::identity() * pi;
        }
        if let Some(r) = self.artificial_stress {
            let f = self.kernel.w(pair.dist) / self.kernel.w(self.spacing);
            c += (r[a] + r[pair.j]) * f.powf(self.stabilization.n_as);
        }
        c
    }
}

/// Monaghan artificial viscosity
/// `Pi_ab = (-alpha c_ab mu_ab + beta mu_ab^2) / rho_ab` with
/// `mu_ab = h v_ab . r_ab / (|r_ab|^2 + 0.01 h^2)`, active only for
/// approaching pairs.
#[allow(clippy::too_many_arguments)]
pub fn artificial_viscosity(
    pa: &Particle,
    pb: &Particle,
    r_ab: &Vec2,
    h: f64,
    c_a: f64,
    c_b: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    let vr = (pa.v - pb.v).dot(r_ab);
    if vr >= 0.0 {
        return 0.0;
    }
    let mu = h * vr / (r_ab.norm_squared() + 0.01 * h * h);
    let c = 0.5 * (c_a + c_b);
    let rho = 0.5 * (pa.rho + pb.rho);
    (-alpha * c * mu + beta * mu * mu) / rho
}

/// Artificial-stress tensor of one particle: tensile principal stresses are
/// mapped to `-eps sigma_i / rho^2` and rotated back to the global frame.
pub fn artificial_stress_tensor(stress: &Stress, rho: f64, eps: f64) -> Mat2 {
    let eig = stress.in_plane().symmetric_eigen();
    let mut r = Mat2::zeros();
    for i in 0..2 {
        let s = eig.eigenvalues[i];
        if s > 0.0 {
            let n = eig.eigenvectors.column(i);
            r += n * n.transpose() * (-eps * s / (rho * rho));
        }
    }
    r
}

/// Effective-stress divergence (with stabilization) at particle `a`.
pub fn accel_effective_stress(model: &ForceModel, a: usize, form: StressForm) -> Vec2 {
    let ps = model.ctx.particles;
    let pa = &ps[a];
    let mut acc = Vec2::zeros();
    let stabilized = model.stabilization.viscosity || model.artificial_stress.is_some();
    for pair in model.ctx.pairs(a) {
        let pb = &ps[pair.j];
        let g = model.ctx.grad(a, pair);
        let s = match form {
            StressForm::RhoAb => (pa.stress + pb.stress) * (1.0 / (pa.rho * pb.rho)),
            StressForm::Rho2 => pa.stress * (1.0 / (pa.rho * pa.rho)) + pb.stress * (1.0 / (pb.rho * pb.rho)),
        };
        let mut f = s.dot(&g);
        if stabilized {
            f += model.stabilization_term(a, pair) * g;
        }
        acc += f * pb.mass;
    }
    acc
}

/// Pore-water term in the conventional summed form
/// `sum m_b / (rho_a rho_b) (p_b + p_a) grad W`.
pub fn accel_porewater_conventional(ctx: &SphContext, a: usize) -> Vec2 {
    porewater(ctx, a, 1.0)
}

/// Pore-water term in the difference form
/// `sum m_b / (rho_a rho_b) (p_b - p_a) grad W`.
pub fn accel_porewater_corrected(ctx: &SphContext, a: usize) -> Vec2 {
    porewater(ctx, a, -1.0)
}

fn porewater(ctx: &SphContext, a: usize, sign_a: f64) -> Vec2 {
    let ps = ctx.particles;
    let pa = &ps[a];
    let mut acc = Vec2::zeros();
    for pair in ctx.pairs(a) {
        let pb = &ps[pair.j];
        let dp = pb.p_w + sign_a * pa.p_w;
        if dp != 0.0 {
            acc += ctx.grad(a, pair) * (pb.mass * dp / (pa.rho * pb.rho));
        }
    }
    acc
}

/// Damping acceleration `-(xi / dt) v`.
pub fn damping_force(v: &Vec2, xi: f64, dt: f64) -> Vec2 {
    if xi == 0.0 {
        return Vec2::zeros();
    }
    -v * (xi / dt)
}

pub fn gravity() -> Vec2 {
    Vec2::new(0.0, -GRAVITY)
}

/// Sum of all acceleration contributions on particle `a`.
pub fn total_acceleration(
    model: &ForceModel,
    a: usize,
    switch: &FormulationSwitch,
    damping: &DampingParams,
    dt: f64,
    gravity: &Vec2,
) -> Result<Vec2> {
    let mut acc = accel_effective_stress(model, a, switch.stress_form);
    acc += match switch.pore_water {
        PoreWaterForm::ConventionalSum => accel_porewater_conventional(&model.ctx, a),
        PoreWaterForm::CorrectedDifference => accel_porewater_corrected(&model.ctx, a),
    };
    if switch.damping_on && damping.active {
        acc += damping_force(&model.ctx.particles[a].v, damping.xi, dt);
    }
    acc += gravity;
    if !(acc.x.is_finite() && acc.y.is_finite()) {
        return Err(SphError::Diverged {
            step: 0,
            particle: a,
            field: "acceleration",
        });
    }
    Ok(acc)
}

/// Raw kernel-sum deficiency `sum_b V_b grad_a W_ab`; zero for a full,
/// symmetric neighborhood and pointing into the body at a free surface.
pub fn surface_deficiency(ctx: &SphContext, a: usize) -> Vec2 {
    ctx.pairs(a)
        .iter()
        .map(|p| p.grad * ctx.particles[p.j].volume())
        .fold(Vec2::zeros(), |s, g| s + g)
}

/// Shepard sum `sum_b V_b W_ab` including the particle itself.
pub fn kernel_sum(ctx: &SphContext, kernel: &Kernel, a: usize) -> f64 {
    let ps = ctx.particles;
    ps[a].volume() * kernel.w(0.0)
        + ctx
            .pairs(a)
            .iter()
            .map(|p| ps[p.j].volume() * kernel.w(p.dist))
            .sum::<f64>()
}
