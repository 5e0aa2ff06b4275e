//! SPH gradient approximations and the kinematic tensors built from them.

use serde::{Deserialize, Serialize};

use crate::kernel::Kernel;
use crate::kernel::{moment_matrix, CorrectionMatrix};
use crate::particles::{NeighborTable, Pair, Particle};
use crate::tensor::{Mat2, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientForm {
    /// `sum V_b A_b grad W`
    Basic,
    /// `sum V_b (A_b - A_a) grad W`
    Difference,
    /// `rho_a sum m_b (A_a / rho_a^2 + A_b / rho_b^2) grad W`
    SymmetricRho2,
    /// `rho_a sum m_b (A_a + A_b) / (rho_a rho_b) grad W`
    SymmetricRhoAb,
}

/// Read-only view of a particle state and its neighbor table, with optional
/// per-particle gradient correction.
#[derive(Clone, Copy)]
pub struct SphContext<'a> {
    pub particles: &'a [Particle],
    pub table: &'a NeighborTable,
    pub correction: Option<&'a [CorrectionMatrix]>,
}

impl<'a> SphContext<'a> {
    pub fn new(
        particles: &'a [Particle],
        table: &'a NeighborTable,
        correction: Option<&'a [CorrectionMatrix]>,
    ) -> Self {
        SphContext {
            particles,
            table,
            correction,
        }
    }

    #[inline]
    pub fn pairs(&self, a: usize) -> &'a [Pair] {
        self.table.neighbors(a)
    }

    /// Kernel gradient of pair `(a, b)`, corrected with particle `a`'s matrix
    /// when correction is enabled.
    #[inline]
    pub fn grad(&self, a: usize, pair: &Pair) -> Vec2 {
        match self.correction {
            Some(c) => c[a].apply(&pair.grad),
            None => pair.grad,
        }
    }
}

/// Correction matrices for the first `count` particles of the table.
/// Degenerate neighborhoods fall back to the identity; the number of
/// fallbacks is returned alongside.
pub fn correction_matrices(
    kernel: &Kernel,
    particles: &[Particle],
    table: &NeighborTable,
    count: usize,
) -> (Vec<CorrectionMatrix>, usize) {
    use rayon::prelude::*;
    let results: Vec<Option<CorrectionMatrix>> = (0..count)
        .into_par_iter()
        .map(|a| {
            let x_a = particles[a].x;
            let (m, n) = moment_matrix(
                kernel,
                &x_a,
                table
                    .neighbors(a)
                    .iter()
                    .map(|p| (&particles[p.j].x, particles[p.j].volume())),
            );
            CorrectionMatrix::from_moment(&m, n).ok()
        })
        .collect();
    let degenerate = results.iter().filter(|r| r.is_none()).count();
    let matrices = results
        .into_iter()
        .map(|r| r.unwrap_or_else(CorrectionMatrix::identity))
        .collect();
    (matrices, degenerate)
}

/// Gradient of a scalar field sampled at the particles, evaluated at `a`.
pub fn sph_gradient(ctx: &SphContext, field: &[f64], a: usize, form: GradientForm) -> Vec2 {
    let ps = ctx.particles;
    let pa = &ps[a];
    let fa = field[a];
    let mut g = Vec2::zeros();
    for pair in ctx.pairs(a) {
        let b = pair.j;
        let pb = &ps[b];
        let fb = field[b];
        let w = match form {
            GradientForm::Basic => pb.volume() * fb,
            GradientForm::Difference => pb.volume() * (fb - fa),
            GradientForm::SymmetricRho2 => pa.rho * pb.mass * (fa / (pa.rho * pa.rho) + fb / (pb.rho * pb.rho)),
            GradientForm::SymmetricRhoAb => pb.mass * (fa + fb) / pb.rho,
        };
        g += ctx.grad(a, pair) * w;
    }
    g
}

/// Velocity gradient `L^{ab} = sum V_b (v_b - v_a)^a gradW^b`.
pub fn velocity_gradient(ctx: &SphContext, a: usize) -> Mat2 {
    let ps = ctx.particles;
    let va = ps[a].v;
    let mut l = Mat2::zeros();
    for pair in ctx.pairs(a) {
        let pb = &ps[pair.j];
        let g = ctx.grad(a, pair);
        l += (pb.v - va) * g.transpose() * pb.volume();
    }
    l
}

/// Symmetric part of a velocity gradient.
pub fn symmetric_part(l: &Mat2) -> Mat2 {
    (l + l.transpose()) * 0.5
}

/// Antisymmetric part of a velocity gradient.
pub fn antisymmetric_part(l: &Mat2) -> Mat2 {
    (l - l.transpose()) * 0.5
}

pub fn strain_rate(ctx: &SphContext, a: usize) -> Mat2 {
    symmetric_part(&velocity_gradient(ctx, a))
}

pub fn spin_rate(ctx: &SphContext, a: usize) -> Mat2 {
    antisymmetric_part(&velocity_gradient(ctx, a))
}
