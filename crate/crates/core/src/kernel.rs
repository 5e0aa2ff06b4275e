//! Cubic-spline smoothing kernel and the linear gradient renormalization.

use std::f64::consts::PI;

use crate::error::{Result, SphError};
use crate::tensor::{condition_number, Mat2, Vec2};

/// Moment matrices with a condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e8;
/// Fewest neighbors for which a correction matrix is attempted.
pub const MIN_NEIGHBORS: usize = 3;
/// Slack added to the support radius when collecting neighbors.
pub const SUPPORT_SLACK: f64 = 1e-9;

/// 2D cubic-spline kernel with compact support `2h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    h: f64,
    alpha: f64,
}

impl Kernel {
    pub fn new(h: f64) -> Result<Self> {
        if !h.is_finite() || h <= 0.0 {
            return Err(SphError::invalid(format!("smoothing length must be positive, got {h}")));
        }
        Ok(Kernel {
            h,
            alpha: 10.0 / (7.0 * PI * h * h),
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Normalization factor `10 / (7 pi h^2)`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn support_radius(&self) -> f64 {
        2.0 * self.h
    }

    pub fn w(&self, r: f64) -> f64 {
        let q = r / self.h;
        let f = if q < 1.0 {
            1.0 - 1.5 * q * q + 0.75 * q * q * q
        } else if q < 2.0 {
            let t = 2.0 - q;
            0.25 * t * t * t
        } else {
            0.0
        };
        self.alpha * f
    }

    /// Radial derivative dW/dr.
    pub fn dw_dr(&self, r: f64) -> f64 {
        let q = r / self.h;
        let f = if q < 1.0 {
            -3.0 * q + 2.25 * q * q
        } else if q < 2.0 {
            let t = 2.0 - q;
            -0.75 * t * t
        } else {
            0.0
        };
        self.alpha * f / self.h
    }

    /// Gradient of `W(|r_ab|)` with respect to the position of `a`, where
    /// `r_ab = x_a - x_b`. Zero at coincident points.
    pub fn grad(&self, r_ab: &Vec2) -> Vec2 {
        let r = r_ab.norm();
        if r == 0.0 {
            return Vec2::zeros();
        }
        r_ab * (self.dw_dr(r) / r)
    }

    /// Same as [`Kernel::grad`] when the distance is already known.
    pub fn grad_with_distance(&self, r_ab: &Vec2, r: f64) -> Vec2 {
        if r == 0.0 {
            return Vec2::zeros();
        }
        r_ab * (self.dw_dr(r) / r)
    }
}

pub fn eval_w(r: f64, h: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(SphError::invalid(format!("separation must be non-negative, got {r}")));
    }
    Ok(Kernel::new(h)?.w(r))
}

pub fn eval_grad_w(r_ab: &Vec2, h: f64) -> Result<Vec2> {
    Ok(Kernel::new(h)?.grad(r_ab))
}

/// Per-particle matrix that renormalizes raw kernel gradients so that the
/// difference-form gradient of any linear field is exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectionMatrix(pub Mat2);

impl Default for CorrectionMatrix {
    fn default() -> Self {
        CorrectionMatrix::identity()
    }
}

impl CorrectionMatrix {
    pub fn identity() -> Self {
        CorrectionMatrix(Mat2::identity())
    }

    #[inline]
    pub fn apply(&self, grad: &Vec2) -> Vec2 {
        self.0 * grad
    }

    /// Inverts an accumulated moment matrix `sum_b V_b grad_a W_ab (x) (x_b - x_a)`.
    pub fn from_moment(moment: &Mat2, neighbors: usize) -> Result<Self> {
        let condition = condition_number(moment);
        if neighbors < MIN_NEIGHBORS || !(condition <= MAX_CONDITION) {
            return Err(SphError::DegenerateNeighborhood { neighbors, condition });
        }
        moment
            .try_inverse()
            .map(CorrectionMatrix)
            .ok_or(SphError::DegenerateNeighborhood { neighbors, condition })
    }
}

/// Accumulates the moment matrix of particle `a` from `(x_b, volume_b)` pairs.
/// Neighbors outside the support contribute nothing.
pub fn moment_matrix<'a, I>(kernel: &Kernel, x_a: &Vec2, neighbors: I) -> (Mat2, usize)
where
    I: IntoIterator<Item = (&'a Vec2, f64)>,
{
    let mut m = Mat2::zeros();
    let mut count = 0;
    for (x_b, vol) in neighbors {
        let r_ab = x_a - x_b;
        let r = r_ab.norm();
        if r == 0.0 || r >= kernel.support_radius() {
            continue;
        }
        let g = kernel.grad_with_distance(&r_ab, r);
        // g (x) (x_b - x_a)
        m -= g * r_ab.transpose() * vol;
        count += 1;
    }
    (m, count)
}

/// Correction matrix of particle `a` given its neighbors. Coincident
/// particles and particles beyond `2h` are ignored.
pub fn correction_matrix(
    kernel: &Kernel,
    a: &crate::particles::Particle,
    neighbors: &[crate::particles::Particle],
) -> Result<CorrectionMatrix> {
    let (m, count) = moment_matrix(kernel, &a.x, neighbors.iter().map(|b| (&b.x, b.volume())));
    CorrectionMatrix::from_moment(&m, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::Particle;

    const ALPHA_UNIT: f64 = 10.0 / (7.0 * PI);

    #[test]
    fn kernel_values() {
        assert!((eval_w(0.0, 1.0).unwrap() - 0.454_728_408_833_987).abs() < 1e-12);
        assert!((eval_w(0.0, 1.0).unwrap() - ALPHA_UNIT).abs() < 1e-15);
        assert_eq!(eval_w(2.0, 1.0).unwrap(), 0.0);
        assert_eq!(eval_w(3.5, 1.0).unwrap(), 0.0);
        assert!((eval_w(1.0, 1.0).unwrap() - ALPHA_UNIT * 0.25).abs() < 1e-15);
        assert!((eval_w(1.0, 1.0).unwrap() - 0.113_682_102_208_497).abs() < 1e-12);
    }

    #[test]
    fn invalid_smoothing_length() {
        assert!(matches!(eval_w(0.1, 0.0), Err(SphError::InvalidArgument(_))));
        assert!(matches!(eval_w(0.1, -1.0), Err(SphError::InvalidArgument(_))));
        assert!(matches!(eval_w(0.1, f64::NAN), Err(SphError::InvalidArgument(_))));
        assert!(eval_grad_w(&Vec2::new(0.1, 0.0), f64::INFINITY).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(eval_grad_w(&Vec2::zeros(), 1.0).unwrap(), Vec2::zeros());
        assert_eq!(eval_grad_w(&Vec2::new(2.0 * 0.7, 0.0), 0.7).unwrap(), Vec2::zeros());
        let g = eval_grad_w(&Vec2::new(0.5, 0.0), 1.0).unwrap();
        let q: f64 = 0.5;
        let expected = ALPHA_UNIT * (-3.0 * q + 9.0 * q * q / 4.0);
        assert!((g.x - expected).abs() < 1e-15);
        assert_eq!(g.y, 0.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let k = Kernel::new(0.24).unwrap();
        let step = 1e-7;
        for i in 1..60 {
            let r = i as f64 * 0.008;
            if (r - 0.24).abs() < 1e-6 || (r - 0.48).abs() < 1e-6 {
                continue;
            }
            let fd = (k.w(r + step) - k.w(r - step)) / (2.0 * step);
            let rel = (fd - k.dw_dr(r)).abs() / k.dw_dr(r).abs().max(1.0);
            assert!(rel < 1e-6, "r={r} fd={fd} an={}", k.dw_dr(r));
        }
    }

    #[test]
    fn c1_continuity_at_breakpoints() {
        let k = Kernel::new(1.0).unwrap();
        let e = 1e-12;
        for q in [1.0, 2.0] {
            assert!((k.w(q - e) - k.w(q + e)).abs() < 1e-10);
            assert!((k.dw_dr(q - e) - k.dw_dr(q + e)).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_antisymmetry() {
        let k = Kernel::new(0.3).unwrap();
        for (x, y) in [(0.1, 0.2), (-0.31, 0.05), (0.4, -0.1)] {
            let r = Vec2::new(x, y);
            assert_eq!(k.grad(&r), -k.grad(&-r));
        }
    }

    fn lattice(nx: usize, ny: usize, dx: f64) -> Vec<Particle> {
        let mut out = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let x = Vec2::new((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dx);
                out.push(Particle::soil(x, 1000.0, 1000.0 * dx * dx));
            }
        }
        out
    }

    #[test]
    fn quadrature_sums_to_one_in_interior() {
        let dx = 0.1;
        let k = Kernel::new(1.2 * dx).unwrap();
        let ps = lattice(15, 15, dx);
        let a = &ps[7 * 15 + 7];
        let sum: f64 = ps.iter().map(|b| k.w((a.x - b.x).norm()) * b.volume()).sum();
        assert!((sum - 1.0).abs() < 0.01, "sum={sum}");
    }

    #[test]
    fn correction_on_full_lattice_is_isotropic() {
        // Lattice second moments of the cubic spline, summed independently
        // to 16 digits: 0.9907930613688714 at h = 1.2 dx and
        // 0.9998529440814197 at h = 3 dx. L is their inverse times I.
        for (ratio, moment) in [(1.2, 0.9907930613688714), (3.0, 0.9998529440814197)] {
            let dx = 0.05;
            let k = Kernel::new(ratio * dx).unwrap();
            let ps = lattice(21, 21, dx);
            let a = &ps[10 * 21 + 10];
            let l = correction_matrix(&k, a, &ps).unwrap().0;
            assert!(l[(0, 1)].abs() < 1e-12 && l[(1, 0)].abs() < 1e-12, "{l:?}");
            assert!((l[(0, 0)] - l[(1, 1)]).abs() < 1e-12);
            assert!((l[(0, 0)] * moment - 1.0).abs() < 1e-12, "{l:?}");
        }
    }

    #[test]
    fn collinear_neighbors_are_degenerate() {
        let k = Kernel::new(1.0).unwrap();
        let ps: Vec<Particle> = (0..5)
            .map(|i| Particle::soil(Vec2::new(i as f64 * 0.5, 0.0), 1.0, 1.0))
            .collect();
        let err = correction_matrix(&k, &ps[2], &ps).unwrap_err();
        assert!(matches!(err, SphError::DegenerateNeighborhood { .. }));
    }

    #[test]
    fn too_few_neighbors_is_degenerate() {
        let k = Kernel::new(1.0).unwrap();
        let ps = vec![
            Particle::soil(Vec2::new(0.0, 0.0), 1.0, 1.0),
            Particle::soil(Vec2::new(0.5, 0.0), 1.0, 1.0),
            Particle::soil(Vec2::new(0.0, 0.5), 1.0, 1.0),
        ];
        assert!(correction_matrix(&k, &ps[0], &ps).is_err());
    }

    #[test]
    fn corrected_gradient_exact_at_free_surface() {
        let dx = 0.2;
        let k = Kernel::new(1.2 * dx).unwrap();
        let ps = lattice(12, 6, dx);
        // top row, middle
        let a_idx = 5 * 12 + 6;
        let a = &ps[a_idx];
        let l = correction_matrix(&k, a, &ps).unwrap();
        let mut g = Vec2::zeros();
        for b in &ps {
            let r = a.x - b.x;
            g += l.apply(&k.grad(&r)) * (b.volume() * (b.x.x - a.x.x));
        }
        assert!((g - Vec2::new(1.0, 0.0)).norm() < 1e-10, "{g:?}");
    }
}
