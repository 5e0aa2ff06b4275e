//! Small fixed-size vector and tensor types used throughout the solver.
//!
//! Stresses are plane-strain: the in-plane components are a symmetric 2x2
//! block and the out-of-plane normal component `zz` is carried alongside.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Symmetric plane-strain stress (or stress-rate) tensor. Tension positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stress {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
    pub zz: f64,
}

impl Stress {
    pub const ZERO: Stress = Stress {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
        zz: 0.0,
    };

    pub fn new(xx: f64, yy: f64, xy: f64, zz: f64) -> Self {
        Stress { xx, yy, xy, zz }
    }

    pub fn isotropic(p: f64) -> Self {
        Stress::new(p, p, 0.0, p)
    }

    /// Builds a stress from the symmetric part of an in-plane matrix.
    pub fn from_in_plane(m: &Mat2, zz: f64) -> Self {
        Stress::new(m[(0, 0)], m[(1, 1)], 0.5 * (m[(0, 1)] + m[(1, 0)]), zz)
    }

    pub fn in_plane(&self) -> Mat2 {
        Mat2::new(self.xx, self.xy, self.xy, self.yy)
    }

    /// Trace over all three normal components.
    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    /// Second invariant of the deviatoric part, J2 = s:s / 2.
    pub fn j2(&self) -> f64 {
        let m = self.trace() / 3.0;
        let (sx, sy, sz) = (self.xx - m, self.yy - m, self.zz - m);
        0.5 * (sx * sx + sy * sy + sz * sz) + self.xy * self.xy
    }

    /// In-plane stress applied to a vector, i.e. `sigma^{ab} v^b`.
    pub fn dot(&self, v: &Vec2) -> Vec2 {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite() && self.zz.is_finite()
    }

    /// Adds `p` to the three normal components.
    pub fn plus_isotropic(&self, p: f64) -> Self {
        Stress::new(self.xx + p, self.yy + p, self.xy, self.zz + p)
    }
}

impl Add for Stress {
    type Output = Stress;
    fn add(self, o: Stress) -> Stress {
        Stress::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy, self.zz + o.zz)
    }
}

impl Sub for Stress {
    type Output = Stress;
    fn sub(self, o: Stress) -> Stress {
        Stress::new(self.xx - o.xx, self.yy - o.yy, self.xy - o.xy, self.zz - o.zz)
    }
}

impl Neg for Stress {
    type Output = Stress;
    fn neg(self) -> Stress {
        Stress::new(-self.xx, -self.yy, -self.xy, -self.zz)
    }
}

impl Mul<f64> for Stress {
    type Output = Stress;
    fn mul(self, s: f64) -> Stress {
        Stress::new(self.xx * s, self.yy * s, self.xy * s, self.zz * s)
    }
}

impl AddAssign for Stress {
    fn add_assign(&mut self, o: Stress) {
        *self = *self + o;
    }
}

/// Condition number of a 2x2 matrix in the spectral norm.
pub fn condition_number(m: &Mat2) -> f64 {
    // Singular values are the square roots of the eigenvalues of M^T M.
    let mtm = m.transpose() * m;
    let tr = mtm.trace();
    let det = mtm.determinant();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let smax2 = 0.5 * tr + disc;
    let smin2 = 0.5 * tr - disc;
    if !(smin2 > 0.0) || !smax2.is_finite() {
        return f64::INFINITY;
    }
    (smax2 / smin2).sqrt()
}
