//! Linear-elastic plane-strain stress update with the Jaumann stress rate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SphError};
use crate::tensor::{Mat2, Stress};

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Elastic soil properties. Unit weights are in N/m^3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub young: f64,
    pub poisson: f64,
    pub gamma_sat: f64,
    #[serde(default)]
    pub gamma_unsat: Option<f64>,
    #[serde(default = "default_gamma_w")]
    pub gamma_w: f64,
}

fn default_gamma_w() -> f64 {
    9810.0
}

impl MaterialParams {
    pub fn new(young: f64, poisson: f64, gamma_sat: f64) -> Self {
        MaterialParams {
            young,
            poisson,
            gamma_sat,
            gamma_unsat: None,
            gamma_w: default_gamma_w(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young > 0.0) || !self.young.is_finite() {
            return Err(SphError::invalid(format!(
                "Young's modulus must be positive, got {}",
                self.young
            )));
        }
        if self.poisson >= 0.5 {
            return Err(SphError::invalid("Poisson ratio singular (must be below 0.5)"));
        }
        if !(self.poisson > -1.0) {
            return Err(SphError::invalid(format!(
                "Poisson ratio must exceed -1, got {}",
                self.poisson
            )));
        }
        if !(self.gamma_sat > 0.0) {
            return Err(SphError::invalid("saturated unit weight must be positive"));
        }
        if matches!(self.gamma_unsat, Some(g) if !(g > 0.0)) {
            return Err(SphError::invalid("unsaturated unit weight must be positive"));
        }
        if !(self.gamma_w >= 0.0) {
            return Err(SphError::invalid("water unit weight must be non-negative"));
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.young / (3.0 * (1.0 - 2.0 * self.poisson))
    }

    /// Unit weight above the water table; defaults to the saturated value.
    pub fn unit_weight_dry(&self) -> f64 {
        self.gamma_unsat.unwrap_or(self.gamma_sat)
    }

    /// Submerged (buoyant) unit weight.
    pub fn unit_weight_submerged(&self) -> f64 {
        self.gamma_sat - self.gamma_w
    }
}

/// Jaumann effective-stress rate of a linear elastic material.
///
/// `strain_rate` and `spin_rate` are the in-plane symmetric and antisymmetric
/// velocity gradients; the out-of-plane strain rate is zero (plane strain)
/// but `zz` stress evolves through the volumetric term.
pub fn stress_rate(m: &MaterialParams, stress: &Stress, strain_rate: &Mat2, spin_rate: &Mat2) -> Stress {
    let mut rate = elastic_rate(m, strain_rate);
    let s = stress.in_plane();
    let rot = s * spin_rate.transpose() + spin_rate * s;
    rate.xx += rot[(0, 0)];
    rate.yy += rot[(1, 1)];
    rate.xy += 0.5 * (rot[(0, 1)] + rot[(1, 0)]);
    rate
}

/// Hooke part of the stress rate: `2G (D - tr D / 3 I) + K tr D I`.
pub fn elastic_rate(m: &MaterialParams, d: &Mat2) -> Stress {
    let g = m.shear_modulus();
    let k = m.bulk_modulus();
    let tr = d[(0, 0)] + d[(1, 1)];
    let vol = (k - 2.0 * g / 3.0) * tr;
    let dxy = 0.5 * (d[(0, 1)] + d[(1, 0)]);
    Stress::new(2.0 * g * d[(0, 0)] + vol, 2.0 * g * d[(1, 1)] + vol, 2.0 * g * dxy, vol)
}

/// Strain rate produced by a given stress rate under the same elastic law,
/// `eps = s_dot / 2G + (1 - 2 nu) / (3E) tr(sigma_dot) I`.
/// Returned as a symmetric tensor with the out-of-plane component in `zz`.
pub fn strain_rate_from_stress_rate(m: &MaterialParams, rate: &Stress) -> Stress {
    let g = m.shear_modulus();
    let tr = rate.trace();
    let mean = tr / 3.0;
    let vol = (1.0 - 2.0 * m.poisson) / (3.0 * m.young) * tr;
    Stress::new(
        (rate.xx - mean) / (2.0 * g) + vol,
        (rate.yy - mean) / (2.0 * g) + vol,
        rate.xy / (2.0 * g),
        (rate.zz - mean) / (2.0 * g) + vol,
    )
}

/// Advances the stress over `dt`. The spin contribution is integrated as an
/// exact orthogonal rotation `Q sigma Q^T` with the Cayley transform
/// `Q = (I - dt W / 2)^-1 (I + dt W / 2)`, so rigid rotation leaves the
/// invariants untouched; the Hooke increment is added explicitly.
pub fn integrate_stress(m: &MaterialParams, stress: &Stress, strain_rate: &Mat2, spin_rate: &Mat2, dt: f64) -> Stress {
    let half = spin_rate * (0.5 * dt);
    let id = Mat2::identity();
    let q = match (id - half).try_inverse() {
        Some(inv) => inv * (id + half),
        None => id,
    };
    let rotated = q * stress.in_plane() * q.transpose();
    Stress::from_in_plane(&rotated, stress.zz) + elastic_rate(m, strain_rate) * dt
}

/// Shear wave speed `sqrt(G / rho)`.
pub fn sound_speed(m: &MaterialParams, rho: f64) -> f64 {
    (m.shear_modulus() / rho).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn soil() -> MaterialParams {
        MaterialParams::new(15e6, 0.33, 20e3)
    }

    /// Isotropic stiffness in Voigt notation built from the Lame constants,
    /// applied to an engineering strain vector.
    fn voigt_oracle(m: &MaterialParams, d: &Mat2) -> [f64; 6] {
        let (e, nu) = (m.young, m.poisson);
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        let mut c = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = lambda;
            }
            c[i][i] = lambda + 2.0 * mu;
            c[i + 3][i + 3] = mu;
        }
        // xx, yy, zz, yz, xz, xy (engineering shear)
        let strain = [d[(0, 0)], d[(1, 1)], 0.0, 0.0, 0.0, d[(0, 1)] + d[(1, 0)]];
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = (0..6).map(|j| c[i][j] * strain[j]).sum();
        }
        out
    }

    #[test]
    fn zero_rates_give_zero() {
        let r = stress_rate(
            &soil(),
            &Stress::new(-1e3, -2e3, 50.0, -7e2),
            &Mat2::zeros(),
            &Mat2::zeros(),
        );
        assert_eq!(r, Stress::ZERO);
    }

    #[test]
    fn in_plane_hydrostatic_strain_rate_matches_voigt() {
        let m = soil();
        let s = 1e-3;
        let d = Mat2::new(s, 0.0, 0.0, s);
        let r = stress_rate(&m, &Stress::ZERO, &d, &Mat2::zeros());
        let o = voigt_oracle(&m, &d);
        for (got, want) in [(r.xx, o[0]), (r.yy, o[1]), (r.zz, o[2]), (r.xy, o[5])] {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn sound_speed_examples() {
        let m = MaterialParams::new(2.0 * 4.0 * 1.25, 0.25, 1.0);
        assert!((m.shear_modulus() - 4.0).abs() < 1e-15);
        assert!((sound_speed(&m, 1.0) - 2.0).abs() < 1e-15);
        assert!((sound_speed(&m, 2.0) - 2.0 / 2f64.sqrt()).abs() < 1e-15);

        let s = soil();
        assert!((s.shear_modulus() - 5.639_097_744e6).abs() < 1.0);
        let rho = 20_000.0 / GRAVITY;
        assert!((rho - 2038.736).abs() < 1e-3);
        assert!((sound_speed(&s, rho) - 52.593).abs() < 1e-2);
    }

    #[test]
    fn validation() {
        assert!(soil().validate().is_ok());
        let mut m = soil();
        m.poisson = 0.5;
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("Poisson ratio singular"));
        m.poisson = -1.0;
        assert!(m.validate().is_err());
        m = soil();
        m.young = 0.0;
        assert!(m.validate().is_err());
    }

    fn rotate(s: &Stress, angle: f64) -> Stress {
        let (c, sn) = (angle.cos(), angle.sin());
        let r = Mat2::new(c, -sn, sn, c);
        Stress::from_in_plane(&(r * s.in_plane() * r.transpose()), s.zz)
    }

    #[test]
    fn pure_spin_full_revolution() {
        let m = soil();
        let omega = 2.0;
        let w = Mat2::new(0.0, -omega, omega, 0.0);
        let s0 = Stress::new(-1000.0, 0.0, 0.0, 0.0);
        let period = 2.0 * std::f64::consts::PI / omega;
        let n = 10_000;
        let dt = period / n as f64;
        let mut s = s0;
        for _ in 0..n {
            s = integrate_stress(&m, &s, &Mat2::zeros(), &w, dt);
        }
        assert!((s.trace() - s0.trace()).abs() <= 1e-6 * s0.trace().abs());
        assert!((s.j2() - s0.j2()).abs() <= 1e-6 * s0.j2());
        assert!((s - s0).in_plane().norm() < 1e-3);

        // Quarter turn agrees with the closed-form rotation R s R^T.
        let mut s = s0;
        for _ in 0..n / 4 {
            s = integrate_stress(&m, &s, &Mat2::zeros(), &w, dt);
        }
        let exact = rotate(&s0, 0.5 * std::f64::consts::PI);
        assert!((s - exact).in_plane().norm() < 1e-4, "{s:?} vs {exact:?}");
    }

    #[test]
    fn integrator_matches_rate_to_first_order() {
        let m = soil();
        let s = Stress::new(-3e4, -5e4, 2e3, -4e4);
        let d = Mat2::new(1e-3, 2e-4, 2e-4, -5e-4);
        let w = Mat2::new(0.0, 0.3, -0.3, 0.0);
        let rate = stress_rate(&m, &s, &d, &w);
        let dt = 1e-7;
        let inc = (integrate_stress(&m, &s, &d, &w, dt) - s) * (1.0 / dt);
        for (a, b) in [
            (inc.xx, rate.xx),
            (inc.yy, rate.yy),
            (inc.xy, rate.xy),
            (inc.zz, rate.zz),
        ] {
            assert!((a - b).abs() < 1e-5 * rate.in_plane().norm().max(1.0), "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn hooke_consistency(d00 in -1.0f64..1.0, d11 in -1.0f64..1.0, d01 in -1.0f64..1.0,
                             nu in -0.9f64..0.49, e in 1e5f64..1e9) {
            let m = MaterialParams::new(e, nu, 2e4);
            let d = Mat2::new(d00, d01, d01, d11);
            let r = stress_rate(&m, &Stress::ZERO, &d, &Mat2::zeros());
            let o = voigt_oracle(&m, &d);
            let scale = o.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
            prop_assert!((r.xx - o[0]).abs() <= 1e-12 * scale);
            prop_assert!((r.yy - o[1]).abs() <= 1e-12 * scale);
            prop_assert!((r.zz - o[2]).abs() <= 1e-12 * scale);
            prop_assert!((r.xy - o[5]).abs() <= 1e-12 * scale);
        }

        #[test]
        fn compliance_round_trip(d00 in -1.0f64..1.0, d11 in -1.0f64..1.0, d01 in -1.0f64..1.0,
                                 nu in -0.9f64..0.49, e in 1e5f64..1e9) {
            let m = MaterialParams::new(e, nu, 2e4);
            let d = Mat2::new(d00, d01, d01, d11);
            let r = stress_rate(&m, &Stress::ZERO, &d, &Mat2::zeros());
            let back = strain_rate_from_stress_rate(&m, &r);
            let scale = d.norm().max(1e-12);
            prop_assert!((back.xx - d00).abs() < 1e-9 * scale);
            prop_assert!((back.yy - d11).abs() < 1e-9 * scale);
            prop_assert!((back.xy - d01).abs() < 1e-9 * scale);
            prop_assert!(back.zz.abs() < 1e-9 * scale);
        }

        #[test]
        fn rigid_rotation_preserves_invariants(
            sxx in -1e5f64..1e5, syy in -1e5f64..1e5, sxy in -1e5f64..1e5, szz in -1e5f64..1e5,
            omega in 0.1f64..10.0,
        ) {
            let m = soil();
            let s0 = Stress::new(sxx, syy, sxy, szz);
            let w = Mat2::new(0.0, -omega, omega, 0.0);
            let n = 10_000;
            let dt = 2.0 * std::f64::consts::PI / omega / n as f64;
            let mut s = s0;
            for _ in 0..n {
                s = integrate_stress(&m, &s, &Mat2::zeros(), &w, dt);
            }
            let scale = s0.in_plane().norm().max(s0.zz.abs()).max(1.0);
            prop_assert!((s.trace() - s0.trace()).abs() <= 1e-6 * scale);
            prop_assert!((s.j2() - s0.j2()).abs() <= 1e-6 * scale * scale);
        }
    }
}
