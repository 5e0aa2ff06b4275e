//! Particle state and fixed-radius neighbor search on a uniform grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SphError};
use crate::kernel::{Kernel, SUPPORT_SLACK};
use crate::tensor::{Stress, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleKind {
    Soil,
    Ghost,
    VirtualBoundary,
}

impl ParticleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParticleKind::Soil => "soil",
            ParticleKind::Ghost => "ghost",
            ParticleKind::VirtualBoundary => "virtual_boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "soil" => Some(ParticleKind::Soil),
            "ghost" => Some(ParticleKind::Ghost),
            "virtual_boundary" => Some(ParticleKind::VirtualBoundary),
            _ => None,
        }
    }
}

/// A single SPH particle. Mass is per unit thickness (plane strain).
#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub x: Vec2,
    pub v: Vec2,
    pub rho: f64,
    pub rho0: f64,
    pub mass: f64,
    /// Effective stress, compression negative.
    pub stress: Stress,
    /// Pore-water pressure, compression negative.
    pub p_w: f64,
    pub kind: ParticleKind,
    pub material: usize,
}

impl Particle {
    pub fn soil(x: Vec2, rho: f64, mass: f64) -> Self {
        Particle {
            x,
            v: Vec2::zeros(),
            rho,
            rho0: rho,
            mass,
            stress: Stress::ZERO,
            p_w: 0.0,
            kind: ParticleKind::Soil,
            material: 0,
        }
    }

    #[inline]
    pub fn volume(&self) -> f64 {
        self.mass / self.rho
    }

    /// Total stress `sigma' + p_w I`.
    pub fn total_stress(&self) -> Stress {
        self.stress.plus_isotropic(self.p_w)
    }
}

/// One entry of a neighbor list: the neighbor index and cached pair geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub j: usize,
    /// `x_a - x_b`
    pub r: Vec2,
    pub dist: f64,
    /// Raw kernel gradient with respect to `x_a`.
    pub grad: Vec2,
}

/// Compressed per-particle neighbor lists, sorted by neighbor index.
#[derive(Clone, Debug, Default)]
pub struct NeighborTable {
    offsets: Vec<usize>,
    pairs: Vec<Pair>,
}

impl NeighborTable {
    pub fn neighbors(&self, a: usize) -> &[Pair] {
        &self.pairs[self.offsets[a]..self.offsets[a + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// All ordered pairs `(a, b)` in the table.
    pub fn pair_set(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|a| self.neighbors(a).iter().map(move |p| (a, p.j)))
            .collect()
    }
}

fn cell_of(x: &Vec2, cell: f64) -> (i64, i64) {
    ((x.x / cell).floor() as i64, (x.y / cell).floor() as i64)
}

/// Candidate lists at radius `radius` built on a hashed uniform grid for the
/// first `rows` particles. Each list is sorted by particle index and
/// excludes the particle itself.
fn grid_lists(positions: &[Vec2], radius: f64, cell_size: f64, rows: usize) -> Vec<Vec<usize>> {
    let cell = cell_size.max(radius);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, x) in positions.iter().enumerate() {
        grid.entry(cell_of(x, cell)).or_default().push(i);
    }
    let r2 = radius * radius;
    positions[..rows]
        .iter()
        .enumerate()
        .map(|(a, xa)| {
            let (cx, cy) = cell_of(xa, cell);
            let mut list = Vec::new();
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(members) = grid.get(&(cx + dx, cy + dy)) {
                        for &b in members {
                            if b != a && (xa - positions[b]).norm_squared() <= r2 {
                                list.push(b);
                            }
                        }
                    }
                }
            }
            list.sort_unstable();
            list
        })
        .collect()
}

fn table_from_lists<'a, I>(positions: &[Vec2], kernel: &Kernel, lists: I) -> NeighborTable
where
    I: IntoIterator<Item = &'a [usize]>,
{
    let radius = kernel.support_radius() + SUPPORT_SLACK;
    let mut offsets = vec![0];
    let mut pairs = Vec::new();
    for (a, list) in lists.into_iter().enumerate() {
        let xa = positions[a];
        for &b in list {
            let r = xa - positions[b];
            let dist = r.norm();
            if dist <= radius {
                pairs.push(Pair {
                    j: b,
                    r,
                    dist,
                    grad: kernel.grad_with_distance(&r, dist),
                });
            }
        }
        offsets.push(pairs.len());
    }
    NeighborTable { offsets, pairs }
}

/// Exact fixed-radius neighbor table at radius `2h` (plus a tiny slack).
pub fn build_neighbors(particles: &[Particle], kernel: &Kernel, cell_size: f64) -> NeighborTable {
    let positions: Vec<Vec2> = particles.iter().map(|p| p.x).collect();
    build_neighbors_from_positions(&positions, kernel, cell_size)
}

pub fn build_neighbors_from_positions(positions: &[Vec2], kernel: &Kernel, cell_size: f64) -> NeighborTable {
    let radius = kernel.support_radius() + SUPPORT_SLACK;
    let lists = grid_lists(positions, radius, cell_size, positions.len());
    table_from_lists(positions, kernel, lists.iter().map(|l| l.as_slice()))
}

/// Verlet-style candidate lists with a skin. Candidates are gathered at
/// radius `2h + skin` and reused until some particle has moved more than
/// half the skin, or the particle set changes.
#[derive(Clone, Debug)]
pub struct NeighborCache {
    skin: f64,
    lists: Vec<Vec<usize>>,
    reference: Vec<Vec2>,
    signature: u64,
    rebuilds: u64,
}

impl NeighborCache {
    pub fn new(skin: f64) -> Self {
        NeighborCache {
            skin: skin.max(0.0),
            lists: Vec::new(),
            reference: Vec::new(),
            signature: u64::MAX,
            rebuilds: 0,
        }
    }

    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    fn needs_rebuild(&self, positions: &[Vec2], signature: u64) -> bool {
        if signature != self.signature || positions.len() != self.reference.len() {
            return true;
        }
        let limit = 0.25 * self.skin * self.skin;
        positions
            .iter()
            .zip(&self.reference)
            .any(|(x, x0)| (x - x0).norm_squared() > limit)
    }

    /// Neighbor table at the current positions, with lists for the first
    /// `rows` particles. `signature` identifies the particle set; a change
    /// forces a rebuild.
    pub fn table(&mut self, positions: &[Vec2], kernel: &Kernel, signature: u64, rows: usize) -> NeighborTable {
        if self.needs_rebuild(positions, signature) || self.lists.len() != rows {
            let radius = kernel.support_radius() + SUPPORT_SLACK + self.skin;
            self.lists = grid_lists(positions, radius, radius, rows);
            self.reference = positions.to_vec();
            self.signature = signature;
            self.rebuilds += 1;
        }
        table_from_lists(positions, kernel, self.lists.iter().map(|l| l.as_slice()))
    }
}

/// Density rate `sum_b m_b (v_a - v_b) . grad W_ab` using the supplied
/// (possibly corrected) gradient for each pair.
pub fn density_rate<F>(particles: &[Particle], a: usize, pairs: &[Pair], grad: F) -> f64
where
    F: Fn(&Pair) -> Vec2,
{
    let pa = &particles[a];
    pairs
        .iter()
        .map(|p| {
            let pb = &particles[p.j];
            pb.mass * (pa.v - pb.v).dot(&grad(p))
        })
        .sum()
}

/// Explicit continuity update of particle `a` over one step.
pub fn continuity_update<F>(particles: &[Particle], a: usize, pairs: &[Pair], grad: F, dt: f64) -> Result<f64>
where
    F: Fn(&Pair) -> Vec2,
{
    let rho = particles[a].rho + dt * density_rate(particles, a, pairs, grad);
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(SphError::Diverged {
            step: 0,
            particle: a,
            field: "density",
        });
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::moment_matrix;
    use crate::kernel::CorrectionMatrix;
    use proptest::prelude::*;

    fn brute_force(positions: &[Vec2], radius: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..positions.len() {
            for b in 0..positions.len() {
                if a != b && (positions[a] - positions[b]).norm() <= radius {
                    out.push((a, b));
                }
            }
        }
        out
    }

    #[test]
    fn inside_and_outside_support() {
        let k = Kernel::new(0.5).unwrap();
        let near = [Vec2::new(0.0, 0.0), Vec2::new(1.9 * 0.5, 0.0)];
        let t = build_neighbors_from_positions(&near, &k, 1.0);
        assert_eq!(t.neighbors(0).len(), 1);
        assert_eq!(t.neighbors(1)[0].j, 0);
        let far = [Vec2::new(0.0, 0.0), Vec2::new(2.1 * 0.5, 0.0)];
        let t = build_neighbors_from_positions(&far, &k, 1.0);
        assert!(t.neighbors(0).is_empty() && t.neighbors(1).is_empty());
    }

    #[test]
    fn random_cloud_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let positions: Vec<Vec2> = (0..200)
            .map(|_| Vec2::new(rng.gen_range(-2.0..3.0), rng.gen_range(0.0..2.0)))
            .collect();
        let k = Kernel::new(0.17).unwrap();
        let t = build_neighbors_from_positions(&positions, &k, 0.34);
        assert_eq!(t.pair_set(), brute_force(&positions, 0.34 + SUPPORT_SLACK));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn grid_search_equals_brute_force(
            pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..500),
            h in 0.05f64..0.6,
        ) {
            let positions: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
            let k = Kernel::new(h).unwrap();
            let t = build_neighbors_from_positions(&positions, &k, 2.0 * h);
            let pairs = t.pair_set();
            prop_assert_eq!(&pairs, &brute_force(&positions, 2.0 * h + SUPPORT_SLACK));
            for &(a, b) in &pairs {
                prop_assert!(pairs.binary_search(&(b, a)).is_ok());
            }
        }

        #[test]
        fn cache_matches_fresh_build_after_motion(
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = Kernel::new(0.2).unwrap();
            let mut positions: Vec<Vec2> = (0..150)
                .map(|_| Vec2::new(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)))
                .collect();
            let mut cache = NeighborCache::new(0.04);
            for _ in 0..20 {
                let cached = cache.table(&positions, &k, 1, positions.len()).pair_set();
                let fresh = build_neighbors_from_positions(&positions, &k, 0.4).pair_set();
                prop_assert_eq!(cached, fresh);
                for x in positions.iter_mut() {
                    *x += Vec2::new(rng.gen_range(-0.008..0.008), rng.gen_range(-0.008..0.008));
                }
            }
        }
    }

    fn lattice_with_velocity(n: usize, dx: f64, v: impl Fn(&Vec2) -> Vec2) -> Vec<Particle> {
        let mut out = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let x = Vec2::new(i as f64 * dx, j as f64 * dx);
                let mut p = Particle::soil(x, 2000.0, 2000.0 * dx * dx);
                p.v = v(&x);
                out.push(p);
            }
        }
        out
    }

    fn corrected_rate(ps: &[Particle], k: &Kernel, a: usize) -> f64 {
        let t = build_neighbors(ps, k, 2.0 * k.h());
        let (m, n) = moment_matrix(
            k,
            &ps[a].x,
            t.neighbors(a).iter().map(|p| (&ps[p.j].x, ps[p.j].volume())),
        );
        let l = CorrectionMatrix::from_moment(&m, n).unwrap();
        density_rate(ps, a, t.neighbors(a), |p| l.apply(&p.grad))
    }

    #[test]
    fn rigid_translation_has_no_density_rate() {
        let ps = lattice_with_velocity(9, 0.1, |_| Vec2::new(0.3, -1.2));
        let k = Kernel::new(0.12).unwrap();
        assert!(corrected_rate(&ps, &k, 40).abs() < 1e-9);
    }

    #[test]
    fn uniform_divergence_field() {
        let s = 0.01;
        let ps = lattice_with_velocity(11, 0.1, |x| x * s);
        let k = Kernel::new(0.12).unwrap();
        let rate = corrected_rate(&ps, &k, 60);
        let expected = -2.0 * 2000.0 * s;
        assert!(((rate - expected) / expected).abs() < 0.02, "{rate} vs {expected}");
    }

    #[test]
    fn isolated_particle_keeps_density() {
        let ps = vec![Particle::soil(Vec2::zeros(), 1800.0, 1.0)];
        let k = Kernel::new(0.1).unwrap();
        let t = build_neighbors(&ps, &k, 0.2);
        assert_eq!(density_rate(&ps, 0, t.neighbors(0), |p| p.grad), 0.0);
        let rho = continuity_update(&ps, 0, t.neighbors(0), |p| p.grad, 1e-3).unwrap();
        assert_eq!(rho, 1800.0);
    }

    #[test]
    fn non_positive_density_is_divergence() {
        let ps = lattice_with_velocity(5, 0.1, |x| x * 1e4);
        let k = Kernel::new(0.12).unwrap();
        let t = build_neighbors(&ps, &k, 0.24);
        let err = continuity_update(&ps, 12, t.neighbors(12), |p| p.grad, 1.0).unwrap_err();
        assert!(matches!(err, SphError::Diverged { field: "density", .. }));
    }
}
