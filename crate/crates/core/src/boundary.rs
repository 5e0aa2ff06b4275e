//! Free-roller (mirror ghost) and full-fixity (virtual particle) walls.
//!
//! Walls are axis-aligned. A ghost is the mirror image of a soil particle
//! lying within the band of a roller wall; soil near the corner of two
//! roller walls is mirrored across both. Full-fixity walls are backed by
//! lattice rows of static virtual particles whose stress and density are
//! copied each step from the nearest soil particle.

use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SphError};
use crate::particles::{Particle, ParticleKind};
use crate::scenarios::WaterTable;
use crate::tensor::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// No wall: the edge is a free surface.
    Free,
    FreeRoller,
    FullFixity,
}

/// Which side of the soil body the wall closes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    fn is_vertical(&self) -> bool {
        matches!(self, Side::Left | Side::Right)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub side: Side,
    /// x of a vertical wall, y of a horizontal one.
    pub position: f64,
    /// Extent along the wall.
    pub span: (f64, f64),
    pub condition: BoundaryCondition,
}

impl Wall {
    /// Distance of `x` from the wall, positive on the soil side.
    fn distance(&self, x: &Vec2) -> f64 {
        match self.side {
            Side::Left => x.x - self.position,
            Side::Right => self.position - x.x,
            Side::Bottom => x.y - self.position,
            Side::Top => self.position - x.y,
        }
    }

    fn tangential(&self, x: &Vec2) -> f64 {
        if self.side.is_vertical() {
            x.y
        } else {
            x.x
        }
    }

    /// Outward normal (pointing out of the soil into the wall).
    fn outward(&self) -> Vec2 {
        match self.side {
            Side::Left => Vec2::new(-1.0, 0.0),
            Side::Right => Vec2::new(1.0, 0.0),
            Side::Bottom => Vec2::new(0.0, -1.0),
            Side::Top => Vec2::new(0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySpec {
    pub walls: Vec<Wall>,
    /// Thickness of the ghost/virtual layer; at least the kernel support.
    pub band_width: f64,
    /// Lattice spacing used to place virtual particles.
    pub spacing: f64,
    /// Lattice origin; soil sits at `origin + (i + 1/2, j + 1/2) spacing`.
    pub origin: Vec2,
}

impl BoundarySpec {
    pub fn none() -> Self {
        BoundarySpec {
            walls: Vec::new(),
            band_width: 0.0,
            spacing: 1.0,
            origin: Vec2::zeros(),
        }
    }

    pub fn validate(&self, support_radius: f64) -> Result<()> {
        let active = self.walls.iter().any(|w| w.condition != BoundaryCondition::Free);
        if active && self.band_width < support_radius * (1.0 - 1e-12) {
            return Err(SphError::invalid(format!(
                "boundary band width {} is narrower than the kernel support {}",
                self.band_width, support_radius
            )));
        }
        if active && !(self.spacing > 0.0) {
            return Err(SphError::invalid("boundary lattice spacing must be positive"));
        }
        Ok(())
    }

    fn walls_with(&self, c: BoundaryCondition) -> impl Iterator<Item = &Wall> {
        self.walls.iter().filter(move |w| w.condition == c)
    }
}

/// Reflection across up to one vertical and one horizontal wall.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mirror {
    pub x_wall: Option<f64>,
    pub y_wall: Option<f64>,
}

impl Mirror {
    pub fn apply(&self, p: &Particle) -> Particle {
        let mut g = p.clone();
        g.kind = ParticleKind::Ghost;
        if let Some(xw) = self.x_wall {
            g.x.x = 2.0 * xw - g.x.x;
            g.v.x = -g.v.x;
            g.stress.xy = -g.stress.xy;
        }
        if let Some(yw) = self.y_wall {
            g.x.y = 2.0 * yw - g.x.y;
            g.v.y = -g.v.y;
            g.stress.xy = -g.stress.xy;
        }
        g
    }

    fn key(&self) -> (u64, u64) {
        (
            self.x_wall.map_or(u64::MAX, f64::to_bits),
            self.y_wall.map_or(u64::MAX, f64::to_bits),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GhostLink {
    pub source: usize,
    pub mirror: Mirror,
}

/// Mirror links for every soil particle within the band of a roller wall.
pub fn ghost_links(soil: &[Particle], spec: &BoundarySpec) -> Vec<GhostLink> {
    let rollers: Vec<&Wall> = spec.walls_with(BoundaryCondition::FreeRoller).collect();
    let mut links = Vec::new();
    if rollers.is_empty() {
        return links;
    }
    let band = spec.band_width;
    for (i, p) in soil.iter().enumerate() {
        if p.kind != ParticleKind::Soil {
            continue;
        }
        let mut near_x: Option<f64> = None;
        let mut near_y: Option<f64> = None;
        for w in &rollers {
            let d = w.distance(&p.x);
            let t = w.tangential(&p.x);
            if !(0.0..band).contains(&d) || t < w.span.0 - band || t > w.span.1 + band {
                continue;
            }
            let (mx, my) = if w.side.is_vertical() {
                (Some(w.position), None)
            } else {
                (None, Some(w.position))
            };
            links.push(GhostLink {
                source: i,
                mirror: Mirror { x_wall: mx, y_wall: my },
            });
            near_x = near_x.or(mx);
            near_y = near_y.or(my);
        }
        if let (Some(xw), Some(yw)) = (near_x, near_y) {
            links.push(GhostLink {
                source: i,
                mirror: Mirror {
                    x_wall: Some(xw),
                    y_wall: Some(yw),
                },
            });
        }
    }
    links
}

/// Ghost particles mirrored across free-roller walls: normal velocity
/// negated, tangential velocity copied, shear stress sign-flipped per
/// reflection, pore pressure and density copied.
pub fn generate_ghosts(soil: &[Particle], spec: &BoundarySpec) -> (Vec<Particle>, Vec<GhostLink>) {
    let links = ghost_links(soil, spec);
    let ghosts = links.iter().map(|l| l.mirror.apply(&soil[l.source])).collect();
    (ghosts, links)
}

/// Hash identifying a ghost set; equal sets give equal signatures.
pub fn ghost_signature(links: &[GhostLink]) -> u64 {
    let mut h = DefaultHasher::new();
    links.len().hash(&mut h);
    for l in links {
        l.source.hash(&mut h);
        l.mirror.key().hash(&mut h);
    }
    h.finish()
}

/// Static virtual particles behind full-fixity walls, with the index of the
/// nearest soil particle each one copies its state from.
pub fn generate_fixed_boundary(
    spec: &BoundarySpec,
    soil: &[Particle],
    water: Option<&WaterTable>,
) -> (Vec<Particle>, Vec<usize>) {
    let dx = spec.spacing;
    let band = spec.band_width;
    let rows = (band / dx - 1e-9).ceil().max(0.0) as i64;
    let mut seen = HashSet::new();
    let mut particles = Vec::new();
    let mut sources = Vec::new();
    if soil.is_empty() {
        return (particles, sources);
    }
    for w in spec.walls_with(BoundaryCondition::FullFixity) {
        let (lo, hi) = (w.span.0 - band, w.span.1 + band);
        let origin_t = if w.side.is_vertical() {
            spec.origin.y
        } else {
            spec.origin.x
        };
        let i0 = ((lo - origin_t) / dx - 0.5).ceil() as i64;
        let i1 = ((hi - origin_t) / dx - 0.5).floor() as i64;
        let out = w.outward();
        for k in 0..rows {
            let offset = (k as f64 + 0.5) * dx;
            for i in i0..=i1 {
                let t = origin_t + (i as f64 + 0.5) * dx;
                let x = if w.side.is_vertical() {
                    Vec2::new(w.position + out.x * offset, t)
                } else {
                    Vec2::new(t, w.position + out.y * offset)
                };
                let key = ((x.x / dx * 2.0).round() as i64, (x.y / dx * 2.0).round() as i64);
                if !seen.insert(key) {
                    continue;
                }
                let src = nearest_soil(soil, &x);
                let s = &soil[src];
                let mut p = Particle::soil(x, s.rho, s.mass);
                p.rho0 = s.rho0;
                p.kind = ParticleKind::VirtualBoundary;
                p.material = s.material;
                p.stress = s.stress;
                p.p_w = match water {
                    Some(wt) => wt.pressure_at(x.y),
                    None => s.p_w,
                };
                particles.push(p);
                sources.push(src);
            }
        }
    }
    (particles, sources)
}

fn nearest_soil(soil: &[Particle], x: &Vec2) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, p) in soil.iter().enumerate() {
        if p.kind != ParticleKind::Soil {
            continue;
        }
        let d = (p.x - x).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Copies the current source state into the virtual particles. Velocity
/// stays zero.
pub fn sync_virtual(virtuals: &mut [Particle], sources: &[usize], soil: &[Particle], water: Option<&WaterTable>) {
    for (p, &s) in virtuals.iter_mut().zip(sources) {
        let src = &soil[s];
        p.stress = src.stress;
        p.rho = src.rho;
        p.v = Vec2::zeros();
        if water.is_none() {
            p.p_w = src.p_w;
        }
    }
}

/// Rewrites the ghosts from their sources.
pub fn sync_ghosts(ghosts: &mut [Particle], links: &[GhostLink], soil: &[Particle]) {
    for (g, l) in ghosts.iter_mut().zip(links) {
        *g = l.mirror.apply(&soil[l.source]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall(side: Side, position: f64, span: (f64, f64), condition: BoundaryCondition) -> Wall {
        Wall {
            side,
            position,
            span,
            condition,
        }
    }

    fn spec(walls: Vec<Wall>) -> BoundarySpec {
        BoundarySpec {
            walls,
            band_width: 0.48,
            spacing: 0.2,
            origin: Vec2::zeros(),
        }
    }

    #[test]
    fn mirror_across_roller() {
        let s = spec(vec![wall(Side::Left, 0.0, (0.0, 5.0), BoundaryCondition::FreeRoller)]);
        let mut p = Particle::soil(Vec2::new(0.3, 1.0), 2000.0, 80.0);
        p.v = Vec2::new(1.0, 2.0);
        p.stress = crate::tensor::Stress::new(-1.0, -2.0, 0.5, -1.5);
        p.p_w = -7.0;
        let (g, links) = generate_ghosts(&[p], &s);
        assert_eq!(g.len(), 1);
        assert_eq!(links[0].source, 0);
        assert!((g[0].x - Vec2::new(-0.3, 1.0)).norm() < 1e-15);
        assert_eq!(g[0].v, Vec2::new(-1.0, 2.0));
        assert_eq!(g[0].stress, crate::tensor::Stress::new(-1.0, -2.0, -0.5, -1.5));
        assert_eq!(g[0].p_w, -7.0);
        assert_eq!(g[0].kind, ParticleKind::Ghost);
    }

    #[test]
    fn no_ghost_outside_band() {
        let s = spec(vec![wall(Side::Right, 5.0, (0.0, 5.0), BoundaryCondition::FreeRoller)]);
        let p = Particle::soil(Vec2::new(5.0 - 0.5, 1.0), 2000.0, 80.0);
        assert!(generate_ghosts(&[p], &s).0.is_empty());
    }

    #[test]
    fn corner_is_mirrored_twice() {
        let s = spec(vec![
            wall(Side::Left, 0.0, (0.0, 5.0), BoundaryCondition::FreeRoller),
            wall(Side::Bottom, 0.0, (0.0, 5.0), BoundaryCondition::FreeRoller),
        ]);
        let mut p = Particle::soil(Vec2::new(0.1, 0.3), 2000.0, 80.0);
        p.v = Vec2::new(1.0, 2.0);
        p.stress.xy = 3.0;
        let (g, _) = generate_ghosts(&[p], &s);
        assert_eq!(g.len(), 3);
        let corner = g.iter().find(|q| q.x.x < 0.0 && q.x.y < 0.0).unwrap();
        assert!((corner.x - Vec2::new(-0.1, -0.3)).norm() < 1e-15);
        assert_eq!(corner.v, Vec2::new(-1.0, -2.0));
        assert_eq!(corner.stress.xy, 3.0);
    }

    #[test]
    fn virtual_rows_cover_band() {
        let dx = 0.2;
        let s = spec(vec![wall(Side::Bottom, 0.0, (0.0, 2.0), BoundaryCondition::FullFixity)]);
        let soil: Vec<Particle> = (0..10)
            .map(|i| Particle::soil(Vec2::new((i as f64 + 0.5) * dx, 0.5 * dx), 2000.0, 80.0))
            .collect();
        let (v, src) = generate_fixed_boundary(&s, &soil, None);
        let rows = (0.48f64 / dx).ceil() as usize;
        assert_eq!(rows, 3);
        let mut ys: Vec<i64> = v.iter().map(|p| (p.x.y * 1e6).round() as i64).collect();
        ys.sort();
        ys.dedup();
        assert_eq!(ys.len(), rows);
        // extended by the band on both ends: x from -0.4 to 2.4
        let per_row = v.len() / rows;
        assert_eq!(per_row, 10 + 2 * 2);
        assert!(v
            .iter()
            .all(|p| p.v == Vec2::zeros() && p.kind == ParticleKind::VirtualBoundary));
        assert_eq!(src.len(), v.len());
        assert_eq!(src[0], 0);
    }

    #[test]
    fn no_fixity_no_virtual() {
        let s = spec(vec![wall(Side::Left, 0.0, (0.0, 5.0), BoundaryCondition::FreeRoller)]);
        let soil = vec![Particle::soil(Vec2::new(0.1, 0.1), 2000.0, 80.0)];
        assert!(generate_fixed_boundary(&s, &soil, None).0.is_empty());
    }

    #[test]
    fn narrow_band_rejected() {
        let mut s = spec(vec![wall(Side::Left, 0.0, (0.0, 5.0), BoundaryCondition::FreeRoller)]);
        s.band_width = 0.3;
        assert!(s.validate(0.48).is_err());
        s.band_width = 0.48;
        assert!(s.validate(0.48).is_ok());
    }
}
