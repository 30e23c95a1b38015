use super::mesh::{SpringMesh, TriangleLocator};
use crate::geom::Vec2;

/// Triangle whose deformed signed area is not positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvertedTriangle {
    pub triangle: usize,
    pub deformed_area: f64,
}

/// Per-triangle affine map defined by a deformed triangulation.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearTransform {
    rest: Vec<Vec2>,
    displacements: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    cell: f64,
    locator: TriangleLocator,
    pub inverted: Vec<InvertedTriangle>,
}

impl PiecewiseLinearTransform {
    pub fn new(rest: Vec<Vec2>, displacements: Vec<Vec2>, triangles: Vec<[usize; 3]>, cell: f64) -> Self {
        assert_eq!(rest.len(), displacements.len());
        let locator = TriangleLocator::new(&rest, &triangles, cell);
        let inverted = triangles
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let p = |k: usize| rest[t[k]] + displacements[t[k]];
                let area = 0.5 * (p(1) - p(0)).cross(p(2) - p(0));
                (area <= 0.0).then_some(InvertedTriangle { triangle: i, deformed_area: area })
            })
            .collect();
        PiecewiseLinearTransform { rest, displacements, triangles, cell, locator, inverted }
    }

    pub fn rest(&self) -> &[Vec2] {
        &self.rest
    }

    pub fn displacements(&self) -> &[Vec2] {
        &self.displacements
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn deformed(&self) -> Vec<Vec2> {
        self.rest.iter().zip(&self.displacements).map(|(&r, &d)| r + d).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.displacements.iter().all(|d| *d == Vec2::ZERO)
    }

    /// Maps a rest-space point; `None` outside the lattice hull.
    pub fn map(&self, p: Vec2) -> Option<Vec2> {
        let (tri, w) = self.locator.locate(p)?;
        Some(self.map_in(tri, w, p))
    }

    /// Maps `p` using triangle `tri` with barycentric weights `w`.
    pub fn map_in(&self, tri: usize, w: [f64; 3], p: Vec2) -> Vec2 {
        let t = self.triangles[tri];
        p + self.displacements[t[0]] * w[0] + self.displacements[t[1]] * w[1] + self.displacements[t[2]] * w[2]
    }

    /// Same transform on a raster `fx`×`fy` times larger, pixel centres
    /// staying aligned: `x' = (x + 0.5)·fx − 0.5`.
    pub fn scaled(&self, fx: f64, fy: f64) -> Self {
        let rest = self
            .rest
            .iter()
            .map(|&r| Vec2::new((r.x + 0.5) * fx - 0.5, (r.y + 0.5) * fy - 0.5))
            .collect();
        let disp = self.displacements.iter().map(|&d| Vec2::new(d.x * fx, d.y * fy)).collect();
        PiecewiseLinearTransform::new(rest, disp, self.triangles.clone(), self.cell * fx.max(fy))
    }
}

/// Transform carried by a relaxed mesh: displacement = current − rest.
/// Inverted triangles are logged and recorded, not rejected.
pub fn extract_transform(mesh: &SpringMesh) -> PiecewiseLinearTransform {
    let t = PiecewiseLinearTransform::new(
        mesh.rest_positions(),
        mesh.vertices.iter().map(|v| v.current - v.rest).collect(),
        mesh.triangles.clone(),
        mesh.pitch,
    );
    for inv in &t.inverted {
        log::warn!("inverted triangle {} (deformed area {:.3})", inv.triangle, inv.deformed_area);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::mesh::{barycentric, build_triangular_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh() -> SpringMesh {
        build_triangular_mesh(200.0, 160.0, 40.0, 1.0).unwrap()
    }

    #[test]
    fn unrelaxed_mesh_is_identity() {
        let t = extract_transform(&mesh());
        assert!(t.is_identity());
        assert_eq!(t.map(Vec2::new(33.3, 71.0)), Some(Vec2::new(33.3, 71.0)));
        assert!(t.inverted.is_empty());
    }

    #[test]
    fn shifted_mesh_translates_hull() {
        let mut m = mesh();
        for v in &mut m.vertices {
            v.current += Vec2::new(5.0, 5.0);
        }
        let t = extract_transform(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..160.0));
            let q = t.map(p).unwrap();
            assert!((q - p - Vec2::new(5.0, 5.0)).norm() < 1e-9);
        }
        assert_eq!(t.map(Vec2::new(-1.0, 10.0)), None);
    }

    #[test]
    fn barycenter_blends_vertex_displacements() {
        let mut m = mesh();
        let tri = m.triangles[7];
        m.vertices[tri[1]].current += Vec2::new(3.0, -6.0);
        let t = extract_transform(&m);
        let (a, b, c) = (m.vertices[tri[0]].rest, m.vertices[tri[1]].rest, m.vertices[tri[2]].rest);
        let center = (a + b + c) / 3.0;
        let w = barycentric(center, a, b, c).unwrap();
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
        let q = t.map(center).unwrap();
        assert!((q - center - Vec2::new(1.0, -2.0)).norm() < 1e-9);
    }

    #[test]
    fn vertices_map_to_deformed_positions_and_edges_agree() {
        let mut m = mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for v in &mut m.vertices {
            v.current += Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        }
        let t = extract_transform(&m);
        for v in &m.vertices {
            assert!((t.map(v.rest).unwrap() - v.current).norm() < 1e-9);
        }
        // shared edges: map through either triangle
        let mut edges = std::collections::HashMap::new();
        for (i, tri) in m.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edges.entry((a.min(b), a.max(b))).or_insert_with(Vec::new).push(i);
            }
        }
        let shared: Vec<_> = edges.into_iter().filter(|(_, ts)| ts.len() == 2).collect();
        for _ in 0..1000 {
            let ((a, b), ts) = &shared[rng.random_range(0..shared.len())];
            let s: f64 = rng.random_range(0.0..1.0);
            let p = m.vertices[*a].rest * (1.0 - s) + m.vertices[*b].rest * s;
            let via = |ti: usize| {
                let tri = m.triangles[ti];
                let w = barycentric(p, m.vertices[tri[0]].rest, m.vertices[tri[1]].rest, m.vertices[tri[2]].rest)
                    .unwrap();
                t.map_in(ti, w, p)
            };
            assert!((via(ts[0]) - via(ts[1])).norm() < 1e-9);
        }
    }

    #[test]
    fn inverted_triangle_is_recorded() {
        let mut m = mesh();
        let tri = m.triangles[3];
        let (a, b) = (m.vertices[tri[0]].rest, m.vertices[tri[1]].rest);
        // push the third vertex across the opposite edge
        let c = m.vertices[tri[2]].rest;
        let mid = (a + b) * 0.5;
        m.vertices[tri[2]].current = mid + (mid - c);
        let t = extract_transform(&m);
        assert!(t.inverted.iter().any(|i| i.triangle == 3));
    }

    #[test]
    fn scaling_keeps_pixel_centres_aligned() {
        let mut m = mesh();
        for v in &mut m.vertices {
            v.current += Vec2::new(1.0, -2.0);
        }
        let t = extract_transform(&m).scaled(10.0, 10.0);
        let p = Vec2::new(500.0, 700.0);
        assert!((t.map(p).unwrap() - p - Vec2::new(10.0, -20.0)).norm() < 1e-9);
        assert_eq!(t.rest()[0], Vec2::new(4.5, 4.5));
    }
}
