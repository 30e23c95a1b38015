use crate::error::{Error, Result};
use crate::geom::Vec2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshVertex {
    pub rest: Vec2,
    pub current: Vec2,
    pub fixed: bool,
}

/// Hookean spring between two vertices of the same mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub stiffness: f64,
}

impl Spring {
    pub fn energy(&self, pa: Vec2, pb: Vec2) -> f64 {
        let stretch = (pb - pa).norm() - self.rest_length;
        0.5 * self.stiffness * stretch * stretch
    }
}

/// Triangulated spring lattice covering one section.
#[derive(Debug, Clone)]
pub struct SpringMesh {
    pub vertices: Vec<MeshVertex>,
    pub springs: Vec<Spring>,
    /// Counter-clockwise (positive signed area) in rest space.
    pub triangles: Vec<[usize; 3]>,
    pub pitch: f64,
}

impl SpringMesh {
    pub fn energy(&self) -> f64 {
        self.springs
            .iter()
            .map(|s| s.energy(self.vertices[s.a].current, self.vertices[s.b].current))
            .sum()
    }

    pub fn rest_positions(&self) -> Vec<Vec2> {
        self.vertices.iter().map(|v| v.rest).collect()
    }

    pub fn current_positions(&self) -> Vec<Vec2> {
        self.vertices.iter().map(|v| v.current).collect()
    }

    /// Vertex adjacency through springs, each list ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for s in &self.springs {
            adj[s.a].push(s.b);
            adj[s.b].push(s.a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Shifts rest and current positions together.
    pub fn translate(&mut self, offset: Vec2) {
        for v in &mut self.vertices {
            v.rest += offset;
            v.current += offset;
        }
    }

    pub fn fix_all(&mut self) {
        for v in &mut self.vertices {
            v.fixed = true;
        }
    }

    pub fn rest_locator(&self) -> TriangleLocator {
        TriangleLocator::new(&self.rest_positions(), &self.triangles, self.pitch)
    }
}

/// Builds a lattice of hexagonally offset rows over `[0, width] × [0, height]`.
///
/// Column spacing is `width / round(width / pitch)`, row spacing
/// `height / round(height / (pitch·√3/2))`. Even rows hold the column
/// positions; odd rows are shifted by half a column and closed with a vertex
/// on each side edge so the hull is the full rectangle. A lattice with a
/// single column gap has no room for the shift and keeps aligned rows.
pub fn build_triangular_mesh(width: f64, height: f64, pitch: f64, stiffness: f64) -> Result<SpringMesh> {
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(Error::param("mesh_pitch", "must be > 0"));
    }
    if !(stiffness > 0.0) {
        return Err(Error::param("stiffness", "must be > 0"));
    }
    if !(width >= pitch && height >= pitch) {
        return Err(Error::param(
            "mesh_pitch",
            format!("lattice {width}×{height} is smaller than pitch {pitch}"),
        ));
    }
    let (col_gaps, row_gaps) = lattice_gaps(width, height, pitch);
    let dx = width / col_gaps as f64;
    let dy = height / row_gaps as f64;
    let offset_rows = col_gaps >= 2;

    let mut vertices = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(row_gaps + 1);
    for r in 0..=row_gaps {
        let y = if r == row_gaps { height } else { r as f64 * dy };
        let xs: Vec<f64> = if offset_rows && r % 2 == 1 {
            std::iter::once(0.0)
                .chain((0..col_gaps).map(|k| (k as f64 + 0.5) * dx))
                .chain(std::iter::once(width))
                .collect()
        } else {
            (0..=col_gaps)
                .map(|k| if k == col_gaps { width } else { k as f64 * dx })
                .collect()
        };
        let mut row = Vec::with_capacity(xs.len());
        for x in xs {
            row.push(vertices.len());
            let p = Vec2::new(x, y);
            vertices.push(MeshVertex {
                rest: p,
                current: p,
                fixed: false,
            });
        }
        rows.push(row);
    }

    let mut triangles = Vec::new();
    for pair in rows.windows(2) {
        zip_rows(&pair[0], &pair[1], &vertices, &mut triangles);
    }
    for t in &mut triangles {
        let (a, b, c) = (vertices[t[0]].rest, vertices[t[1]].rest, vertices[t[2]].rest);
        if (b - a).cross(c - a) < 0.0 {
            t.swap(1, 2);
        }
    }

    let mut edges: Vec<(usize, usize)> = triangles
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let springs = edges
        .into_iter()
        .map(|(a, b)| Spring {
            a,
            b,
            rest_length: (vertices[b].rest - vertices[a].rest).norm(),
            stiffness,
        })
        .collect();

    Ok(SpringMesh {
        vertices,
        springs,
        triangles,
        pitch,
    })
}

/// `(column gaps, row gaps)` used by [`build_triangular_mesh`].
pub fn lattice_gaps(width: f64, height: f64, pitch: f64) -> (usize, usize) {
    let row_pitch = pitch * 3f64.sqrt() / 2.0;
    let col_gaps = ((width / pitch).round() as usize).max(1);
    let row_gaps = ((height / row_pitch).round() as usize).max(1);
    (col_gaps, row_gaps)
}

/// Triangulates the strip between two rows by always advancing the row whose
/// next vertex lies further left.
fn zip_rows(lower: &[usize], upper: &[usize], v: &[MeshVertex], out: &mut Vec<[usize; 3]>) {
    let (mut i, mut j) = (0, 0);
    while i + 1 < lower.len() || j + 1 < upper.len() {
        let advance_lower = if i + 1 == lower.len() {
            false
        } else if j + 1 == upper.len() {
            true
        } else {
            v[lower[i + 1]].rest.x <= v[upper[j + 1]].rest.x
        };
        if advance_lower {
            out.push([lower[i], lower[i + 1], upper[j]]);
            i += 1;
        } else {
            out.push([lower[i], upper[j + 1], upper[j]]);
            j += 1;
        }
    }
}

/// Barycentric weights of `p` in triangle `(a, b, c)`; `None` if degenerate.
pub fn barycentric(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> Option<[f64; 3]> {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let den = v0.cross(v1);
    if den.abs() < 1e-300 {
        return None;
    }
    let wb = v2.cross(v1) / den;
    let wc = v0.cross(v2) / den;
    Some([1.0 - wb - wc, wb, wc])
}

const INSIDE_EPS: f64 = 1e-9;

/// Uniform-grid bucket index for point-in-triangle queries.
#[derive(Debug, Clone)]
pub struct TriangleLocator {
    points: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl TriangleLocator {
    pub fn new(points: &[Vec2], triangles: &[[usize; 3]], cell_hint: f64) -> Self {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if points.is_empty() {
            lo = Vec2::ZERO;
            hi = Vec2::ZERO;
        }
        let cell = if cell_hint > 0.0 { cell_hint } else { 1.0 };
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (ti, t) in triangles.iter().enumerate() {
            let (a, b, c) = (points[t[0]], points[t[1]], points[t[2]]);
            let tx0 = a.x.min(b.x).min(c.x);
            let tx1 = a.x.max(b.x).max(c.x);
            let ty0 = a.y.min(b.y).min(c.y);
            let ty1 = a.y.max(b.y).max(c.y);
            let cx0 = (((tx0 - lo.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cx1 = (((tx1 - lo.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy0 = (((ty0 - lo.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            let cy1 = (((ty1 - lo.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    buckets[cy * nx + cx].push(ti as u32);
                }
            }
        }
        TriangleLocator {
            points: points.to_vec(),
            triangles: triangles.to_vec(),
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    /// Lowest-index triangle containing `p` (edges inclusive) with barycentric weights.
    pub fn locate(&self, p: Vec2) -> Option<(usize, [f64; 3])> {
        let fx = ((p.x - self.origin.x) / self.cell).floor();
        let fy = ((p.y - self.origin.y) / self.cell).floor();
        // points just past the hull edge still get a bucket
        let cx = fx.clamp(0.0, (self.nx - 1) as f64) as usize;
        let cy = fy.clamp(0.0, (self.ny - 1) as f64) as usize;
        if fx < -1.0 || fy < -1.0 || fx > self.nx as f64 || fy > self.ny as f64 {
            return None;
        }
        for &ti in &self.buckets[cy * self.nx + cx] {
            let t = self.triangles[ti as usize];
            if let Some(w) = barycentric(p, self.points[t[0]], self.points[t[1]], self.points[t[2]]) {
                if w.iter().all(|&x| x >= -INSIDE_EPS) {
                    return Some((ti as usize, w));
                }
            }
        }
        None
    }
}
