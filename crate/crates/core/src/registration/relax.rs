//! Spring system spanning all sections and its relaxation.

use super::mesh::SpringMesh;
use super::RegistrationParams;
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Zero-length spring from a vertex to a handle inside a triangle of another
/// section's mesh. The handle follows that triangle's current geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSpring {
    pub section: usize,
    pub vertex: usize,
    pub target_section: usize,
    pub triangle: usize,
    pub weights: [f64; 3],
    pub stiffness: f64,
}

#[derive(Debug, Clone)]
pub struct SpringSystem {
    pub meshes: Vec<SpringMesh>,
    pub cross: Vec<CrossSpring>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    /// Iterations in which vertices moved.
    pub iterations: usize,
    pub converged: bool,
    /// Total energy before the first and after every iteration.
    pub energy_trace: Vec<f64>,
}

/// Flat view of all vertices: `offsets[s] + v` indexes vertex `v` of mesh `s`.
struct Layout {
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(meshes: &[SpringMesh]) -> Self {
        let mut offsets = Vec::with_capacity(meshes.len());
        let mut total = 0;
        for m in meshes {
            offsets.push(total);
            total += m.vertices.len();
        }
        Layout { offsets, total }
    }
}

impl SpringSystem {
    pub fn new(meshes: Vec<SpringMesh>) -> Self {
        SpringSystem { meshes, cross: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.cross {
            let ok = c.section < self.meshes.len()
                && c.target_section < self.meshes.len()
                && c.vertex < self.meshes[c.section].vertices.len()
                && c.triangle < self.meshes[c.target_section].triangles.len();
            if !ok {
                return Err(Error::param("cross_spring", "index out of range"));
            }
            if !(c.stiffness > 0.0) {
                return Err(Error::param("cross_stiffness", "must be > 0"));
            }
        }
        Ok(())
    }

    fn handle(&self, c: &CrossSpring, pos: &[Vec2], layout: &Layout) -> Vec2 {
        let t = self.meshes[c.target_section].triangles[c.triangle];
        let base = layout.offsets[c.target_section];
        pos[base + t[0]] * c.weights[0] + pos[base + t[1]] * c.weights[1] + pos[base + t[2]] * c.weights[2]
    }

    fn gather(&self, layout: &Layout) -> Vec<Vec2> {
        let mut pos = Vec::with_capacity(layout.total);
        for m in &self.meshes {
            pos.extend(m.vertices.iter().map(|v| v.current));
        }
        pos
    }

    fn scatter(&mut self, pos: &[Vec2], layout: &Layout) {
        for (s, m) in self.meshes.iter_mut().enumerate() {
            for (v, vert) in m.vertices.iter_mut().enumerate() {
                vert.current = pos[layout.offsets[s] + v];
            }
        }
    }

    fn energy_at(&self, pos: &[Vec2], layout: &Layout) -> f64 {
        let mut e = 0.0;
        for (s, m) in self.meshes.iter().enumerate() {
            let base = layout.offsets[s];
            for sp in &m.springs {
                e += sp.energy(pos[base + sp.a], pos[base + sp.b]);
            }
        }
        for c in &self.cross {
            let d = self.handle(c, pos, layout) - pos[layout.offsets[c.section] + c.vertex];
            e += 0.5 * c.stiffness * d.norm_sq();
        }
        e
    }

    fn forces_at(&self, pos: &[Vec2], layout: &Layout) -> Vec<Vec2> {
        let mut f = vec![Vec2::ZERO; pos.len()];
        for (s, m) in self.meshes.iter().enumerate() {
            let base = layout.offsets[s];
            for sp in &m.springs {
                let (a, b) = (base + sp.a, base + sp.b);
                let d = pos[b] - pos[a];
                let len = d.norm();
                if len == 0.0 {
                    continue;
                }
                let pull = d * (sp.stiffness * (len - sp.rest_length) / len);
                f[a] += pull;
                f[b] -= pull;
            }
        }
        for c in &self.cross {
            let src = layout.offsets[c.section] + c.vertex;
            let d = self.handle(c, pos, layout) - pos[src];
            let pull = d * c.stiffness;
            f[src] += pull;
            let t = self.meshes[c.target_section].triangles[c.triangle];
            let base = layout.offsets[c.target_section];
            for k in 0..3 {
                f[base + t[k]] -= pull * c.weights[k];
            }
        }
        f
    }

    pub fn energy(&self) -> f64 {
        let layout = Layout::new(&self.meshes);
        self.energy_at(&self.gather(&layout), &layout)
    }

    /// Net force on every vertex, per mesh.
    pub fn forces(&self) -> Vec<Vec<Vec2>> {
        let layout = Layout::new(&self.meshes);
        let f = self.forces_at(&self.gather(&layout), &layout);
        self.meshes
            .iter()
            .enumerate()
            .map(|(s, m)| f[layout.offsets[s]..layout.offsets[s] + m.vertices.len()].to_vec())
            .collect()
    }
}

const DIVERGENCE_RUN: usize = 10;

/// Overdamped explicit relaxation: every free vertex moves by
/// `step_size × net force`, all forces taken from the previous iterate.
///
/// Stops once the largest net force on a free vertex is below `converge_eps`
/// (a stretch in px at unit stiffness) or after `max_iters` moves. Stability of the step is not checked here; energy that
/// grows for ten consecutive iterations, or stops being finite, is reported
/// as divergence.
pub fn relax(system: &mut SpringSystem, params: &RegistrationParams) -> Result<Relaxation> {
    if !(params.step_size > 0.0) {
        return Err(Error::param("step_size", "must be > 0"));
    }
    if !(params.converge_eps > 0.0) {
        return Err(Error::param("converge_eps", "must be > 0"));
    }
    system.validate()?;
    let layout = Layout::new(&system.meshes);
    let fixed: Vec<bool> = system
        .meshes
        .iter()
        .flat_map(|m| m.vertices.iter().map(|v| v.fixed))
        .collect();
    let mut pos = system.gather(&layout);
    let mut energy = system.energy_at(&pos, &layout);
    let mut trace = vec![energy];
    let mut growing = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iters {
        let f = system.forces_at(&pos, &layout);
        let max_force = f
            .iter()
            .zip(&fixed)
            .filter(|(_, &fx)| !fx)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max);
        if max_force < params.converge_eps {
            converged = true;
            break;
        }
        for ((p, v), &fx) in pos.iter_mut().zip(&f).zip(&fixed) {
            if !fx {
                *p += *v * params.step_size;
            }
        }
        iterations += 1;
        let next = system.energy_at(&pos, &layout);
        trace.push(next);
        if !next.is_finite() {
            return Err(Error::Diverged { iteration: iterations, energy: next, step_size: params.step_size });
        }
        growing = if next > energy { growing + 1 } else { 0 };
        if growing >= DIVERGENCE_RUN {
            return Err(Error::Diverged { iteration: iterations, energy: next, step_size: params.step_size });
        }
        energy = next;
    }
    system.scatter(&pos, &layout);
    Ok(Relaxation { iterations, converged, energy_trace: trace })
}

/// Lower bound of the robust residual scale, px.
const ROBUST_SCALE_MIN: f64 = 1.0;

/// Moves every mesh rigidly (rotation about its rest centroid plus
/// translation) to fit the cross springs, with the meshes in `anchored` held
/// in place. Intra-mesh energy does not change under rigid motion, so only
/// the cross springs enter the fit.
///
/// The fit is iteratively reweighted Gauss-Newton on a Cauchy loss whose
/// scale follows the median residual, so a few grossly wrong matches do not
/// drag whole sections. Returns the spring energy before and after; the
/// motion is kept only when it lowers that energy.
pub fn rigid_prealign(system: &mut SpringSystem, anchored: &[usize]) -> Result<(f64, f64)> {
    system.validate()?;
    let n = system.meshes.len();
    let layout = Layout::new(&system.meshes);
    let start = system.gather(&layout);
    let before = system.energy_at(&start, &layout);
    let free: Vec<Option<usize>> = {
        let mut k = 0;
        (0..n)
            .map(|s| {
                let fixed_mesh = anchored.contains(&s) || system.meshes[s].vertices.iter().all(|v| v.fixed);
                if fixed_mesh || system.meshes[s].vertices.is_empty() {
                    None
                } else {
                    k += 1;
                    Some(k - 1)
                }
            })
            .collect()
    };
    let dof = 3 * free.iter().flatten().count();
    if dof == 0 || system.cross.is_empty() {
        return Ok((before, before));
    }
    let centroids: Vec<Vec2> = system
        .meshes
        .iter()
        .enumerate()
        .map(|(s, m)| {
            let span = &start[layout.offsets[s]..layout.offsets[s] + m.vertices.len()];
            span.iter().fold(Vec2::ZERO, |a, &p| a + p) / span.len().max(1) as f64
        })
        .collect();
    // params[k] = (theta, tx, ty) of the k-th free mesh
    let mut params = vec![0.0; dof];
    let apply = |params: &[f64]| -> Vec<Vec2> {
        let mut pos = start.clone();
        for (s, m) in system.meshes.iter().enumerate() {
            if let Some(k) = free[s] {
                let (sin, cos) = params[3 * k].sin_cos();
                let t = Vec2::new(params[3 * k + 1], params[3 * k + 2]);
                let c = centroids[s];
                for p in &mut pos[layout.offsets[s]..layout.offsets[s] + m.vertices.len()] {
                    let d = *p - c;
                    *p = c + Vec2::new(cos * d.x - sin * d.y, sin * d.x + cos * d.y) + t;
                }
            }
        }
        pos
    };

    let residuals = |pos: &[Vec2]| -> Vec<Vec2> {
        system
            .cross
            .iter()
            .map(|c| system.handle(c, pos, &layout) - pos[layout.offsets[c.section] + c.vertex])
            .collect()
    };
    // Cauchy loss: k·c²/2·ln(1 + |r|²/c²)
    let robust = |r: &[Vec2], scale: f64| -> f64 {
        system
            .cross
            .iter()
            .zip(r)
            .map(|(c, r)| 0.5 * c.stiffness * scale * scale * (1.0 + r.norm_sq() / (scale * scale)).ln())
            .sum()
    };
    for _ in 0..100 {
        let pos = apply(&params);
        let r = residuals(&pos);
        let mut mags: Vec<f64> = r.iter().map(|v| v.norm()).collect();
        mags.sort_by(|a, b| a.total_cmp(b));
        let scale = (3.0 * 1.4826 * mags[mags.len() / 2]).max(ROBUST_SCALE_MIN);
        let current = robust(&r, scale);
        let mut jtj = vec![0.0; dof * dof];
        let mut jtr = vec![0.0; dof];
        for (c, r) in system.cross.iter().zip(&r) {
            let src = layout.offsets[c.section] + c.vertex;
            let h = pos[src] + *r;
            let w = c.stiffness / (1.0 + r.norm_sq() / (scale * scale));
            // d r / d params: handle side +, source side −
            let mut cols: Vec<(usize, Vec2)> = Vec::with_capacity(6);
            if let Some(k) = free[c.target_section] {
                let d = h - (centroids[c.target_section] + Vec2::new(params[3 * k + 1], params[3 * k + 2]));
                cols.push((3 * k, Vec2::new(-d.y, d.x)));
                cols.push((3 * k + 1, Vec2::new(1.0, 0.0)));
                cols.push((3 * k + 2, Vec2::new(0.0, 1.0)));
            }
            if let Some(k) = free[c.section] {
                let d = pos[src] - (centroids[c.section] + Vec2::new(params[3 * k + 1], params[3 * k + 2]));
                cols.push((3 * k, Vec2::new(d.y, -d.x)));
                cols.push((3 * k + 1, Vec2::new(-1.0, 0.0)));
                cols.push((3 * k + 2, Vec2::new(0.0, -1.0)));
            }
            for &(i, gi) in &cols {
                jtr[i] += w * gi.dot(*r);
                for &(j, gj) in &cols {
                    jtj[i * dof + j] += w * gi.dot(gj);
                }
            }
        }
        let trace: f64 = (0..dof).map(|i| jtj[i * dof + i]).sum();
        let damping = 1e-9 * trace / dof as f64 + 1e-12;
        for i in 0..dof {
            jtj[i * dof + i] += damping;
        }
        let Some(delta) = cholesky_solve(&jtj, &jtr, dof) else {
            break;
        };
        let mut improved = false;
        let mut step = 1.0;
        for _ in 0..20 {
            let trial: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p - step * d).collect();
            let value = robust(&residuals(&apply(&trial)), scale);
            if value < current {
                improved = current - value > 1e-12 * current;
                params = trial;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let energy = system.energy_at(&apply(&params), &layout);
    if energy < before {
        let pos = apply(&params);
        system.scatter(&pos, &layout);
        Ok((before, energy))
    } else {
        Ok((before, before))
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, `n`×`n`).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::mesh::{build_triangular_mesh, MeshVertex, Spring};

    fn single_spring(stretch: f64) -> SpringMesh {
        SpringMesh {
            vertices: vec![
                MeshVertex { rest: Vec2::ZERO, current: Vec2::ZERO, fixed: true },
                MeshVertex {
                    rest: Vec2::new(10.0, 0.0),
                    current: Vec2::new(10.0 * stretch, 0.0),
                    fixed: false,
                },
            ],
            springs: vec![Spring { a: 0, b: 1, rest_length: 10.0, stiffness: 1.0 }],
            triangles: Vec::new(),
            pitch: 10.0,
        }
    }

    #[test]
    fn no_cross_springs_means_no_motion() {
        let mesh = build_triangular_mesh(200.0, 150.0, 50.0, 1.0).unwrap();
        let mut sys = SpringSystem::new(vec![mesh.clone(), mesh]);
        let r = relax(&mut sys, &RegistrationParams::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.energy_trace, vec![0.0]);
        assert!(r.converged);
    }

    #[test]
    fn stretched_spring_returns_to_rest() {
        let mut sys = SpringSystem::new(vec![single_spring(1.1)]);
        let e0 = sys.energy();
        let r = relax(&mut sys, &RegistrationParams::default()).unwrap();
        assert!(r.converged);
        let x = sys.meshes[0].vertices[1].current.x;
        assert!((x - 10.0).abs() < RegistrationParams::default().converge_eps, "x = {x}");
        assert!(sys.energy() < e0);
        assert_eq!(sys.meshes[0].vertices[0].current, Vec2::ZERO);
    }

    #[test]
    fn huge_step_diverges() {
        let mut sys = SpringSystem::new(vec![single_spring(1.1)]);
        let params = RegistrationParams { step_size: 10.0, ..RegistrationParams::default() };
        assert!(matches!(relax(&mut sys, &params), Err(Error::Diverged { .. })));
    }

    #[test]
    fn forces_are_negative_energy_gradient() {
        let mut a = build_triangular_mesh(100.0, 100.0, 40.0, 1.0).unwrap();
        let b = a.clone();
        for (i, v) in a.vertices.iter_mut().enumerate() {
            v.current += Vec2::new((i as f64 * 0.7).sin() * 3.0, (i as f64 * 1.3).cos() * 2.0);
        }
        let mut sys = SpringSystem::new(vec![a, b]);
        sys.cross.push(CrossSpring {
            section: 0,
            vertex: 4,
            target_section: 1,
            triangle: 2,
            weights: [0.2, 0.3, 0.5],
            stiffness: 0.7,
        });
        let f = sys.forces();
        let h = 1e-6;
        for s in 0..2 {
            for v in 0..sys.meshes[s].vertices.len() {
                for axis in 0..2 {
                    let mut plus = sys.clone();
                    let mut minus = sys.clone();
                    let dv = if axis == 0 { Vec2::new(h, 0.0) } else { Vec2::new(0.0, h) };
                    plus.meshes[s].vertices[v].current += dv;
                    minus.meshes[s].vertices[v].current -= dv;
                    let grad = (plus.energy() - minus.energy()) / (2.0 * h);
                    let fv = if axis == 0 { f[s][v].x } else { f[s][v].y };
                    assert!((fv + grad).abs() < 1e-5, "mesh {s} vertex {v}: {fv} vs {}", -grad);
                }
            }
        }
    }

    #[test]
    fn rigid_prealign_recovers_shift_and_rotation() {
        let a = build_triangular_mesh(300.0, 300.0, 50.0, 1.0).unwrap();
        let mut b = a.clone();
        let angle: f64 = 0.05;
        let (sin, cos) = angle.sin_cos();
        let c = Vec2::new(150.0, 150.0);
        let moved: Vec<Vec2> = b
            .vertices
            .iter()
            .map(|v| {
                let d = v.rest - c;
                c + Vec2::new(cos * d.x - sin * d.y, sin * d.x + cos * d.y) + Vec2::new(7.0, -4.0)
            })
            .collect();
        // springs from each vertex of b to where its counterpart sits on a
        let locator = a.rest_locator();
        let mut cross = Vec::new();
        for (v, p) in moved.iter().enumerate() {
            if let Some((tri, w)) = locator.locate(b.vertices[v].rest) {
                let _ = p;
                cross.push(CrossSpring { section: 1, vertex: v, target_section: 0, triangle: tri, weights: w, stiffness: 0.1 });
            }
        }
        for (v, p) in b.vertices.iter_mut().zip(&moved) {
            v.current = *p;
        }
        let mut a = a;
        a.fix_all();
        let mut sys = SpringSystem::new(vec![a, b]);
        sys.cross = cross;
        let (before, after) = rigid_prealign(&mut sys, &[0]).unwrap();
        assert!(before > 1.0);
        assert!(after < 1e-12 * before, "{before} -> {after}");
        for v in &sys.meshes[1].vertices {
            assert!((v.current - v.rest).norm() < 1e-6);
        }
    }

    #[test]
    fn cholesky_solves_small_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let x = cholesky_solve(&a, &[1.0, 2.0, 3.0], 3).unwrap();
        for i in 0..3 {
            let row: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((row - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        assert!(cholesky_solve(&[0.0], &[1.0], 1).is_none());
    }
}
