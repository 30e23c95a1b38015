//! Taubin λ/µ smoothing with uniform umbrella weights.

use super::SurfaceMesh;
use crate::geom::Vec3;

pub const TAUBIN_LAMBDA: f64 = 0.5;
pub const TAUBIN_MU: f64 = -0.53;

/// Runs `iterations` λ/µ pairs. Connectivity is untouched.
pub fn taubin_smooth(mesh: &mut SurfaceMesh, iterations: usize, lambda: f64, mu: f64) {
    if iterations == 0 || mesh.vertices.is_empty() {
        return;
    }
    let neighbors = mesh.vertex_neighbors();
    let mut next = mesh.vertices.clone();
    for _ in 0..iterations {
        for factor in [lambda, mu] {
            for (v, nb) in neighbors.iter().enumerate() {
                let p = mesh.vertices[v];
                if nb.is_empty() {
                    next[v] = p;
                    continue;
                }
                let mut avg = Vec3::ZERO;
                for &n in nb {
                    avg += mesh.vertices[n as usize];
                }
                avg = avg / nb.len() as f64;
                next[v] = p + (avg - p) * factor;
            }
            std::mem::swap(&mut mesh.vertices, &mut next);
        }
    }
}
