//! Iso-surface extraction by marching tetrahedra.
//!
//! Every grid cell is split into six tetrahedra around its main diagonal.
//! Adjacent cells then agree on their shared face diagonals, so the output
//! has no cracks. Surface vertices are identified by the grid edge they
//! lie on, which welds them without any distance tolerance.

use std::collections::HashMap;

use super::volume::Volume;
use super::SurfaceMesh;
use crate::geom::Vec3;

/// Cell corners are numbered by bits: 1 = +x, 2 = +y, 4 = +z.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Extracts the surface `value = 0` with normals pointing toward positive values.
pub(crate) fn marching_tetrahedra(vol: &Volume) -> SurfaceMesh {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut ids: HashMap<(usize, usize), u32> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for k in 0..vol.nz - 1 {
        for j in 0..vol.ny - 1 {
            for i in 0..vol.nx - 1 {
                let mut corner = [0usize; 8];
                let mut inside = [false; 8];
                for (c, slot) in corner.iter_mut().enumerate() {
                    *slot = vol.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                    inside[c] = vol.data[*slot] < 0.0;
                }
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }
                // corner positions in doubled integer units for orientation tests
                let doubled = |c: usize| [2 * (c & 1) as i64, 2 * ((c >> 1) & 1) as i64, 2 * ((c >> 2) & 1) as i64];
                let mut vertex = |a: usize, b: usize| -> u32 {
                    let (ga, gb) = (corner[a], corner[b]);
                    let key = (ga.min(gb), ga.max(gb));
                    *ids.entry(key).or_insert_with(|| {
                        let (va, vb) = (vol.data[ga] as f64, vol.data[gb] as f64);
                        let t = va / (va - vb);
                        let pa = cell_position(vol, i, j, k, a);
                        let pb = cell_position(vol, i, j, k, b);
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    })
                };
                for tet in &TETS {
                    let ins: Vec<usize> = tet.iter().copied().filter(|&c| inside[c]).collect();
                    let outs: Vec<usize> = tet.iter().copied().filter(|&c| !inside[c]).collect();
                    let edges: Vec<[(usize, usize); 3]> = match (ins.len(), outs.len()) {
                        (1, 3) => vec![[(ins[0], outs[0]), (ins[0], outs[1]), (ins[0], outs[2])]],
                        (3, 1) => vec![[(ins[0], outs[0]), (ins[1], outs[0]), (ins[2], outs[0])]],
                        (2, 2) => {
                            let (a, b, c, d) = (ins[0], ins[1], outs[0], outs[1]);
                            vec![[(a, c), (a, d), (b, d)], [(a, c), (b, d), (b, c)]]
                        }
                        _ => continue,
                    };
                    // outward direction: from inside corners toward outside corners
                    let sum = |cs: &[usize], weight: i64| {
                        let mut s = [0i64; 3];
                        for &c in cs {
                            let p = doubled(c);
                            for a in 0..3 {
                                s[a] += p[a] * weight;
                            }
                        }
                        s
                    };
                    let (si, so) = (sum(&ins, outs.len() as i64), sum(&outs, ins.len() as i64));
                    let dir = [so[0] - si[0], so[1] - si[1], so[2] - si[2]];
                    for tri in edges {
                        let mid = tri.map(|(a, b)| {
                            let (pa, pb) = (doubled(a), doubled(b));
                            [pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]
                        });
                        let u = [mid[1][0] - mid[0][0], mid[1][1] - mid[0][1], mid[1][2] - mid[0][2]];
                        let v = [mid[2][0] - mid[0][0], mid[2][1] - mid[0][1], mid[2][2] - mid[0][2]];
                        let n = [
                            u[1] * v[2] - u[2] * v[1],
                            u[2] * v[0] - u[0] * v[2],
                            u[0] * v[1] - u[1] * v[0],
                        ];
                        let ids3 = tri.map(|(a, b)| vertex(a, b));
                        if n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2] > 0 {
                            triangles.push(ids3);
                        } else {
                            triangles.push([ids3[0], ids3[2], ids3[1]]);
                        }
                    }
                }
            }
        }
    }
    SurfaceMesh { vertices, triangles }
}

fn cell_position(vol: &Volume, i: usize, j: usize, k: usize, c: usize) -> Vec3 {
    let p = vol.position(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
    Vec3::from_array(p)
}
