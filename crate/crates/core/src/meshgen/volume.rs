//! Scalar volumes built from stacks of binary slices.
//!
//! Each slice becomes a clamped signed distance field (negative inside,
//! zero on pixel edges). Intermediate layers between slices are linear
//! blends of their neighbours.

use crate::raster::Mask;

/// Distances beyond this many pixels are clamped. It bounds how far a
/// blended layer can drift from its neighbours near a surface.
pub(crate) const SDF_CLAMP: f32 = 16.0;

/// Background margin kept around the union bounding box of all slices.
const MARGIN: i64 = 2;

const FAR: f64 = 1e20;

pub(crate) struct Volume {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Coordinates of grid column 0 and row 0.
    pub origin: (f64, f64),
    pub z: Vec<f64>,
    /// `data[(k·ny + j)·nx + i]`
    pub data: Vec<f32>,
}

impl Volume {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.origin.0 + i as f64, self.origin.1 + j as f64, self.z[k]]
    }
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let meet = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Squared Euclidean distance from each pixel to the nearest pixel whose
/// flag is set. Rows of all-unset flags give huge values.
pub(crate) fn squared_distance(w: usize, h: usize, flags: &[bool]) -> Vec<f64> {
    let n = w.max(h);
    let (mut f, mut d) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut grid: Vec<f64> = flags.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        transform_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        transform_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

/// Clamped signed distance of a `w`×`h` slice given as foreground flags.
pub(crate) fn slice_sdf(w: usize, h: usize, inside: &[bool]) -> Vec<f32> {
    if !inside.iter().any(|&b| b) {
        return vec![SDF_CLAMP; w * h];
    }
    let outside: Vec<bool> = inside.iter().map(|&b| !b).collect();
    let to_fg = squared_distance(w, h, inside);
    let to_bg = squared_distance(w, h, &outside);
    inside
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let s = if b {
                -(to_bg[i].sqrt() - 0.5)
            } else {
                to_fg[i].sqrt() - 0.5
            };
            (s as f32).clamp(-SDF_CLAMP, SDF_CLAMP)
        })
        .collect()
}

/// Dilation with a 3×3 square structuring element.
pub fn dilate_square(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    Mask::from_fn(w, h, |x, y| {
        (-1i64..=1).any(|dy| (-1i64..=1).any(|dx| mask.get_signed(x as i64 + dx, y as i64 + dy)))
    })
}

/// Stacks equally sized slices at `z0, z0 + dz, …` with `layers - 1` blended
/// layers in every gap and one background layer beyond each end. The grid
/// is cropped to the union bounding box plus a background margin.
pub(crate) fn build_volume(slices: &[Mask], z0: f64, dz: f64, layers: usize) -> Option<Volume> {
    let layers = layers.max(1);
    let bbox = slices
        .iter()
        .filter_map(Mask::bbox)
        .reduce(|a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)))?;
    let x0 = bbox.0 as i64 - MARGIN;
    let y0 = bbox.1 as i64 - MARGIN;
    let nx = (bbox.2 as i64 + MARGIN - x0 + 1) as usize;
    let ny = (bbox.3 as i64 + MARGIN - y0 + 1) as usize;

    let sdfs: Vec<Vec<f32>> = crate::par::map(slices, |m| {
        let mut inside = Vec::with_capacity(nx * ny);
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                inside.push(m.get_signed(x0 + x, y0 + y));
            }
        }
        slice_sdf(nx, ny, &inside)
    });

    let step = dz / layers as f64;
    let n = slices.len();
    let nz = (n - 1) * layers + 3;
    let mut data = Vec::with_capacity(nx * ny * nz);
    let mut z = Vec::with_capacity(nz);
    z.push(z0 - step);
    data.extend(std::iter::repeat_n(SDF_CLAMP, nx * ny));
    for s in 0..n {
        let sub = if s + 1 < n { layers } else { 1 };
        for l in 0..sub {
            z.push(z0 + s as f64 * dz + l as f64 * step);
            if l == 0 {
                data.extend_from_slice(&sdfs[s]);
            } else {
                let t = l as f32 / layers as f32;
                data.extend(sdfs[s].iter().zip(&sdfs[s + 1]).map(|(&a, &b)| (1.0 - t) * a + t * b));
            }
        }
    }
    z.push(z0 + (n - 1) as f64 * dz + step);
    data.extend(std::iter::repeat_n(SDF_CLAMP, nx * ny));

    Some(Volume {
        nx,
        ny,
        nz,
        origin: (x0 as f64, y0 as f64),
        z,
        data,
    })
}
