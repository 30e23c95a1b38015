//! Exhaustive NCC block matching between adjacent sections.
//!
//! For every lattice vertex inside the tissue mask a `(2r+1)²` template is
//! correlated against every offset within the search radius. The numerator
//! of the NCC for all offsets comes from one FFT cross-correlation per
//! vertex; window variances come from integral images.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::mesh::SpringMesh;
use super::ncc::{ncc_slices, FLAT_VARIANCE};
use super::RegistrationParams;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::par;
use crate::raster::{GrayImage, Mask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatch {
    pub vertex: usize,
    /// Vertex position on the source section.
    pub source_pos: Vec2,
    /// Best matching position on the target section.
    pub target_pos: Vec2,
    pub score: f64,
    /// The source template had no intensity variance.
    pub flat: bool,
    pub accepted: bool,
}

impl BlockMatch {
    pub fn offset(&self) -> Vec2 {
        self.target_pos - self.source_pos
    }
}

struct Integral {
    w: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Integral {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width as usize, img.height as usize);
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sum_sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let (mut row, mut row_sq) = (0.0, 0.0);
            for x in 0..w {
                let v = img.data[y * w + x] as f64;
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sum_sq[(y + 1) * stride + x + 1] = sum_sq[y * stride + x + 1] + row_sq;
            }
        }
        Integral { w, sum, sum_sq }
    }

    /// Sum and sum of squares over the `size`×`size` window at `(x0, y0)`.
    fn window(&self, x0: usize, y0: usize, size: usize) -> (f64, f64) {
        let s = self.w + 1;
        let (x1, y1) = (x0 + size, y0 + size);
        let f = |t: &[f64]| t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0];
        (f(&self.sum), f(&self.sum_sq))
    }
}

/// FFT size for a search region: the smallest 2^a·3^b·5^c at or above `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

struct Correlator {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Correlator {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Correlator {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transform(&self, fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>], tmp: &mut [Complex<f64>]) {
        let n = self.n;
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(buf, &mut scratch);
        transpose(buf, tmp, n);
        fft.process_with_scratch(tmp, &mut scratch);
        transpose(tmp, buf, n);
    }

    /// `out[dy·n + dx] = Σ template[k] · region[k + (dx, dy)]` for real inputs
    /// laid out on `n`×`n` grids. Both are packed into one complex transform.
    fn correlate(&self, template: &[f64], region: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = template
            .iter()
            .zip(region)
            .map(|(&t, &r)| Complex::new(t, r))
            .collect();
        let mut tmp = vec![Complex::new(0.0, 0.0); n * n];
        self.transform(&self.forward, &mut buf, &mut tmp);
        for ky in 0..n {
            for kx in 0..n {
                let z = buf[ky * n + kx];
                let zc = buf[((n - ky) % n) * n + (n - kx) % n].conj();
                let t = (z + zc) * 0.5;
                let r = (z - zc) * Complex::new(0.0, -0.5);
                tmp[ky * n + kx] = t.conj() * r;
            }
        }
        std::mem::swap(&mut buf, &mut tmp);
        self.transform(&self.inverse, &mut buf, &mut tmp);
        let norm = (n * n) as f64;
        buf.iter().map(|c| c.re / norm).collect()
    }
}

fn transpose(src: &[Complex<f64>], dst: &mut [Complex<f64>], n: usize) {
    const B: usize = 16;
    for by in (0..n).step_by(B) {
        for bx in (0..n).step_by(B) {
            for y in by..(by + B).min(n) {
                for x in bx..(bx + B).min(n) {
                    dst[x * n + y] = src[y * n + x];
                }
            }
        }
    }
}

struct Candidate {
    vertex: usize,
    cx: usize,
    cy: usize,
}

/// Matches every in-mask vertex of `mesh` (rest positions, source coordinates)
/// from `source` onto `target`.
///
/// A match is accepted when its NCC reaches `min_ncc`, the source template is
/// not flat, and its displacement lies within `2 · mesh_pitch` of the
/// component-wise median displacement of its lattice neighbours' passing
/// matches.
pub fn block_match(
    source: &GrayImage,
    source_mask: Option<&Mask>,
    target: &GrayImage,
    mesh: &SpringMesh,
    params: &RegistrationParams,
) -> Result<Vec<BlockMatch>> {
    block_match_guided(source, source_mask, target, mesh, params, None)
}

/// Rigid motion `p ↦ R(angle)·(p − center) + center + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidGuide {
    pub angle: f64,
    pub center: Vec2,
    pub shift: Vec2,
}

impl RigidGuide {
    pub fn apply(&self, p: Vec2) -> Vec2 {
        rotate(p - self.center, self.angle) + self.center + self.shift
    }

    /// Least-squares rigid fit to the accepted matches with iterative
    /// trimming of large residuals. Needs at least three matches.
    pub fn fit(matches: &[BlockMatch]) -> Option<RigidGuide> {
        let mut pts: Vec<(Vec2, Vec2)> = matches
            .iter()
            .filter(|m| m.accepted)
            .map(|m| (m.source_pos, m.target_pos))
            .collect();
        let mut guide = None;
        for _ in 0..5 {
            if pts.len() < 3 {
                break;
            }
            let g = fit_rigid(&pts);
            let mut res: Vec<f64> = pts.iter().map(|&(p, q)| (g.apply(p) - q).norm()).collect();
            let cut = (3.0 * 1.4826 * median(&mut res.clone())).max(2.0);
            res.clear();
            let before = pts.len();
            pts.retain(|&(p, q)| (g.apply(p) - q).norm() <= cut);
            guide = Some(g);
            if pts.len() == before {
                break;
            }
        }
        guide
    }
}

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn fit_rigid(pts: &[(Vec2, Vec2)]) -> RigidGuide {
    let n = pts.len() as f64;
    let cp = pts.iter().fold(Vec2::ZERO, |a, &(p, _)| a + p) / n;
    let cq = pts.iter().fold(Vec2::ZERO, |a, &(_, q)| a + q) / n;
    let (mut sc, mut sd) = (0.0, 0.0);
    for &(p, q) in pts {
        let (a, b) = (p - cp, q - cq);
        sc += a.cross(b);
        sd += a.dot(b);
    }
    RigidGuide {
        angle: sc.atan2(sd),
        center: cp,
        shift: cq - cp,
    }
}

/// Like [`block_match`], but each search window is centred on the guide's
/// prediction and the template is rotated by the guide's angle.
pub fn block_match_guided(
    source: &GrayImage,
    source_mask: Option<&Mask>,
    target: &GrayImage,
    mesh: &SpringMesh,
    params: &RegistrationParams,
    guide: Option<&RigidGuide>,
) -> Result<Vec<BlockMatch>> {
    if source.dims() != target.dims() {
        return Err(Error::param(
            "section",
            format!("block matching needs equal dims, got {:?} and {:?}", source.dims(), target.dims()),
        ));
    }
    if let Some(m) = source_mask {
        if m.dims() != source.dims() {
            return Err(Error::param("mask", "mask and image dims differ"));
        }
    }
    let r = params.block_radius;
    let s = params.search_radius;
    let size = 2 * r + 1;
    let (w, h) = (source.width as usize, source.height as usize);
    if w < size || h < size {
        return Ok(Vec::new());
    }

    let candidates: Vec<Candidate> = mesh
        .vertices
        .iter()
        .enumerate()
        .filter_map(|(vertex, v)| {
            let (fx, fy) = (v.rest.x.round(), v.rest.y.round());
            if fx < r as f64 || fy < r as f64 || fx + r as f64 >= w as f64 || fy + r as f64 >= h as f64 {
                return None;
            }
            let (cx, cy) = (fx as usize, fy as usize);
            if let Some(m) = source_mask {
                if !m.get(cx as u32, cy as u32) {
                    return None;
                }
            }
            Some(Candidate { vertex, cx, cy })
        })
        .collect();

    let integral = Integral::new(target);
    let correlator = Correlator::new(smooth_size(2 * s + size));
    let raw = par::map(&candidates, |c| match_vertex(source, target, &integral, &correlator, c, r, s, guide));

    let min_ncc = params.min_ncc;
    let mut matches: Vec<BlockMatch> = candidates
        .iter()
        .zip(raw)
        .map(|(c, (target_pos, score, flat))| {
            let source_pos = Vec2::new(c.cx as f64, c.cy as f64);
            BlockMatch {
                vertex: c.vertex,
                source_pos,
                target_pos,
                score,
                flat,
                accepted: !flat && score >= min_ncc,
            }
        })
        .collect();

    // local consensus against neighbouring passing matches
    let neighbors = mesh.neighbors();
    let mut passing: Vec<Option<Vec2>> = vec![None; mesh.vertices.len()];
    for m in &matches {
        if m.accepted {
            passing[m.vertex] = Some(m.offset());
        }
    }
    let limit = 2.0 * params.mesh_pitch;
    for m in &mut matches {
        if !m.accepted {
            continue;
        }
        let (mut xs, mut ys): (Vec<f64>, Vec<f64>) = neighbors[m.vertex]
            .iter()
            .filter_map(|&n| passing[n])
            .map(|d| (d.x, d.y))
            .unzip();
        if xs.is_empty() {
            continue;
        }
        let median = Vec2::new(median(&mut xs), median(&mut ys));
        if (m.offset() - median).norm() >= limit {
            m.accepted = false;
        }
    }
    Ok(matches)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Returns `(target_pos, score, flat)`; the score is recomputed directly at the winner.
#[allow(clippy::too_many_arguments)]
fn match_vertex(
    source: &GrayImage,
    target: &GrayImage,
    integral: &Integral,
    correlator: &Correlator,
    c: &Candidate,
    r: usize,
    s: usize,
    guide: Option<&RigidGuide>,
) -> (Vec2, f64, bool) {
    let size = 2 * r + 1;
    let n = correlator.n;
    let (w, h) = (source.width as usize, source.height as usize);
    let here = Vec2::new(c.cx as f64, c.cy as f64);
    let template = match guide {
        Some(g) if g.angle != 0.0 => GrayImage::from_fn(size as u32, size as u32, |x, y| {
            let u = Vec2::new(x as f64 - r as f64, y as f64 - r as f64);
            bilinear_clamped(source, here + rotate(u, -g.angle))
        }),
        _ => source.crop((c.cx - r) as u32, (c.cy - r) as u32, size as u32, size as u32),
    };
    let (px, py) = match guide {
        Some(g) => {
            let p = g.apply(here);
            (p.x.round() as i64, p.y.round() as i64)
        }
        None => (c.cx as i64, c.cy as i64),
    };
    let count = (size * size) as f64;
    let mean = template.data.iter().map(|&v| v as f64).sum::<f64>() / count;
    let tvar: f64 = template.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    if tvar / count <= FLAT_VARIANCE {
        return (here, 0.0, true);
    }

    let mut tbuf = vec![0.0; n * n];
    for y in 0..size {
        for x in 0..size {
            tbuf[y * n + x] = template.data[y * size + x] as f64 - mean;
        }
    }
    // region top-left in target coordinates; may start outside the raster
    let ox = px - (r + s) as i64;
    let oy = py - (r + s) as i64;
    let span = 2 * s + size;
    let mut rbuf = vec![0.0; n * n];
    for y in 0..span {
        let ty = oy + y as i64;
        if ty < 0 || ty >= h as i64 {
            continue;
        }
        for x in 0..span {
            let tx = ox + x as i64;
            if tx < 0 || tx >= w as i64 {
                continue;
            }
            rbuf[y * n + x] = target.get(tx as u32, ty as u32) as f64 - 128.0;
        }
    }
    let corr = correlator.correlate(&tbuf, &rbuf);

    let mut best: Option<(f64, i64, i64)> = None;
    for dy in 0..=2 * s {
        let wy = oy + dy as i64;
        if wy < 0 || wy as usize + size > h {
            continue;
        }
        for dx in 0..=2 * s {
            let wx = ox + dx as i64;
            if wx < 0 || wx as usize + size > w {
                continue;
            }
            let (sum, sum_sq) = integral.window(wx as usize, wy as usize, size);
            let wvar = sum_sq - sum * sum / count;
            if wvar / count <= FLAT_VARIANCE {
                continue;
            }
            let score = corr[dy * n + dx] / (tvar * wvar).sqrt();
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, wx, wy));
            }
        }
    }
    match best {
        None => (here, 0.0, false),
        Some((_, wx, wy)) => {
            let window = target.crop(wx as u32, wy as u32, size as u32, size as u32);
            let score = ncc_slices(&template.data, &window.data).unwrap_or(0.0);
            let pos = Vec2::new((wx + r as i64) as f64, (wy + r as i64) as f64);
            (pos, score, false)
        }
    }
}

fn bilinear_clamped(img: &GrayImage, p: Vec2) -> f32 {
    let (w, h) = (img.width as f64 - 1.0, img.height as f64 - 1.0);
    let (x, y) = (p.x.clamp(0.0, w), p.y.clamp(0.0, h));
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}
