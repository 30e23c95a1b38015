//! Inverse-mapped resampling through a piecewise-linear transform.

use image::{Rgb, RgbImage};

use super::mesh::barycentric;
use super::transform::PiecewiseLinearTransform;
use crate::geom::Vec2;
use crate::raster::{GrayImage, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

const EDGE_EPS: f64 = 1e-9;

/// For every output pixel, the rest-space point that maps onto it, found by
/// scanning deformed triangles in index order (lowest index wins).
pub fn inverse_map(t: &PiecewiseLinearTransform, width: u32, height: u32) -> Vec<Option<Vec2>> {
    let mut out: Vec<Option<Vec2>> = vec![None; width as usize * height as usize];
    let deformed = t.deformed();
    let rest = t.rest();
    for tri in t.triangles() {
        let (a, b, c) = (deformed[tri[0]], deformed[tri[1]], deformed[tri[2]]);
        let x0 = a.x.min(b.x).min(c.x).floor().max(0.0);
        let x1 = a.x.max(b.x).max(c.x).ceil().min(width as f64 - 1.0);
        let y0 = a.y.min(b.y).min(c.y).floor().max(0.0);
        let y1 = a.y.max(b.y).max(c.y).ceil().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as u32..=y1 as u32 {
            for x in x0 as u32..=x1 as u32 {
                let slot = &mut out[y as usize * width as usize + x as usize];
                if slot.is_some() {
                    continue;
                }
                let q = Vec2::new(x as f64, y as f64);
                let Some(w) = barycentric(q, a, b, c) else { continue };
                if w.iter().all(|&v| v >= -EDGE_EPS) {
                    *slot = Some(rest[tri[0]] * w[0] + rest[tri[1]] * w[1] + rest[tri[2]] * w[2]);
                }
            }
        }
    }
    out
}

/// Nearest-neighbour warp; pixels outside the deformed hull become background.
pub fn warp_mask(mask: &Mask, t: &PiecewiseLinearTransform) -> Mask {
    if t.is_identity() {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let map = inverse_map(t, w, h);
    Mask::from_fn(w, h, |x, y| match map[y as usize * w as usize + x as usize] {
        Some(p) => mask.get_signed(p.x.round() as i64, p.y.round() as i64),
        None => false,
    })
}

pub fn warp_gray(img: &GrayImage, t: &PiecewiseLinearTransform, interp: Interpolation) -> GrayImage {
    if t.is_identity() {
        return img.clone();
    }
    let (w, h) = img.dims();
    let map = inverse_map(t, w, h);
    GrayImage::from_fn(w, h, |x, y| match map[y as usize * w as usize + x as usize] {
        Some(p) => sample(p, w, h, interp, |sx, sy| [img.get(sx, sy) as f64])[0] as f32,
        None => 0.0,
    })
}

pub fn warp_rgb(img: &RgbImage, t: &PiecewiseLinearTransform, interp: Interpolation) -> RgbImage {
    if t.is_identity() {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let map = inverse_map(t, w, h);
    RgbImage::from_fn(w, h, |x, y| match map[y as usize * w as usize + x as usize] {
        Some(p) => {
            let v = sample(p, w, h, interp, |sx, sy| {
                let px = img.get_pixel(sx, sy).0;
                [px[0] as f64, px[1] as f64, px[2] as f64]
            });
            Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
        }
        None => Rgb([0, 0, 0]),
    })
}

/// Samples at `p`; taps outside the raster read as 0.
fn sample<const N: usize>(
    p: Vec2,
    w: u32,
    h: u32,
    interp: Interpolation,
    at: impl Fn(u32, u32) -> [f64; N],
) -> [f64; N] {
    let get = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            [0.0; N]
        } else {
            at(x as u32, y as u32)
        }
    };
    match interp {
        Interpolation::Nearest => get(p.x.round() as i64, p.y.round() as i64),
        Interpolation::Bilinear => {
            // snap near-integer coordinates so identity-like maps copy exactly
            let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            let (px, py) = (snap(p.x), snap(p.y));
            let (x0, y0) = (px.floor(), py.floor());
            let (fx, fy) = (px - x0, py - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let mut out = [0.0; N];
            for (dx, dy, wgt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                if wgt == 0.0 {
                    continue;
                }
                let v = get(x0 + dx, y0 + dy);
                for k in 0..N {
                    out[k] += wgt * v[k];
                }
            }
            out
        }
    }
}
