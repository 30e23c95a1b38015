//! Gradient, pattern, co-occurrence and intensity descriptors of 8-bit
//! grayscale patches.

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Gray8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("patch", "patch dims must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::param("patch", "data length does not match dims"));
        }
        Ok(Gray8 { width, height, data })
    }

    pub fn from_rgb(img: &image::RgbImage) -> Result<Self> {
        let data = img.pixels().map(|p| luma8(p[0], p[1], p[2])).collect();
        Gray8::new(img.width() as usize, img.height() as usize, data)
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn clamped(&self, x: isize, y: isize) -> i32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y) as i32
    }
}

/// Rounded 0.299 / 0.587 / 0.114 luma. The weights sum to 1, so equal
/// shifts of all three channels shift the result by the same amount.
#[inline]
pub fn luma8(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub const HOG_BINS: usize = 9;
pub const HOG_CELL: usize = 9;

/// Per-bin mean of block-normalized cell histograms (2×2 cells per block,
/// one-cell stride, L2 normalization). Unsigned orientations, bins centred
/// on multiples of 20°, magnitude split linearly between neighbouring bins.
pub fn hog(patch: &Gray8) -> [f64; HOG_BINS] {
    let (cw, ch) = (patch.width / HOG_CELL, patch.height / HOG_CELL);
    let mut cells = vec![[0.0f64; HOG_BINS]; cw * ch];
    for y in 0..ch * HOG_CELL {
        for x in 0..cw * HOG_CELL {
            let (xi, yi) = (x as isize, y as isize);
            let gx = (patch.clamped(xi + 1, yi) - patch.clamped(xi - 1, yi)) as f64;
            let gy = (patch.clamped(xi, yi + 1) - patch.clamped(xi, yi - 1)) as f64;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let pos = (angle / 20.0) % HOG_BINS as f64;
            let lo = pos.floor() as usize % HOG_BINS;
            let hi = (lo + 1) % HOG_BINS;
            let frac = pos - pos.floor();
            let cell = &mut cells[(y / HOG_CELL) * cw + x / HOG_CELL];
            cell[lo] += mag * (1.0 - frac);
            cell[hi] += mag * frac;
        }
    }
    let mut out = [0.0; HOG_BINS];
    if cw < 2 || ch < 2 {
        return out;
    }
    let blocks = (cw - 1) * (ch - 1);
    for by in 0..ch - 1 {
        for bx in 0..cw - 1 {
            let members = [(bx, by), (bx + 1, by), (bx, by + 1), (bx + 1, by + 1)].map(|(x, y)| &cells[y * cw + x]);
            let norm = members.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for c in members {
                for b in 0..HOG_BINS {
                    out[b] += c[b] / norm;
                }
            }
        }
    }
    for v in &mut out {
        *v /= blocks as f64;
    }
    out
}

pub const LBP_BINS: usize = 59;

/// Label of every 8-bit code: uniform patterns (≤ 2 circular bit changes)
/// get labels 0..58 in code order, all others share the last bin.
fn lbp_labels() -> [u8; 256] {
    let mut labels = [0u8; 256];
    let mut next = 0u8;
    for (code, label) in labels.iter_mut().enumerate() {
        let c = code as u8;
        if (c ^ c.rotate_left(1)).count_ones() <= 2 {
            *label = next;
            next += 1;
        } else {
            *label = (LBP_BINS - 1) as u8;
        }
    }
    labels
}

/// Label of the code produced by a flat neighbourhood.
pub fn lbp_flat_bin() -> usize {
    lbp_labels()[255] as usize
}

/// Normalized histogram of uniform 8-neighbour, radius-1 patterns over
/// interior pixels. A neighbour sets its bit when it is ≥ the centre.
pub fn lbp(patch: &Gray8) -> Result<[f64; LBP_BINS]> {
    if patch.width < 3 || patch.height < 3 {
        return Err(Error::param("patch", "lbp needs at least 3×3 pixels"));
    }
    const RING: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];
    let labels = lbp_labels();
    let mut hist = [0.0; LBP_BINS];
    for y in 1..patch.height - 1 {
        for x in 1..patch.width - 1 {
            let c = patch.at(x, y);
            let mut code = 0u8;
            for (bit, (dx, dy)) in RING.iter().enumerate() {
                let n = patch.at((x as isize + dx) as usize, (y as isize + dy) as usize);
                if n >= c {
                    code |= 1 << bit;
                }
            }
            hist[labels[code as usize] as usize] += 1.0;
        }
    }
    let total = ((patch.width - 2) * (patch.height - 2)) as f64;
    for h in &mut hist {
        *h /= total;
    }
    Ok(hist)
}

pub const GLCM_LEVELS: usize = 32;

/// Energy `Σ p²` of the symmetric, normalized co-occurrence matrix at
/// offset (1, 0) with 32 gray levels. A one-pixel-wide patch has no pairs
/// and counts as uniform.
pub fn glcm_energy(patch: &Gray8) -> f64 {
    let mut m = vec![0u64; GLCM_LEVELS * GLCM_LEVELS];
    let q = |v: u8| (v >> 3) as usize;
    for y in 0..patch.height {
        for x in 0..patch.width.saturating_sub(1) {
            let (a, b) = (q(patch.at(x, y)), q(patch.at(x + 1, y)));
            m[a * GLCM_LEVELS + b] += 1;
            m[b * GLCM_LEVELS + a] += 1;
        }
    }
    let total: u64 = m.iter().sum();
    if total == 0 {
        return 1.0;
    }
    let t = total as f64;
    m.iter().map(|&c| (c as f64 / t).powi(2)).sum()
}

/// Mean and population standard deviation of the luma values.
pub fn intensity(patch: &Gray8) -> (f64, f64) {
    let n = patch.data.len() as f64;
    let mean = patch.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = patch.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> u8) -> Gray8 {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        Gray8::new(w, h, data).unwrap()
    }

    fn noise(w: usize, h: usize, seed: u64) -> Gray8 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        patch(w, h, |_, _| rng.random_range(40..200))
    }

    #[test]
    fn uniform_pattern_count() {
        let labels = lbp_labels();
        let uniform = labels.iter().filter(|&&l| (l as usize) < LBP_BINS - 1).count();
        assert_eq!(uniform, 58);
        assert_eq!(labels[0], 0);
    }

    #[test]
    fn constant_patch_degenerates() {
        let p = patch(40, 40, |_, _| 117);
        assert_eq!(glcm_energy(&p), 1.0);
        assert_eq!(intensity(&p), (117.0, 0.0));
        let h = lbp(&p).unwrap();
        assert_eq!(h[lbp_flat_bin()], 1.0);
        assert_eq!(hog(&p), [0.0; HOG_BINS]);
    }

    #[test]
    fn vertical_edge_fills_the_horizontal_gradient_bin() {
        let p = patch(36, 36, |x, _| if x < 17 { 30 } else { 220 });
        let h = hog(&p);
        let total: f64 = h.iter().sum();
        assert!(total > 0.0);
        assert_eq!(h[0], total);
    }

    #[test]
    fn lbp_sums_to_one() {
        for seed in 0..5 {
            let h = lbp(&noise(33, 21, seed)).unwrap();
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(lbp(&patch(2, 5, |_, _| 0)).is_err());
    }

    #[test]
    fn shift_leaves_gradients_and_patterns_alone() {
        let p = noise(45, 45, 9);
        let shifted = Gray8::new(45, 45, p.data.iter().map(|&v| v + 37).collect()).unwrap();
        assert_eq!(hog(&p), hog(&shifted));
        assert_eq!(lbp(&p).unwrap(), lbp(&shifted).unwrap());
        let aligned = Gray8::new(45, 45, p.data.iter().map(|&v| v + 32).collect()).unwrap();
        assert_eq!(glcm_energy(&p), glcm_energy(&aligned));
    }

    #[test]
    fn glcm_energy_of_two_level_stripes() {
        // columns alternate between two quantization levels: only the
        // off-diagonal pair occurs, split evenly by symmetry
        let p = patch(10, 4, |x, _| if x % 2 == 0 { 0 } else { 255 });
        assert!((glcm_energy(&p) - 0.5).abs() < 1e-12);
        let e = glcm_energy(&noise(30, 30, 2));
        assert!(e > 0.0 && e < 1.0);
    }

    #[test]
    fn luma_weights_are_exact_on_gray() {
        for v in [0u8, 13, 128, 255] {
            assert_eq!(luma8(v, v, v), v);
        }
    }
}
