//! Nucleus detection on H&E patches: hematoxylin channel by color
//! deconvolution, Otsu threshold, connected components with an area filter.

use image::RgbImage;

/// Ruifrok–Johnston optical density vectors (rows: hematoxylin, eosin, DAB).
const STAINS: [[f64; 3]; 3] = [
    [0.650, 0.704, 0.286],
    [0.072, 0.990, 0.105],
    [0.268, 0.570, 0.776],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NucleiStats {
    pub count: usize,
    /// Mean distance from each nucleus centroid to its nearest neighbour;
    /// zero with fewer than two nuclei.
    pub nn_mean: f64,
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
        [c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
    ]
}

/// Hematoxylin concentration per pixel.
pub fn hematoxylin(patch: &RgbImage) -> Vec<f64> {
    let mut stains = STAINS;
    for row in &mut stains {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    // od = Σ_s conc_s · stain_s, i.e. od = Sᵀ·conc
    let st = [
        [stains[0][0], stains[1][0], stains[2][0]],
        [stains[0][1], stains[1][1], stains[2][1]],
        [stains[0][2], stains[1][2], stains[2][2]],
    ];
    let inv = invert3(st);
    patch
        .pixels()
        .map(|p| {
            let od = [0, 1, 2].map(|c| -((p[c] as f64 + 1.0) / 256.0).log10());
            inv[0][0] * od[0] + inv[0][1] * od[1] + inv[0][2] * od[2]
        })
        .collect()
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]`. Values
/// strictly above the returned level are foreground. `None` for constant input.
pub fn otsu(values: &[f64]) -> Option<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / 256.0;
    let mut hist = [0u64; 256];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(255)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0);
    for (t, &h) in hist.iter().enumerate() {
        w0 += h as f64;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    Some(lo + (best_t + 1) as f64 * width)
}

/// Centroids of 8-connected foreground components whose pixel area lies
/// in `[min_area, max_area]`.
pub fn components(mask: &[bool], w: usize, h: usize, min_area: usize, max_area: usize) -> Vec<(f64, f64)> {
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0.0, 0.0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            sx += x as f64;
            sy += y as f64;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if (min_area..=max_area).contains(&area) {
            out.push((sx / area as f64, sy / area as f64));
        }
    }
    out
}

pub fn nuclei(patch: &RgbImage, min_area: usize, max_area: usize) -> NucleiStats {
    let (w, h) = (patch.width() as usize, patch.height() as usize);
    let hema = hematoxylin(patch);
    let Some(level) = otsu(&hema) else {
        return NucleiStats { count: 0, nn_mean: 0.0 };
    };
    let mask: Vec<bool> = hema.iter().map(|&v| v > level).collect();
    let centroids = components(&mask, w, h, min_area, max_area);
    let nn_mean = if centroids.len() < 2 {
        0.0
    } else {
        let total: f64 = centroids
            .iter()
            .enumerate()
            .map(|(i, a)| {
                centroids
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, b)| (a.0 - b.0).hypot(a.1 - b.1))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / centroids.len() as f64
    };
    NucleiStats {
        count: centroids.len(),
        nn_mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    const STROMA: Rgb<u8> = Rgb([236, 170, 205]);
    const NUCLEUS: Rgb<u8> = Rgb([72, 48, 140]);

    #[test]
    fn hematoxylin_is_higher_in_nuclei() {
        let img = RgbImage::from_fn(2, 1, |x, _| if x == 0 { STROMA } else { NUCLEUS });
        let h = hematoxylin(&img);
        assert!(h[1] > h[0] + 0.2);
    }

    #[test]
    fn otsu_splits_two_modes() {
        let v: Vec<f64> = (0..100).map(|i| if i < 60 { 1.0 + i as f64 * 1e-3 } else { 5.0 }).collect();
        let t = otsu(&v).unwrap();
        assert!(t > 1.059 && t < 5.0);
        assert_eq!(v.iter().filter(|&&x| x > t).count(), 40);
        assert_eq!(otsu(&[2.0; 10]), None);
    }

    #[test]
    fn area_filter_drops_specks() {
        let (w, h) = (10, 10);
        let mask: Vec<bool> = (0..w * h).map(|i| i == 0 || (i % w >= 5 && i / w >= 5)).collect();
        let c = components(&mask, w, h, 2, 100);
        assert_eq!(c, vec![(7.0, 7.0)]);
    }

    #[test]
    fn nn_mean_of_a_row_of_disks() {
        // three disks 30 px apart in a row: nearest neighbour is 30 for all
        let img = RgbImage::from_fn(120, 40, |x, y| {
            let near = [20.0, 50.0, 80.0].iter().any(|&cx| (x as f64 - cx).hypot(y as f64 - 20.0) <= 6.0);
            if near {
                NUCLEUS
            } else {
                STROMA
            }
        });
        let s = nuclei(&img, 50, 5000);
        assert_eq!(s.count, 3);
        assert!((s.nn_mean - 30.0).abs() < 1e-9);
    }
}
