use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// Per-pixel variance below which a patch counts as flat.
pub(crate) const FLAT_VARIANCE: f64 = 1e-8;

/// Zero-mean normalized cross-correlation of two equally sized patches,
/// clamped to `[-1, 1]`. `Ok(None)` signals a flat patch on either side.
pub fn ncc(a: &GrayImage, b: &GrayImage) -> Result<Option<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::param(
            "patch",
            format!("ncc needs equal dims, got {:?} and {:?}", a.dims(), b.dims()),
        ));
    }
    Ok(ncc_slices(&a.data, &b.data))
}

pub(crate) fn ncc_slices(a: &[f32], b: &[f32]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let mean_a = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mean_b = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let da = x as f64 - mean_a;
        let db = y as f64 - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa / n <= FLAT_VARIANCE || sbb / n <= FLAT_VARIANCE {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(rng: &mut ChaCha8Rng, w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| rng.random_range(0..=255) as f32)
    }

    #[test]
    fn self_correlation_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_patch(&mut rng, 33, 21);
        assert!((ncc(&p, &p).unwrap().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negation_anticorrelates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_patch(&mut rng, 16, 16);
        let n = GrayImage::from_fn(16, 16, |x, y| 255.0 - p.get(x, y));
        assert!((ncc(&p, &n).unwrap().unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_random_patches_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = random_patch(&mut rng, 64, 64);
            let b = random_patch(&mut rng, 64, 64);
            let s = ncc(&a, &b).unwrap().unwrap();
            assert!(s.abs() < 0.2, "score {s}");
        }
    }

    #[test]
    fn flat_patch_is_signalled() {
        let flat = GrayImage::from_fn(8, 8, |_, _| 255.0);
        let tex = GrayImage::from_fn(8, 8, |x, y| (x * y) as f32);
        assert_eq!(ncc(&flat, &tex).unwrap(), None);
        assert_eq!(ncc(&tex, &flat).unwrap(), None);
        assert!(ncc(&tex, &GrayImage::new(4, 4)).is_err());
    }

    #[test]
    fn affine_intensity_change_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_patch(&mut rng, 20, 20);
        let q = GrayImage::from_fn(20, 20, |x, y| 0.5 * p.get(x, y) + 30.0);
        assert!((ncc(&p, &q).unwrap().unwrap() - 1.0).abs() < 1e-9);
    }
}
