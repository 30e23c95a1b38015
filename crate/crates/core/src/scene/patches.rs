//! Image crops written next to the feature tables: RGBA tumor sections and
//! per-index feature patches.

use std::path::Path;

use image::{RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Patch, PatchGrid};
use crate::par;
use crate::raster::{save_rgb, save_rgba};
use crate::stack_io::{SectionStack, TumorId};

pub const TUMOR_CROP_MARGIN: u32 = 16;

/// Pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropRect {
    pub fn contains_box(&self, (x0, y0, x1, y1): (u32, u32, u32, u32)) -> bool {
        x0 >= self.x && y0 >= self.y && x1 < self.x + self.width && y1 < self.y + self.height
    }
}

#[derive(Debug, Clone)]
pub struct TumorPatches {
    pub tumor: TumorId,
    pub crop: CropRect,
    /// `(section index, patch)` for every section from the first to the last
    /// holding the tumor.
    pub sections: Vec<(usize, RgbaImage)>,
}

/// Crops every section of the tumor's z-range to the union bbox of its
/// masks plus a margin, with the mask as alpha.
pub fn crop_tumor_patches(stack: &SectionStack, tumor: TumorId) -> Result<TumorPatches> {
    let boxes: Vec<(usize, (u32, u32, u32, u32))> = stack
        .sections
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.tumor_mask(tumor).and_then(|m| m.bbox()).map(|b| (i, b)))
        .collect();
    let (Some(&(first, _)), Some(&(last, _))) = (boxes.first(), boxes.last()) else {
        return Err(Error::TumorAbsent(tumor));
    };
    let (w, h) = stack.dims().expect("sections present");
    let union = boxes.iter().fold((u32::MAX, u32::MAX, 0, 0), |(a, b, c, d), &(_, (x0, y0, x1, y1))| {
        (a.min(x0), b.min(y0), c.max(x1), d.max(y1))
    });
    let x = union.0.saturating_sub(TUMOR_CROP_MARGIN);
    let y = union.1.saturating_sub(TUMOR_CROP_MARGIN);
    let x1 = (union.2 + TUMOR_CROP_MARGIN).min(w - 1);
    let y1 = (union.3 + TUMOR_CROP_MARGIN).min(h - 1);
    let crop = CropRect {
        x,
        y,
        width: x1 - x + 1,
        height: y1 - y + 1,
    };
    let indices: Vec<usize> = (first..=last).collect();
    let sections = par::map(&indices, |&i| -> Result<(usize, RgbaImage)> {
        let s = &stack.sections[i];
        let img = s
            .image
            .as_ref()
            .ok_or_else(|| Error::Stage(format!("section {} has no image to crop tumor {tumor} from", s.index)))?;
        let mask = s.tumor_mask(tumor);
        let patch = RgbaImage::from_fn(crop.width, crop.height, |px, py| {
            let (gx, gy) = (crop.x + px, crop.y + py);
            let [r, g, b] = img.get_pixel(gx, gy).0;
            let a = if mask.is_some_and(|m| m.get(gx, gy)) { 255 } else { 0 };
            image::Rgba([r, g, b, a])
        });
        Ok((i, patch))
    });
    Ok(TumorPatches {
        tumor,
        crop,
        sections: sections.into_iter().collect::<Result<_>>()?,
    })
}

pub fn patch_image_name(index: u64) -> String {
    format!("{index}.png")
}

/// Writes the RGB crop of every listed patch index as `<dir>/<index>.png`.
/// Indices are interpreted on a grid of `patch_size` tiles over the stack.
pub fn export_feature_patch_images(stack: &SectionStack, patch_size: u32, indices: &[u64], dir: &Path) -> Result<()> {
    let dims = stack.dims().ok_or_else(|| Error::Empty("stack has no sections".into()))?;
    let grid = PatchGrid::new(dims, patch_size, 0)?;
    let results = par::map(indices, |&index| -> Result<()> {
        let (si, row, col) = grid.locate(index);
        let section = stack
            .sections
            .get(si)
            .ok_or_else(|| Error::Stage(format!("patch {index} points past the last section")))?;
        let img: &RgbImage = section
            .image
            .as_ref()
            .ok_or_else(|| Error::Stage(format!("section {} has no image for patch {index}", section.index)))?;
        let patch = Patch {
            index,
            section: si,
            row,
            col,
            x0: col * patch_size,
            y0: row * patch_size,
            size: patch_size,
        };
        save_rgb(&dir.join(patch_image_name(index)), &patch.crop(img))
    });
    results.into_iter().collect()
}

pub fn save_tumor_patches(dir: &Path, patches: &TumorPatches) -> Result<Vec<String>> {
    let names: Vec<String> = (0..patches.sections.len()).map(|k| format!("{k}.png")).collect();
    let results = par::map_range(names.len(), |k| save_rgba(&dir.join(&names[k]), &patches.sections[k].1));
    results.into_iter().collect::<Result<()>>()?;
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;
    use crate::stack_io::{Section, StackMetadata};

    fn stack(masks: Vec<Option<Mask>>, w: u32, h: u32) -> SectionStack {
        let sections = masks
            .into_iter()
            .enumerate()
            .map(|(i, m)| Section {
                index: i,
                image: Some(RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, i as u8]))),
                tissue_mask: Mask::filled(w, h),
                tumor_masks: m.map(|m| vec![(3, m)]).unwrap_or_default(),
            })
            .collect::<Vec<_>>();
        SectionStack {
            metadata: StackMetadata {
                pixel_size_um: 1.0,
                section_spacing_um: 10.0,
                section_thickness_um: 4.0,
                n_sections: sections.len(),
                downscale_fraction: 0.5,
            },
            sections,
            registered: true,
        }
    }

    fn disk(w: u32, h: u32, cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r)
    }

    #[test]
    fn single_section_alpha_is_the_mask() {
        let m = disk(120, 100, 60.0, 50.0, 10.0);
        let s = stack(vec![None, Some(m.clone()), None], 120, 100);
        let p = crop_tumor_patches(&s, 3).unwrap();
        assert_eq!(p.sections.len(), 1);
        assert_eq!(p.sections[0].0, 1);
        let img = &p.sections[0].1;
        for (px, py, v) in img.enumerate_pixels() {
            assert_eq!(v[3] == 255, m.get(px + p.crop.x, py + p.crop.y));
            assert!(v[3] == 0 || v[3] == 255);
        }
        assert_eq!(p.crop.width, 21 + 32);
    }

    #[test]
    fn growing_tumor_shares_one_rectangle() {
        let masks: Vec<Option<Mask>> = (0..5)
            .map(|i| Some(disk(200, 200, 80.0 + 5.0 * i as f64, 100.0, 4.0 + 4.0 * i as f64)))
            .collect();
        let s = stack(masks.clone(), 200, 200);
        let p = crop_tumor_patches(&s, 3).unwrap();
        assert_eq!(p.sections.len(), 5);
        for (m, (_, img)) in masks.iter().zip(&p.sections) {
            assert!(p.crop.contains_box(m.as_ref().unwrap().bbox().unwrap()));
            assert_eq!(img.dimensions(), (p.crop.width, p.crop.height));
        }
    }

    #[test]
    fn gap_sections_inside_the_range_are_kept() {
        let m = disk(50, 50, 25.0, 25.0, 5.0);
        let s = stack(vec![Some(m.clone()), None, Some(m)], 50, 50);
        let p = crop_tumor_patches(&s, 3).unwrap();
        assert_eq!(p.sections.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(p.sections[1].1.pixels().all(|v| v[3] == 0));
    }

    #[test]
    fn border_tumor_is_clamped() {
        let masks = vec![Some(disk(80, 60, 2.0, 3.0, 6.0)), Some(disk(80, 60, 75.0, 55.0, 3.0))];
        let s = stack(masks, 80, 60);
        let p = crop_tumor_patches(&s, 3).unwrap();
        assert_eq!(p.crop, CropRect { x: 0, y: 0, width: 80, height: 60 });
        assert_eq!(p.sections[0].1.dimensions(), p.sections[1].1.dimensions());
    }

    #[test]
    fn absent_tumor_is_an_error() {
        let s = stack(vec![None, None], 30, 30);
        assert!(matches!(crop_tumor_patches(&s, 3), Err(Error::TumorAbsent(3))));
    }

    #[test]
    fn feature_patches_are_named_by_index_and_deterministic() {
        let s = stack(vec![None, None], 90, 60);
        let dir = tempfile::tempdir().unwrap();
        // grid is 3×2 per section; index 7 = section 1, row 0, col 1
        export_feature_patch_images(&s, 30, &[0, 5, 7], dir.path()).unwrap();
        let img = image::open(dir.path().join("7.png")).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (30, 30));
        assert_eq!(img.get_pixel(0, 0).0, [30, 0, 1]);
        assert!(!dir.path().join("1.png").exists());
        let first = std::fs::read(dir.path().join("5.png")).unwrap();
        export_feature_patch_images(&s, 30, &[5], dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("5.png")).unwrap(), first);
    }
}
