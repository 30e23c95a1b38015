//! Serial-section stacks on disk.
//!
//! Layout under a stack root:
//!
//! ```text
//! stack.json
//! sections/<index:04>.png            RGB section image (optional)
//! masks/tissue/<index:04>.png        tissue mask (required)
//! masks/tumor/<tumor_id>/<index:04>.png
//! ```
//!
//! Masks are 8-bit grayscale thresholded at 128.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{load_rgb, save_rgb, GrayImage, Mask};

pub type TumorId = u32;

/// Physical units of a stack. All lengths are micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackMetadata {
    pub pixel_size_um: f64,
    pub section_spacing_um: f64,
    pub section_thickness_um: f64,
    pub n_sections: usize,
    /// Scale at which registration runs, relative to the stored images.
    #[serde(default = "default_registration_fraction")]
    pub downscale_fraction: f64,
}

fn default_registration_fraction() -> f64 {
    0.1
}

impl StackMetadata {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size_um > 0.0 && self.pixel_size_um.is_finite()) {
            return Err(Error::param("pixel_size_um", "must be finite and > 0"));
        }
        if !(self.section_spacing_um > 0.0 && self.section_spacing_um.is_finite()) {
            return Err(Error::param("section_spacing_um", "must be finite and > 0"));
        }
        if !(self.section_thickness_um >= 0.0 && self.section_thickness_um.is_finite()) {
            return Err(Error::param("section_thickness_um", "must be finite and >= 0"));
        }
        if self.n_sections < 2 {
            return Err(Error::param("n_sections", "a stack needs at least 2 sections"));
        }
        check_fraction("downscale_fraction", self.downscale_fraction)?;
        Ok(())
    }

    /// Physical height spanned by the imaged sections, first to last.
    pub fn stack_height_um(&self) -> f64 {
        (self.n_sections.saturating_sub(1)) as f64 * self.section_spacing_um
    }

    pub fn load(path: &Path) -> Result<StackMetadata> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: StackMetadata = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("metadata serializes");
        write_text(path, &text)
    }
}

/// Distance between consecutive sections in pixels of an image downscaled by `at_fraction`.
pub fn z_spacing_px(metadata: &StackMetadata, at_fraction: f64) -> f64 {
    metadata.section_spacing_um / (metadata.pixel_size_um / at_fraction)
}

#[derive(Debug, Clone)]
pub struct Section {
    pub index: usize,
    pub image: Option<RgbImage>,
    pub tissue_mask: Mask,
    pub tumor_masks: Vec<(TumorId, Mask)>,
}

impl Section {
    pub fn dims(&self) -> (u32, u32) {
        self.tissue_mask.dims()
    }

    pub fn tumor_mask(&self, id: TumorId) -> Option<&Mask> {
        self.tumor_masks.iter().find(|(t, _)| *t == id).map(|(_, m)| m)
    }

    fn check_dims(&self) -> Result<()> {
        let dims = self.dims();
        if let Some(img) = &self.image {
            if img.dimensions() != dims {
                return Err(Error::DimensionMismatch {
                    section: self.index,
                    detail: format!("image {:?} vs tissue mask {:?}", img.dimensions(), dims),
                });
            }
        }
        for (id, m) in &self.tumor_masks {
            if m.dims() != dims {
                return Err(Error::DimensionMismatch {
                    section: self.index,
                    detail: format!("tumor {id} mask {:?} vs tissue mask {:?}", m.dims(), dims),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SectionStack {
    pub metadata: StackMetadata,
    pub sections: Vec<Section>,
    pub registered: bool,
}

impl SectionStack {
    /// Tumor ids present in at least one section, ascending.
    pub fn tumor_ids(&self) -> Vec<TumorId> {
        let mut ids: Vec<TumorId> = self
            .sections
            .iter()
            .flat_map(|s| s.tumor_masks.iter().map(|(id, _)| *id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn dims(&self) -> Option<(u32, u32)> {
        self.sections.first().map(Section::dims)
    }
}

pub fn section_file_name(index: usize) -> String {
    format!("{index:04}.png")
}

pub fn image_path(root: &Path, index: usize) -> PathBuf {
    root.join("sections").join(section_file_name(index))
}

pub fn tissue_mask_path(root: &Path, index: usize) -> PathBuf {
    root.join("masks").join("tissue").join(section_file_name(index))
}

pub fn tumor_mask_path(root: &Path, tumor: TumorId, index: usize) -> PathBuf {
    root.join("masks")
        .join("tumor")
        .join(tumor.to_string())
        .join(section_file_name(index))
}

fn tumor_dirs(root: &Path) -> Result<Vec<TumorId>> {
    let dir = root.join("masks").join("tumor");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let id = name.parse::<TumorId>().map_err(|_| Error::Malformed {
            path: entry.path(),
            reason: "tumor directory names must be numeric ids".into(),
        })?;
        ids.push(id);
    }
    ids.sort_unstable();
    Ok(ids)
}

/// Reads every section listed by `metadata.n_sections`.
pub fn load_stack(root: &Path, metadata: StackMetadata) -> Result<SectionStack> {
    metadata.validate()?;
    let tumors = tumor_dirs(root)?;
    let loaded = par::map_range(metadata.n_sections, |index| -> Result<Section> {
        let tissue_path = tissue_mask_path(root, index);
        if !tissue_path.is_file() {
            return Err(Error::MissingTissueMask(index));
        }
        let tissue_mask = Mask::load_png(&tissue_path)?;
        let img_path = image_path(root, index);
        let image = if img_path.is_file() {
            Some(load_rgb(&img_path)?)
        } else {
            None
        };
        let mut tumor_masks = Vec::new();
        for &id in &tumors {
            let p = tumor_mask_path(root, id, index);
            if p.is_file() {
                tumor_masks.push((id, Mask::load_png(&p)?));
            }
        }
        let section = Section {
            index,
            image,
            tissue_mask,
            tumor_masks,
        };
        section.check_dims()?;
        Ok(section)
    });
    let sections = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SectionStack {
        metadata,
        sections,
        registered: false,
    })
}

/// Reads `stack.json` and then the sections it describes.
pub fn load_stack_dir(root: &Path) -> Result<SectionStack> {
    let meta = StackMetadata::load(&root.join("stack.json"))?;
    load_stack(root, meta)
}

/// Writes a stack in the layout `load_stack` reads. Empty tumor masks are skipped.
pub fn write_stack(root: &Path, stack: &SectionStack) -> Result<()> {
    stack.metadata.save(&root.join("stack.json"))?;
    let results = par::map(&stack.sections, |s| -> Result<()> {
        if let Some(img) = &s.image {
            save_rgb(&image_path(root, s.index), img)?;
        }
        s.tissue_mask.save_png(&tissue_mask_path(root, s.index))?;
        for (id, m) in &s.tumor_masks {
            if !m.is_empty() {
                m.save_png(&tumor_mask_path(root, *id, s.index))?;
            }
        }
        Ok(())
    });
    results.into_iter().collect()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_fraction(name: &'static str, fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("{fraction} is outside (0, 1]")))
    }
}

/// Output size of a downscale: `round(n * fraction)`, at least one pixel.
pub fn scaled_len(n: u32, fraction: f64) -> u32 {
    ((n as f64 * fraction).round() as u32).max(1)
}

/// Per-output-pixel list of `(input index, overlap length)` along one axis.
fn area_weights(n_in: u32, n_out: u32) -> Vec<Vec<(u32, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as u32;
            let last = (hi.ceil() as u32).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Area-majority downscale: an output pixel is foreground iff at least half of
/// the input area it covers is foreground.
pub fn downscale_mask(mask: &Mask, fraction: f64) -> Result<Mask> {
    check_fraction("fraction", fraction)?;
    let (w, h) = mask.dims();
    let (ow, oh) = (scaled_len(w, fraction), scaled_len(h, fraction));
    if (ow, oh) == (w, h) {
        return Ok(mask.clone());
    }
    let wx = area_weights(w, ow);
    let wy = area_weights(h, oh);
    let cell_area = (w as f64 / ow as f64) * (h as f64 / oh as f64);
    let mut out = Mask::new(ow, oh);
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            let mut covered = 0.0;
            for &(iy, fy) in ys {
                for &(ix, fx) in xs {
                    if mask.get(ix, iy) {
                        covered += fx * fy;
                    }
                }
            }
            if covered >= 0.5 * cell_area - 1e-9 {
                out.set(ox as u32, oy as u32, true);
            }
        }
    }
    Ok(out)
}

/// Area-average downscale of a grayscale raster.
pub fn downscale_gray(img: &GrayImage, fraction: f64) -> Result<GrayImage> {
    check_fraction("fraction", fraction)?;
    let (w, h) = img.dims();
    let (ow, oh) = (scaled_len(w, fraction), scaled_len(h, fraction));
    if (ow, oh) == (w, h) {
        return Ok(img.clone());
    }
    let wx = area_weights(w, ow);
    let wy = area_weights(h, oh);
    let mut out = GrayImage::new(ow, oh);
    for (oy, ys) in wy.iter().enumerate() {
        for (ox, xs) in wx.iter().enumerate() {
            let mut acc = 0.0f64;
            let mut total = 0.0f64;
            for &(iy, fy) in ys {
                for &(ix, fx) in xs {
                    acc += img.get(ix, iy) as f64 * fx * fy;
                    total += fx * fy;
                }
            }
            out.data[oy * ow as usize + ox] = (acc / total) as f32;
        }
    }
    Ok(out)
}
