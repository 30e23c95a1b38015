//! Patch-level features over registered sections.
//!
//! Sections are tiled into non-overlapping square patches. Every kept
//! patch gets a stable index and one value per feature name, and each
//! feature is written as its own table with model-space positions,
//! min-max normalized values and mid-rank percentiles.

mod nuclei;
mod texture;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::meshgen::{MaskSpace, Similarity};
use crate::par;
use crate::stack_io::{Section, SectionStack, TumorId};

pub use nuclei::{hematoxylin, nuclei, otsu, NucleiStats};
pub use texture::{
    glcm_energy, hog, intensity, lbp, lbp_flat_bin, luma8, Gray8, GLCM_LEVELS, HOG_BINS, HOG_CELL, LBP_BINS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Hog,
    Lbp,
    GlcmEnergy,
    Nuclei,
    Intensity,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::Hog,
        FeatureKind::Lbp,
        FeatureKind::GlcmEnergy,
        FeatureKind::Nuclei,
        FeatureKind::Intensity,
    ];

    /// Names of the scalars produced by [`feature_vector`], in order.
    pub fn names(self) -> Vec<String> {
        match self {
            FeatureKind::Hog => std::iter::once("hog".to_string())
                .chain((0..HOG_BINS).map(|b| format!("hog_{b}")))
                .collect(),
            FeatureKind::Lbp => (0..LBP_BINS).map(|b| format!("lbp_{b}")).collect(),
            FeatureKind::GlcmEnergy => vec!["glcm_energy".into()],
            FeatureKind::Nuclei => vec!["nuclei_count".into(), "nuclei_nn_mean".into()],
            FeatureKind::Intensity => vec!["intensity_mean".into(), "intensity_std".into()],
        }
    }
}

/// Every exported feature name, in table order.
pub fn feature_names() -> Vec<String> {
    FeatureKind::ALL.iter().flat_map(|k| k.names()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub organ_patch: u32,
    pub tumor_patch: u32,
    pub min_tissue_fraction: f64,
    pub nucleus_min_area: usize,
    pub nucleus_max_area: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            organ_patch: 400,
            tumor_patch: 100,
            min_tissue_fraction: 0.25,
            nucleus_min_area: 50,
            nucleus_max_area: 5000,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<()> {
        if self.organ_patch == 0 || self.tumor_patch == 0 {
            return Err(Error::param("patch size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_tissue_fraction) {
            return Err(Error::param("min_tissue_fraction", "must lie in [0, 1]"));
        }
        if self.nucleus_min_area > self.nucleus_max_area {
            return Err(Error::param("nucleus area", "min exceeds max"));
        }
        Ok(())
    }
}

pub fn feature_vector(patch: &RgbImage, kind: FeatureKind, params: &FeatureParams) -> Result<Vec<f64>> {
    let gray = Gray8::from_rgb(patch)?;
    Ok(match kind {
        FeatureKind::Hog => {
            let bins = hog(&gray);
            let mean = bins.iter().sum::<f64>() / HOG_BINS as f64;
            std::iter::once(mean).chain(bins).collect()
        }
        FeatureKind::Lbp => lbp(&gray)?.to_vec(),
        FeatureKind::GlcmEnergy => vec![glcm_energy(&gray)],
        FeatureKind::Nuclei => {
            let s = nuclei(patch, params.nucleus_min_area, params.nucleus_max_area);
            vec![s.count as f64, s.nn_mean]
        }
        FeatureKind::Intensity => {
            let (m, s) = intensity(&gray);
            vec![m, s]
        }
    })
}

/// All features of one patch, aligned with [`feature_names`].
pub fn all_features(patch: &RgbImage, params: &FeatureParams) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for kind in FeatureKind::ALL {
        out.extend(feature_vector(patch, kind, params)?);
    }
    Ok(out)
}

/// Row-major tiling of one section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: u32,
    pub rows: u32,
    pub cols: u32,
    pub section: usize,
}

impl PatchGrid {
    pub fn new(dims: (u32, u32), patch_size: u32, section: usize) -> Result<Self> {
        let (w, h) = dims;
        if patch_size == 0 || patch_size > w || patch_size > h {
            return Err(Error::param(
                "patch_size",
                format!("{patch_size} does not fit a {w}x{h} section"),
            ));
        }
        Ok(PatchGrid {
            patch_size,
            rows: h / patch_size,
            cols: w / patch_size,
            section,
        })
    }

    pub fn cells(&self) -> u64 {
        self.rows as u64 * self.cols as u64
    }

    pub fn index(&self, row: u32, col: u32) -> u64 {
        self.section as u64 * self.cells() + row as u64 * self.cols as u64 + col as u64
    }

    /// `(section, row, col)` of an index on a grid with these dims.
    pub fn locate(&self, index: u64) -> (usize, u32, u32) {
        let per = self.cells();
        let within = index % per;
        ((index / per) as usize, (within / self.cols as u64) as u32, (within % self.cols as u64) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub index: u64,
    pub section: usize,
    pub row: u32,
    pub col: u32,
    pub x0: u32,
    pub y0: u32,
    pub size: u32,
}

impl Patch {
    fn at(grid: &PatchGrid, row: u32, col: u32) -> Patch {
        Patch {
            index: grid.index(row, col),
            section: grid.section,
            row,
            col,
            x0: col * grid.patch_size,
            y0: row * grid.patch_size,
            size: grid.patch_size,
        }
    }

    /// Pixel-centre coordinates of the patch centre.
    pub fn center(&self) -> (f64, f64) {
        let half = (self.size as f64 - 1.0) / 2.0;
        (self.x0 as f64 + half, self.y0 as f64 + half)
    }

    /// Pixel holding the centre (lower-right of the four for even sizes).
    pub fn center_pixel(&self) -> (u32, u32) {
        (self.x0 + self.size / 2, self.y0 + self.size / 2)
    }

    pub fn crop(&self, img: &RgbImage) -> RgbImage {
        image::imageops::crop_imm(img, self.x0, self.y0, self.size, self.size).to_image()
    }
}

/// Patches whose tissue coverage reaches `min_tissue_fraction`.
pub fn tile_patches(section: &Section, patch_size: u32, min_tissue_fraction: f64) -> Result<(PatchGrid, Vec<Patch>)> {
    let grid = PatchGrid::new(section.dims(), patch_size, section.index)?;
    let area = (patch_size as f64).powi(2);
    let mask = &section.tissue_mask;
    let mut patches = Vec::new();
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let p = Patch::at(&grid, row, col);
            let mut covered = 0usize;
            for y in p.y0..p.y0 + patch_size {
                for x in p.x0..p.x0 + patch_size {
                    covered += mask.get(x, y) as usize;
                }
            }
            if covered > 0 && covered as f64 >= min_tissue_fraction * area {
                patches.push(p);
            }
        }
    }
    Ok((grid, patches))
}

/// Patches whose centre pixel lies in the given tumor's mask.
pub fn tile_tumor_patches(section: &Section, patch_size: u32, tumor: TumorId) -> Result<(PatchGrid, Vec<Patch>)> {
    let grid = PatchGrid::new(section.dims(), patch_size, section.index)?;
    let Some(mask) = section.tumor_mask(tumor) else {
        return Ok((grid, Vec::new()));
    };
    let mut patches = Vec::new();
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let p = Patch::at(&grid, row, col);
            let (cx, cy) = p.center_pixel();
            if mask.get(cx, cy) {
                patches.push(p);
            }
        }
    }
    Ok((grid, patches))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Organ,
    Tumor(TumorId),
}

impl Level {
    pub fn dir(&self, root: &Path) -> PathBuf {
        match self {
            Level::Organ => root.join("features").join("organ"),
            Level::Tumor(id) => root.join("features").join("tumor").join(id.to_string()),
        }
    }

    pub fn patch_size(&self, params: &FeatureParams) -> u32 {
        match self {
            Level::Organ => params.organ_patch,
            Level::Tumor(_) => params.tumor_patch,
        }
    }
}

/// Raw values of one patch before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub patch: Patch,
    pub tumor_id: Option<TumorId>,
    pub values: Vec<f64>,
}

fn tumor_at(section: &Section, p: &Patch) -> Option<TumorId> {
    let (cx, cy) = p.center_pixel();
    let mut hits: Vec<TumorId> = section
        .tumor_masks
        .iter()
        .filter(|(_, m)| m.get(cx, cy))
        .map(|(id, _)| *id)
        .collect();
    hits.sort_unstable();
    hits.first().copied()
}

/// Patches of one level across the stack with all feature values, ordered by index.
pub fn compute_level(stack: &SectionStack, level: Level, params: &FeatureParams) -> Result<Vec<PatchRecord>> {
    params.validate()?;
    let size = level.patch_size(params);
    let mut jobs: Vec<(usize, Patch)> = Vec::new();
    for (si, s) in stack.sections.iter().enumerate() {
        let (_, patches) = match level {
            Level::Organ => tile_patches(s, size, params.min_tissue_fraction)?,
            Level::Tumor(id) => tile_tumor_patches(s, size, id)?,
        };
        if !patches.is_empty() && s.image.is_none() {
            return Err(Error::Stage(format!("section {} has no image to extract features from", s.index)));
        }
        jobs.extend(patches.into_iter().map(|p| (si, p)));
    }
    let records = par::map(&jobs, |(si, p)| -> Result<PatchRecord> {
        let s = &stack.sections[*si];
        let img = s.image.as_ref().expect("checked above");
        let values = all_features(&p.crop(img), params)?;
        let tumor_id = match level {
            Level::Organ => tumor_at(s, p),
            Level::Tumor(id) => Some(id),
        };
        Ok(PatchRecord {
            patch: *p,
            tumor_id,
            values,
        })
    });
    records.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureInstance {
    pub index: u64,
    pub position: Vec3,
    pub value: f64,
    pub normalized: f64,
    pub percentile_rank: f64,
    pub tumor_id: Option<TumorId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_name: String,
    pub instances: Vec<FeatureInstance>,
    pub min: f64,
    pub max: f64,
}

/// Mid-rank percentiles `100·(rank − 0.5)/N`; tied values share the mean
/// of their ranks.
pub fn mid_rank_percentiles(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = 100.0 * (rank - 0.5) / n as f64;
        }
        start = end;
    }
    out
}

/// Builds one feature's table from the records' `column`-th value: model-space
/// positions, min-max normalization (all zero when constant) and percentiles.
pub fn normalize_and_index(
    feature_name: &str,
    column: usize,
    records: &[PatchRecord],
    space: &MaskSpace,
    mask_to_model: &Similarity,
) -> Result<FeatureTable> {
    if records.is_empty() {
        return Err(Error::Empty(format!("no instances for feature {feature_name}")));
    }
    let values: Vec<f64> = records.iter().map(|r| r.values[column]).collect();
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = max - min;
    let ranks = mid_rank_percentiles(&values);
    let instances = records
        .iter()
        .zip(values.iter().zip(ranks))
        .map(|(r, (&value, percentile_rank))| {
            let (cx, cy) = r.patch.center();
            let position = mask_to_model.apply(space.point(cx, cy, r.patch.section as f64));
            FeatureInstance {
                index: r.patch.index,
                position,
                value,
                normalized: if span > 0.0 { (value - min) / span } else { 0.0 },
                percentile_rank,
                tumor_id: r.tumor_id,
            }
        })
        .collect();
    Ok(FeatureTable {
        feature_name: feature_name.to_string(),
        instances,
        min,
        max,
    })
}

/// Instances with `percentile_rank ≥ q`.
pub fn percentile_threshold(table: &FeatureTable, q: f64) -> Result<Vec<&FeatureInstance>> {
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::param("q", format!("{q} is outside [0, 100]")));
    }
    Ok(table.instances.iter().filter(|i| i.percentile_rank >= q).collect())
}

pub const CSV_HEADER: [&str; 8] = ["index", "x", "y", "z", "value", "normalized", "percentile", "tumor_id"];

pub fn table_path(dir: &Path, feature_name: &str) -> PathBuf {
    dir.join(format!("{feature_name}.csv"))
}

pub fn write_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = crate::registration::csv_writer(path)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for i in &table.instances {
        w.write_record([
            i.index.to_string(),
            i.position.x.to_string(),
            i.position.y.to_string(),
            i.position.z.to_string(),
            i.value.to_string(),
            i.normalized.to_string(),
            i.percentile_rank.to_string(),
            i.tumor_id.map(|t| t.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<FeatureTable> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(malformed(format!("unexpected header {:?}", header)));
    }
    let mut instances = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| malformed(format!("bad number {:?}", &rec[i]))) };
        instances.push(FeatureInstance {
            index: rec[0].parse().map_err(|_| malformed(format!("bad index {:?}", &rec[0])))?,
            position: Vec3::new(f(1)?, f(2)?, f(3)?),
            value: f(4)?,
            normalized: f(5)?,
            percentile_rank: f(6)?,
            tumor_id: if rec[7].is_empty() {
                None
            } else {
                Some(rec[7].parse().map_err(|_| malformed(format!("bad tumor id {:?}", &rec[7])))?)
            },
        });
    }
    let (min, max) = instances
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), i| (a.min(i.value), b.max(i.value)));
    let feature_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureTable {
        feature_name,
        instances,
        min,
        max,
    })
}

/// Normalizes every feature of a level and writes one CSV per name.
pub fn write_level(
    dir: &Path,
    records: &[PatchRecord],
    space: &MaskSpace,
    mask_to_model: &Similarity,
) -> Result<Vec<String>> {
    let names = feature_names();
    let tables = par::map_range(names.len(), |c| normalize_and_index(&names[c], c, records, space, mask_to_model));
    for t in tables {
        let t = t?;
        write_table(&table_path(dir, &t.feature_name), &t)?;
    }
    Ok(names)
}

#[cfg(test)]
mod tests;
