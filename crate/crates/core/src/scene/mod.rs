//! The scene bundle: everything the viewer loads, tied together by
//! `bundle.json`.
//!
//! ```text
//! bundle.json
//! colormaps.csv
//! models/organ.stl, models/tumor_<id>.stl, models/geometry.json
//! features/organ/<feature>.csv
//! features/tumor/<id>/<feature>.csv
//! patches/organ/<index>.png
//! patches/tumor/<id>/<k>.png            RGBA tumor sections
//! patches/tumor/<id>/features/<index>.png
//! ```
//!
//! All paths in the manifest are relative to the bundle root and use `/`.

mod colormap;
mod patches;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_names, read_table, table_path, Level};
use crate::geom::Mat3;
use crate::meshgen::{load_geometry, read_stl, GeometryFile};
use crate::stack_io::{write_text, TumorId};

pub use colormap::{
    bone, colormaps, colormaps_path, gray, read_colormaps, viridis, write_colormaps, Colormap, COLORMAP_LEN,
};
pub use patches::{
    crop_tumor_patches, export_feature_patch_images, patch_image_name, save_tumor_patches, CropRect, TumorPatches,
    TUMOR_CROP_MARGIN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBundle {
    pub sample_id: String,
    pub organ: OrganEntry,
    pub tumors: Vec<TumorEntry>,
    pub features: FeatureRefs,
    pub colormaps: String,
}

/// Organ mesh and the mask-to-model similarity `p ↦ scale·R·p + t` it was
/// normalized with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganEntry {
    pub mesh: String,
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: [f64; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TumorEntry {
    pub id: TumorId,
    pub mesh: String,
    pub patch_dir: String,
    /// Full-resolution pixel rectangle shared by all section patches.
    pub crop: CropRect,
    pub sections: Vec<SectionPlane>,
}

/// One RGBA section patch placed in model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionPlane {
    pub section: usize,
    pub image: String,
    pub z: f64,
    /// Crop corners (top-left, top-right, bottom-right, bottom-left).
    pub corners: [[f64; 3]; 4],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRefs {
    pub organ: Vec<FeatureRef>,
    pub tumor: Vec<FeatureRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tumor_id: Option<TumorId>,
    pub table: String,
    /// Directory holding `<index>.png` for every row of the table.
    pub patches: String,
}

pub fn bundle_path(root: &Path) -> PathBuf {
    root.join("bundle.json")
}

pub fn organ_patch_dir(root: &Path) -> PathBuf {
    root.join("patches").join("organ")
}

pub fn tumor_patch_dir(root: &Path, id: TumorId) -> PathBuf {
    root.join("patches").join("tumor").join(id.to_string())
}

pub fn feature_patch_dir(root: &Path, level: Level) -> PathBuf {
    match level {
        Level::Organ => organ_patch_dir(root),
        Level::Tumor(id) => tumor_patch_dir(root, id).join("features"),
    }
}

/// Manifest form of a path under `root`.
fn rel(root: &Path, path: &Path) -> String {
    let r = path.strip_prefix(root).unwrap_or(path);
    r.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn resolve(root: &Path, rel: &str) -> PathBuf {
    rel.split('/').fold(root.to_path_buf(), |p, part| p.join(part))
}

/// Places a tumor's section patches in model space and names their files.
pub fn tumor_entry(root: &Path, patches: &TumorPatches, geometry: &GeometryFile) -> TumorEntry {
    let dir = tumor_patch_dir(root, patches.tumor);
    let c = patches.crop;
    // pixel-edge corners in pixel-centre coordinates
    let (x0, y0) = (c.x as f64 - 0.5, c.y as f64 - 0.5);
    let (x1, y1) = (x0 + c.width as f64, y0 + c.height as f64);
    let sections = patches
        .sections
        .iter()
        .enumerate()
        .map(|(k, (section, _))| {
            let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)].map(|(x, y)| {
                let p = geometry.mask_space.point(x, y, *section as f64);
                geometry.organ.mask_to_model.apply(p).to_array()
            });
            SectionPlane {
                section: *section,
                image: rel(root, &dir.join(format!("{k}.png"))),
                z: corners.iter().map(|p| p[2]).sum::<f64>() / 4.0,
                corners,
            }
        })
        .collect();
    TumorEntry {
        id: patches.tumor,
        mesh: rel(root, &crate::meshgen::tumor_mesh_path(root, patches.tumor)),
        patch_dir: rel(root, &dir),
        crop: c,
        sections,
    }
}

/// Writes `bundle.json` for the given tumors and feature levels, then
/// validates it against the files on disk.
pub fn write_bundle(root: &Path, sample_id: &str, tumors: Vec<TumorEntry>, levels: &[Level]) -> Result<SceneBundle> {
    let geometry = load_geometry(root)?;
    let t = geometry.organ.mask_to_model;
    let organ = OrganEntry {
        mesh: rel(root, &crate::meshgen::organ_mesh_path(root)),
        scale: t.scale,
        rotation: t.rotation,
        translation: t.translation.to_array(),
        bbox_min: geometry.organ.model_space.bbox_min.to_array(),
        bbox_max: geometry.organ.model_space.bbox_max.to_array(),
    };
    let mut features = FeatureRefs::default();
    for &level in levels {
        let dir = level.dir(root);
        let patches = rel(root, &feature_patch_dir(root, level));
        for name in feature_names() {
            let r = FeatureRef {
                tumor_id: match level {
                    Level::Organ => None,
                    Level::Tumor(id) => Some(id),
                },
                table: rel(root, &table_path(&dir, &name)),
                patches: patches.clone(),
                name,
            };
            match level {
                Level::Organ => features.organ.push(r),
                Level::Tumor(_) => features.tumor.push(r),
            }
        }
    }
    let bundle = SceneBundle {
        sample_id: sample_id.to_string(),
        organ,
        tumors,
        features,
        colormaps: rel(root, &colormaps_path(root)),
    };
    let path = bundle_path(root);
    let json = serde_json::to_string_pretty(&bundle).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_text(&path, &(json + "\n"))?;
    validate_bundle(root)
}

pub fn load_bundle(root: &Path) -> Result<SceneBundle> {
    let path = bundle_path(root);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

/// Parses the manifest and every file it references. Missing files are
/// collected and reported together; a file that exists but does not parse
/// fails immediately.
pub fn validate_bundle(root: &Path) -> Result<SceneBundle> {
    let bundle = load_bundle(root)?;
    let mut missing: BTreeSet<PathBuf> = BTreeSet::new();
    let mut present = |p: PathBuf| -> Option<PathBuf> {
        if p.is_file() {
            Some(p)
        } else {
            missing.insert(p);
            None
        }
    };

    for mesh in std::iter::once(&bundle.organ.mesh).chain(bundle.tumors.iter().map(|t| &t.mesh)) {
        if let Some(p) = present(resolve(root, mesh)) {
            if read_stl(&p)?.is_empty() {
                return Err(Error::Malformed {
                    path: p,
                    reason: "mesh has no triangles".into(),
                });
            }
        }
    }
    for t in &bundle.tumors {
        let mut dims = None;
        for s in &t.sections {
            let Some(p) = present(resolve(root, &s.image)) else {
                continue;
            };
            let d = image::image_dimensions(&p).map_err(|source| Error::Image {
                path: p.clone(),
                source,
            })?;
            if *dims.get_or_insert(d) != d {
                return Err(Error::Malformed {
                    path: p,
                    reason: format!("tumor {} patches differ in size", t.id),
                });
            }
        }
    }
    let mut patch_files: BTreeSet<PathBuf> = BTreeSet::new();
    for f in bundle.features.organ.iter().chain(&bundle.features.tumor) {
        let Some(p) = present(resolve(root, &f.table)) else {
            continue;
        };
        let dir = resolve(root, &f.patches);
        patch_files.extend(read_table(&p)?.instances.iter().map(|i| dir.join(patch_image_name(i.index))));
    }
    for p in patch_files {
        present(p);
    }
    if let Some(p) = present(resolve(root, &bundle.colormaps)) {
        read_colormaps(&p)?;
    }

    if missing.is_empty() {
        Ok(bundle)
    } else {
        Err(Error::DanglingRefs(missing.into_iter().collect()))
    }
}
