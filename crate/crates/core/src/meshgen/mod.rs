//! Watertight organ and tumor surfaces from registered mask stacks.
//!
//! Coordinates come in three flavours:
//!
//! - *mask space*: x, y in pixels of the organ masks downscaled to the
//!   organ fraction, z = section index × z spacing at that fraction;
//! - *tumor space*: provisional frame of a tumor mesh (tumor fraction
//!   pixels, fixed voxel depth per section);
//! - *model space*: the normalized organ frame shared by the viewer.
//!
//! A [`Similarity`] carries mask space into model space.

mod smooth;
mod stl;
mod tetra;
mod volume;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{axis_angle_matrix, mat3_mul_vec, Mat3, Vec3, IDENTITY3};
use crate::par;
use crate::raster::Mask;
use crate::stack_io::{downscale_mask, z_spacing_px, SectionStack, StackMetadata, TumorId};

pub use smooth::{taubin_smooth, TAUBIN_LAMBDA, TAUBIN_MU};
pub use stl::{read_stl, write_stl};
pub use volume::dilate_square;

pub const DEFAULT_SMOOTHING: usize = 20;
/// Provisional z step per section of tumor volumes, in tumor-space pixels.
pub const TUMOR_VOXEL_DEPTH: f64 = 1.2;
/// Tolerated relative mismatch between per-axis tumor scale factors.
pub const ANISOTROPY_WARN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudSource {
    Organ,
    Tumor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub source: CloudSource,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Edge and face statistics used to certify a closed, consistently
/// oriented surface.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Topology {
    pub edges: usize,
    /// Edges used by a single triangle.
    pub open_edges: usize,
    /// Edges used by more than two triangles.
    pub crowded_edges: usize,
    /// Two-triangle edges traversed in the same direction by both.
    pub misoriented_edges: usize,
    pub duplicate_faces: usize,
}

impl Topology {
    pub fn is_watertight(&self) -> bool {
        self.open_edges == 0 && self.crowded_edges == 0
    }

    pub fn is_valid(&self) -> bool {
        self.is_watertight() && self.misoriented_edges == 0 && self.duplicate_faces == 0
    }
}

impl SurfaceMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Volume enclosed by the surface; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn topology(&self) -> Topology {
        let mut directed: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                let slot = directed.entry((a.min(b), a.max(b))).or_default();
                if a < b {
                    slot.0 += 1;
                } else {
                    slot.1 += 1;
                }
            }
        }
        let mut topo = Topology {
            edges: directed.len(),
            ..Topology::default()
        };
        for &(fwd, back) in directed.values() {
            match fwd + back {
                1 => topo.open_edges += 1,
                2 if fwd != 1 => topo.misoriented_edges += 1,
                2 => {}
                _ => topo.crowded_edges += 1,
            }
        }
        let mut faces = HashSet::new();
        for t in &self.triangles {
            let mut k = *t;
            k.sort_unstable();
            if !faces.insert(k) {
                topo.duplicate_faces += 1;
            }
        }
        topo
    }

    /// V − E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let used: HashSet<u32> = self.triangles.iter().flatten().copied().collect();
        used.len() as i64 - self.topology().edges as i64 + self.triangles.len() as i64
    }

    /// Number of edge-connected triangle groups.
    pub fn components(&self) -> usize {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(parent: &mut [u32], mut v: u32) -> u32 {
            while parent[v as usize] != v {
                parent[v as usize] = parent[parent[v as usize] as usize];
                v = parent[v as usize];
            }
            v
        }
        for t in &self.triangles {
            for e in 1..3 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[e]));
                if a != b {
                    parent[a.max(b) as usize] = a.min(b);
                }
            }
        }
        let roots: HashSet<u32> = self.triangles.iter().map(|t| find(&mut parent, t[0])).collect();
        roots.len()
    }

    pub(crate) fn vertex_neighbors(&self) -> Vec<Vec<u32>> {
        let mut nb: Vec<Vec<u32>> = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                nb[a as usize].push(b);
                nb[b as usize].push(a);
            }
        }
        for n in &mut nb {
            n.sort_unstable();
            n.dedup();
        }
        nb
    }

    /// Drops repeated faces (same vertex set), keeping the first.
    pub fn remove_duplicate_faces(&mut self) {
        let mut seen = HashSet::new();
        self.triangles.retain(|t| {
            let mut k = *t;
            k.sort_unstable();
            seen.insert(k)
        });
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> SurfaceMesh {
        SurfaceMesh {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub extents: Vec3,
    pub center: Vec3,
    pub vertex_count: usize,
    pub triangle_count: usize,
}

impl GeometryReport {
    /// Report for a bare box, with no mesh behind it.
    pub fn from_bounds(bbox_min: Vec3, bbox_max: Vec3) -> Self {
        GeometryReport {
            bbox_min,
            bbox_max,
            extents: bbox_max - bbox_min,
            center: (bbox_min + bbox_max) * 0.5,
            vertex_count: 0,
            triangle_count: 0,
        }
    }
}

pub fn measure_geometry(mesh: &SurfaceMesh) -> Result<GeometryReport> {
    let mut used = mesh.triangles.iter().flatten().map(|&i| mesh.vertices[i as usize]);
    let first = used.next().ok_or_else(|| Error::Empty("mesh has no triangles".into()))?;
    let (lo, hi) = used.fold((first, first), |(lo, hi), p| (lo.min(p), hi.max(p)));
    Ok(GeometryReport {
        vertex_count: mesh.vertices.len(),
        triangle_count: mesh.triangles.len(),
        ..GeometryReport::from_bounds(lo, hi)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle_deg: f64,
}

impl Default for AxisAngle {
    fn default() -> Self {
        AxisAngle {
            axis: Vec3::new(0.0, 0.0, 1.0),
            angle_deg: 0.0,
        }
    }
}

impl AxisAngle {
    pub fn matrix(&self) -> Mat3 {
        axis_angle_matrix(self.axis, self.angle_deg.to_radians())
    }
}

/// `p ↦ scale · R · p + translation`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        scale: 1.0,
        rotation: IDENTITY3,
        translation: Vec3::ZERO,
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        mat3_mul_vec(&self.rotation, p) * self.scale + self.translation
    }

    /// Rotation-free similarity carrying the `from` box onto the `to` box,
    /// scaled by the ratio of z-extents.
    pub fn from_reports(from: &GeometryReport, to: &GeometryReport) -> Result<Similarity> {
        if from.extents.z <= 0.0 {
            return Err(Error::Degenerate("source report has zero z-extent".into()));
        }
        let scale = to.extents.z / from.extents.z;
        Ok(Similarity {
            scale,
            rotation: IDENTITY3,
            translation: to.center - from.center * scale,
        })
    }

    /// This similarity followed by a uniform scaling about the origin.
    pub fn rescaled(&self, c: f64) -> Similarity {
        Similarity {
            scale: self.scale * c,
            rotation: self.rotation,
            translation: self.translation * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedModel {
    pub mesh: SurfaceMesh,
    pub report: GeometryReport,
    pub transform: Similarity,
}

/// Rotates, scales to `target_height` along z, and centres the bounding box
/// at the origin. Rotation comes first so the z-extent is exact for any
/// rotation.
pub fn normalize_model(mesh: &SurfaceMesh, target_height: f64, rotation: &AxisAngle) -> Result<NormalizedModel> {
    if !(target_height > 0.0 && target_height.is_finite()) {
        return Err(Error::param("target_height", format!("must be positive, got {target_height}")));
    }
    let r = rotation.matrix();
    let rotated = mesh.map_vertices(|p| mat3_mul_vec(&r, p));
    let before = measure_geometry(&rotated)?;
    if before.extents.z <= 0.0 {
        return Err(Error::Degenerate("mesh has zero z-extent".into()));
    }
    let scale = target_height / before.extents.z;
    let transform = Similarity {
        scale,
        rotation: r,
        translation: -before.center * scale,
    };
    let out = mesh.map_vertices(|p| transform.apply(p));
    let report = measure_geometry(&out)?;
    Ok(NormalizedModel {
        mesh: out,
        report,
        transform,
    })
}

/// Largest relative disagreement of the y and z scale ratios with the x ratio.
pub fn anisotropy(desired: Vec3, actual: Vec3) -> f64 {
    let rx = desired.x / actual.x;
    let dev = |d: f64, a: f64| if a > 0.0 { ((d / a) / rx - 1.0).abs() } else { 0.0 };
    dev(desired.y, actual.y).max(dev(desired.z, actual.z))
}

/// Scales the tumor mesh by `S₀ₓ/S₁ₓ` and moves its bbox centre onto `P₀`,
/// where `S₀`, `P₀` are the tumor's mask-space extents and centre carried
/// into model space by the similarity implied by the organ reports.
pub fn align_tumor(
    tumor_mesh: &SurfaceMesh,
    tumor_report_mask_space: &GeometryReport,
    organ_report_mask_space: &GeometryReport,
    organ_report_model_space: &GeometryReport,
) -> Result<SurfaceMesh> {
    let sim = Similarity::from_reports(organ_report_mask_space, organ_report_model_space)?;
    align_tumor_with(tumor_mesh, tumor_report_mask_space, &sim)
}

/// [`align_tumor`] with an explicit mask→model similarity, e.g. the one
/// returned by [`normalize_model`]. The similarity's rotation is applied
/// to the tumor mesh as well.
pub fn align_tumor_with(
    tumor_mesh: &SurfaceMesh,
    tumor_report_mask_space: &GeometryReport,
    mask_to_model: &Similarity,
) -> Result<SurfaceMesh> {
    let s1 = measure_geometry(tumor_mesh)?;
    if s1.extents.x <= 0.0 {
        return Err(Error::Degenerate("tumor mesh has zero x-extent".into()));
    }
    if tumor_report_mask_space.extents.x <= 0.0 {
        return Err(Error::Degenerate("tumor mask extent is zero".into()));
    }
    let s0 = tumor_report_mask_space.extents * mask_to_model.scale;
    let p0 = mask_to_model.apply(tumor_report_mask_space.center);
    let factor = s0.x / s1.extents.x;
    let skew = anisotropy(s0, s1.extents);
    if skew > ANISOTROPY_WARN {
        log::warn!(
            "tumor scale is anisotropic: y/z ratios deviate {:.1}% from x ratio",
            100.0 * skew
        );
    }
    let r = mask_to_model.rotation;
    let scaled = tumor_mesh.map_vertices(|p| mat3_mul_vec(&r, p - s1.center) * factor);
    let p1 = measure_geometry(&scaled)?.center;
    let shift = p0 - p1;
    Ok(scaled.map_vertices(|p| p + shift))
}

/// Full-resolution pixel → mask-space mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpace {
    pub scale_x: f64,
    pub scale_y: f64,
    pub z_spacing: f64,
}

impl MaskSpace {
    /// Scales follow the integer dims produced by [`downscale_mask`].
    pub fn new(metadata: &StackMetadata, dims: (u32, u32), fraction: f64) -> MaskSpace {
        let (w, h) = dims;
        let sw = crate::stack_io::scaled_len(w, fraction);
        let sh = crate::stack_io::scaled_len(h, fraction);
        MaskSpace {
            scale_x: sw as f64 / w as f64,
            scale_y: sh as f64 / h as f64,
            z_spacing: z_spacing_px(metadata, fraction),
        }
    }

    /// Pixel-centre coordinates `(x, y)` of section `index`.
    pub fn point(&self, x: f64, y: f64, index: f64) -> Vec3 {
        Vec3::new(
            (x + 0.5) * self.scale_x - 0.5,
            (y + 0.5) * self.scale_y - 0.5,
            index * self.z_spacing,
        )
    }
}

/// Bounding box of a tumor's (undilated) masks in mask space; x and y run
/// along pixel edges, z from the first to the last section holding it.
pub fn tumor_mask_report(stack: &SectionStack, id: TumorId, space: &MaskSpace) -> Result<GeometryReport> {
    let mut acc: Option<(u32, u32, u32, u32, usize, usize)> = None;
    for s in &stack.sections {
        let Some((x0, y0, x1, y1)) = s.tumor_mask(id).and_then(Mask::bbox) else {
            continue;
        };
        let k = s.index;
        acc = Some(match acc {
            None => (x0, y0, x1, y1, k, k),
            Some(a) => (a.0.min(x0), a.1.min(y0), a.2.max(x1), a.3.max(y1), a.4.min(k), a.5.max(k)),
        });
    }
    let (x0, y0, x1, y1, k0, k1) = acc.ok_or(Error::TumorAbsent(id))?;
    let lo = space.point(x0 as f64 - 0.5, y0 as f64 - 0.5, k0 as f64);
    let hi = space.point(x1 as f64 + 0.5, y1 as f64 + 0.5, k1 as f64);
    Ok(GeometryReport::from_bounds(lo, hi))
}

/// Border pixels of every downscaled tissue mask plus all pixels of the
/// first and last sections.
pub fn extract_point_cloud(stack: &SectionStack, fraction: f64) -> Result<PointCloud> {
    if stack.sections.is_empty() {
        return Err(Error::Empty("stack has no sections".into()));
    }
    let zs = z_spacing_px(&stack.metadata, fraction);
    let last = stack.sections.len() - 1;
    let per_section = par::map(&stack.sections, |s| -> Result<Vec<Vec3>> {
        let m = downscale_mask(&s.tissue_mask, fraction)?;
        let cap = s.index == 0 || s.index == last;
        let z = s.index as f64 * zs;
        let mut pts = Vec::new();
        for y in 0..m.height() {
            for x in 0..m.width() {
                if !m.get(x, y) {
                    continue;
                }
                let (xi, yi) = (x as i64, y as i64);
                let border = [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|&(dx, dy)| !m.get_signed(xi + dx, yi + dy));
                if cap || border {
                    pts.push(Vec3::new(x as f64, y as f64, z));
                }
            }
        }
        Ok(pts)
    });
    let mut points = Vec::new();
    for p in per_section {
        points.extend(p?);
    }
    Ok(PointCloud {
        points,
        source: CloudSource::Organ,
    })
}

/// Signed-distance volume, iso-surface, weld/dedup, smoothing.
fn surface_from_slices(slices: &[Mask], z0: f64, dz: f64, smoothing: usize) -> Result<SurfaceMesh> {
    let layers = (dz.round() as usize).max(1);
    let vol = volume::build_volume(slices, z0, dz, layers).ok_or(Error::NoForeground)?;
    let mut mesh = tetra::marching_tetrahedra(&vol);
    if mesh.is_empty() {
        return Err(Error::NoForeground);
    }
    mesh.remove_duplicate_faces();
    taubin_smooth(&mut mesh, smoothing, TAUBIN_LAMBDA, TAUBIN_MU);
    Ok(mesh)
}

/// Organ surface in mask space from the stack's tissue masks.
pub fn reconstruct_surface(stack: &SectionStack, fraction: f64, smoothing: usize) -> Result<SurfaceMesh> {
    let slices: Vec<Mask> = par::map(&stack.sections, |s| downscale_mask(&s.tissue_mask, fraction))
        .into_iter()
        .collect::<Result<_>>()?;
    let zs = z_spacing_px(&stack.metadata, fraction);
    surface_from_slices(&slices, 0.0, zs, smoothing)
}

/// Tumor surface in tumor space from per-section masks (empty masks allowed):
/// downscale, dilate twice, stack `TUMOR_VOXEL_DEPTH` apart.
pub fn build_tumor_mesh(tumor_masks: &[Mask], fraction: f64, smoothing: usize) -> Result<SurfaceMesh> {
    let first = tumor_masks.iter().position(|m| !m.is_empty()).ok_or(Error::NoForeground)?;
    let last = tumor_masks.iter().rposition(|m| !m.is_empty()).unwrap_or(first);
    let slices: Vec<Mask> = par::map(&tumor_masks[first..=last], |m| -> Result<Mask> {
        Ok(dilate_square(&dilate_square(&downscale_mask(m, fraction)?)))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    surface_from_slices(&slices, first as f64 * TUMOR_VOXEL_DEPTH, TUMOR_VOXEL_DEPTH, smoothing)
}

/// Parameters of the mesh stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshParams {
    pub organ_fraction: f64,
    /// `None` picks the fraction at which one section gap spans
    /// `TUMOR_VOXEL_DEPTH` pixels, so tumor space is roughly isotropic.
    pub tumor_fraction: Option<f64>,
    pub smoothing: usize,
    pub target_height: f64,
    pub rotation: AxisAngle,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams {
            organ_fraction: 0.05,
            tumor_fraction: None,
            smoothing: DEFAULT_SMOOTHING,
            target_height: 1.0,
            rotation: AxisAngle::default(),
        }
    }
}

impl MeshParams {
    pub fn tumor_fraction_for(&self, metadata: &StackMetadata) -> f64 {
        self.tumor_fraction
            .unwrap_or_else(|| (TUMOR_VOXEL_DEPTH / z_spacing_px(metadata, 1.0)).min(1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !frac_ok(self.organ_fraction) {
            return Err(Error::param("organ_fraction", "must lie in (0, 1]"));
        }
        if let Some(f) = self.tumor_fraction {
            if !frac_ok(f) {
                return Err(Error::param("tumor_fraction", "must lie in (0, 1]"));
            }
        }
        if !(self.target_height > 0.0 && self.target_height.is_finite()) {
            return Err(Error::param("target_height", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TumorModel {
    pub id: TumorId,
    pub mask_space: GeometryReport,
    pub model_space: GeometryReport,
    pub mesh: SurfaceMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub space: MaskSpace,
    pub organ_mask_space: GeometryReport,
    pub organ: NormalizedModel,
    pub tumors: Vec<TumorModel>,
}

/// Contents of `models/geometry.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFile {
    pub mask_space: MaskSpace,
    pub organ: OrganGeometry,
    pub tumors: BTreeMap<TumorId, TumorGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganGeometry {
    pub mask_space: GeometryReport,
    pub model_space: GeometryReport,
    pub mask_to_model: Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorGeometry {
    pub mask_space: GeometryReport,
    pub model_space: GeometryReport,
}

/// Organ surface, its normalization and every aligned tumor of a registered stack.
pub fn build_models(stack: &SectionStack, params: &MeshParams) -> Result<ModelSet> {
    params.validate()?;
    let dims = stack.dims().ok_or_else(|| Error::Empty("stack has no sections".into()))?;
    let space = MaskSpace::new(&stack.metadata, dims, params.organ_fraction);
    let organ_mesh = reconstruct_surface(stack, params.organ_fraction, params.smoothing)?;
    let organ_mask_space = measure_geometry(&organ_mesh)?;
    let organ = normalize_model(&organ_mesh, params.target_height, &params.rotation)?;
    log::info!(
        "organ mesh: {} vertices, {} triangles, mask-space extents {:.2?}",
        organ.report.vertex_count,
        organ.report.triangle_count,
        organ_mask_space.extents.to_array()
    );

    let tumor_fraction = params.tumor_fraction_for(&stack.metadata);
    let mut tumors = Vec::new();
    for id in stack.tumor_ids() {
        let masks: Vec<Mask> = stack
            .sections
            .iter()
            .map(|s| s.tumor_mask(id).cloned().unwrap_or_else(|| Mask::new(dims.0, dims.1)))
            .collect();
        let raw = build_tumor_mesh(&masks, tumor_fraction, params.smoothing)?;
        let mask_space = tumor_mask_report(stack, id, &space)?;
        let mesh = align_tumor_with(&raw, &mask_space, &organ.transform)?;
        let model_space = measure_geometry(&mesh)?;
        tumors.push(TumorModel {
            id,
            mask_space,
            model_space,
            mesh,
        });
    }
    Ok(ModelSet {
        space,
        organ_mask_space,
        organ,
        tumors,
    })
}

pub fn organ_mesh_path(root: &Path) -> std::path::PathBuf {
    root.join("models").join("organ.stl")
}

pub fn tumor_mesh_path(root: &Path, id: TumorId) -> std::path::PathBuf {
    root.join("models").join(format!("tumor_{id}.stl"))
}

pub fn geometry_path(root: &Path) -> std::path::PathBuf {
    root.join("models").join("geometry.json")
}

impl ModelSet {
    pub fn geometry(&self) -> GeometryFile {
        GeometryFile {
            mask_space: self.space,
            organ: OrganGeometry {
                mask_space: self.organ_mask_space,
                model_space: self.organ.report,
                mask_to_model: self.organ.transform,
            },
            tumors: self
                .tumors
                .iter()
                .map(|t| {
                    (
                        t.id,
                        TumorGeometry {
                            mask_space: t.mask_space,
                            model_space: t.model_space,
                        },
                    )
                })
                .collect(),
        }
    }
}

pub fn write_models(root: &Path, models: &ModelSet) -> Result<()> {
    write_stl(&organ_mesh_path(root), &models.organ.mesh)?;
    for t in &models.tumors {
        write_stl(&tumor_mesh_path(root, t.id), &t.mesh)?;
    }
    let path = geometry_path(root);
    let json = serde_json::to_string_pretty(&models.geometry()).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_geometry(root: &Path) -> Result<GeometryFile> {
    let path = geometry_path(root);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

#[cfg(test)]
mod tests;
