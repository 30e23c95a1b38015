//! Elastic co-registration of a section stack.
//!
//! Every section carries a triangular spring lattice. Block matches between
//! adjacent sections become zero-length cross springs; relaxing the whole
//! system yields one piecewise-linear transform per section, which is then
//! applied to the images and masks.

pub mod matching;
pub mod mesh;
pub mod ncc;
pub mod relax;
pub mod transform;
pub mod warp;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matching::{block_match, block_match_guided, BlockMatch, RigidGuide};
pub use mesh::{build_triangular_mesh, SpringMesh};
pub use ncc::ncc;
pub use relax::{relax, rigid_prealign, CrossSpring, Relaxation, SpringSystem};
pub use transform::{extract_transform, InvertedTriangle, PiecewiseLinearTransform};
pub use warp::{warp_gray, warp_mask, warp_rgb, Interpolation};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::par;
use crate::raster::{rgb_to_gray, GrayImage, Mask};
use crate::stack_io::{downscale_gray, downscale_mask, write_stack, Section, SectionStack};

/// Lengths are pixels at the registration scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationParams {
    pub block_radius: usize,
    pub search_radius: usize,
    pub mesh_pitch: f64,
    pub min_ncc: f64,
    pub intra_stiffness: f64,
    pub cross_stiffness: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub converge_eps: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            block_radius: 32,
            search_radius: 48,
            mesh_pitch: 64.0,
            min_ncc: 0.6,
            intra_stiffness: 1.0,
            cross_stiffness: 0.1,
            step_size: 0.1,
            max_iters: 5000,
            converge_eps: 0.05,
        }
    }
}

impl RegistrationParams {
    /// Conservative bound on `step_size · λ_max` of the system's stiffness
    /// matrix: six lattice neighbours per vertex plus cross springs in both
    /// directions and the handles they pull on.
    pub fn stability_factor(&self) -> f64 {
        self.step_size * (12.0 * self.intra_stiffness + 8.0 * self.cross_stiffness)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mesh_pitch", self.mesh_pitch),
            ("intra_stiffness", self.intra_stiffness),
            ("cross_stiffness", self.cross_stiffness),
            ("step_size", self.step_size),
            ("converge_eps", self.converge_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} must be finite and > 0")));
            }
        }
        if self.block_radius == 0 {
            return Err(Error::param("block_radius", "must be > 0"));
        }
        if self.search_radius == 0 {
            return Err(Error::param("search_radius", "must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be > 0"));
        }
        if !(self.min_ncc > 0.0 && self.min_ncc < 1.0) {
            return Err(Error::param("min_ncc", format!("{} is outside (0, 1)", self.min_ncc)));
        }
        let f = self.stability_factor();
        if f >= 2.0 {
            return Err(Error::param(
                "step_size",
                format!("step_size·(12·intra + 8·cross) = {f:.3} must stay below 2; lower step_size"),
            ));
        }
        Ok(())
    }
}

/// Matches from section `source` onto section `target`.
#[derive(Debug, Clone)]
pub struct PairMatches {
    pub source: usize,
    pub target: usize,
    pub matches: Vec<BlockMatch>,
}

/// Everything `register_stack` computes, for diagnostics and evaluation.
#[derive(Debug, Clone)]
pub struct Registration {
    pub stack: SectionStack,
    /// Per section, full-resolution map from input to registered coordinates.
    pub transforms: Vec<PiecewiseLinearTransform>,
    /// Match positions are in registration-scale pixels.
    pub matches: Vec<PairMatches>,
    pub prealign_energy: (f64, f64),
    pub relaxation: Relaxation,
}

/// Registration-scale view of one section.
struct Scaled {
    gray: GrayImage,
    mask: Mask,
}

fn scaled_section(s: &Section, fraction: f64) -> Result<Scaled> {
    let gray = match &s.image {
        Some(img) => rgb_to_gray(img),
        None => s.tissue_mask.to_gray(),
    };
    Ok(Scaled {
        gray: downscale_gray(&gray, fraction)?,
        mask: downscale_mask(&s.tissue_mask, fraction)?,
    })
}

pub fn register_stack(stack: &SectionStack, params: &RegistrationParams) -> Result<SectionStack> {
    Ok(register_stack_detailed(stack, params)?.stack)
}

/// Registers all sections onto section 0, which stays fixed.
///
/// The relaxation starts from the best rigid motion of each section under the
/// same spring energy; the explicit iteration then only has to resolve the
/// elastic remainder.
pub fn register_stack_detailed(stack: &SectionStack, params: &RegistrationParams) -> Result<Registration> {
    params.validate()?;
    if stack.sections.len() < 2 {
        return Err(Error::param("stack", "registration needs at least 2 sections"));
    }
    let (w, h) = stack.sections[0].dims();
    for s in &stack.sections {
        if s.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                section: s.index,
                detail: format!("{:?} vs section 0 {:?}", s.dims(), (w, h)),
            });
        }
    }
    let fraction = stack.metadata.downscale_fraction;
    let scaled = par::map(&stack.sections, |s| scaled_section(s, fraction))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (wr, hr) = scaled[0].gray.dims();
    let (sx, sy) = (w as f64 / wr as f64, h as f64 / hr as f64);

    // lattice spans the full-resolution pixel centres 0..w-1, 0..h-1
    let mut template = build_triangular_mesh(
        (w as f64 - 1.0) / sx,
        (h as f64 - 1.0) / sy,
        params.mesh_pitch,
        params.intra_stiffness,
    )?;
    template.translate(Vec2::new(0.5 / sx - 0.5, 0.5 / sy - 0.5));
    let locator = template.rest_locator();

    let n = stack.sections.len();
    let pairs: Vec<(usize, usize)> = (0..n - 1).flat_map(|i| [(i, i + 1), (i + 1, i)]).collect();
    // a first pass estimates each pair's rigid motion, the second pass
    // searches around it with rotated templates
    let matched = par::map(&pairs, |&(i, j)| {
        let (src, tgt) = (&scaled[i], &scaled[j]);
        let coarse = block_match(&src.gray, Some(&src.mask), &tgt.gray, &template, params)?;
        match RigidGuide::fit(&coarse) {
            Some(guide) => block_match_guided(&src.gray, Some(&src.mask), &tgt.gray, &template, params, Some(&guide)),
            None => Ok(coarse),
        }
    });
    let mut matches = Vec::with_capacity(pairs.len());
    for (&(source, target), m) in pairs.iter().zip(matched) {
        matches.push(PairMatches { source, target, matches: m? });
    }

    let mut meshes = vec![template.clone(); n];
    meshes[0].fix_all();
    let mut system = SpringSystem::new(meshes);
    for pm in &matches {
        for m in pm.matches.iter().filter(|m| m.accepted) {
            let handle = template.vertices[m.vertex].rest + m.offset();
            if let Some((triangle, weights)) = locator.locate(handle) {
                system.cross.push(CrossSpring {
                    section: pm.source,
                    vertex: m.vertex,
                    target_section: pm.target,
                    triangle,
                    weights,
                    stiffness: params.cross_stiffness,
                });
            }
        }
    }
    log::info!(
        "registration: {} sections at {}x{}, {} vertices each, {} cross springs",
        n,
        wr,
        hr,
        template.vertices.len(),
        system.cross.len()
    );
    let prealign_energy = rigid_prealign(&mut system, &[0])?;
    let relaxation = relax(&mut system, params)?;
    log::info!(
        "relaxation: energy {:.4} -> {:.4} (rigid) -> {:.4} after {} iterations",
        prealign_energy.0,
        prealign_energy.1,
        relaxation.energy_trace.last().copied().unwrap_or(0.0),
        relaxation.iterations
    );

    let transforms: Vec<PiecewiseLinearTransform> = system
        .meshes
        .iter()
        .map(|m| extract_transform(m).scaled(sx, sy))
        .collect();
    let sections = par::map_range(n, |i| warp_section(&stack.sections[i], &transforms[i]));
    Ok(Registration {
        stack: SectionStack { metadata: stack.metadata, sections, registered: true },
        transforms,
        matches,
        prealign_energy,
        relaxation,
    })
}

fn warp_section(s: &Section, t: &PiecewiseLinearTransform) -> Section {
    let tissue_mask = warp_mask(&s.tissue_mask, t);
    let tumor_masks = s
        .tumor_masks
        .iter()
        .map(|(id, m)| (*id, warp_mask(m, t).and(&tissue_mask)))
        .collect();
    Section {
        index: s.index,
        image: s.image.as_ref().map(|img| warp_rgb(img, t, Interpolation::Bilinear)),
        tissue_mask,
        tumor_masks,
    }
}

/// Writes the registered stack under `<root>/registered/` together with the
/// energy trace and one match table per section pair.
pub fn write_registration(root: &Path, reg: &Registration) -> Result<()> {
    let out = root.join("registered");
    write_stack(&out, &reg.stack)?;

    let path = out.join("energy_trace.csv");
    let mut wtr = csv_writer(&path)?;
    let csv_err = |e: csv::Error| Error::Csv { path: path.clone(), source: e };
    wtr.write_record(["iteration", "total_energy"]).map_err(csv_err)?;
    for (i, e) in reg.relaxation.energy_trace.iter().enumerate() {
        wtr.write_record([i.to_string(), e.to_string()]).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io(&path, e))?;

    for pm in &reg.matches {
        let path = out.join("matches").join(format!("{}_{}.csv", pm.source, pm.target));
        let mut wtr = csv_writer(&path)?;
        let csv_err = |e: csv::Error| Error::Csv { path: path.clone(), source: e };
        wtr.write_record(["section", "vx", "vy", "dx", "dy", "score", "accepted"]).map_err(csv_err)?;
        for m in &pm.matches {
            let d = m.offset();
            wtr.write_record([
                pm.source.to_string(),
                m.source_pos.x.to_string(),
                m.source_pos.y.to_string(),
                d.x.to_string(),
                d.y.to_string(),
                format!("{:.6}", m.score),
                u8::from(m.accepted).to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack_io::StackMetadata;
    use image::{Rgb, RgbImage};

    fn small_params() -> RegistrationParams {
        RegistrationParams { block_radius: 8, search_radius: 10, mesh_pitch: 24.0, ..Default::default() }
    }

    fn textured(w: u32, h: u32, dx: i64, dy: i64) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let (fx, fy) = ((x as i64 - dx) as f64, (y as i64 - dy) as f64);
            let v = 128.0 + 60.0 * (fx * 0.23).sin() * (fy * 0.19).cos() + 40.0 * ((fx + 2.0 * fy) * 0.07).sin();
            let v = v.clamp(0.0, 255.0) as u8;
            Rgb([v, v / 2, 255 - v])
        })
    }

    fn stack(images: Vec<RgbImage>) -> SectionStack {
        let n = images.len();
        let sections = images
            .into_iter()
            .enumerate()
            .map(|(index, img)| {
                let (w, h) = img.dimensions();
                let tissue_mask = Mask::from_fn(w, h, |x, y| x > 5 && y > 5 && x < w - 6 && y < h - 6);
                let tumor = Mask::from_fn(w, h, |x, y| (40..60).contains(&x) && (40..60).contains(&y));
                Section { index, image: Some(img), tissue_mask, tumor_masks: vec![(1, tumor)] }
            })
            .collect();
        SectionStack {
            metadata: StackMetadata {
                pixel_size_um: 4.6,
                section_spacing_um: 50.0,
                section_thickness_um: 5.0,
                n_sections: n,
                downscale_fraction: 1.0,
            },
            sections,
            registered: false,
        }
    }

    #[test]
    fn defaults_validate_and_big_step_does_not() {
        RegistrationParams::default().validate().unwrap();
        let p = RegistrationParams { step_size: 10.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = RegistrationParams { min_ncc: 1.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn identical_sections_are_untouched() {
        let img = textured(120, 110, 0, 0);
        let s = stack(vec![img.clone(), img.clone(), img]);
        let reg = register_stack_detailed(&s, &small_params()).unwrap();
        assert!(reg.stack.registered);
        for (a, b) in s.sections.iter().zip(&reg.stack.sections) {
            assert_eq!(a.tissue_mask, b.tissue_mask);
            assert_eq!(a.tumor_masks, b.tumor_masks);
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn translated_section_is_brought_back() {
        let a = textured(140, 130, 0, 0);
        let b = textured(140, 130, 4, -3);
        let s = stack(vec![a.clone(), b]);
        let reg = register_stack_detailed(&s, &small_params()).unwrap();
        let ga = rgb_to_gray(&a);
        let gb = rgb_to_gray(reg.stack.sections[1].image.as_ref().unwrap());
        // compare away from the border strip the shift exposes
        let inner = |g: &GrayImage| g.crop(15, 15, 110, 100);
        let score = ncc(&inner(&ga), &inner(&gb)).unwrap().unwrap();
        assert!(score > 0.95, "ncc {score}");
        let t = &reg.transforms[1];
        let q = t.map(Vec2::new(70.0, 60.0)).unwrap();
        assert!((q - Vec2::new(66.0, 63.0)).norm() < 0.5, "{q:?}");
    }

    #[test]
    fn registration_is_deterministic() {
        let s = stack(vec![textured(100, 100, 0, 0), textured(100, 100, 2, 1), textured(100, 100, -1, 3)]);
        let a = register_stack(&s, &small_params()).unwrap();
        let b = register_stack(&s, &small_params()).unwrap();
        for (x, y) in a.sections.iter().zip(&b.sections) {
            assert_eq!(x.tissue_mask, y.tissue_mask);
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn single_section_is_rejected() {
        let s = stack(vec![textured(60, 60, 0, 0)]);
        assert!(register_stack(&s, &small_params()).is_err());
    }

    #[test]
    fn outputs_are_written() {
        let img = textured(80, 80, 0, 0);
        let s = stack(vec![img.clone(), img]);
        let reg = register_stack_detailed(&s, &small_params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_registration(dir.path(), &reg).unwrap();
        let out = dir.path().join("registered");
        assert!(out.join("energy_trace.csv").is_file());
        assert!(out.join("matches/0_1.csv").is_file());
        assert!(out.join("matches/1_0.csv").is_file());
        assert!(out.join("masks/tissue/0001.png").is_file());
        let text = std::fs::read_to_string(out.join("matches/0_1.csv")).unwrap();
        assert!(text.starts_with("section,vx,vy,dx,dy,score,accepted\n"));
    }
}
