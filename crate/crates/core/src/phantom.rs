//! Seeded synthetic section stacks with known ground truth.
//!
//! The phantom is a textured ellipsoidal organ with ellipsoidal tumors. Each
//! observed section shows the world through its own map
//! `W_k(p) = R_k (p + e_k(p) − c) + c + t_k`: a rigid jitter about the image
//! centre `c` after a smooth elastic field `e_k`. Coordinates are full-resolution
//! pixels in x/y; ellipsoid z values are in section-index units.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::geom::Vec2;
use crate::par;
use crate::raster::Mask;
use crate::registration::PiecewiseLinearTransform;
use crate::stack_io::{write_stack, z_spacing_px, Section, SectionStack, StackMetadata, TumorId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    /// x, y in pixels; z in sections.
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    /// `Σ ((p − c) / r)²` with `z` in sections.
    fn level(&self, x: f64, y: f64, z: f64) -> f64 {
        let dx = (x - self.center[0]) / self.radii[0];
        let dy = (y - self.center[1]) / self.radii[1];
        let dz = (z - self.center[2]) / self.radii[2];
        dx * dx + dy * dy + dz * dz
    }

    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        self.level(x, y, z) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomTumor {
    pub id: TumorId,
    pub shape: Ellipsoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: u32,
    pub height: u32,
    pub n_sections: usize,
    pub pixel_size_um: f64,
    pub section_spacing_um: f64,
    pub section_thickness_um: f64,
    pub downscale_fraction: f64,
    pub organ: Ellipsoid,
    pub tumors: Vec<PhantomTumor>,
    pub max_translation_px: f64,
    pub max_rotation_deg: f64,
    pub max_elastic_px: f64,
    pub elastic_wavelength_px: f64,
    pub landmarks_per_section: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            width: 1000,
            height: 1000,
            n_sections: 30,
            pixel_size_um: 4.6,
            section_spacing_um: 50.0,
            section_thickness_um: 5.0,
            downscale_fraction: 1.0,
            organ: Ellipsoid { center: [500.0, 500.0, 14.5], radii: [390.0, 330.0, 40.0] },
            tumors: vec![
                PhantomTumor { id: 1, shape: Ellipsoid { center: [380.0, 420.0, 12.0], radii: [90.0, 70.0, 5.0] } },
                PhantomTumor { id: 2, shape: Ellipsoid { center: [640.0, 600.0, 17.0], radii: [60.0, 80.0, 4.0] } },
            ],
            max_translation_px: 10.0,
            max_rotation_deg: 5.0,
            max_elastic_px: 5.0,
            elastic_wavelength_px: 700.0,
            landmarks_per_section: 20,
        }
    }
}

impl PhantomSpec {
    pub fn metadata(&self) -> StackMetadata {
        StackMetadata {
            pixel_size_um: self.pixel_size_um,
            section_spacing_um: self.section_spacing_um,
            section_thickness_um: self.section_thickness_um,
            n_sections: self.n_sections,
            downscale_fraction: self.downscale_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.metadata().validate()?;
        if self.width < 16 || self.height < 16 {
            return Err(Error::param("width", "phantom needs at least 16×16 pixels"));
        }
        for (name, v) in [
            ("max_translation_px", self.max_translation_px),
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_elastic_px", self.max_elastic_px),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be finite and >= 0"));
            }
        }
        if !(self.elastic_wavelength_px > 0.0) {
            return Err(Error::param("elastic_wavelength_px", "must be > 0"));
        }
        let shapes = std::iter::once(&self.organ).chain(self.tumors.iter().map(|t| &t.shape));
        for e in shapes {
            if !e.radii.iter().all(|&r| r > 0.0 && r.is_finite()) {
                return Err(Error::param("radii", "ellipsoid radii must be > 0"));
            }
        }
        for (i, a) in self.tumors.iter().enumerate() {
            for b in &self.tumors[i + 1..] {
                if a.id == b.id {
                    return Err(Error::param("tumors", format!("duplicate tumor id {}", a.id)));
                }
                if ellipsoids_overlap(&a.shape, &b.shape) {
                    return Err(Error::OverlappingTumors(a.id, b.id));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PhantomSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    /// Feature parameters rescaled to the phantom's coarser pixels. The
    /// defaults assume 0.46 µm; patch sides keep their physical size (at
    /// least 16 px) and nucleus areas match the phantom's small blobs.
    pub fn feature_params(&self) -> FeatureParams {
        let defaults = FeatureParams::default();
        let k = 0.46 / self.pixel_size_um;
        let side = |px: u32| ((px as f64 * k).round() as u32).max(16);
        FeatureParams {
            organ_patch: side(defaults.organ_patch),
            tumor_patch: side(defaults.tumor_patch),
            nucleus_min_area: 4,
            nucleus_max_area: 80,
            ..defaults
        }
    }
}

/// Sampled test: any grid point of one ellipsoid's bounding box inside both.
fn ellipsoids_overlap(a: &Ellipsoid, b: &Ellipsoid) -> bool {
    const N: usize = 24;
    let (small, other) = if a.radii.iter().product::<f64>() <= b.radii.iter().product::<f64>() {
        (a, b)
    } else {
        (b, a)
    };
    let coord = |axis: usize, i: usize| {
        small.center[axis] - small.radii[axis] + 2.0 * small.radii[axis] * i as f64 / (N - 1) as f64
    };
    for i in 0..N {
        for j in 0..N {
            for k in 0..N {
                let (x, y, z) = (coord(0, i), coord(1, j), coord(2, k));
                if small.contains(x, y, z) && other.contains(x, y, z) {
                    return true;
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: [f64; 2],
    pub frequency: [f64; 2],
    pub phase: f64,
}

/// Observed-to-world map of one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionTruth {
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub center: [f64; 2],
    pub elastic: Vec<Wave>,
}

impl SectionTruth {
    fn elastic_at(&self, p: Vec2) -> Vec2 {
        let mut e = Vec2::ZERO;
        for w in &self.elastic {
            let s = (w.frequency[0] * p.x + w.frequency[1] * p.y + w.phase).sin();
            e += Vec2::new(w.amplitude[0], w.amplitude[1]) * s;
        }
        e
    }

    /// World position shown at observed pixel `p`.
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        let c = Vec2::new(self.center[0], self.center[1]);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let d = p + self.elastic_at(p) - c;
        c + Vec2::new(cos * d.x - sin * d.y, sin * d.x + cos * d.y) + Vec2::new(self.translation[0], self.translation[1])
    }

    /// Observed pixel showing world position `w`.
    pub fn to_observed(&self, w: Vec2) -> Vec2 {
        let c = Vec2::new(self.center[0], self.center[1]);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let d = w - c - Vec2::new(self.translation[0], self.translation[1]);
        let u = c + Vec2::new(cos * d.x + sin * d.y, -sin * d.x + cos * d.y);
        // p + e(p) = u; the elastic field is a contraction for smooth waves
        let mut p = u;
        for _ in 0..100 {
            let next = u - self.elastic_at(p);
            let done = (next - p).norm() < 1e-12;
            p = next;
            if done {
                break;
            }
        }
        p
    }
}

/// A world point planted inside the tissue of one section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub section: usize,
    pub world: [f64; 2],
    /// Where section `section` shows it.
    pub observed: [f64; 2],
    /// Where section 0 would show it: the target of registration.
    pub reference: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub seed: u64,
    pub spec: PhantomSpec,
    pub sections: Vec<SectionTruth>,
    pub landmarks: Vec<Landmark>,
}

impl PhantomTruth {
    /// Registration error of every landmark outside section 0, given the
    /// per-section input-to-registered transforms.
    pub fn landmark_errors(&self, transforms: &[PiecewiseLinearTransform]) -> Vec<f64> {
        self.landmarks
            .iter()
            .filter(|l| l.section > 0)
            .map(|l| {
                let obs = Vec2::new(l.observed[0], l.observed[1]);
                let reference = Vec2::new(l.reference[0], l.reference[1]);
                match transforms[l.section].map(obs) {
                    Some(q) => (q - reference).norm(),
                    None => f64::INFINITY,
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
        crate::stack_io::write_text(path, &text)
    }
}

pub struct Phantom {
    pub stack: SectionStack,
    pub truth: PhantomTruth,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn hash3(seed: u64, i: i64, j: i64, k: i64) -> u64 {
    splitmix(seed ^ splitmix((i as u64).wrapping_mul(0x1F1F_1F1F) ^ splitmix((j as u64) ^ splitmix(k as u64))))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise with smoothstep weights; cell sizes per axis.
fn value_noise(seed: u64, x: f64, y: f64, z: f64, cell: [f64; 3]) -> f64 {
    let (fx, fy, fz) = (x / cell[0], y / cell[1], z / cell[2]);
    let (ix, iy, iz) = (fx.floor(), fy.floor(), fz.floor());
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty, tz) = (s(fx - ix), s(fy - iy), s(fz - iz));
    let (ix, iy, iz) = (ix as i64, iy as i64, iz as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = if dx == 1 { tx } else { 1.0 - tx }
                    * if dy == 1 { ty } else { 1.0 - ty }
                    * if dz == 1 { tz } else { 1.0 - tz };
                acc += w * unit(hash3(seed, ix + dx, iy + dy, iz + dz));
            }
        }
    }
    acc
}

const NUCLEUS_CELL: f64 = 11.0;
const NUCLEUS_CELL_Z: f64 = 30.0;
const GLAND_CELL: f64 = 48.0;
const GLAND_CELL_Z: f64 = 120.0;

/// World-space nucleus label raster for one section plane, offset by `margin`.
struct NucleusLayer {
    margin: i64,
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl NucleusLayer {
    fn render(seed: u64, spec: &PhantomSpec, z_px: f64, zs: f64, margin: i64) -> Self {
        let width = spec.width as usize + 2 * margin as usize;
        let height = spec.height as usize + 2 * margin as usize;
        let mut data = vec![0u8; width * height];
        let nseed = splitmix(seed ^ 0xA5A5);
        let x_cells = (-margin as f64 / NUCLEUS_CELL).floor() as i64..=((spec.width as i64 + margin) as f64 / NUCLEUS_CELL).ceil() as i64;
        let zc = (z_px / NUCLEUS_CELL_Z).floor() as i64;
        for k in zc - 1..=zc + 1 {
            for j in (-margin as f64 / NUCLEUS_CELL).floor() as i64..=((spec.height as i64 + margin) as f64 / NUCLEUS_CELL).ceil() as i64 {
                for i in x_cells.clone() {
                    let h = hash3(nseed, i, j, k);
                    let cx = (i as f64 + unit(splitmix(h ^ 1))) * NUCLEUS_CELL;
                    let cy = (j as f64 + unit(splitmix(h ^ 2))) * NUCLEUS_CELL;
                    let cz = (k as f64 + unit(splitmix(h ^ 3))) * NUCLEUS_CELL_Z;
                    let zsec = cz / zs;
                    let in_tumor = spec.tumors.iter().any(|t| t.shape.contains(cx, cy, zsec));
                    let (p, r, rz) = if in_tumor { (0.95, 2.5, 30.0) } else { (0.55, 1.8, 24.0) };
                    if unit(splitmix(h ^ 4)) >= p {
                        continue;
                    }
                    let dz = (z_px - cz) / rz;
                    if dz.abs() >= 1.0 {
                        continue;
                    }
                    let rr = r * (1.0 - dz * dz).sqrt();
                    let (x0, x1) = ((cx - rr).floor() as i64, (cx + rr).ceil() as i64);
                    let (y0, y1) = ((cy - rr).floor() as i64, (cy + rr).ceil() as i64);
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            let (gx, gy) = (x + margin, y + margin);
                            if gx < 0 || gy < 0 || gx >= width as i64 || gy >= height as i64 {
                                continue;
                            }
                            let (ddx, ddy) = (x as f64 - cx, y as f64 - cy);
                            if ddx * ddx + ddy * ddy <= rr * rr {
                                data[gy as usize * width + gx as usize] = 1;
                            }
                        }
                    }
                }
            }
        }
        // gland lumens: large elongated cavities, label 2, drawn over nuclei
        let gseed = splitmix(seed ^ 0x61A2D);
        let gz = (z_px / GLAND_CELL_Z).floor() as i64;
        let gx0 = (-margin as f64 / GLAND_CELL).floor() as i64;
        let gx1 = ((spec.width as i64 + margin) as f64 / GLAND_CELL).ceil() as i64;
        let gy1 = ((spec.height as i64 + margin) as f64 / GLAND_CELL).ceil() as i64;
        for k in gz - 1..=gz + 1 {
            for j in gx0..=gy1 {
                for i in gx0..=gx1 {
                    let h = hash3(gseed, i, j, k);
                    if unit(splitmix(h ^ 9)) >= 0.7 {
                        continue;
                    }
                    let cx = (i as f64 + 0.2 + 0.6 * unit(splitmix(h ^ 1))) * GLAND_CELL;
                    let cy = (j as f64 + 0.2 + 0.6 * unit(splitmix(h ^ 2))) * GLAND_CELL;
                    let cz = (k as f64 + unit(splitmix(h ^ 3))) * GLAND_CELL_Z;
                    let r = 6.0 + 8.0 * unit(splitmix(h ^ 4));
                    let ar = 0.6 + 0.8 * unit(splitmix(h ^ 5));
                    let (rx, ry, rz) = (r * ar.sqrt(), r / ar.sqrt(), 90.0);
                    let dz = (z_px - cz) / rz;
                    if dz.abs() >= 1.0 {
                        continue;
                    }
                    let f = (1.0 - dz * dz).sqrt();
                    let (rx, ry) = (rx * f, ry * f);
                    for y in (cy - ry).floor() as i64..=(cy + ry).ceil() as i64 {
                        for x in (cx - rx).floor() as i64..=(cx + rx).ceil() as i64 {
                            let (gx, gy) = (x + margin, y + margin);
                            if gx < 0 || gy < 0 || gx >= width as i64 || gy >= height as i64 {
                                continue;
                            }
                            let (ddx, ddy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                            if ddx * ddx + ddy * ddy <= 1.0 {
                                data[gy as usize * width + gx as usize] = 2;
                            }
                        }
                    }
                }
            }
        }
        NucleusLayer { margin, width, height, data }
    }

    /// 0 stroma, 1 nucleus, 2 lumen.
    fn get(&self, w: Vec2) -> u8 {
        let x = w.x.round() as i64 + self.margin;
        let y = w.y.round() as i64 + self.margin;
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.data[y as usize * self.width + x as usize]
        } else {
            0
        }
    }
}

fn random_truth(rng: &mut ChaCha8Rng, spec: &PhantomSpec) -> SectionTruth {
    let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let rotation_deg = sym(spec.max_rotation_deg);
    let t = loop {
        let t = [sym(spec.max_translation_px), sym(spec.max_translation_px)];
        if t[0].hypot(t[1]) <= spec.max_translation_px {
            break t;
        }
    };
    let mut elastic = Vec::new();
    if spec.max_elastic_px > 0.0 {
        // three waves whose amplitudes sum to at most max_elastic_px
        let shares: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = shares.iter().sum();
        for share in shares {
            let amp = spec.max_elastic_px * share / total;
            let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let fdir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let lambda = spec.elastic_wavelength_px * rng.random_range(0.8..1.25);
            let k = std::f64::consts::TAU / lambda;
            elastic.push(Wave {
                amplitude: [amp * dir.cos(), amp * dir.sin()],
                frequency: [k * fdir.cos(), k * fdir.sin()],
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            });
        }
    }
    SectionTruth {
        rotation_deg,
        translation: t,
        center: [(spec.width as f64 - 1.0) / 2.0, (spec.height as f64 - 1.0) / 2.0],
        elastic,
    }
}

fn render_section(seed: u64, spec: &PhantomSpec, k: usize, truth: &SectionTruth, zs: f64) -> Section {
    let z_px = k as f64 * zs;
    let zsec = k as f64;
    let nuclei = NucleusLayer::render(seed, spec, z_px, zs, 64);
    let tseed = splitmix(seed ^ 0x5EED);
    let (w, h) = (spec.width, spec.height);
    let mut image = RgbImage::new(w, h);
    let mut tissue = Mask::new(w, h);
    let mut tumors: Vec<(TumorId, Mask)> = spec.tumors.iter().map(|t| (t.id, Mask::new(w, h))).collect();
    for y in 0..h {
        for x in 0..w {
            let world = truth.to_world(Vec2::new(x as f64, y as f64));
            if !spec.organ.contains(world.x, world.y, zsec) {
                image.put_pixel(x, y, Rgb([246, 244, 247]));
                continue;
            }
            tissue.set(x, y, true);
            let mut in_tumor = false;
            for ((_, m), t) in tumors.iter_mut().zip(&spec.tumors) {
                if t.shape.contains(world.x, world.y, zsec) {
                    m.set(x, y, true);
                    in_tumor = true;
                }
            }
            let n = 0.8 * value_noise(tseed, world.x, world.y, z_px, [30.0, 30.0, 120.0])
                + 0.2 * value_noise(tseed ^ 7, world.x, world.y, z_px, [12.0, 12.0, 60.0]);
            let rgb = match nuclei.get(world) {
                1 => [70.0 + 40.0 * n, 45.0 + 30.0 * n, 135.0 + 40.0 * n],
                2 => [245.0 - 20.0 * n, 215.0 - 30.0 * n, 235.0 - 20.0 * n],
                _ => [240.0 - 70.0 * n, 175.0 - 100.0 * n, 210.0 - 60.0 * n],
            };
            let dim = if in_tumor { 0.82 } else { 1.0 };
            image.put_pixel(x, y, Rgb(rgb.map(|c| (c * dim).round().clamp(0.0, 255.0) as u8)));
        }
    }
    Section { index: k, image: Some(image), tissue_mask: tissue, tumor_masks: tumors }
}

/// Generates a phantom stack and its ground truth; identical seeds give
/// identical output.
pub fn generate(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let meta = spec.metadata();
    let zs = z_spacing_px(&meta, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truths: Vec<SectionTruth> = (0..spec.n_sections).map(|_| random_truth(&mut rng, spec)).collect();
    let sections = par::map_range(spec.n_sections, |k| render_section(seed, spec, k, &truths[k], zs));

    // landmarks: world points that sit in tissue on their section, away from the image border
    let margin = 0.1 * spec.width.min(spec.height) as f64;
    let mut landmarks = Vec::new();
    for (k, truth) in truths.iter().enumerate() {
        let e = &spec.organ;
        let dz = (k as f64 - e.center[2]) / e.radii[2];
        if dz.abs() >= 1.0 {
            continue;
        }
        let shrink = 0.85 * (1.0 - dz * dz).sqrt();
        let mut placed = 0;
        let mut attempts = 0;
        while placed < spec.landmarks_per_section && attempts < 100 * spec.landmarks_per_section.max(1) {
            attempts += 1;
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.random_range(0.0f64..1.0).sqrt() * shrink;
            let world = Vec2::new(e.center[0] + r * e.radii[0] * a.cos(), e.center[1] + r * e.radii[1] * a.sin());
            let obs = truth.to_observed(world);
            let reference = truths[0].to_observed(world);
            let inside = |p: Vec2| {
                p.x >= margin && p.y >= margin && p.x <= spec.width as f64 - 1.0 - margin && p.y <= spec.height as f64 - 1.0 - margin
            };
            if !inside(obs) || !inside(reference) {
                continue;
            }
            landmarks.push(Landmark {
                section: k,
                world: [world.x, world.y],
                observed: [obs.x, obs.y],
                reference: [reference.x, reference.y],
            });
            placed += 1;
        }
    }
    Ok(Phantom {
        stack: SectionStack { metadata: meta, sections, registered: false },
        truth: PhantomTruth { seed, spec: spec.clone(), sections: truths, landmarks },
    })
}

/// Writes the stack layout plus `ground_truth.json` under `out`.
pub fn write_phantom(out: &Path, phantom: &Phantom) -> Result<()> {
    write_stack(out, &phantom.stack)?;
    phantom.truth.save(&out.join("ground_truth.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            width: 160,
            height: 140,
            n_sections: 4,
            organ: Ellipsoid { center: [80.0, 70.0, 1.5], radii: [60.0, 50.0, 3.0] },
            tumors: vec![PhantomTumor { id: 3, shape: Ellipsoid { center: [70.0, 60.0, 1.0], radii: [15.0, 12.0, 1.5] } }],
            landmarks_per_section: 5,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn same_seed_same_phantom() {
        let a = generate(&small(), 11).unwrap();
        let b = generate(&small(), 11).unwrap();
        assert_eq!(a.truth, b.truth);
        for (x, y) in a.stack.sections.iter().zip(&b.stack.sections) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.tissue_mask, y.tissue_mask);
        }
        let c = generate(&small(), 12).unwrap();
        assert_ne!(a.truth.sections, c.truth.sections);
    }

    #[test]
    fn observed_and_world_maps_invert() {
        let p = generate(&small(), 5).unwrap();
        for t in &p.truth.sections {
            let q = Vec2::new(33.0, 97.5);
            assert!((t.to_observed(t.to_world(q)) - q).norm() < 1e-9);
        }
        for l in &p.truth.landmarks {
            let t = &p.truth.sections[l.section];
            let w = t.to_world(Vec2::new(l.observed[0], l.observed[1]));
            assert!((w - Vec2::new(l.world[0], l.world[1])).norm() < 1e-9);
        }
    }

    #[test]
    fn jitter_respects_bounds() {
        let spec = PhantomSpec { n_sections: 40, ..small() };
        let p = generate(&spec, 3).unwrap();
        for t in &p.truth.sections {
            assert!(t.rotation_deg.abs() <= 5.0);
            assert!(t.translation[0].hypot(t.translation[1]) <= 10.0);
            let amp: f64 = t.elastic.iter().map(|w| w.amplitude[0].hypot(w.amplitude[1])).sum();
            assert!(amp <= 5.0 + 1e-9);
        }
    }

    #[test]
    fn tumor_masks_lie_in_tissue() {
        let p = generate(&small(), 9).unwrap();
        let mut any = false;
        for s in &p.stack.sections {
            for (_, m) in &s.tumor_masks {
                assert_eq!(m.and(&s.tissue_mask), *m);
                any |= !m.is_empty();
            }
        }
        assert!(any);
    }

    #[test]
    fn overlapping_tumors_are_rejected() {
        let mut spec = small();
        spec.tumors.push(PhantomTumor { id: 4, shape: Ellipsoid { center: [75.0, 62.0, 1.0], radii: [10.0, 10.0, 1.0] } });
        assert!(matches!(generate(&spec, 1), Err(Error::OverlappingTumors(3, 4))));
    }

    #[test]
    fn unknown_spec_keys_are_rejected() {
        assert!(serde_json::from_str::<PhantomSpec>(r#"{"widht": 10}"#).is_err());
        let spec: PhantomSpec = serde_json::from_str(r#"{"n_sections": 5}"#).unwrap();
        assert_eq!(spec.n_sections, 5);
        assert_eq!(spec.width, 1000);
    }
}
