//! WebAssembly bindings for a single-page demo of three histo3d operations:
//! percentile thresholding with colormap rescaling, spring-mesh relaxation
//! of a displaced section, and the NCC score surface of block matching.
//!
//! Each operation has a plain Rust entry point (tested natively) and a thin
//! `wasm_bindgen` wrapper.

use histo3d::error::Error;
use histo3d::features::{percentile_threshold, FeatureInstance, FeatureTable};
use histo3d::geom::{Vec2, Vec3};
use histo3d::raster::GrayImage;
use histo3d::registration::{build_triangular_mesh, ncc, relax, CrossSpring, RegistrationParams, SpringSystem};
use histo3d::scene::{colormaps, Colormap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One RGBA quadruple per value. Instances below the `q`-th percentile get
/// alpha 0; the visible ones spread their `[min, max]` over the whole colormap.
pub fn threshold_colors(values: &[f64], q: f64, colormap: &str) -> Result<Vec<u8>, Error> {
    let map = colormaps()
        .into_iter()
        .find(|m| m.name == colormap)
        .ok_or_else(|| Error::Stage(format!("unknown colormap {colormap:?}")))?;
    let ranks = histo3d::features::mid_rank_percentiles(values);
    let table = FeatureTable {
        feature_name: "demo".into(),
        instances: values
            .iter()
            .zip(ranks)
            .enumerate()
            .map(|(i, (&value, percentile_rank))| FeatureInstance {
                index: i as u64,
                position: Vec3::ZERO,
                value,
                normalized: 0.0,
                percentile_rank,
                tumor_id: None,
            })
            .collect(),
        min: 0.0,
        max: 0.0,
    };
    let visible = percentile_threshold(&table, q)?;
    let (lo, hi) = visible
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), i| (a.min(i.value), b.max(i.value)));
    let mut out = vec![0u8; values.len() * 4];
    for i in visible {
        let t = if hi > lo { (i.value - lo) / (hi - lo) } else { 0.0 };
        let [r, g, b] = map.sample(t);
        let k = i.index as usize * 4;
        out[k..k + 4].copy_from_slice(&[r, g, b, 255]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = thresholdColors)]
pub fn threshold_colors_js(values: &[f64], q: f64, colormap: &str) -> Result<Vec<u8>, JsError> {
    threshold_colors(values, q, colormap).map_err(js)
}

#[wasm_bindgen(js_name = colormapNames)]
pub fn colormap_names() -> Vec<String> {
    colormaps().into_iter().map(|m| m.name).collect()
}

/// Flattened 256×RGB table of a named colormap.
#[wasm_bindgen(js_name = colormapTable)]
pub fn colormap_table(name: &str) -> Result<Vec<u8>, JsError> {
    let map: Colormap = colormaps()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| JsError::new(&format!("unknown colormap {name:?}")))?;
    Ok(map.entries.concat())
}

/// A free section mesh pulled back onto a fixed one after a rigid
/// displacement. Positions are flattened `x, y` pairs.
#[wasm_bindgen]
pub struct RelaxDemo {
    rest: Vec<f64>,
    start: Vec<f64>,
    end: Vec<f64>,
    triangles: Vec<u32>,
    trace: Vec<f64>,
    converged: bool,
}

pub const RELAX_SIZE: f64 = 256.0;
pub const RELAX_PITCH: f64 = 32.0;

impl RelaxDemo {
    pub fn run(
        offset: Vec2,
        angle_deg: f64,
        cross_stiffness: f64,
        step_size: f64,
        max_iters: usize,
    ) -> Result<RelaxDemo, Error> {
        let params = RegistrationParams {
            cross_stiffness,
            step_size,
            max_iters,
            converge_eps: 1e-3,
            ..Default::default()
        };
        let mut fixed = build_triangular_mesh(RELAX_SIZE, RELAX_SIZE, RELAX_PITCH, params.intra_stiffness)?;
        fixed.fix_all();
        let mut free = fixed.clone();
        let centre = Vec2::new(RELAX_SIZE / 2.0, RELAX_SIZE / 2.0);
        let (s, c) = angle_deg.to_radians().sin_cos();
        for v in &mut free.vertices {
            let d = v.rest - centre;
            v.current = centre + Vec2::new(c * d.x - s * d.y, s * d.x + c * d.y) + offset;
            v.fixed = false;
        }
        let locator = fixed.rest_locator();
        let cross = free
            .vertices
            .iter()
            .enumerate()
            .filter_map(|(vertex, v)| {
                let (triangle, weights) = locator.locate(v.rest)?;
                Some(CrossSpring {
                    section: 1,
                    vertex,
                    target_section: 0,
                    triangle,
                    weights,
                    stiffness: cross_stiffness,
                })
            })
            .collect();
        let flat = |pts: Vec<Vec2>| pts.iter().flat_map(|p| [p.x, p.y]).collect::<Vec<_>>();
        let rest = flat(free.rest_positions());
        let start = flat(free.current_positions());
        let triangles = free.triangles.iter().flat_map(|t| t.map(|i| i as u32)).collect();
        let mut system = SpringSystem::new(vec![fixed, free]);
        system.cross = cross;
        let r = relax(&mut system, &params)?;
        Ok(RelaxDemo {
            rest,
            start,
            end: flat(system.meshes[1].current_positions()),
            triangles,
            trace: r.energy_trace,
            converged: r.converged,
        })
    }
}

#[wasm_bindgen]
impl RelaxDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        offset_x: f64,
        offset_y: f64,
        angle_deg: f64,
        cross_stiffness: f64,
        step_size: f64,
        max_iters: usize,
    ) -> Result<RelaxDemo, JsError> {
        RelaxDemo::run(Vec2::new(offset_x, offset_y), angle_deg, cross_stiffness, step_size, max_iters).map_err(js)
    }

    pub fn rest(&self) -> Vec<f64> {
        self.rest.clone()
    }

    pub fn start(&self) -> Vec<f64> {
        self.start.clone()
    }

    pub fn end(&self) -> Vec<f64> {
        self.end.clone()
    }

    pub fn triangles(&self) -> Vec<u32> {
        self.triangles.clone()
    }

    #[wasm_bindgen(js_name = energyTrace)]
    pub fn energy_trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Largest distance between a final vertex and its rest position.
    #[wasm_bindgen(js_name = maxResidual)]
    pub fn max_residual(&self) -> f64 {
        self.end
            .chunks(2)
            .zip(self.rest.chunks(2))
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max)
    }
}

/// Seeded smooth texture: a few random plane waves plus fine noise.
pub fn demo_texture(size: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = rng.random_range(0.03..0.25);
            (angle.cos() * freq, angle.sin() * freq, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let noise: Vec<f32> = (0..size * size).map(|_| rng.random_range(-0.1..0.1)).collect();
    GrayImage::from_fn(size, size, |x, y| {
        let v: f64 = waves.iter().map(|&(kx, ky, p)| (kx * x as f64 + ky * y as f64 + p).sin()).sum();
        (v / 12.0) as f32 + noise[(y * size + x) as usize]
    })
}

/// NCC of a template from the centre of a texture against every offset of
/// a copy shifted by `(dx, dy)`. Scores are row-major over
/// `[-search, search]²`; flat windows score NaN.
#[wasm_bindgen]
pub struct NccSurface {
    search: i32,
    scores: Vec<f32>,
    best: (i32, i32),
    image: Vec<u8>,
    size: u32,
}

impl NccSurface {
    pub fn run(size: u32, shift: (i32, i32), radius: u32, search: u32, seed: u64) -> Result<NccSurface, Error> {
        let reach = radius + search + shift.0.unsigned_abs().max(shift.1.unsigned_abs());
        if 2 * reach + 1 > size {
            return Err(Error::Stage(format!("size {size} too small for radius + search + shift = {reach}")));
        }
        let source = demo_texture(size, seed);
        let target = GrayImage::from_fn(size, size, |x, y| {
            let sx = (x as i64 - shift.0 as i64).clamp(0, size as i64 - 1) as u32;
            let sy = (y as i64 - shift.1 as i64).clamp(0, size as i64 - 1) as u32;
            source.get(sx, sy)
        });
        let c = size / 2;
        let side = 2 * radius + 1;
        let template = source.crop(c - radius, c - radius, side, side);
        let s = search as i32;
        let mut scores = Vec::with_capacity(((2 * s + 1) * (2 * s + 1)) as usize);
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for oy in -s..=s {
            for ox in -s..=s {
                let x0 = (c as i32 + ox) as u32 - radius;
                let y0 = (c as i32 + oy) as u32 - radius;
                match ncc(&template, &target.crop(x0, y0, side, side))? {
                    Some(v) => {
                        if v > best.1 {
                            best = ((ox, oy), v);
                        }
                        scores.push(v as f32);
                    }
                    None => scores.push(f32::NAN),
                }
            }
        }
        let (lo, hi) = source
            .data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let image = source
            .data
            .iter()
            .map(|&v| ((v - lo) / (hi - lo).max(1e-6) * 255.0) as u8)
            .collect();
        Ok(NccSurface {
            search: s,
            scores,
            best: best.0,
            image,
            size,
        })
    }

    pub fn best_offset(&self) -> (i32, i32) {
        self.best
    }
}

#[wasm_bindgen]
impl NccSurface {
    #[wasm_bindgen(constructor)]
    pub fn new(size: u32, dx: i32, dy: i32, radius: u32, search: u32, seed: u64) -> Result<NccSurface, JsError> {
        NccSurface::run(size, (dx, dy), radius, search, seed).map_err(js)
    }

    pub fn scores(&self) -> Vec<f32> {
        self.scores.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn side(&self) -> u32 {
        (2 * self.search + 1) as u32
    }

    #[wasm_bindgen(getter, js_name = bestX)]
    pub fn best_x(&self) -> i32 {
        self.best.0
    }

    #[wasm_bindgen(getter, js_name = bestY)]
    pub fn best_y(&self) -> i32 {
        self.best.1
    }

    /// The source texture as 8-bit gray, `size × size`.
    pub fn image(&self) -> Vec<u8> {
        self.image.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> u32 {
        self.size
    }
}
