use super::*;
use crate::stack_io::Section;
use std::f64::consts::PI;

fn metadata(pixel: f64, spacing: f64, n: usize) -> StackMetadata {
    StackMetadata {
        pixel_size_um: pixel,
        section_spacing_um: spacing,
        section_thickness_um: 1.0,
        n_sections: n,
        downscale_fraction: 1.0,
    }
}

fn stack_of(masks: Vec<Mask>, spacing: f64) -> SectionStack {
    let n = masks.len();
    SectionStack {
        metadata: metadata(1.0, spacing, n),
        sections: masks
            .into_iter()
            .enumerate()
            .map(|(index, tissue_mask)| Section {
                index,
                image: None,
                tissue_mask,
                tumor_masks: Vec::new(),
            })
            .collect(),
        registered: true,
    }
}

fn disk(w: u32, h: u32, cx: f64, cy: f64, r: f64) -> Mask {
    Mask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r)
}

fn cube() -> SurfaceMesh {
    let vertices = (0..8)
        .map(|c| Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64))
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let triangles = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    SurfaceMesh { vertices, triangles }
}

fn assert_closed(mesh: &SurfaceMesh) {
    let t = mesh.topology();
    assert!(t.is_valid(), "{t:?}");
    assert!(mesh.signed_volume() > 0.0);
}

#[test]
fn cube_fixture_is_closed() {
    let c = cube();
    assert_closed(&c);
    assert!((c.signed_volume() - 1.0).abs() < 1e-12);
    assert_eq!(c.euler_characteristic(), 2);
}

#[test]
fn single_voxel_is_a_sphere_topologically() {
    let mut m = Mask::new(5, 5);
    m.set(2, 2, true);
    let mesh = reconstruct_surface(&stack_of(vec![m], 1.0), 1.0, 0).unwrap();
    assert_closed(&mesh);
    assert_eq!(mesh.euler_characteristic(), 2);
}

#[test]
fn empty_stack_has_no_foreground() {
    let s = stack_of(vec![Mask::new(6, 6), Mask::new(6, 6)], 1.0);
    assert!(matches!(reconstruct_surface(&s, 1.0, 0), Err(Error::NoForeground)));
}

#[test]
fn cylinder_volume_and_extents() {
    let (r, n, dz) = (12.0, 20, 2.0);
    let masks = (0..n).map(|_| disk(40, 40, 20.0, 20.0, r)).collect();
    let mesh = reconstruct_surface(&stack_of(masks, dz), 1.0, DEFAULT_SMOOTHING).unwrap();
    assert_closed(&mesh);
    let h = n as f64 * dz;
    let analytic = PI * r * r * h;
    let v = mesh.signed_volume();
    assert!((v / analytic - 1.0).abs() < 0.1, "volume {v} vs {analytic}");
    let g = measure_geometry(&mesh).unwrap();
    // one voxel pitch: 1 px in x/y, one layer in z
    assert!((g.extents.x - 2.0 * r).abs() <= 1.0 + 0.5, "{:?}", g.extents);
    assert!((g.extents.y - 2.0 * r).abs() <= 1.0 + 0.5, "{:?}", g.extents);
    assert!((g.extents.z - h).abs() <= dz, "{:?}", g.extents);
}

#[test]
fn sphere_from_circle_slices() {
    let r = 40.0;
    let masks = (-40..=40)
        .map(|z: i32| {
            let rz = (r * r - (z * z) as f64).max(0.0).sqrt();
            disk(90, 90, 45.0, 45.0, rz)
        })
        .collect();
    let mesh = reconstruct_surface(&stack_of(masks, 1.0), 1.0, DEFAULT_SMOOTHING).unwrap();
    assert_closed(&mesh);
    let analytic = 4.0 / 3.0 * PI * r.powi(3);
    assert!((mesh.signed_volume() / analytic - 1.0).abs() < 0.1);
    let center = Vec3::new(45.0, 45.0, 40.0);
    for &p in &mesh.vertices {
        let d = (p - center).norm();
        assert!((d / r - 1.0).abs() < 0.15, "vertex radius {d}");
    }
}

#[test]
fn point_cloud_borders_and_caps() {
    let sq = Mask::from_fn(7, 7, |x, y| (2..5).contains(&x) && (2..5).contains(&y));
    let s = stack_of(vec![sq.clone(), sq.clone(), sq.clone()], 2.0);
    let cloud = extract_point_cloud(&s, 1.0).unwrap();
    let at = |z: f64| cloud.points.iter().filter(|p| p.z == z).count();
    assert_eq!((at(0.0), at(2.0), at(4.0)), (9, 8, 9));

    let s = stack_of(vec![sq.clone(), Mask::new(7, 7), sq], 2.0);
    assert_eq!(extract_point_cloud(&s, 1.0).unwrap().points.iter().filter(|p| p.z == 2.0).count(), 0);

    let full = Mask::filled(6, 4);
    let s = stack_of(vec![full.clone(), full.clone(), full], 1.0);
    let cloud = extract_point_cloud(&s, 1.0).unwrap();
    assert_eq!(cloud.points.iter().filter(|p| p.z == 1.0).count(), 2 * 6 + 2 * 2);
    for p in &cloud.points {
        assert_eq!(p.z, p.z.round());
    }
}

#[test]
fn measure_cube_and_translated_cube() {
    let g = measure_geometry(&cube()).unwrap();
    assert_eq!(g.extents, Vec3::new(1.0, 1.0, 1.0));
    assert_eq!(g.center, Vec3::new(0.5, 0.5, 0.5));
    let moved = cube().map_vertices(|p| p + Vec3::new(3.0, -2.0, 1.0));
    let g = measure_geometry(&moved).unwrap();
    assert_eq!(g.extents, Vec3::new(1.0, 1.0, 1.0));
    assert_eq!(g.center, Vec3::new(3.5, -1.5, 1.5));
    assert!(measure_geometry(&SurfaceMesh::default()).is_err());
}

#[test]
fn normalize_scales_to_target_height() {
    let tall = cube().map_vertices(|p| Vec3::new(p.x * 4.0, p.y * 3.0, p.z * 29.0));
    let n = normalize_model(&tall, 1.0, &AxisAngle::default()).unwrap();
    assert!((n.transform.scale - 1.0 / 29.0).abs() < 1e-15);
    assert!((n.report.extents.z - 1.0).abs() <= 1e-6);
    assert!(n.report.center.norm() < 1e-12);

    let again = normalize_model(&n.mesh, 1.0, &AxisAngle::default()).unwrap();
    for (a, b) in again.mesh.vertices.iter().zip(&n.mesh.vertices) {
        assert!((*a - *b).norm() <= 1e-9);
    }
}

#[test]
fn normalize_rotation_swaps_extents() {
    let bx = cube().map_vertices(|p| Vec3::new(p.x * 2.0, p.y * 5.0, p.z));
    let rot = AxisAngle {
        axis: Vec3::new(0.0, 0.0, 1.0),
        angle_deg: 90.0,
    };
    let n = normalize_model(&bx, 1.0, &rot).unwrap();
    assert!((n.report.extents.x - 5.0).abs() < 1e-9);
    assert!((n.report.extents.y - 2.0).abs() < 1e-9);

    // any rotation still lands exactly on the target height
    let tilt = AxisAngle {
        axis: Vec3::new(1.0, 1.0, 0.0),
        angle_deg: 37.0,
    };
    let n = normalize_model(&bx, 2.5, &tilt).unwrap();
    assert!((n.report.extents.z / 2.5 - 1.0).abs() <= 1e-6);

    let flat = cube().map_vertices(|p| Vec3::new(p.x, p.y, 0.0));
    assert!(normalize_model(&flat, 1.0, &AxisAngle::default()).is_err());
}

#[test]
fn one_pixel_tumor_dilates_to_five_by_five() {
    let mut m = Mask::new(9, 9);
    m.set(4, 4, true);
    let mesh = build_tumor_mesh(&[m], 1.0, 0).unwrap();
    assert_closed(&mesh);
    let g = measure_geometry(&mesh).unwrap();
    assert_eq!((g.extents.x, g.extents.y), (5.0, 5.0));
}

#[test]
fn spherical_tumor_is_genus_zero() {
    let masks: Vec<Mask> = (0..9)
        .map(|k| {
            let z = (k as f64 - 4.0) * 2.0;
            let r = (81.0 - z * z).max(0.0).sqrt();
            disk(30, 30, 15.0, 15.0, r)
        })
        .collect();
    let mesh = build_tumor_mesh(&masks, 1.0, DEFAULT_SMOOTHING).unwrap();
    assert_closed(&mesh);
    assert_eq!(mesh.euler_characteristic(), 2);
    assert_eq!(mesh.components(), 1);
}

#[test]
fn disjoint_blobs_stay_separate() {
    let m = Mask::from_fn(40, 20, |x, y| {
        (x as f64 - 8.0).hypot(y as f64 - 10.0) <= 4.0 || (x as f64 - 30.0).hypot(y as f64 - 10.0) <= 4.0
    });
    let mesh = build_tumor_mesh(&[m.clone(), m], 1.0, DEFAULT_SMOOTHING).unwrap();
    assert_closed(&mesh);
    assert_eq!(mesh.components(), 2);
    assert_eq!(mesh.euler_characteristic(), 4);
    assert!(matches!(build_tumor_mesh(&[Mask::new(4, 4)], 1.0, 0), Err(Error::NoForeground)));
}

fn organ_reports() -> (GeometryReport, GeometryReport) {
    let mask = GeometryReport::from_bounds(Vec3::new(2.0, 3.0, 0.0), Vec3::new(42.0, 33.0, 29.0));
    let model = GeometryReport::from_bounds(Vec3::new(-20.0 / 29.0, -15.0 / 29.0, -0.5), Vec3::new(20.0 / 29.0, 15.0 / 29.0, 0.5));
    (mask, model)
}

#[test]
fn tumor_filling_organ_box_maps_onto_model_box() {
    let (mask, model) = organ_reports();
    let tumor = cube().map_vertices(|p| Vec3::new(p.x * 7.0, p.y * 7.0 * 30.0 / 40.0, p.z * 7.0 * 29.0 / 40.0));
    let out = align_tumor(&tumor, &mask, &mask, &model).unwrap();
    let g = measure_geometry(&out).unwrap();
    assert!((g.bbox_min - model.bbox_min).norm() < 1e-9);
    assert!((g.bbox_max - model.bbox_max).norm() < 1e-9);
}

#[test]
fn twice_too_large_tumor_is_halved() {
    let (mask, model) = organ_reports();
    let s0 = GeometryReport::from_bounds(Vec3::new(10.0, 10.0, 5.0), Vec3::new(14.0, 16.0, 13.0));
    let sim = Similarity::from_reports(&mask, &model).unwrap();
    let want = s0.extents * sim.scale;
    let tumor = cube().map_vertices(|p| Vec3::new(p.x * want.x * 2.0, p.y * want.y * 2.0, p.z * want.z * 2.0) + Vec3::new(5.0, 1.0, 2.0));
    let out = align_tumor(&tumor, &s0, &mask, &model).unwrap();
    let g = measure_geometry(&out).unwrap();
    assert!((g.extents - want).norm() < 1e-12);
    assert!((g.center - sim.apply(s0.center)).norm() < 1e-12);
    assert!(anisotropy(want, want * 2.0) < 1e-12);
    assert!(anisotropy(want, Vec3::new(want.x, want.y * 1.1, want.z)) > ANISOTROPY_WARN);
}

#[test]
fn alignment_commutes_with_organ_rescale() {
    let (mask, model) = organ_reports();
    let s0 = GeometryReport::from_bounds(Vec3::new(10.0, 12.0, 5.0), Vec3::new(14.0, 16.0, 13.0));
    let tumor = cube().map_vertices(|p| p * 3.0);
    let base = measure_geometry(&align_tumor(&tumor, &s0, &mask, &model).unwrap()).unwrap();
    let c = 2.75;
    let big = GeometryReport::from_bounds(model.bbox_min * c, model.bbox_max * c);
    let scaled = measure_geometry(&align_tumor(&tumor, &s0, &mask, &big).unwrap()).unwrap();
    for (a, b) in [(scaled.center, base.center * c), (scaled.extents, base.extents * c)] {
        assert!((a - b).norm() <= 1e-9 * b.norm());
    }
}

#[test]
fn tumor_report_uses_pixel_edges() {
    let mut s = stack_of(vec![Mask::filled(20, 20); 4], 2.0);
    s.sections[1].tumor_masks.push((3, Mask::from_fn(20, 20, |x, y| x == 4 && (6..=9).contains(&y))));
    s.sections[2].tumor_masks.push((3, Mask::from_fn(20, 20, |x, y| x == 7 && y == 6)));
    let space = MaskSpace::new(&s.metadata, (20, 20), 1.0);
    let r = tumor_mask_report(&s, 3, &space).unwrap();
    assert_eq!(r.bbox_min, Vec3::new(3.5, 5.5, 2.0));
    assert_eq!(r.bbox_max, Vec3::new(7.5, 9.5, 4.0));
    assert!(matches!(tumor_mask_report(&s, 9, &space), Err(Error::TumorAbsent(9))));
}

#[test]
fn stl_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.stl");
    write_stl(&p, &cube()).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(bytes.len(), 84 + 50 * 12);
    let soup = read_stl(&p).unwrap();
    assert_eq!(soup.len(), 12);
    let c = cube();
    for (t, (_, tri)) in c.triangles.iter().zip(&soup) {
        for k in 0..3 {
            let v = c.vertices[t[k] as usize];
            assert_eq!(tri[k], [v.x as f32, v.y as f32, v.z as f32]);
        }
    }
}

#[test]
fn smoothing_keeps_connectivity() {
    let masks = (0..6).map(|_| disk(20, 20, 10.0, 10.0, 5.0)).collect();
    let rough = reconstruct_surface(&stack_of(masks, 1.0), 1.0, 0).unwrap();
    let mut smooth = rough.clone();
    taubin_smooth(&mut smooth, 10, TAUBIN_LAMBDA, TAUBIN_MU);
    assert_eq!(smooth.triangles, rough.triangles);
    assert_closed(&smooth);
    // λ/µ pairs keep the volume close
    assert!((smooth.signed_volume() / rough.signed_volume() - 1.0).abs() < 0.05);
}
