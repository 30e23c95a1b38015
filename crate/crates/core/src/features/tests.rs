use super::*;
use crate::raster::Mask;
use image::Rgb;

const STROMA: Rgb<u8> = Rgb([236, 170, 205]);
const NUCLEUS: Rgb<u8> = Rgb([72, 48, 140]);

fn section(index: usize, tissue: Mask, image: Option<RgbImage>) -> Section {
    Section {
        index,
        image,
        tissue_mask: tissue,
        tumor_masks: Vec::new(),
    }
}

fn record(index: u64, value: f64) -> PatchRecord {
    PatchRecord {
        patch: Patch {
            index,
            section: 0,
            row: 0,
            col: index as u32,
            x0: index as u32 * 10,
            y0: 0,
            size: 10,
        },
        tumor_id: None,
        values: vec![value],
    }
}

fn meta() -> crate::stack_io::StackMetadata {
    crate::stack_io::StackMetadata {
        pixel_size_um: 0.46,
        section_spacing_um: 50.0,
        section_thickness_um: 4.0,
        n_sections: 2,
        downscale_fraction: 0.1,
    }
}

fn space() -> MaskSpace {
    MaskSpace {
        scale_x: 1.0,
        scale_y: 1.0,
        z_spacing: 1.0,
    }
}

fn table(values: &[f64]) -> FeatureTable {
    let records: Vec<_> = values.iter().enumerate().map(|(i, &v)| record(i as u64, v)).collect();
    normalize_and_index("f", 0, &records, &space(), &Similarity::IDENTITY).unwrap()
}

#[test]
fn names_are_unique_and_complete() {
    let names = feature_names();
    assert_eq!(names.len(), 74);
    let set: std::collections::BTreeSet<_> = names.iter().collect();
    assert_eq!(set.len(), names.len());
    let patch = RgbImage::from_pixel(40, 40, STROMA);
    assert_eq!(all_features(&patch, &FeatureParams::default()).unwrap().len(), 74);
}

#[test]
fn full_tissue_tiles_the_whole_grid() {
    let s = section(0, Mask::filled(1200, 800), None);
    let (grid, patches) = tile_patches(&s, 400, 0.25).unwrap();
    assert_eq!((grid.cols, grid.rows), (3, 2));
    assert_eq!(patches.len(), 6);
    let indices: Vec<u64> = patches.iter().map(|p| p.index).collect();
    assert_eq!(indices, (0..6).collect::<Vec<_>>());
}

#[test]
fn background_yields_nothing() {
    let s = section(0, Mask::new(500, 500), None);
    assert!(tile_patches(&s, 100, 0.0).unwrap().1.is_empty());
}

#[test]
fn tissue_fraction_matches_brute_force() {
    let tissue = Mask::from_fn(300, 200, |x, y| (x as f64 - 140.0).hypot(y as f64 - 90.0) < 85.0);
    let s = section(3, tissue.clone(), None);
    let (grid, patches) = tile_patches(&s, 30, 0.5).unwrap();
    let mut expected = 0;
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let mut n = 0;
            for y in row * 30..row * 30 + 30 {
                for x in col * 30..col * 30 + 30 {
                    n += tissue.get(x, y) as usize;
                }
            }
            if n * 2 >= 900 {
                expected += 1;
            }
        }
    }
    assert_eq!(patches.len(), expected);
    for p in &patches {
        assert_eq!(grid.locate(p.index), (3, p.row, p.col));
    }
}

#[test]
fn oversized_patch_is_rejected() {
    let s = section(0, Mask::filled(50, 80), None);
    assert!(tile_patches(&s, 60, 0.1).is_err());
}

#[test]
fn two_values_normalize_to_the_ends() {
    let t = table(&[1.0, 3.0]);
    let n: Vec<f64> = t.instances.iter().map(|i| i.normalized).collect();
    let p: Vec<f64> = t.instances.iter().map(|i| i.percentile_rank).collect();
    assert_eq!(n, vec![0.0, 1.0]);
    assert_eq!(p, vec![25.0, 75.0]);
    assert_eq!((t.min, t.max), (1.0, 3.0));
}

#[test]
fn constant_feature_sits_mid_range() {
    let t = table(&[4.0; 7]);
    for i in &t.instances {
        assert_eq!(i.normalized, 0.0);
        assert_eq!(i.percentile_rank, 50.0);
    }
}

#[test]
fn ties_share_their_mean_rank() {
    assert_eq!(mid_rank_percentiles(&[2.0, 1.0, 2.0, 5.0]), vec![50.0, 12.5, 50.0, 87.5]);
}

#[test]
fn threshold_keeps_the_top_fifth() {
    let values: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
    let t = table(&values);
    assert_eq!(percentile_threshold(&t, 80.0).unwrap().len(), 200);
    assert_eq!(percentile_threshold(&t, 0.0).unwrap().len(), 1000);
    assert!(percentile_threshold(&t, 100.5).is_err());
    assert!(percentile_threshold(&t, -1.0).is_err());
}

#[test]
fn thresholds_nest() {
    let values: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64).collect();
    let t = table(&values);
    let mut prev = percentile_threshold(&t, 0.0).unwrap();
    for q in [10.0, 33.3, 50.0, 77.0, 99.0] {
        let cur = percentile_threshold(&t, q).unwrap();
        assert!(cur.iter().all(|i| prev.iter().any(|p| p.index == i.index)));
        prev = cur;
    }
}

#[test]
fn empty_table_is_an_error() {
    assert!(normalize_and_index("f", 0, &[], &space(), &Similarity::IDENTITY).is_err());
}

#[test]
fn positions_use_patch_centres() {
    let r = record(2, 1.0);
    let s = Similarity {
        scale: 2.0,
        translation: Vec3::new(1.0, 0.0, -1.0),
        ..Similarity::IDENTITY
    };
    let ms = MaskSpace {
        scale_x: 0.1,
        scale_y: 0.1,
        z_spacing: 5.0,
    };
    let t = normalize_and_index("f", 0, &[r], &ms, &s).unwrap();
    // centre (24.5, 4.5) of section 0
    let expected = s.apply(ms.point(24.5, 4.5, 0.0));
    assert_eq!(t.instances[0].position, expected);
}

#[test]
fn csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = table(&[0.5, 2.25, -1.0]);
    t.instances[1].tumor_id = Some(4);
    let path = table_path(dir.path(), "f");
    write_table(&path, &t).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("index,x,y,z,value,normalized,percentile,tumor_id\n"));
    assert!(!text.contains('\r'));
    let back = read_table(&path).unwrap();
    assert_eq!(back, t);
}

#[test]
fn counts_a_dozen_nuclei() {
    let centres: Vec<(f64, f64)> = (0..12).map(|i| (25.0 + 40.0 * (i % 4) as f64, 25.0 + 45.0 * (i / 4) as f64)).collect();
    // radius 8 disks cover about 200 px
    let img = RgbImage::from_fn(170, 150, |x, y| {
        if centres.iter().any(|&(cx, cy)| (x as f64 - cx).hypot(y as f64 - cy) <= 8.0) {
            NUCLEUS
        } else {
            STROMA
        }
    });
    let v = feature_vector(&img, FeatureKind::Nuclei, &FeatureParams::default()).unwrap();
    assert_eq!(v[0], 12.0);
    assert!((v[1] - 40.0).abs() < 1e-9);
}

#[test]
fn organ_patches_report_the_tumor_under_their_centre() {
    let (w, h) = (200, 100);
    let mut s = section(0, Mask::filled(w, h), Some(RgbImage::from_pixel(w, h, STROMA)));
    // tumor 2 covers the centre of the second patch, tumor 1 only a corner of the first
    s.tumor_masks.push((2, Mask::from_fn(w, h, |x, y| (120..180).contains(&x) && (20..80).contains(&y))));
    s.tumor_masks.push((1, Mask::from_fn(w, h, |x, y| x < 10 && y < 10)));
    let stack = SectionStack {
        metadata: meta(),
        sections: vec![s],
        registered: true,
    };
    let params = FeatureParams {
        organ_patch: 100,
        ..Default::default()
    };
    let recs = compute_level(&stack, Level::Organ, &params).unwrap();
    let ids: Vec<_> = recs.iter().map(|r| r.tumor_id).collect();
    assert_eq!(ids, vec![None, Some(2)]);

    let params = FeatureParams {
        tumor_patch: 20,
        ..params
    };
    let tumor = compute_level(&stack, Level::Tumor(2), &params).unwrap();
    assert_eq!(tumor.len(), 9);
    assert!(tumor.iter().all(|r| r.tumor_id == Some(2)));
}

#[test]
fn missing_images_fail_loudly() {
    let stack = SectionStack {
        metadata: meta(),
        sections: vec![section(0, Mask::filled(64, 64), None)],
        registered: true,
    };
    let params = FeatureParams {
        organ_patch: 32,
        ..Default::default()
    };
    assert!(matches!(compute_level(&stack, Level::Organ, &params), Err(Error::Stage(_))));
}
