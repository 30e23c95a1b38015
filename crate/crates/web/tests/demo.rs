use histo3d::features::{mid_rank_percentiles, percentile_threshold, FeatureInstance, FeatureTable};
use histo3d::geom::{Vec2, Vec3};
use histo3d_web::{threshold_colors, NccSurface, RelaxDemo};

fn visible(rgba: &[u8]) -> Vec<usize> {
    rgba.chunks(4).enumerate().filter(|(_, c)| c[3] == 255).map(|(i, _)| i).collect()
}

#[test]
fn threshold_matches_the_library() {
    let values: Vec<f64> = (0..500).map(|i| ((i * 7919) % 613) as f64 / 7.0).collect();
    let ranks = mid_rank_percentiles(&values);
    let table = FeatureTable {
        feature_name: "x".into(),
        instances: values
            .iter()
            .zip(&ranks)
            .enumerate()
            .map(|(i, (&value, &percentile_rank))| FeatureInstance {
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
    for q in [0.0, 50.0, 80.0, 95.0] {
        let expected: Vec<usize> = percentile_threshold(&table, q).unwrap().iter().map(|i| i.index as usize).collect();
        assert_eq!(visible(&threshold_colors(&values, q, "viridis").unwrap()), expected);
    }
    assert!(threshold_colors(&values, 101.0, "viridis").is_err());
    assert!(threshold_colors(&values, 50.0, "jet").is_err());
}

#[test]
fn visible_range_spans_the_colormap() {
    let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let rgba = threshold_colors(&values, 80.0, "gray").unwrap();
    let vis = visible(&rgba);
    assert_eq!(vis.len(), 20);
    assert_eq!(rgba[vis[0] * 4], 0);
    assert_eq!(rgba[vis[19] * 4], 255);
}

#[test]
fn displaced_section_relaxes_home() {
    let d = RelaxDemo::run(Vec2::new(12.0, -7.0), 4.0, 0.5, 0.1, 20000).unwrap();
    assert!(d.converged());
    let trace = d.energy_trace();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    assert!(d.max_residual() < 0.05, "{}", d.max_residual());
}

#[test]
fn oversized_step_diverges() {
    assert!(RelaxDemo::run(Vec2::new(5.0, 0.0), 3.0, 1.0, 10.0, 5000).is_err());
}

#[test]
fn ncc_peak_sits_on_the_planted_shift() {
    let s = NccSurface::run(128, (6, -3), 12, 10, 1).unwrap();
    assert_eq!(s.best_offset(), (6, -3));
    let scores = s.scores();
    assert_eq!(scores.len(), 21 * 21);
    assert!((scores[(-3 + 10) as usize * 21 + (6 + 10) as usize] - 1.0).abs() < 1e-6);
    assert!(NccSurface::run(40, (6, -3), 12, 10, 1).is_err());
}

