use hifigaze::harness::{
    brightness_split, build_report, centroid_baseline, error_metrics, loocv_eval, read_features, spatial_heatmap,
    write_features, write_plots, EvalConfig, FeatureRow, HarnessError, ReportSet, GRID_COLS, GRID_ROWS, PLOT_FILES,
    PX_PER_CM,
};
use hifigaze::reflection::{HEATMAP_H, HEATMAP_W, THUMB_H, THUMB_W};
use hifigaze::regressor::{FeatureBundle, TrainConfig, VariantSpec, CROP_H, CROP_W};
use hifigaze::simulator::BrightnessClass;
use hifigaze::{FloatPlane, ImageBuffer};

fn row(participant: usize, frame: usize, gaze: (f64, f64), dark: bool, masked: bool) -> FeatureRow {
    let mut b = FeatureBundle::new([0.3, 0.45, 0.7, 0.45]);
    b.eye_crops = Some([ImageBuffer::new(CROP_W, CROP_H, 1), ImageBuffer::new(CROP_W, CROP_H, 1)]);
    b.thumbnail = Some(ImageBuffer::from_fn(THUMB_W, THUMB_H, |x, y| ((x * 5 + y) % 256) as u8));
    b.heatmaps = Some([FloatPlane::zeros(HEATMAP_W, HEATMAP_H), FloatPlane::zeros(HEATMAP_W, HEATMAP_H)]);
    let v = (gaze.0 / 1290.0 - 0.5, 0.5 - gaze.1 / 2796.0);
    b.set_vector(0, Some(v));
    b.set_vector(1, (!masked).then_some(v));
    FeatureRow {
        participant,
        session: 0,
        frame,
        path_id: 0,
        gaze_px: gaze,
        brightness_class: if dark { BrightnessClass::Dark } else { BrightnessClass::Bright },
        occluded_fraction: 0.1,
        peak_scores: [0.9, if masked { 0.1 } else { 0.9 }],
        degraded: false,
        bundle: b,
    }
}

fn corpus(participants: usize, per: usize) -> Vec<FeatureRow> {
    let mut rows = Vec::new();
    for p in 0..participants {
        for i in 0..per {
            let g = (470.0 + 350.0 * ((i * 7 + p) % per) as f64 / per as f64, 1043.0 + 710.0 * (i % 5) as f64 / 4.0);
            rows.push(row(p, i, g, i % 4 == 0, i % 6 == 0 && i % 4 != 0 || i % 8 == 0));
        }
    }
    rows
}

fn quick() -> EvalConfig {
    EvalConfig {
        train: TrainConfig {
            epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn centroid_baseline_matches_direct_distance() {
    let rows = corpus(3, 30);
    let preds = centroid_baseline(&rows).unwrap();
    for (r, p) in rows.iter().zip(&preds) {
        let others: Vec<_> = rows.iter().filter(|o| o.participant != r.participant).collect();
        let cx = others.iter().map(|o| o.gaze_px.0).sum::<f64>() / others.len() as f64;
        let cy = others.iter().map(|o| o.gaze_px.1).sum::<f64>() / others.len() as f64;
        assert!((p.0 - cx).abs() < 1e-9 && (p.1 - cy).abs() < 1e-9);
    }
    let truths: Vec<_> = rows.iter().map(|r| r.gaze_px).collect();
    let m = error_metrics(&preds, &truths).unwrap();
    let direct = rows
        .iter()
        .zip(&preds)
        .map(|(r, p)| (r.gaze_px.0 - p.0).hypot(r.gaze_px.1 - p.1))
        .sum::<f64>()
        / rows.len() as f64;
    assert!((m.mean_px - direct).abs() < 1e-9);
}

#[test]
fn centroid_of_two_points() {
    // each participant is predicted at the other's single point
    let rows = vec![row(0, 0, (500.0, 1100.0), false, false), row(1, 0, (800.0, 1500.0), true, false)];
    let preds = centroid_baseline(&rows).unwrap();
    assert_eq!(preds, vec![(800.0, 1500.0), (500.0, 1100.0)]);
}

#[test]
fn two_participants_two_folds_without_test_participant() {
    // constant features: a well-trained model outputs the training mean,
    // which is the other participant's gaze only if the fold excluded p
    let mut rows = Vec::new();
    for i in 0..40 {
        rows.push(row(0, i, (500.0, 1100.0), false, false));
        rows.push(row(1, i, (800.0, 1700.0), false, false));
    }
    let cfg = EvalConfig {
        train: TrainConfig {
            epochs: 300,
            lr: 1e-2,
            batch_size: 16,
            seed: 1,
            ..TrainConfig::default()
        },
    };
    let ev = loocv_eval(&rows, VariantSpec::BOUNDS, &cfg).unwrap();
    assert_eq!(ev.participants, vec![0, 1]);
    assert_eq!(ev.histories.len(), 2);
    for (&i, p) in ev.rows.iter().zip(&ev.preds) {
        let other = if rows[i].participant == 0 { (800.0, 1700.0) } else { (500.0, 1100.0) };
        assert!((p.0 - other.0).hypot(p.1 - other.1) < 15.0, "{p:?} vs {other:?}");
    }
}

#[test]
fn one_participant_is_rejected() {
    let rows = corpus(1, 10);
    assert!(matches!(
        loocv_eval(&rows, VariantSpec::BOUNDS, &quick()),
        Err(HarnessError::TooFewParticipants(1))
    ));
}

#[test]
fn vector_variant_accounting() {
    let rows = corpus(3, 24);
    let masked = rows.iter().filter(|r| !r.bundle.both_vectors_present()).count();
    assert!(masked > 0);
    let rv: VariantSpec = "eb+rv".parse().unwrap();
    let ev = loocv_eval(&rows, rv, &quick()).unwrap();
    assert_eq!(ev.rows.len() + ev.masked_rows, rows.len());
    assert_eq!(ev.masked_rows, masked);
    assert!(ev.rows.iter().all(|&i| rows[i].bundle.both_vectors_present()));
    let eb = loocv_eval(&rows, VariantSpec::BOUNDS, &quick()).unwrap();
    assert_eq!((eb.rows.len(), eb.masked_rows), (rows.len(), 0));
}

#[test]
fn bright_only_split_is_missing_dark() {
    let rows: Vec<_> = (0..10).map(|i| row(i % 2, i, (600.0, 1200.0), false, false)).collect();
    let refs: Vec<&FeatureRow> = rows.iter().collect();
    let preds = vec![(600.0, 1200.0); rows.len()];
    assert!(matches!(brightness_split(&refs, &preds), Err(HarnessError::MissingClass("dark"))));
}

#[test]
fn brightness_split_counts_and_masked_rates() {
    let rows = corpus(2, 48);
    let refs: Vec<&FeatureRow> = rows.iter().collect();
    let preds = vec![(600.0, 1300.0); rows.len()];
    let s = brightness_split(&refs, &preds).unwrap();
    assert_eq!(s.bright.n + s.dark.n, rows.len());
    // every 8th frame is masked and dark; a third of the other masked ones
    assert!(s.masked_rate_dark > s.masked_rate_bright);
}

#[test]
fn spatial_grid_orders_rows_top_to_bottom() {
    let mut gaze = Vec::new();
    let mut errs = Vec::new();
    for i in 0..GRID_ROWS {
        for j in 0..GRID_COLS {
            gaze.push((470.0 + 350.0 * j as f64 / 8.0, 1043.0 + 710.0 * i as f64 / 4.0));
            errs.push(10.0 * (i + 1) as f64);
        }
    }
    let g = spatial_heatmap(&gaze, &errs);
    assert_eq!(g.populated(), GRID_COLS * GRID_ROWS);
    assert_eq!(g.row_mean(0), Some(10.0));
    assert_eq!(g.row_mean(GRID_ROWS - 1), Some(50.0));
}

fn report_of(rows: &[FeatureRow], variants: &[&str]) -> ReportSet {
    let cfg = quick();
    let evals: Vec<_> = variants
        .iter()
        .map(|v| loocv_eval(rows, v.parse().unwrap(), &cfg).unwrap())
        .collect();
    build_report(rows, "top", &evals, &cfg.train).unwrap()
}

#[test]
fn report_zscores_and_units() {
    let rows = corpus(3, 24);
    let r = report_of(&rows, &["eb", "eb+rv", "eb+th"]);
    assert_eq!(r.schema, "hifigaze-report-1");
    for p in 0..3 {
        let zs: Vec<f64> = r
            .variants
            .iter()
            .map(|v| v.participants.iter().find(|e| e.participant == p).unwrap().z.unwrap())
            .collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / zs.len() as f64).sqrt();
        assert!(mean.abs() < 1e-9, "{zs:?}");
        assert!((sd - 1.0).abs() < 1e-9, "{zs:?}");
    }
    for v in &r.variants {
        let m = &v.pooled;
        assert!((m.mean_cm * PX_PER_CM - m.mean_px).abs() <= 1e-9 * m.mean_px);
        assert!((m.median_cm * PX_PER_CM - m.median_px).abs() <= 1e-9 * m.median_px);
        assert_eq!(v.evaluated_rows + v.masked_rows, v.total_rows);
        for p in &v.participants {
            assert!((p.mean_cm * PX_PER_CM - p.mean_px).abs() <= 1e-9 * p.mean_px);
        }
    }
    let back: ReportSet = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back.to_json(), r.to_json());
}

#[test]
fn single_variant_has_no_zscores() {
    let r = report_of(&corpus(2, 12), &["eb"]);
    assert!(r.variants[0].participants.iter().all(|p| p.z.is_none()));
}

#[test]
fn plots_one_svg_per_section() {
    let r = report_of(&corpus(2, 24), &["eb", "eb+rv"]);
    let dir = tempfile::tempdir().unwrap();
    let paths = write_plots(&r, dir.path()).unwrap();
    assert_eq!(paths.len(), PLOT_FILES.len());
    for (p, name) in paths.iter().zip(PLOT_FILES) {
        let text = std::fs::read_to_string(p).unwrap();
        assert!(p.ends_with(name));
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        assert!(text.contains("eb+rv"));
    }
}

#[test]
fn features_round_trip() {
    let rows = corpus(2, 6);
    let dir = tempfile::tempdir().unwrap();
    write_features(&rows, dir.path()).unwrap();
    let back = read_features(dir.path()).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.bundle.vector_mask, b.bundle.vector_mask);
        assert_eq!(a.bundle.eye_bounds, b.bundle.eye_bounds);
        assert_eq!(a.bundle.thumbnail, b.bundle.thumbnail);
        assert_eq!(a.gaze_px, b.gaze_px);
        assert_eq!(a.brightness_class, b.brightness_class);
    }
}
