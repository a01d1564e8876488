use hifigaze::iris::{locate_iris, InitialIrisEstimate};
use hifigaze::simulator::{render_eye, SceneConfig};
use hifigaze::ImageBuffer;

fn screen() -> ImageBuffer {
    // light page with dark text bands
    ImageBuffer::from_fn(1290, 2796, |x, y| if (y / 90) % 3 == 1 && (x / 40) % 5 != 4 { 60 } else { 235 })
}

fn render(cfg: &SceneConfig, gaze: (f64, f64)) -> (ImageBuffer, hifigaze::IrisCircle) {
    let (img, truth) = render_eye(cfg, gaze, &screen(), 3);
    (img, truth.iris)
}

fn estimate(iris: &hifigaze::IrisCircle, offset: (f64, f64)) -> InitialIrisEstimate {
    InitialIrisEstimate::new((iris.cx + offset.0, iris.cy + offset.1), 2.0 * iris.radius, 2.0 * iris.radius).unwrap()
}

#[test]
fn offset_estimate_is_corrected() {
    let cfg = SceneConfig::default();
    for gaze in [(0.5, 0.5), (0.3, 0.4), (0.7, 0.6)] {
        let (img, truth) = render(&cfg, gaze);
        let fit = locate_iris(&img, &estimate(&truth, (5.0, -4.0))).unwrap();
        assert!(!fit.degraded);
        let err = (fit.circle.cx - truth.cx).hypot(fit.circle.cy - truth.cy);
        assert!(err <= 1.0, "gaze {gaze:?}: center error {err:.3}");
        assert!((fit.circle.radius - truth.radius).abs() <= 1.0);
    }
}

#[test]
fn quarter_eyelid_occlusion() {
    let cfg = SceneConfig {
        eyelid_occlusion: 0.25,
        ..SceneConfig::default()
    };
    assert!((cfg.lid_coverage((0.5, 0.5)) - 0.25).abs() < 1e-12);
    let (img, truth) = render(&cfg, (0.5, 0.5));
    let fit = locate_iris(&img, &estimate(&truth, (3.0, 2.0))).unwrap();
    let err = (fit.circle.cx - truth.cx).hypot(fit.circle.cy - truth.cy);
    assert!(err <= 1.5, "center error {err:.3}");
}

#[test]
fn mirrored_crop_mirrors_center() {
    let cfg = SceneConfig {
        eyelid_occlusion: 0.1,
        ..SceneConfig::default()
    };
    let (img, truth) = render(&cfg, (0.4, 0.55));
    let est = estimate(&truth, (4.0, -3.0));
    let w = img.width() as f64;
    let flipped_est = InitialIrisEstimate::new((w - 1.0 - est.center.0, est.center.1), est.width, est.height).unwrap();
    let a = locate_iris(&img, &est).unwrap().circle;
    let b = locate_iris(&img.flip_horizontal(), &flipped_est).unwrap().circle;
    assert!((b.cx - (w - 1.0 - a.cx)).abs() <= 0.5, "{} vs {}", b.cx, w - 1.0 - a.cx);
    assert!((b.cy - a.cy).abs() <= 0.5);
}

#[test]
fn black_crop_falls_back_to_estimate() {
    let img = ImageBuffer::new(500, 250, 3);
    let est = InitialIrisEstimate::new((250.0, 125.0), 100.0, 96.0).unwrap();
    let fit = locate_iris(&img, &est).unwrap();
    assert!(fit.degraded);
    assert_eq!(fit.circle, est.as_circle());
}
