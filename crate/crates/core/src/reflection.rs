//! Screen-reflection localisation by multi-scale normalized
//! cross-correlation of a blurred screen thumbnail over the inner iris.

use thiserror::Error;

use crate::imaging::{blur_resize, crop, resize, to_gray, FloatPlane, ImageBuffer, Rect};
use crate::iris::IrisCircle;

pub const THUMB_W: usize = 50;
pub const THUMB_H: usize = 101;
pub const HEATMAP_W: usize = 40;
pub const HEATMAP_H: usize = 55;
pub const DEFAULT_BLUR_SIGMA: f64 = 8.0;
pub const PRESENCE_THRESHOLD: f64 = 0.35;
/// Thumbnail variance (on a `[0, 1]` intensity scale) below which a screen
/// is treated as uniform.
pub const MIN_THUMB_VARIANCE: f64 = 1e-3;
pub const SCALE_STEPS: usize = 7;
pub const SEARCH_W_FRAC: f64 = 0.4;
pub const SEARCH_H_FRAC: f64 = 0.55;
pub const BASE_SCALE_FRAC: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReflectionError {
    #[error("screen {width}x{height} is smaller than the {THUMB_W}x{THUMB_H} thumbnail")]
    ScreenTooSmall { width: usize, height: usize },
    #[error("template {tw}x{th} does not fit region {rw}x{rh}")]
    TemplateTooLarge {
        tw: usize,
        th: usize,
        rw: usize,
        rh: usize,
    },
    #[error("expected a 1-channel image")]
    NotGray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenThumbnail {
    pub image: ImageBuffer,
    pub source_dims: (usize, usize),
    pub mean_luma: f64,
}

impl ScreenThumbnail {
    /// Intensity variance on a `[0, 1]` scale.
    pub fn variance(&self) -> f64 {
        let n = self.image.data().len() as f64;
        let m = self.mean_luma / 255.0;
        self.image
            .data()
            .iter()
            .map(|&v| (v as f64 / 255.0 - m).powi(2))
            .sum::<f64>()
            / n
    }

    pub fn to_plane(&self) -> FloatPlane {
        FloatPlane::from_gray(&self.image)
    }
}

/// Blurred, downscaled luminance of the displayed screen.
pub fn make_thumbnail(screen: &ImageBuffer, blur_sigma: f64) -> Result<ScreenThumbnail, ReflectionError> {
    if screen.width() < THUMB_W || screen.height() < THUMB_H {
        return Err(ReflectionError::ScreenTooSmall {
            width: screen.width(),
            height: screen.height(),
        });
    }
    let image = blur_resize(&to_gray(screen), blur_sigma, THUMB_W, THUMB_H);
    let mean_luma = image.mean();
    Ok(ScreenThumbnail {
        image,
        source_dims: (screen.width(), screen.height()),
        mean_luma,
    })
}

/// Rectangle of `w x h` pixels whose center (pixel-index convention) is
/// nearest to `(cx, cy)`.
pub fn centered_rect(cx: f64, cy: f64, w: u32, h: u32) -> Rect {
    Rect::new(
        (cx - (w as f64 - 1.0) / 2.0).round() as i32,
        (cy - (h as f64 - 1.0) / 2.0).round() as i32,
        w,
        h,
    )
}

pub fn search_rect(iris: &IrisCircle) -> Rect {
    let d = iris.diameter();
    let w = ((SEARCH_W_FRAC * d).round() as u32).max(1);
    let h = ((SEARCH_H_FRAC * d).round() as u32).max(1);
    centered_rect(iris.cx, iris.cy, w, h)
}

/// Inner-iris search window (zero-filled outside the image) and its origin
/// in eye-image coordinates.
pub fn crop_search_region(eye_img: &ImageBuffer, iris: &IrisCircle) -> (ImageBuffer, (i32, i32)) {
    let r = search_rect(iris);
    (crop(eye_img, r), (r.x, r.y))
}

// Summed-area tables of values and squares, (w+1) x (h+1), exact in u64.
struct Integral {
    stride: usize,
    sum: Vec<u64>,
    sq: Vec<u64>,
}

impl Integral {
    fn new(img: &ImageBuffer) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sq = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let (mut rs, mut rq) = (0u64, 0u64);
            for x in 0..w {
                let v = img.data()[y * w + x] as u64;
                rs += v;
                rq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + rs;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + rq;
            }
        }
        Self { stride, sum, sq }
    }

    fn window(&self, t: &[u64], x: usize, y: usize, w: usize, h: usize) -> u64 {
        let s = self.stride;
        t[(y + h) * s + x + w] + t[y * s + x] - t[y * s + x + w] - t[(y + h) * s + x]
    }
}

/// Zero-normalized cross-correlation at every placement of `template`
/// fully inside `region`. Placements where either side has zero variance
/// score 0.
pub fn ncc_heatmap(region: &ImageBuffer, template: &ImageBuffer) -> Result<FloatPlane, ReflectionError> {
    if region.channels() != 1 || template.channels() != 1 {
        return Err(ReflectionError::NotGray);
    }
    let (rw, rh, tw, th) = (region.width(), region.height(), template.width(), template.height());
    if tw > rw || th > rh {
        return Err(ReflectionError::TemplateTooLarge { tw, th, rw, rh });
    }
    let n = (tw * th) as u64;
    let t = template.data();
    let t_sum: u64 = t.iter().map(|&v| v as u64).sum();
    let t_sq: u64 = t.iter().map(|&v| (v as u64) * (v as u64)).sum();
    // n^2 * var(template); exact integer.
    let t_var = (n * t_sq - t_sum * t_sum) as f64;
    let (ow, oh) = (rw - tw + 1, rh - th + 1);
    let mut out = FloatPlane::zeros(ow, oh);
    if t_var == 0.0 {
        return Ok(out);
    }
    let integral = Integral::new(region);
    let r = region.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let r_sum = integral.window(&integral.sum, ox, oy, tw, th);
            let r_sq = integral.window(&integral.sq, ox, oy, tw, th);
            let r_var = (n * r_sq - r_sum * r_sum) as f64;
            if r_var == 0.0 {
                continue;
            }
            let mut cross = 0u64;
            for ty in 0..th {
                let rrow = &r[(oy + ty) * rw + ox..(oy + ty) * rw + ox + tw];
                let trow = &t[ty * tw..ty * tw + tw];
                cross += rrow
                    .iter()
                    .zip(trow)
                    .map(|(&a, &b)| a as u32 * b as u32)
                    .sum::<u32>() as u64;
            }
            let num = n as f64 * cross as f64 - t_sum as f64 * r_sum as f64;
            let v = (num / (t_var * r_var).sqrt()).clamp(-1.0, 1.0);
            out.set(ox, oy, v as f32);
        }
    }
    Ok(out)
}

/// Template dimensions for scale step `i` of an iris.
pub fn template_dims(iris: &IrisCircle, step: usize) -> (usize, usize) {
    let w0 = ((BASE_SCALE_FRAC * iris.diameter()).round() as usize).max(1);
    let w = w0 + step;
    let h = ((w as f64 * THUMB_H as f64 / THUMB_W as f64).round() as usize).max(1);
    (w, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Winning heatmap resized to `HEATMAP_W x HEATMAP_H`.
    pub heatmap: FloatPlane,
    /// Winning heatmap at its native size.
    pub raw_heatmap: FloatPlane,
    pub peak_score: f64,
    pub reflection_box: Rect,
    pub template_scale: (usize, usize),
    pub scale_index: usize,
    pub present: bool,
    pub templates_evaluated: usize,
}

/// Correlates the thumbnail at seven widths `w0..=w0+6` over the inner iris
/// and keeps the scale with the strongest single peak.
pub fn multiscale_match(eye_img: &ImageBuffer, iris: &IrisCircle, thumb: &ScreenThumbnail) -> MatchResult {
    let gray = to_gray(eye_img);
    let (region, origin) = crop_search_region(&gray, iris);
    let mut best: Option<(usize, FloatPlane, (usize, usize, f32), (usize, usize))> = None;
    let mut evaluated = 0;
    for step in 0..SCALE_STEPS {
        let (tw, th) = template_dims(iris, step);
        let template = resize(&thumb.image, tw, th);
        let Ok(hm) = ncc_heatmap(&region, &template) else {
            continue;
        };
        evaluated += 1;
        let peak = hm.argmax();
        if best.as_ref().is_none_or(|b| peak.2 > b.2 .2) {
            best = Some((step, hm, peak, (tw, th)));
        }
    }
    let uniform = thumb.variance() < MIN_THUMB_VARIANCE;
    match best {
        Some((step, raw, (px, py, score), (tw, th))) => MatchResult {
            heatmap: raw.resize(HEATMAP_W, HEATMAP_H),
            raw_heatmap: raw,
            peak_score: score as f64,
            reflection_box: Rect::new(origin.0 + px as i32, origin.1 + py as i32, tw as u32, th as u32),
            template_scale: (tw, th),
            scale_index: step,
            present: !uniform && score as f64 >= PRESENCE_THRESHOLD,
            templates_evaluated: evaluated,
        },
        None => {
            let (tw, th) = template_dims(iris, 0);
            MatchResult {
                heatmap: FloatPlane::zeros(HEATMAP_W, HEATMAP_H),
                raw_heatmap: FloatPlane::zeros(1, 1),
                peak_score: 0.0,
                reflection_box: centered_rect(iris.cx, iris.cy, tw as u32, th as u32),
                template_scale: (tw, th),
                scale_index: 0,
                present: false,
                templates_evaluated: evaluated,
            }
        }
    }
}

/// Iris-to-reflection offset in units of the reflection box. In image
/// coordinates a reflection below the iris center (gaze toward the top of
/// the screen) gives positive `vy`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct ReflectionVector {
    pub v: (f64, f64),
    /// True when the reflection is missing.
    pub mask: bool,
}

impl ReflectionVector {
    pub const MASKED: Self = Self {
        v: (0.0, 0.0),
        mask: true,
    };
}

pub fn reflection_vector(iris: &IrisCircle, m: &MatchResult) -> ReflectionVector {
    if !m.present {
        return ReflectionVector::MASKED;
    }
    let (cx, cy) = m.reflection_box.center();
    ReflectionVector {
        v: (
            (cx - iris.cx) / m.reflection_box.w as f64,
            (cy - iris.cy) / m.reflection_box.h as f64,
        ),
        mask: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iris::Circle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gray(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, |_, _| rng.random())
    }

    fn ncc_oracle(region: &ImageBuffer, t: &ImageBuffer, ox: usize, oy: usize) -> f64 {
        let (tw, th) = (t.width(), t.height());
        let n = (tw * th) as f64;
        let tv: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
        let rv: Vec<f64> = (0..th)
            .flat_map(|y| (0..tw).map(move |x| (x, y)))
            .map(|(x, y)| region.get(ox + x, oy + y, 0) as f64)
            .collect();
        let tm = tv.iter().sum::<f64>() / n;
        let rm = rv.iter().sum::<f64>() / n;
        let num: f64 = tv.iter().zip(&rv).map(|(a, b)| (a - tm) * (b - rm)).sum();
        let ta: f64 = tv.iter().map(|a| (a - tm).powi(2)).sum();
        let rb: f64 = rv.iter().map(|b| (b - rm).powi(2)).sum();
        if ta == 0.0 || rb == 0.0 {
            0.0
        } else {
            num / (ta * rb).sqrt()
        }
    }

    #[test]
    fn thumbnail_dims_and_constants() {
        let t = make_thumbnail(&ImageBuffer::filled(1290, 2796, 1, 200), 8.0).unwrap();
        assert_eq!((t.image.width(), t.image.height()), (50, 101));
        assert!(t.image.data().iter().all(|&v| v == 200));
        assert_eq!(t.mean_luma, 200.0);
        assert_eq!(t.source_dims, (1290, 2796));
        assert!(matches!(
            make_thumbnail(&ImageBuffer::new(49, 200, 1), 8.0),
            Err(ReflectionError::ScreenTooSmall { .. })
        ));
    }

    #[test]
    fn search_region_sizes() {
        let img = ImageBuffer::filled(500, 250, 1, 9);
        let (r, _) = crop_search_region(&img, &Circle::new(250.0, 125.0, 50.0));
        assert_eq!((r.width(), r.height()), (40, 55));
        let (r, _) = crop_search_region(&img, &Circle::new(250.0, 125.0, 36.5));
        assert_eq!((r.width(), r.height()), (29, 40));
        // corner: zero-filled outside the frame
        let (r, origin) = crop_search_region(&img, &Circle::new(0.0, 0.0, 50.0));
        assert_eq!((r.width(), r.height()), (40, 55));
        assert!(origin.0 < 0 && origin.1 < 0);
        assert_eq!(r.get(0, 0, 0), 0);
        assert_eq!(r.get(39, 54, 0), 9);
    }

    #[test]
    fn ncc_self_and_inverse_match() {
        let region = random_gray(30, 40, 3);
        let sub = crop(&region, Rect::new(7, 11, 6, 9));
        let hm = ncc_heatmap(&region, &sub).unwrap();
        assert_eq!(hm.get(7, 11), 1.0);
        assert_eq!(hm.argmax().0, 7);
        let inv = ImageBuffer::from_raw(6, 9, 1, sub.data().iter().map(|&v| 255 - v).collect()).unwrap();
        let hm = ncc_heatmap(&region, &inv).unwrap();
        assert_eq!(hm.get(7, 11), -1.0);
    }

    #[test]
    fn ncc_matches_brute_force() {
        let region = random_gray(20, 30, 11);
        let t = random_gray(5, 7, 12);
        let hm = ncc_heatmap(&region, &t).unwrap();
        assert_eq!((hm.width(), hm.height()), (16, 24));
        for oy in 0..24 {
            for ox in 0..16 {
                let want = ncc_oracle(&region, &t, ox, oy);
                assert!((hm.get(ox, oy) as f64 - want).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn ncc_degenerate_cases() {
        let region = random_gray(10, 10, 1);
        let flat = ImageBuffer::filled(3, 3, 1, 50);
        assert!(ncc_heatmap(&region, &flat).unwrap().data().iter().all(|&v| v == 0.0));
        let flat_region = ImageBuffer::filled(10, 10, 1, 7);
        let t = random_gray(3, 3, 2);
        assert!(ncc_heatmap(&flat_region, &t).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            ncc_heatmap(&t, &region),
            Err(ReflectionError::TemplateTooLarge { .. })
        ));
    }

    fn striped_screen() -> ImageBuffer {
        ImageBuffer::from_fn(1290, 2796, |x, y| {
            if (y / 400) % 2 == 0 && x > 300 {
                240
            } else if x < 500 && y > 1500 {
                30
            } else {
                120
            }
        })
    }

    // Dark textured iris with the template composited at `box_`.
    fn eye_with_reflection(thumb: &ScreenThumbnail, box_: Rect, gain: f64) -> ImageBuffer {
        let mut eye = ImageBuffer::from_fn(200, 160, |x, y| (40 + (x * 7 + y * 3) % 11) as u8);
        let t = resize(&thumb.image, box_.w as usize, box_.h as usize);
        for ty in 0..box_.h as usize {
            for tx in 0..box_.w as usize {
                let (x, y) = ((box_.x + tx as i32) as usize, (box_.y + ty as i32) as usize);
                let base = eye.get(x, y, 0) as f64;
                let v = base + gain * t.get(tx, ty, 0) as f64 * (1.0 - base / 255.0);
                eye.set(x, y, 0, v.round().min(255.0) as u8);
            }
        }
        eye
    }

    #[test]
    fn recovers_composited_reflection() {
        let thumb = make_thumbnail(&striped_screen(), 8.0).unwrap();
        let iris = Circle::new(100.0, 80.0, 50.0);
        let (tw, th) = template_dims(&iris, 3);
        let truth = Rect::new(97, 74, tw as u32, th as u32);
        let m = multiscale_match(&eye_with_reflection(&thumb, truth, 0.8), &iris, &thumb);
        assert!(m.present);
        assert_eq!(m.templates_evaluated, SCALE_STEPS);
        assert!((m.template_scale.0 as i64 - tw as i64).abs() <= 1);
        let (a, b) = (m.reflection_box.center(), truth.center());
        assert!((a.0 - b.0).abs() <= 1.0 && (a.1 - b.1).abs() <= 1.0);
        assert_eq!((m.heatmap.width(), m.heatmap.height()), (HEATMAP_W, HEATMAP_H));
        assert!(m.heatmap.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn centered_reflection_gives_zero_vector() {
        let thumb = make_thumbnail(&striped_screen(), 8.0).unwrap();
        let iris = Circle::new(100.0, 80.0, 50.0);
        let (tw, th) = template_dims(&iris, 0);
        let truth = centered_rect(100.0, 80.0, tw as u32, th as u32);
        let m = multiscale_match(&eye_with_reflection(&thumb, truth, 0.8), &iris, &thumb);
        let (cx, cy) = m.reflection_box.center();
        assert!((cx - 100.0).abs() <= 1.0 && (cy - 80.0).abs() <= 1.0);
        let v = reflection_vector(&iris, &m);
        assert!(!v.mask && v.v.0.abs() <= 0.1 && v.v.1.abs() <= 0.1);
    }

    #[test]
    fn translation_equivariance() {
        let thumb = make_thumbnail(&striped_screen(), 8.0).unwrap();
        let iris = Circle::new(100.0, 80.0, 50.0);
        let (tw, th) = template_dims(&iris, 2);
        let base = Rect::new(95, 70, tw as u32, th as u32);
        let c0 = multiscale_match(&eye_with_reflection(&thumb, base, 0.8), &iris, &thumb)
            .reflection_box
            .center();
        for (dx, dy) in [(3, 0), (-4, 2), (1, -5)] {
            let moved = Rect::new(base.x + dx, base.y + dy, base.w, base.h);
            let c = multiscale_match(&eye_with_reflection(&thumb, moved, 0.8), &iris, &thumb)
                .reflection_box
                .center();
            assert!((c.0 - c0.0 - dx as f64).abs() <= 1.0);
            assert!((c.1 - c0.1 - dy as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn brightness_scaling_keeps_peak() {
        let thumb = make_thumbnail(&striped_screen(), 8.0).unwrap();
        let iris = Circle::new(100.0, 80.0, 50.0);
        let (tw, th) = template_dims(&iris, 1);
        let eye = eye_with_reflection(&thumb, Rect::new(96, 72, tw as u32, th as u32), 0.3);
        let a = multiscale_match(&eye, &iris, &thumb);
        // Scaling by 2 is exact in 8 bits while values stay below 128.
        let max = *eye.data().iter().max().unwrap();
        assert!(max < 128);
        let bright = ImageBuffer::from_raw(200, 160, 1, eye.data().iter().map(|&v| v * 2).collect()).unwrap();
        let b = multiscale_match(&bright, &iris, &thumb);
        assert_eq!(a.reflection_box, b.reflection_box);
        assert_eq!(reflection_vector(&iris, &a), reflection_vector(&iris, &b));
    }

    #[test]
    fn uniform_screen_is_absent() {
        let black = make_thumbnail(&ImageBuffer::new(1290, 2796, 1), 8.0).unwrap();
        let eye = ImageBuffer::from_fn(200, 160, |x, y| (20 + (x + y) % 5) as u8);
        let m = multiscale_match(&eye, &Circle::new(100.0, 80.0, 50.0), &black);
        assert!(!m.present);
        assert_eq!(reflection_vector(&Circle::new(100.0, 80.0, 50.0), &m), ReflectionVector::MASKED);
    }

    #[test]
    fn vector_from_box() {
        let iris = Circle::new(50.0, 50.0, 40.0);
        let mut m = MatchResult {
            heatmap: FloatPlane::zeros(HEATMAP_W, HEATMAP_H),
            raw_heatmap: FloatPlane::zeros(1, 1),
            peak_score: 0.9,
            reflection_box: centered_rect(50.0, 50.0, 9, 19),
            template_scale: (9, 19),
            scale_index: 0,
            present: true,
            templates_evaluated: 7,
        };
        assert_eq!(reflection_vector(&iris, &m).v, (0.0, 0.0));
        m.reflection_box = Rect::new(50, 55, 10, 20);
        let v = reflection_vector(&iris, &m);
        assert!((v.v.0 - 0.45).abs() < 1e-12 && (v.v.1 - 0.725).abs() < 1e-12);
    }
}
