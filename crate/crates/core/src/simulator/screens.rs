use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, BrightnessClass};
use crate::imaging::ImageBuffer;

pub const SWITCH_S: f64 = 0.4;
pub const DISSOLVE_S: f64 = 0.2;
/// Gaze target: dark gray disk of 0.33 cm with a 0.7 mm white center dot.
pub const TARGET_RADIUS_PX: f64 = 10.0;
pub const TARGET_DOT_RADIUS_PX: f64 = 2.1;
pub const TARGET_LUMA: u8 = 64;

fn fill_rect(img: &mut ImageBuffer, x0: i64, y0: i64, w: i64, h: i64, v: u8) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    let (xa, xb) = (x0.clamp(0, iw), (x0 + w).clamp(0, iw));
    let (ya, yb) = (y0.clamp(0, ih), (y0 + h).clamp(0, ih));
    if xa >= xb {
        return;
    }
    let data = img.data_mut();
    for y in ya..yb {
        data[(y * iw + xa) as usize..(y * iw + xb) as usize].fill(v);
    }
}

// Anti-aliased disk blended over the existing pixels.
fn fill_disk(img: &mut ImageBuffer, cx: f64, cy: f64, r: f64, v: u8) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    let x0 = ((cx - r - 1.0).floor() as i64).max(0);
    let x1 = ((cx + r + 1.0).ceil() as i64).min(iw - 1);
    let y0 = ((cy - r - 1.0).floor() as i64).max(0);
    let y1 = ((cy + r + 1.0).ceil() as i64).min(ih - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let a = (r + 0.5 - (x as f64 - cx).hypot(y as f64 - cy)).clamp(0.0, 1.0);
            if a > 0.0 {
                let old = img.get(x as usize, y as usize, 0) as f64;
                let new = old + a * (v as f64 - old);
                img.set(x as usize, y as usize, 0, (new + 0.5).floor() as u8);
            }
        }
    }
}

/// Draws the pursuit target centered at `p` (screen pixels).
pub fn draw_target(img: &mut ImageBuffer, p: (f64, f64)) {
    fill_disk(img, p.0, p.1, TARGET_RADIUS_PX, TARGET_LUMA);
    fill_disk(img, p.0, p.1, TARGET_DOT_RADIUS_PX, 255);
}

/// `round((1 - alpha) * prev + alpha * next)` per pixel, halves rounded up.
pub fn cross_dissolve(prev: &ImageBuffer, next: &ImageBuffer, alpha: f64) -> ImageBuffer {
    assert_eq!(
        (prev.width(), prev.height(), prev.channels()),
        (next.width(), next.height(), next.channels())
    );
    if alpha >= 1.0 {
        return next.clone();
    }
    if alpha <= 0.0 {
        return prev.clone();
    }
    // Fixed-point weights keep the blend exact and fast.
    let wn = (alpha * 65536.0).round() as u32;
    let wp = 65536 - wn;
    let data = prev
        .data()
        .iter()
        .zip(next.data())
        .map(|(&p, &n)| ((p as u32 * wp + n as u32 * wn + 32768) >> 16) as u8)
        .collect();
    ImageBuffer::from_raw(prev.width(), prev.height(), prev.channels(), data).unwrap()
}

/// Deterministic stream of synthetic UI screens: a new screen every 400 ms,
/// cross-dissolved from the previous one over the first 200 ms.
#[derive(Debug, Clone)]
pub struct ScreenStream {
    pub seed: u64,
    pub duration_s: f64,
    pub dark_prob: f64,
    pub dims: (usize, usize),
}

/// One logged screen frame.
#[derive(Debug, Clone)]
pub struct ScreenFrame {
    pub t: f64,
    pub image: ImageBuffer,
    pub brightness_class: BrightnessClass,
    pub dissolve_alpha: f64,
    pub prev_index: Option<usize>,
    pub next_index: usize,
}

pub fn gen_screen_stream(seed: u64, duration_s: f64, dark_prob: f64, dims: (usize, usize)) -> ScreenStream {
    assert!(duration_s > 0.0, "duration must be positive");
    assert!((0.0..=1.0).contains(&dark_prob));
    ScreenStream {
        seed,
        duration_s,
        dark_prob,
        dims,
    }
}

impl ScreenStream {
    pub fn n_screens(&self) -> usize {
        (self.duration_s / SWITCH_S).ceil() as usize + 1
    }

    fn rng(&self, k: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[k as u64]))
    }

    /// Whether screen `k` was drawn from the dark pool.
    pub fn is_dark_draw(&self, k: usize) -> bool {
        self.rng(k).random_bool(self.dark_prob)
    }

    /// `(previous screen, next screen, alpha)` on display at time `t`.
    pub fn blend_at(&self, t: f64) -> (Option<usize>, usize, f64) {
        // Guard against 0.4 * k landing just below an exact switch time.
        let k = ((t + 1e-9) / SWITCH_S).floor() as usize;
        let dt = (t - k as f64 * SWITCH_S).max(0.0);
        if k > 0 && dt < DISSOLVE_S - 1e-9 {
            (Some(k - 1), k, dt / DISSOLVE_S)
        } else {
            (None, k, 1.0)
        }
    }

    /// Renders screen `k` (1-channel).
    pub fn screen(&self, k: usize) -> ImageBuffer {
        let mut rng = self.rng(k);
        let dark = rng.random_bool(self.dark_prob);
        let (w, h) = self.dims;
        let (wf, hf) = (w as f64, h as f64);
        // Pixel sizes are authored for the 2796 px tall reference screen.
        let s = hf / 2796.0;
        let px = |v: f64| ((v * s).round() as i64).max(1);
        let mut img;
        if !dark {
            img = ImageBuffer::filled(w, h, 1, rng.random_range(185..=250));
            let bar = (rng.random_range(0.05..0.1) * hf) as i64;
            fill_rect(&mut img, 0, 0, w as i64, bar, rng.random_range(30..=230));
            for _ in 0..rng.random_range(3..=7) {
                let cw = rng.random_range(0.3..0.9) * wf;
                let ch = rng.random_range(0.05..0.25) * hf;
                let x = rng.random_range(0.0..(wf - cw).max(1.0));
                let y = rng.random_range(0.0..(hf - ch).max(1.0));
                fill_rect(&mut img, x as i64, y as i64, cw as i64, ch as i64, rng.random_range(60..=255));
            }
            for _ in 0..rng.random_range(10..=30) {
                let lw = rng.random_range(0.2..0.8) * wf;
                let x = rng.random_range(0.0..(wf - lw).max(1.0));
                let y = rng.random_range(0.0..hf);
                fill_rect(&mut img, x as i64, y as i64, lw as i64, px(rng.random_range(12.0..20.0)), rng.random_range(20..=90));
            }
        } else {
            img = ImageBuffer::filled(w, h, 1, rng.random_range(0..=20));
            for _ in 0..rng.random_range(0..=3) {
                let cw = rng.random_range(0.3..0.9) * wf;
                let ch = rng.random_range(0.05..0.2) * hf;
                let x = rng.random_range(0.0..(wf - cw).max(1.0));
                let y = rng.random_range(0.0..(hf - ch).max(1.0));
                fill_rect(&mut img, x as i64, y as i64, cw as i64, ch as i64, rng.random_range(20..=45));
            }
            for _ in 0..rng.random_range(5..=20) {
                let lw = rng.random_range(0.1..0.6) * wf;
                let x = rng.random_range(0.0..(wf - lw).max(1.0));
                let y = rng.random_range(0.0..hf);
                fill_rect(&mut img, x as i64, y as i64, lw as i64, px(rng.random_range(10.0..16.0)), rng.random_range(120..=230));
            }
            for _ in 0..rng.random_range(0..=2) {
                let r = rng.random_range(30.0..90.0) * s;
                let (x, y) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                fill_disk(&mut img, x, y, r, rng.random_range(200..=255));
            }
        }
        img
    }

    /// Logged frame at `t` with the gaze target drawn at `target`. `cache`
    /// holds recently rendered screens by index.
    pub fn frame_at(
        &self,
        t: f64,
        target: Option<(f64, f64)>,
        cache: &mut Vec<(usize, ImageBuffer)>,
    ) -> ScreenFrame {
        let (prev, next, alpha) = self.blend_at(t);
        let mut get = |k: usize| -> ImageBuffer {
            if let Some((_, img)) = cache.iter().find(|(i, _)| *i == k) {
                return img.clone();
            }
            let img = self.screen(k);
            cache.push((k, img.clone()));
            if cache.len() > 3 {
                cache.remove(0);
            }
            img
        };
        let next_img = get(next);
        let mut image = match prev {
            Some(p) => cross_dissolve(&get(p), &next_img, alpha),
            None => next_img,
        };
        if let Some(p) = target {
            draw_target(&mut image, p);
        }
        ScreenFrame {
            t,
            brightness_class: BrightnessClass::from_mean_luma(image.mean()),
            image,
            dissolve_alpha: alpha,
            prev_index: prev,
            next_index: next,
        }
    }

    /// Frames sampled at `fps` over the stream duration, without a target.
    pub fn frames(&self, fps: f64) -> impl Iterator<Item = ScreenFrame> + '_ {
        let n = (self.duration_s * fps).floor() as usize;
        let mut cache = Vec::new();
        (0..n).map(move |i| self.frame_at(i as f64 / fps, None, &mut cache))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dissolve_schedule() {
        let s = gen_screen_stream(1, 2.0, 0.1, (65, 140));
        assert_eq!(s.blend_at(0.0), (None, 0, 1.0));
        assert_eq!(s.blend_at(0.4), (Some(0), 1, 0.0));
        let (p, n, a) = s.blend_at(0.5);
        assert_eq!((p, n), (Some(0), 1));
        assert!((a - 0.5).abs() < 1e-9);
        assert_eq!(s.blend_at(0.65), (None, 1, 1.0));
    }

    #[test]
    fn dissolve_midpoint_is_pixelwise_mean() {
        let a = ImageBuffer::from_fn(20, 10, |x, y| (x * 10 + y) as u8);
        let b = ImageBuffer::from_fn(20, 10, |x, y| (200 - x * 5 - y) as u8);
        let m = cross_dissolve(&a, &b, 0.5);
        for i in 0..200 {
            let (p, n) = (a.data()[i] as u32, b.data()[i] as u32);
            assert_eq!(m.data()[i] as u32, (p + n).div_ceil(2));
        }
        assert_eq!(cross_dissolve(&a, &b, 0.0), a);
        assert_eq!(cross_dissolve(&a, &b, 1.0), b);
    }

    #[test]
    fn frame_at_switch_is_previous_screen() {
        let s = gen_screen_stream(3, 2.0, 0.5, (65, 140));
        let mut cache = Vec::new();
        let f = s.frame_at(0.4, None, &mut cache);
        assert_eq!(f.image, s.screen(0));
        assert_eq!(f.dissolve_alpha, 0.0);
    }

    #[test]
    fn dark_fraction_matches_probability() {
        let s = gen_screen_stream(11, 4000.0, 0.1, (65, 140));
        let n = 10_000;
        let dark = (0..n)
            .filter(|&k| BrightnessClass::from_mean_luma(s.screen(k).mean()) == BrightnessClass::Dark)
            .count();
        let frac = dark as f64 / n as f64;
        assert!((0.08..=0.12).contains(&frac), "dark fraction {frac}");
        // the drawn pool and the measured class agree
        for k in 0..500 {
            let measured = BrightnessClass::from_mean_luma(s.screen(k).mean()) == BrightnessClass::Dark;
            assert_eq!(measured, s.is_dark_draw(k), "screen {k}");
        }
    }

    #[test]
    fn deterministic_screens() {
        let s = gen_screen_stream(5, 2.0, 0.1, (129, 280));
        assert_eq!(s.screen(3), s.screen(3));
        assert_ne!(s.screen(3), s.screen(4));
    }

    #[test]
    fn target_is_drawn() {
        let mut img = ImageBuffer::filled(100, 100, 1, 220);
        draw_target(&mut img, (50.0, 40.0));
        assert_eq!(img.get(50, 40, 0), 255);
        assert_eq!(img.get(50, 46, 0), TARGET_LUMA);
        assert_eq!(img.get(50, 60, 0), 220);
    }
}
