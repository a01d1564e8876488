//! Deterministic raster primitives: 8-bit images, float planes, blur,
//! bilinear resize, luma conversion and zero-filled crops.
//!
//! Every operation is a pure function of its input bits. Floating point
//! work is done in `f32` with a fixed accumulation order so results are
//! reproducible across platforms.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: png decode: {msg}")]
    Png { path: String, msg: String },
    #[error("{path}: not an HFG1 plane ({msg})")]
    Hfg1 { path: String, msg: String },
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Row-major, channel-interleaved 8-bit raster with 1 or 3 channels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ImageBuffer({}x{}x{})",
            self.width, self.height, self.channels
        )
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        assert!(width >= 1 && height >= 1, "image dims must be >= 1");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid("zero dimension".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::Invalid(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Self {
        let mut img = Self::new(width, height, 1);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width as u32, self.height as u32)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }

    /// Mirror left/right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        let c = self.channels;
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * c;
                let dst = (y * self.width + x) * c;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        out
    }

    pub fn read_png(path: &Path) -> Result<Self, ImageError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let png_err = |e: png::DecodingError| ImageError::Png {
            path: path.display().to_string(),
            msg: e.to_string(),
        };
        let mut reader = decoder.read_info().map_err(png_err)?;
        let size = reader.output_buffer_size().ok_or_else(|| ImageError::Png {
            path: path.display().to_string(),
            msg: "image too large".into(),
        })?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Png {
                path: path.display().to_string(),
                msg: format!("unsupported bit depth {:?}", info.bit_depth),
            });
        }
        let (w, h) = (info.width as usize, info.height as usize);
        buf.truncate(info.buffer_size());
        let (channels, data) = match info.color_type {
            png::ColorType::Grayscale => (1, buf),
            png::ColorType::Rgb => (3, buf),
            png::ColorType::Rgba => (
                3,
                buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            ),
            png::ColorType::GrayscaleAlpha => (1, buf.chunks_exact(2).map(|p| p[0]).collect()),
            other => {
                return Err(ImageError::Png {
                    path: path.display().to_string(),
                    msg: format!("unsupported color type {other:?}"),
                })
            }
        };
        Self::from_raw(w, h, channels, data)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut encoder =
            png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(if self.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        let enc_err = |e: png::EncodingError| ImageError::Png {
            path: path.display().to_string(),
            msg: e.to_string(),
        };
        let mut writer = encoder.write_header().map_err(enc_err)?;
        writer.write_image_data(&self.data).map_err(enc_err)?;
        writer.finish().map_err(enc_err)
    }
}

/// Axis-aligned pixel rectangle; may extend outside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: i32, y: i32, w: u32, h: u32) -> Self {
        assert!(w >= 1 && h >= 1, "rect dims must be >= 1");
        Self { x, y, w, h }
    }

    /// Center in continuous pixel coordinates (pixel `i` spans `[i, i+1)`
    /// and has its center at `i + 0.5`; the returned value uses the
    /// pixel-index convention where pixel `i` is at coordinate `i`).
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + (self.w as f64 - 1.0) / 2.0,
            self.y as f64 + (self.h as f64 - 1.0) / 2.0,
        )
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Sub-rectangle expressed relative to this rectangle's origin.
    pub fn offset(&self, inner: Rect) -> Rect {
        Rect::new(self.x + inner.x, self.y + inner.y, inner.w, inner.h)
    }
}

/// Row-major `f32` plane (correlation heatmaps, masks, model inputs).
#[derive(Clone, PartialEq)]
pub struct FloatPlane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for FloatPlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FloatPlane({}x{})", self.width, self.height)
    }
}

impl FloatPlane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width >= 1 && height >= 1);
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "plane {width}x{height} with {} samples",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::Invalid("non-finite plane sample".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Gray image scaled to `[0, 1]`.
    pub fn from_gray(img: &ImageBuffer) -> Self {
        let g = to_gray(img);
        Self {
            width: g.width,
            height: g.height,
            data: g.data.iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Position and value of the maximum; first occurrence in row-major
    /// order wins ties.
    pub fn argmax(&self) -> (usize, usize, f32) {
        let mut best = (0, f32::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        (best.0 % self.width, best.0 / self.width, best.1)
    }

    /// Bilinear resize with the same convention as [`resize`].
    pub fn resize(&self, out_w: usize, out_h: usize) -> FloatPlane {
        assert!(out_w >= 1 && out_h >= 1);
        let xs = sample_axis(self.width, out_w);
        let ys = sample_axis(self.height, out_h);
        let mut out = FloatPlane::zeros(out_w, out_h);
        for (oy, sy) in ys.iter().enumerate() {
            for (ox, sx) in xs.iter().enumerate() {
                let v = |x, y| self.data[y * self.width + x];
                let top = lerp(v(sx.i0, sy.i0), v(sx.i1, sy.i0), sx.frac);
                let bot = lerp(v(sx.i0, sy.i1), v(sx.i1, sy.i1), sx.frac);
                out.data[oy * out_w + ox] = lerp(top, bot, sy.frac);
            }
        }
        out
    }

    /// Reads an `HFG1` plane.
    pub fn read_hfg1(path: &Path) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| io_err(path, e))?;
        Self::decode_hfg1(&bytes).map_err(|msg| ImageError::Hfg1 {
            path: path.display().to_string(),
            msg,
        })
    }

    pub fn write_hfg1(&self, path: &Path) -> Result<(), ImageError> {
        let mut f = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
        f.write_all(&self.encode_hfg1())
            .and_then(|_| f.flush())
            .map_err(|e| io_err(path, e))
    }

    /// `HFG1` magic, u32 LE width, u32 LE height, then f32 LE samples.
    pub fn encode_hfg1(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(b"HFG1");
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode_hfg1(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 12 || &bytes[..4] != b"HFG1" {
            return Err("bad magic".into());
        }
        let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != 4 * w * h {
            return Err(format!("expected {} sample bytes, got {}", 4 * w * h, body.len()));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FloatPlane::from_vec(w, h, data).map_err(|e| e.to_string())
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

#[inline]
fn round_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Normalized 1-D Gaussian taps, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be finite and >= 0");
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

// One output sample of a clamp-to-edge 1-D convolution, fixed tap order.
#[inline]
fn conv_at(kernel: &[f32], center: usize, n: usize, mut fetch: impl FnMut(usize) -> f32) -> f32 {
    let r = kernel.len() / 2;
    let mut acc = 0.0f32;
    if center >= r && center + r < n {
        for (k, &w) in kernel.iter().enumerate() {
            acc += w * fetch(center + k - r);
        }
        return acc;
    }
    for (k, &w) in kernel.iter().enumerate() {
        acc += w * fetch(clamp_idx(center as isize + k as isize - r as isize, n));
    }
    acc
}

/// Separable Gaussian blur, clamp-to-edge, per channel.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    let kernel = gaussian_kernel(sigma);
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut horiz = vec![0f32; w * h * c];
    for y in 0..h {
        let row = &img.data[y * w * c..(y + 1) * w * c];
        for x in 0..w {
            for ch in 0..c {
                horiz[(y * w + x) * c + ch] =
                    conv_at(&kernel, x, w, |xx| row[xx * c + ch] as f32);
            }
        }
    }
    let mut out = ImageBuffer::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = conv_at(&kernel, y, h, |yy| horiz[(yy * w + x) * c + ch]);
                out.data[(y * w + x) * c + ch] = round_u8(v);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct AxisSample {
    i0: usize,
    i1: usize,
    frac: f32,
}

// Half-pixel-center bilinear source coordinates for one axis.
fn sample_axis(src: usize, dst: usize) -> Vec<AxisSample> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            AxisSample {
                i0,
                i1: (i0 + 1).min(src - 1),
                frac: (s - i0 as f64) as f32,
            }
        })
        .collect()
}

/// Bilinear resize, half-pixel-center convention, per channel.
pub fn resize(img: &ImageBuffer, out_w: usize, out_h: usize) -> ImageBuffer {
    assert!(out_w >= 1 && out_h >= 1, "resize target must be >= 1x1");
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let xs = sample_axis(img.width, out_w);
    let ys = sample_axis(img.height, out_h);
    let c = img.channels;
    let mut out = ImageBuffer::new(out_w, out_h, c);
    for (oy, sy) in ys.iter().enumerate() {
        for (ox, sx) in xs.iter().enumerate() {
            for ch in 0..c {
                let v = |x: usize, y: usize| img.data[(y * img.width + x) * c + ch] as f32;
                let top = lerp(v(sx.i0, sy.i0), v(sx.i1, sy.i0), sx.frac);
                let bot = lerp(v(sx.i0, sy.i1), v(sx.i1, sy.i1), sx.frac);
                out.data[(oy * out_w + ox) * c + ch] = round_u8(lerp(top, bot, sy.frac));
            }
        }
    }
    out
}

/// `resize(gaussian_blur(img, sigma), out_w, out_h)`, evaluating the blur
/// only where the resize samples it. Bit-identical to the two-step form.
pub fn blur_resize(img: &ImageBuffer, sigma: f64, out_w: usize, out_h: usize) -> ImageBuffer {
    assert!(out_w >= 1 && out_h >= 1);
    if out_w == img.width && out_h == img.height {
        return gaussian_blur(img, sigma);
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h, c) = (img.width, img.height, img.channels);
    let xs = sample_axis(w, out_w);
    let ys = sample_axis(h, out_h);

    let mut col_ids: Vec<usize> = xs.iter().flat_map(|s| [s.i0, s.i1]).collect();
    col_ids.sort_unstable();
    col_ids.dedup();
    let mut row_ids: Vec<usize> = ys.iter().flat_map(|s| [s.i0, s.i1]).collect();
    row_ids.sort_unstable();
    row_ids.dedup();
    let col_slot = |x: usize| col_ids.binary_search(&x).unwrap();
    let row_slot = |y: usize| row_ids.binary_search(&y).unwrap();

    // Rows touched by the vertical pass.
    let r = (kernel.len() / 2) as isize;
    let mut src_rows = vec![false; h];
    for &y in &row_ids {
        for k in -r..=r {
            src_rows[clamp_idx(y as isize + k, h)] = true;
        }
    }
    let nc = col_ids.len();
    let mut horiz = vec![0f32; h * nc * c];
    for y in (0..h).filter(|&y| src_rows[y]) {
        let row = &img.data[y * w * c..(y + 1) * w * c];
        for (slot, &x) in col_ids.iter().enumerate() {
            for ch in 0..c {
                horiz[(y * nc + slot) * c + ch] =
                    conv_at(&kernel, x, w, |xx| row[xx * c + ch] as f32);
            }
        }
    }
    let nr = row_ids.len();
    let stride = nc * c;
    let mut blurred = vec![0f32; nr * stride];
    let mut acc = vec![0f32; stride];
    for (rs, &y) in row_ids.iter().enumerate() {
        acc.fill(0.0);
        for (k, &wk) in kernel.iter().enumerate() {
            let yy = clamp_idx(y as isize + k as isize - r, h);
            for (a, &v) in acc.iter_mut().zip(&horiz[yy * stride..(yy + 1) * stride]) {
                *a += wk * v;
            }
        }
        for (b, &a) in blurred[rs * stride..(rs + 1) * stride].iter_mut().zip(&acc) {
            *b = round_u8(a) as f32;
        }
    }
    let mut out = ImageBuffer::new(out_w, out_h, c);
    for (oy, sy) in ys.iter().enumerate() {
        let (r0, r1) = (row_slot(sy.i0), row_slot(sy.i1));
        for (ox, sx) in xs.iter().enumerate() {
            let (c0, c1) = (col_slot(sx.i0), col_slot(sx.i1));
            for ch in 0..c {
                let v = |rr: usize, cc: usize| blurred[(rr * nc + cc) * c + ch];
                let top = lerp(v(r0, c0), v(r0, c1), sx.frac);
                let bot = lerp(v(r1, c0), v(r1, c1), sx.frac);
                out.data[(oy * out_w + ox) * c + ch] = round_u8(lerp(top, bot, sy.frac));
            }
        }
    }
    out
}

/// ITU-R 601 luma with integer round-half-up; 1-channel input is copied.
pub fn to_gray(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
        .collect();
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Copy of `r` from `img`; pixels outside `img` are zero.
pub fn crop(img: &ImageBuffer, r: Rect) -> ImageBuffer {
    let c = img.channels;
    let mut out = ImageBuffer::new(r.w as usize, r.h as usize, c);
    let x_lo = r.x.max(0) as i64;
    let x_hi = (r.x as i64 + r.w as i64).min(img.width as i64);
    if x_lo >= x_hi {
        return out;
    }
    let span = (x_hi - x_lo) as usize * c;
    for oy in 0..r.h as usize {
        let sy = r.y as i64 + oy as i64;
        if sy < 0 || sy >= img.height as i64 {
            continue;
        }
        let src = (sy as usize * img.width + x_lo as usize) * c;
        let dst = (oy * r.w as usize + (x_lo - r.x as i64) as usize) * c;
        out.data[dst..dst + span].copy_from_slice(&img.data[src..src + span]);
    }
    out
}
