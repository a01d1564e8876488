use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{col2im, dense_backward, dense_forward, im2col, relu, relu_backward, ConvGeom};
use super::{FeatureBundle, RegressorError, VariantSpec, BOUNDS_EMBED, CROP_H, CROP_W, PLANE_EMBED, VECTOR_LEN};
use crate::imaging::FloatPlane;
use crate::reflection::{HEATMAP_H, HEATMAP_W, THUMB_H, THUMB_W};
use crate::scalar::Real;
use crate::simulator::SCREEN_DIMS;

const BOUNDS_HIDDEN: usize = 32;
const CONV1_CH: usize = 8;
const CONV2_CH: usize = 16;
const HEAD: [usize; 2] = [128, 64];
/// Smoothing inside the Euclidean norm.
const LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    inp: usize,
    out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PlaneNet {
    g1: ConvGeom,
    g2: ConvGeom,
    conv1: Dense,
    conv2: Dense,
    fc: Dense,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    bounds: [Dense; 2],
    crops: Option<PlaneNet>,
    thumb: Option<PlaneNet>,
    heat: Option<PlaneNet>,
    head: [Dense; 3],
    embed: usize,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Builder {
    fn dense(&mut self, name: &str, inp: usize, out: usize) -> Dense {
        let w = self.names.len();
        self.names.push(format!("{name}.w"));
        self.shapes.push(vec![out, inp]);
        self.names.push(format!("{name}.b"));
        self.shapes.push(vec![out]);
        Dense { w, b: w + 1, inp, out }
    }

    fn plane(&mut self, name: &str, h: usize, w: usize) -> PlaneNet {
        let g1 = ConvGeom::new(h, w, 1, CONV1_CH);
        let g2 = g1.next(CONV2_CH);
        PlaneNet {
            g1,
            g2,
            conv1: self.dense(&format!("{name}.conv1"), g1.k(), g1.cout),
            conv2: self.dense(&format!("{name}.conv2"), g2.k(), g2.cout),
            fc: self.dense(&format!("{name}.fc"), g2.out_len(), PLANE_EMBED),
        }
    }
}

fn layout(v: &VariantSpec) -> (Layout, Vec<String>, Vec<Vec<usize>>) {
    let mut b = Builder {
        names: vec![],
        shapes: vec![],
    };
    let bounds = [
        b.dense("bounds.fc1", 4, BOUNDS_HIDDEN),
        b.dense("bounds.fc2", BOUNDS_HIDDEN, BOUNDS_EMBED),
    ];
    let crops = v.use_crops.then(|| b.plane("crops", CROP_H, CROP_W));
    let thumb = v.use_thumbnail.then(|| b.plane("thumb", THUMB_H, THUMB_W));
    let heat = v.use_heatmap.then(|| b.plane("heat", HEATMAP_H, HEATMAP_W));
    let embed = v.embedding_len();
    let head = [
        b.dense("head.fc1", embed, HEAD[0]),
        b.dense("head.fc2", HEAD[0], HEAD[1]),
        b.dense("head.fc3", HEAD[1], 2),
    ];
    (
        Layout {
            bounds,
            crops,
            thumb,
            heat,
            head,
            embed,
        },
        b.names,
        b.shapes,
    )
}

/// Weights of every active encoder plus the fusion head. The head's raw
/// output is mapped to pixels as `anchor + scale * y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub variant: VariantSpec,
    pub seed: u64,
    pub anchor_px: (f64, f64),
    pub scale_px: (f64, f64),
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub tensors: Vec<Vec<T>>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    variant: VariantSpec,
    seed: u64,
    anchor_px: (f64, f64),
    scale_px: (f64, f64),
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

const FORMAT: &str = "hifigaze-model-1";

impl<T: Real> ModelParams<T> {
    /// All-zero parameters for `variant` on the default screen.
    pub fn zeros(variant: VariantSpec) -> Self {
        let (layout, names, shapes) = layout(&variant);
        let tensors = shapes.iter().map(|s| vec![T::zero(); s.iter().product()]).collect();
        Self {
            variant,
            seed: 0,
            anchor_px: (SCREEN_DIMS.0 as f64 / 2.0, SCREEN_DIMS.1 as f64 / 2.0),
            scale_px: (SCREEN_DIMS.0 as f64, SCREEN_DIMS.1 as f64),
            names,
            shapes,
            tensors,
            layout,
        }
    }

    /// He-uniform weights for rectified layers, Glorot-uniform for the
    /// output layer, zero biases.
    pub fn init(variant: VariantSpec, seed: u64) -> Self {
        let mut p = Self::zeros(variant);
        p.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out_w = p.layout.head[2].w;
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if p.shapes[i].len() != 2 {
                continue;
            }
            let (fan_out, fan_in) = (p.shapes[i][0] as f64, p.shapes[i][1] as f64);
            let bound = if i == out_w {
                (6.0 / (fan_in + fan_out)).sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            for v in t.iter_mut() {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        p
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i][..])
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            variant: self.variant,
            seed: self.seed,
            anchor_px: self.anchor_px,
            scale_px: self.scale_px,
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|v| U::lit(v.as_f64())).collect())
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// JSON header line followed by one HFG1 blob per tensor (f32).
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT.into(),
            variant: self.variant,
            seed: self.seed,
            anchor_px: self.anchor_px,
            scale_px: self.scale_px,
            tensors: self
                .names
                .iter()
                .zip(&self.shapes)
                .map(|(n, s)| TensorHeader {
                    name: n.clone(),
                    shape: s.clone(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for (t, s) in self.tensors.iter().zip(&self.shapes) {
            let (h, w) = plane_dims(s);
            let plane = FloatPlane::from_vec(w, h, t.iter().map(|v| v.as_f64() as f32).collect())
                .expect("tensor length matches shape");
            out.extend_from_slice(&plane.encode_hfg1());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or("missing header line")?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| e.to_string())?;
        if header.format != FORMAT {
            return Err(format!("unknown format {}", header.format));
        }
        let mut p = Self::zeros(header.variant);
        let declared: Vec<(&String, &Vec<usize>)> = header.tensors.iter().map(|t| (&t.name, &t.shape)).collect();
        let expected: Vec<(&String, &Vec<usize>)> = p.names.iter().zip(&p.shapes).collect();
        if declared != expected {
            return Err("tensor list does not match the variant".into());
        }
        p.seed = header.seed;
        p.anchor_px = header.anchor_px;
        p.scale_px = header.scale_px;
        let mut pos = nl + 1;
        for (i, s) in p.shapes.iter().enumerate() {
            let (h, w) = plane_dims(s);
            let len = 12 + 4 * w * h;
            let blob = bytes.get(pos..pos + len).ok_or("truncated tensor data")?;
            let plane = FloatPlane::decode_hfg1(blob)?;
            if (plane.width(), plane.height()) != (w, h) {
                return Err(format!("tensor {} has wrong dims", p.names[i]));
            }
            p.tensors[i] = plane.data().iter().map(|&v| T::lit(v as f64)).collect();
            pos += len;
        }
        if pos != bytes.len() {
            return Err("trailing bytes".into());
        }
        Ok(p)
    }

    pub fn write(&self, path: &Path) -> Result<(), RegressorError> {
        fs::write(path, self.to_bytes()).map_err(|source| RegressorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, RegressorError> {
        let bytes = fs::read(path).map_err(|source| RegressorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|msg| RegressorError::Format {
            path: path.display().to_string(),
            msg,
        })
    }

    /// Pixel predictions for a batch.
    pub fn predict_batch(&self, batch: &[&FeatureBundle]) -> Result<Vec<(f64, f64)>, RegressorError> {
        let cache = forward_cached(self, batch)?;
        Ok(self.to_px(&cache.y))
    }

    fn to_px(&self, y: &[T]) -> Vec<(f64, f64)> {
        y.chunks_exact(2)
            .map(|o| {
                (
                    self.anchor_px.0 + self.scale_px.0 * o[0].as_f64(),
                    self.anchor_px.1 + self.scale_px.1 * o[1].as_f64(),
                )
            })
            .collect()
    }

    fn w(&self, d: &Dense) -> &[T] {
        &self.tensors[d.w]
    }

    fn b(&self, d: &Dense) -> &[T] {
        &self.tensors[d.b]
    }
}

fn plane_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("tensors are 1-D or 2-D"),
    }
}

/// Parameter gradients plus the gradient with respect to the raw stored
/// reflection-vector values (`n x 4`).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
    pub vectors: Vec<T>,
}

struct Inputs<T> {
    n: usize,
    bounds: Vec<T>,
    crops: Vec<T>,
    thumb: Vec<T>,
    heat: Vec<T>,
    vec: Vec<T>,
    keep: Vec<bool>,
}

fn prepare<T: Real>(p: &ModelParams<T>, batch: &[&FeatureBundle]) -> Result<Inputs<T>, RegressorError> {
    let n = batch.len();
    let v = p.variant;
    let u8_scale = T::lit(1.0 / 255.0);
    let mut inp = Inputs {
        n,
        bounds: Vec::with_capacity(4 * n),
        crops: vec![],
        thumb: vec![],
        heat: vec![],
        vec: Vec::with_capacity(VECTOR_LEN * n),
        keep: Vec::with_capacity(VECTOR_LEN * n),
    };
    for b in batch {
        b.check(&v)?;
        inp.bounds.extend(b.eye_bounds.iter().map(|&x| T::lit(x as f64)));
        for e in 0..2 {
            for c in 0..2 {
                let masked = b.vector_mask[e];
                inp.keep.push(!masked);
                inp.vec.push(if masked {
                    T::zero()
                } else {
                    T::lit(b.reflection_vectors[2 * e + c] as f64)
                });
            }
        }
    }
    // Shared per-eye encoders see all left planes, then all right planes.
    for eye in 0..2 {
        for b in batch {
            if v.use_crops {
                let c = &b.eye_crops.as_ref().unwrap()[eye];
                inp.crops.extend(c.data().iter().map(|&x| T::lit(x as f64) * u8_scale));
            }
            if v.use_heatmap {
                let h = &b.heatmaps.as_ref().unwrap()[eye];
                inp.heat.extend(h.data().iter().map(|&x| T::lit(x as f64)));
            }
        }
    }
    if v.use_thumbnail {
        for b in batch {
            let t = b.thumbnail.as_ref().unwrap();
            inp.thumb.extend(t.data().iter().map(|&x| T::lit(x as f64) * u8_scale));
        }
    }
    Ok(inp)
}

struct PlaneCache<T> {
    m: usize,
    col1: Vec<T>,
    y1: Vec<T>,
    col2: Vec<T>,
    y2: Vec<T>,
    z: Vec<T>,
}

fn plane_forward<T: Real>(p: &ModelParams<T>, net: &PlaneNet, x: &[T], m: usize) -> PlaneCache<T> {
    let (g1, g2) = (net.g1, net.g2);
    let col1 = im2col(x, &g1, m);
    let mut y1 = dense_forward(&col1, m * g1.ho() * g1.wo(), p.w(&net.conv1), p.b(&net.conv1), g1.k(), g1.cout);
    relu(&mut y1);
    let col2 = im2col(&y1, &g2, m);
    let mut y2 = dense_forward(&col2, m * g2.ho() * g2.wo(), p.w(&net.conv2), p.b(&net.conv2), g2.k(), g2.cout);
    relu(&mut y2);
    let mut z = dense_forward(&y2, m, p.w(&net.fc), p.b(&net.fc), g2.out_len(), PLANE_EMBED);
    relu(&mut z);
    PlaneCache {
        m,
        col1,
        y1,
        col2,
        y2,
        z,
    }
}

fn pair_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn dense_grad<T: Real>(
    p: &ModelParams<T>,
    d: &Dense,
    x: &[T],
    dy: &[T],
    n: usize,
    grads: &mut [Vec<T>],
    want_dx: bool,
) -> Option<Vec<T>> {
    let (dw, db) = pair_mut(grads, d.w, d.b);
    dense_backward(x, dy, n, p.w(d), d.inp, d.out, dw, db, want_dx)
}

fn plane_backward<T: Real>(
    p: &ModelParams<T>,
    net: &PlaneNet,
    c: &PlaneCache<T>,
    mut dz: Vec<T>,
    grads: &mut [Vec<T>],
) {
    let (g1, g2) = (net.g1, net.g2);
    relu_backward(&mut dz, &c.z);
    let mut dy2 = dense_grad(p, &net.fc, &c.y2, &dz, c.m, grads, true).unwrap();
    relu_backward(&mut dy2, &c.y2);
    let dcol2 = dense_grad(p, &net.conv2, &c.col2, &dy2, c.m * g2.ho() * g2.wo(), grads, true).unwrap();
    let mut dy1 = col2im(&dcol2, &g2, c.m);
    relu_backward(&mut dy1, &c.y1);
    dense_grad(p, &net.conv1, &c.col1, &dy1, c.m * g1.ho() * g1.wo(), grads, false);
}

struct Cache<T> {
    inp: Inputs<T>,
    bh1: Vec<T>,
    bh2: Vec<T>,
    crops: Option<PlaneCache<T>>,
    thumb: Option<PlaneCache<T>>,
    heat: Option<PlaneCache<T>>,
    emb: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    y: Vec<T>,
}

impl<T: Real> Cache<T> {
    /// Signs of every rectified unit.
    fn gates(&self) -> Vec<bool> {
        let mut all: Vec<&[T]> = vec![&self.bh1, &self.bh2, &self.h1, &self.h2];
        for c in [&self.crops, &self.thumb, &self.heat].into_iter().flatten() {
            all.extend([&c.y1[..], &c.y2[..], &c.z[..]]);
        }
        all.iter().flat_map(|s| s.iter().map(|&v| v > T::zero())).collect()
    }
}

// Embedding segments in concatenation order: (source rows, row offset, width).
fn segments<T>(c: &Cache<T>) -> Vec<(&[T], usize, usize)> {
    let n = c.inp.n;
    let mut s: Vec<(&[T], usize, usize)> = vec![(&c.bh2, 0, BOUNDS_EMBED)];
    if let Some(pc) = &c.crops {
        s.push((&pc.z, 0, PLANE_EMBED));
        s.push((&pc.z, n, PLANE_EMBED));
    }
    if let Some(pc) = &c.thumb {
        s.push((&pc.z, 0, PLANE_EMBED));
    }
    if let Some(pc) = &c.heat {
        s.push((&pc.z, 0, PLANE_EMBED));
        s.push((&pc.z, n, PLANE_EMBED));
    }
    s
}

fn forward_cached<T: Real>(p: &ModelParams<T>, batch: &[&FeatureBundle]) -> Result<Cache<T>, RegressorError> {
    let inp = prepare(p, batch)?;
    let n = inp.n;
    let l = &p.layout;
    let mut bh1 = dense_forward(&inp.bounds, n, p.w(&l.bounds[0]), p.b(&l.bounds[0]), 4, BOUNDS_HIDDEN);
    relu(&mut bh1);
    let mut bh2 = dense_forward(&bh1, n, p.w(&l.bounds[1]), p.b(&l.bounds[1]), BOUNDS_HIDDEN, BOUNDS_EMBED);
    relu(&mut bh2);
    let crops = l.crops.as_ref().map(|net| plane_forward(p, net, &inp.crops, 2 * n));
    let thumb = l.thumb.as_ref().map(|net| plane_forward(p, net, &inp.thumb, n));
    let heat = l.heat.as_ref().map(|net| plane_forward(p, net, &inp.heat, 2 * n));
    let mut cache = Cache {
        inp,
        bh1,
        bh2,
        crops,
        thumb,
        heat,
        emb: vec![],
        h1: vec![],
        h2: vec![],
        y: vec![],
    };
    let e = l.embed;
    let mut emb = Vec::with_capacity(n * e);
    let segs = segments(&cache);
    for i in 0..n {
        for &(src, off, w) in &segs {
            emb.extend_from_slice(&src[(off + i) * w..(off + i + 1) * w]);
        }
        if p.variant.use_vector {
            emb.extend_from_slice(&cache.inp.vec[i * VECTOR_LEN..(i + 1) * VECTOR_LEN]);
        }
    }
    debug_assert_eq!(emb.len(), n * e);
    let [f1, f2, f3] = &l.head;
    let mut h1 = dense_forward(&emb, n, p.w(f1), p.b(f1), e, f1.out);
    relu(&mut h1);
    let mut h2 = dense_forward(&h1, n, p.w(f2), p.b(f2), f1.out, f2.out);
    relu(&mut h2);
    let y = dense_forward(&h2, n, p.w(f3), p.b(f3), f2.out, 2);
    cache.emb = emb;
    cache.h1 = h1;
    cache.h2 = h2;
    cache.y = y;
    Ok(cache)
}

// `dy`: gradient with respect to the raw head output, `n x 2`.
fn backward_from_cache<T: Real>(p: &ModelParams<T>, c: &Cache<T>, dy: &[T]) -> Gradients<T> {
    let n = c.inp.n;
    let l = &p.layout;
    let mut grads: Vec<Vec<T>> = p.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect();
    let [f1, f2, f3] = &l.head;
    let mut dh2 = dense_grad(p, f3, &c.h2, dy, n, &mut grads, true).unwrap();
    relu_backward(&mut dh2, &c.h2);
    let mut dh1 = dense_grad(p, f2, &c.h1, &dh2, n, &mut grads, true).unwrap();
    relu_backward(&mut dh1, &c.h1);
    let demb = dense_grad(p, f1, &c.emb, &dh1, n, &mut grads, true).unwrap();

    // Split the embedding gradient back into its sources.
    let e = l.embed;
    let segs = segments(c);
    let mut pieces: Vec<Vec<T>> = segs
        .iter()
        .map(|&(_, _, w)| Vec::with_capacity(n * w))
        .collect();
    let mut dvec = vec![T::zero(); n * VECTOR_LEN];
    for i in 0..n {
        let row = &demb[i * e..(i + 1) * e];
        let mut at = 0;
        for (k, &(_, _, w)) in segs.iter().enumerate() {
            pieces[k].extend_from_slice(&row[at..at + w]);
            at += w;
        }
        if p.variant.use_vector {
            for j in 0..VECTOR_LEN {
                if c.inp.keep[i * VECTOR_LEN + j] {
                    dvec[i * VECTOR_LEN + j] = row[at + j];
                }
            }
        }
    }
    let mut pieces = pieces.into_iter();
    let mut dbh2 = pieces.next().unwrap();
    let pair = |pieces: &mut std::vec::IntoIter<Vec<T>>| {
        let mut a = pieces.next().unwrap();
        a.extend(pieces.next().unwrap());
        a
    };
    if let (Some(net), Some(pc)) = (&l.crops, &c.crops) {
        let dz = pair(&mut pieces);
        plane_backward(p, net, pc, dz, &mut grads);
    }
    if let (Some(net), Some(pc)) = (&l.thumb, &c.thumb) {
        let dz = pieces.next().unwrap();
        plane_backward(p, net, pc, dz, &mut grads);
    }
    if let (Some(net), Some(pc)) = (&l.heat, &c.heat) {
        let dz = pair(&mut pieces);
        plane_backward(p, net, pc, dz, &mut grads);
    }
    relu_backward(&mut dbh2, &c.bh2);
    let mut dbh1 = dense_grad(p, &l.bounds[1], &c.bh1, &dbh2, n, &mut grads, true).unwrap();
    relu_backward(&mut dbh1, &c.bh1);
    dense_grad(p, &l.bounds[0], &c.inp.bounds, &dbh1, n, &mut grads, false);
    Gradients {
        tensors: grads,
        vectors: dvec,
    }
}

/// Concatenated embedding of one bundle, in head-input order.
pub fn encode<T: Real>(bundle: &FeatureBundle, params: &ModelParams<T>) -> Result<Vec<T>, RegressorError> {
    Ok(forward_cached(params, &[bundle])?.emb)
}

/// Gaze estimate in screen pixels.
pub fn forward<T: Real>(params: &ModelParams<T>, bundle: &FeatureBundle) -> Result<(f64, f64), RegressorError> {
    Ok(params.predict_batch(&[bundle])?[0])
}

/// Inference entry point; same numerics as [`forward`].
pub fn predict<T: Real>(params: &ModelParams<T>, bundle: &FeatureBundle) -> Result<(f64, f64), RegressorError> {
    forward(params, bundle)
}

/// Batch-mean Euclidean distance.
pub fn loss(pred: &[(f64, f64)], truth: &[(f64, f64)]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(truth)
        .map(|(p, t)| ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2) + LOSS_EPS).sqrt())
        .sum::<f64>()
        / pred.len() as f64
}

fn loss_and_dy<T: Real>(p: &ModelParams<T>, y: &[T], truth: &[(f64, f64)]) -> (T, Vec<T>) {
    let n = truth.len();
    let inv_n = T::lit(1.0 / n as f64);
    let (sx, sy) = (T::lit(p.scale_px.0), T::lit(p.scale_px.1));
    let (ax, ay) = (T::lit(p.anchor_px.0), T::lit(p.anchor_px.1));
    let mut total = T::zero();
    let mut dy = vec![T::zero(); 2 * n];
    for (i, t) in truth.iter().enumerate() {
        let dx = ax + sx * y[2 * i] - T::lit(t.0);
        let dyy = ay + sy * y[2 * i + 1] - T::lit(t.1);
        let d = (dx * dx + dyy * dyy + T::lit(LOSS_EPS)).sqrt();
        total = total + d;
        dy[2 * i] = dx / d * sx * inv_n;
        dy[2 * i + 1] = dyy / d * sy * inv_n;
    }
    (total * inv_n, dy)
}

/// Mean loss and its exact gradients over a batch.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    batch: &[&FeatureBundle],
    truth: &[(f64, f64)],
) -> Result<(T, Gradients<T>), RegressorError> {
    if batch.len() != truth.len() {
        return Err(RegressorError::LengthMismatch(batch.len(), truth.len()));
    }
    if batch.is_empty() {
        return Err(RegressorError::EmptyDataset);
    }
    let cache = forward_cached(params, batch)?;
    let (l, dy) = loss_and_dy(params, &cache.y, truth);
    Ok((l, backward_from_cache(params, &cache, &dy)))
}

/// Finite-difference agreement for one tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Probes skipped because the perturbation flipped a rectifier.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Central differences against analytic gradients on up to `per_tensor`
/// evenly spread entries of every tensor. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn gradient_check(
    params: &ModelParams<f64>,
    batch: &[&FeatureBundle],
    truth: &[(f64, f64)],
    per_tensor: usize,
    h: f64,
) -> Result<Vec<TensorCheck>, RegressorError> {
    let (_, grads) = backward(params, batch, truth)?;
    let base_gates = forward_cached(params, batch)?.gates();
    let mut p = params.clone();
    let mut out = Vec::new();
    for ti in 0..p.tensors.len() {
        let len = p.tensors[ti].len();
        let mut check = TensorCheck {
            name: p.names[ti].clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        let probes = per_tensor.min(len);
        for k in 0..probes {
            let j = k * len / probes;
            let orig = p.tensors[ti][j];
            let eval = |v: f64, p: &mut ModelParams<f64>| -> Result<(f64, bool), RegressorError> {
                p.tensors[ti][j] = v;
                let c = forward_cached(p, batch)?;
                let same = c.gates() == base_gates;
                Ok((loss_and_dy(p, &c.y, truth).0, same))
            };
            let (lp, sp) = eval(orig + h, &mut p)?;
            let (lm, sm) = eval(orig - h, &mut p)?;
            p.tensors[ti][j] = orig;
            if !(sp && sm) {
                check.skipped += 1;
                continue;
            }
            let num = (lp - lm) / (2.0 * h);
            let ana = grads.tensors[ti][j];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-3);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.checked += 1;
        }
        out.push(check);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ImageBuffer;

    fn bundle(seed: u64, v: &VariantSpec) -> FeatureBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = FeatureBundle::new([0.3, 0.4, 0.7, 0.41].map(|x: f32| x + rng.random_range(-0.02..0.02)));
        let img = |w, h, rng: &mut ChaCha8Rng| ImageBuffer::from_fn(w, h, |_, _| rng.random());
        if v.use_crops {
            b.eye_crops = Some([img(CROP_W, CROP_H, &mut rng), img(CROP_W, CROP_H, &mut rng)]);
        }
        if v.use_thumbnail {
            b.thumbnail = Some(img(THUMB_W, THUMB_H, &mut rng));
        }
        if v.use_heatmap {
            let mut hm = || {
                FloatPlane::from_vec(
                    HEATMAP_W,
                    HEATMAP_H,
                    (0..HEATMAP_W * HEATMAP_H).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            };
            b.heatmaps = Some([hm(), hm()]);
        }
        b.set_vector(0, Some((0.1, -0.2)));
        b.set_vector(1, Some((0.12, -0.18)));
        b
    }

    fn full() -> VariantSpec {
        VariantSpec::new(true, true, true, true)
    }

    #[test]
    fn tensor_shapes() {
        let p = ModelParams::<f32>::zeros("eb+rv".parse().unwrap());
        assert_eq!(p.tensor("head.fc1.w").unwrap().len(), 128 * 20);
        assert_eq!(p.tensor("bounds.fc1.w").unwrap().len(), 32 * 4);
        let p = ModelParams::<f32>::zeros(full());
        assert_eq!(p.tensor("thumb.fc.w").unwrap().len(), 256 * 13 * 26 * 16);
        assert_eq!(p.tensor("crops.fc.w").unwrap().len(), 256 * 8 * 16 * 16);
        assert_eq!(p.tensor("heat.fc.w").unwrap().len(), 256 * 14 * 10 * 16);
    }

    #[test]
    fn embedding_lengths_match_variant() {
        for v in VariantSpec::ALL {
            let p = ModelParams::<f64>::init(v, 3);
            let e = encode(&bundle(1, &v), &p).unwrap();
            assert_eq!(e.len(), v.embedding_len(), "{v}");
        }
    }

    #[test]
    fn zero_model_outputs_origin() {
        let mut p = ModelParams::<f64>::zeros(full());
        p.anchor_px = (0.0, 0.0);
        assert_eq!(forward(&p, &bundle(2, &full())).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn forward_is_reproducible() {
        let p = ModelParams::<f32>::init(full(), 11);
        let b = bundle(4, &full());
        let a = forward(&p, &b).unwrap();
        let c = predict(&ModelParams::<f32>::init(full(), 11), &b).unwrap();
        assert_eq!(a.0.to_bits(), c.0.to_bits());
        assert_eq!(a.1.to_bits(), c.1.to_bits());
    }

    #[test]
    fn loss_values() {
        assert!(loss(&[(1.0, 2.0)], &[(1.0, 2.0)]) < 1e-5);
        assert!((loss(&[(3.0, 4.0)], &[(0.0, 0.0)]) - 5.0).abs() < 1e-12);
        assert!((loss(&[(3.0, 4.0), (9.0, 12.0)], &[(0.0, 0.0); 2]) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn masked_vector_values_do_not_matter() {
        let v: VariantSpec = "eb+rv".parse().unwrap();
        let p = ModelParams::<f64>::init(v, 5);
        let mut a = bundle(3, &v);
        a.vector_mask = [true, false];
        let mut b = a.clone();
        b.reflection_vectors[0] = 123.0;
        b.reflection_vectors[1] = -7.5;
        assert_eq!(encode(&a, &p).unwrap(), encode(&b, &p).unwrap());
        let t = [(600.0, 1500.0)];
        let (la, ga) = backward(&p, &[&a], &t).unwrap();
        let (lb, gb) = backward(&p, &[&b], &t).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ga, gb);
        assert_eq!(&ga.vectors[..2], &[0.0, 0.0]);
        assert!(ga.vectors[2] != 0.0 || ga.vectors[3] != 0.0);
    }

    #[test]
    fn symmetric_batch_gives_zero_output_bias_gradient() {
        let v = VariantSpec::BOUNDS;
        let p = ModelParams::<f64>::zeros(v);
        let b = bundle(1, &v);
        let (cx, cy) = p.anchor_px;
        let truth = [(cx - 200.0, cy + 300.0), (cx + 200.0, cy - 300.0)];
        let (_, g) = backward(&p, &[&b, &b], &truth).unwrap();
        let i = p.names.iter().position(|n| n == "head.fc3.b").unwrap();
        assert_eq!(g.tensors[i], vec![0.0, 0.0]);
    }

    #[test]
    fn shared_crop_encoder_treats_slots_alike() {
        let v: VariantSpec = "eb+ec".parse().unwrap();
        let p = ModelParams::<f64>::init(v, 8);
        let b = bundle(6, &v);
        let mut swapped = b.clone();
        swapped.eye_crops.as_mut().unwrap().swap(0, 1);
        let e1 = encode(&b, &p).unwrap();
        let e2 = encode(&swapped, &p).unwrap();
        let (l, r) = (BOUNDS_EMBED..BOUNDS_EMBED + PLANE_EMBED, BOUNDS_EMBED + PLANE_EMBED..BOUNDS_EMBED + 2 * PLANE_EMBED);
        assert_eq!(e1[l.clone()], e2[r.clone()]);
        assert_eq!(e1[r], e2[l]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let v = full();
        let p = ModelParams::<f64>::init(v, 21);
        let bundles: Vec<FeatureBundle> = (0..3).map(|s| bundle(40 + s, &v)).collect();
        let batch: Vec<&FeatureBundle> = bundles.iter().collect();
        let truth = [(300.0, 900.0), (1000.0, 2000.0), (640.0, 1400.0)];
        let checks = gradient_check(&p, &batch, &truth, 6, 1e-4).unwrap();
        assert_eq!(checks.len(), p.tensors.len());
        for c in &checks {
            assert!(c.checked > 0, "{c:?}");
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn file_round_trip() {
        let p = ModelParams::<f32>::init("eb+th".parse().unwrap(), 9);
        let q = ModelParams::<f32>::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, q);
        let mut bad = p.to_bytes();
        bad.truncate(bad.len() - 1);
        assert!(ModelParams::<f32>::from_bytes(&bad).is_err());
    }
}
