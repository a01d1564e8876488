//! Iterative graph-cut segmentation seeded by a trimap.
//!
//! Colour models are 5-component full-covariance Gaussian mixtures per
//! side; pairwise terms are contrast-sensitive Potts weights over the
//! 8-neighbourhood. Only the bounding box of the non-definite-background
//! region (plus a margin of background context) enters the graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::maxflow::Graph;
use super::trimap::{Trimap, TrimapLabel};
use super::IrisError;
use crate::imaging::{FloatPlane, ImageBuffer};

pub const GRABCUT_ITERATIONS: usize = 5;
pub const COMPONENTS: usize = 5;
pub const GAMMA: f64 = 50.0;
const LAMBDA: f64 = 9.0 * GAMMA;
// A definite pixel's terminal link outweighs all of its pairwise links.
const _: () = assert!(LAMBDA > 4.0 * GAMMA + 4.0 * GAMMA / std::f64::consts::SQRT_2);
const ROI_MARGIN: usize = 12;
const KMEANS_ITERS: usize = 10;
const QUANT_VAR: f64 = 1.0 / 12.0;

type Color = [f64; 3];

#[derive(Debug, Clone)]
struct Gmm {
    weight: [f64; COMPONENTS],
    mean: [Color; COMPONENTS],
    inv_cov: [[[f64; 3]; 3]; COMPONENTS],
    norm: [f64; COMPONENTS],
    log_norm: [f64; COMPONENTS],
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let d = 1.0 / det;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * d,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * d,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * d,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * d,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * d,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * d,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * d,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * d,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * d,
        ],
    ]
}

impl Gmm {
    fn learn(samples: &[Color], comp: &[usize]) -> Gmm {
        let mut count = [0usize; COMPONENTS];
        let mut sum = [[0.0; 3]; COMPONENTS];
        let mut prod = [[[0.0; 3]; 3]; COMPONENTS];
        for (z, &k) in samples.iter().zip(comp) {
            count[k] += 1;
            for a in 0..3 {
                sum[k][a] += z[a];
                for b in 0..3 {
                    prod[k][a][b] += z[a] * z[b];
                }
            }
        }
        let total = samples.len().max(1) as f64;
        let mut g = Gmm {
            weight: [0.0; COMPONENTS],
            mean: [[0.0; 3]; COMPONENTS],
            inv_cov: [[[0.0; 3]; 3]; COMPONENTS],
            norm: [0.0; COMPONENTS],
            log_norm: [0.0; COMPONENTS],
        };
        for k in 0..COMPONENTS {
            if count[k] == 0 {
                continue;
            }
            let n = count[k] as f64;
            g.weight[k] = n / total;
            let m = [sum[k][0] / n, sum[k][1] / n, sum[k][2] / n];
            g.mean[k] = m;
            let mut cov = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    cov[a][b] = prod[k][a][b] / n - m[a] * m[b];
                }
            }
            // Flat clusters (noiseless renders, gray input) are otherwise
            // singular; the 8-bit quantization variance keeps them definite.
            for (a, row) in cov.iter_mut().enumerate() {
                row[a] += QUANT_VAR;
            }
            let det = det3(&cov);
            g.inv_cov[k] = inv3(&cov, det);
            g.norm[k] = 1.0 / det.sqrt();
            g.log_norm[k] = g.norm[k].ln();
        }
        g
    }

    #[inline]
    fn mahalanobis(&self, k: usize, z: &Color) -> f64 {
        let d = [
            z[0] - self.mean[k][0],
            z[1] - self.mean[k][1],
            z[2] - self.mean[k][2],
        ];
        let ic = &self.inv_cov[k];
        let mut q = 0.0;
        for a in 0..3 {
            q += d[a] * (d[0] * ic[0][a] + d[1] * ic[1][a] + d[2] * ic[2][a]);
        }
        q
    }

    #[inline]
    fn component(&self, k: usize, z: &Color) -> f64 {
        if self.weight[k] <= 0.0 {
            return 0.0;
        }
        self.norm[k] * (-0.5 * self.mahalanobis(k, z)).exp()
    }

    fn likelihood(&self, z: &Color) -> f64 {
        (0..COMPONENTS)
            .map(|k| self.weight[k] * self.component(k, z))
            .sum()
    }

    fn most_likely(&self, z: &Color) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..COMPONENTS {
            if self.weight[k] <= 0.0 {
                continue;
            }
            let p = self.log_norm[k] - 0.5 * self.mahalanobis(k, z);
            if p > best.1 {
                best = (k, p);
            }
        }
        best.0
    }

    fn data_cost(&self, z: &Color) -> f64 {
        -self.likelihood(z).max(1e-300).ln()
    }
}

fn dist2(a: &Color, b: &Color) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Lloyd k-means with k-means++ seeding; returns a cluster index per sample.
fn kmeans(samples: &[Color], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Color> = Vec::with_capacity(k);
    centers.push(samples[rng.random_range(0..samples.len())]);
    let mut d2: Vec<f64> = samples.iter().map(|z| dist2(z, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            samples[rng.random_range(0..samples.len())]
        } else {
            let mut t = rng.random::<f64>() * total;
            let mut pick = samples.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            samples[pick]
        };
        for (d, z) in d2.iter_mut().zip(samples) {
            *d = d.min(dist2(z, &next));
        }
        centers.push(next);
    }
    let mut assign = vec![0usize; samples.len()];
    for _ in 0..KMEANS_ITERS {
        for (a, z) in assign.iter_mut().zip(samples) {
            let mut best = (0, f64::INFINITY);
            for (ci, c) in centers.iter().enumerate() {
                let d = dist2(z, c);
                if d < best.1 {
                    best = (ci, d);
                }
            }
            *a = best.0;
        }
        let mut sum = vec![[0.0; 3]; k];
        let mut cnt = vec![0usize; k];
        for (z, &a) in samples.iter().zip(&assign) {
            cnt[a] += 1;
            for c in 0..3 {
                sum[a][c] += z[c];
            }
        }
        for ci in 0..k {
            if cnt[ci] > 0 {
                let n = cnt[ci] as f64;
                centers[ci] = [sum[ci][0] / n, sum[ci][1] / n, sum[ci][2] / n];
            }
        }
    }
    assign
}

#[derive(Debug, Clone, Copy)]
struct Roi {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn roi_for(trimap: &Trimap) -> Roi {
    let (w, h) = (trimap.width(), trimap.height());
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if trimap.get(x, y) != TrimapLabel::DefiniteBg {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Roi { x0: 0, y0: 0, w, h };
    }
    let x0 = x0.saturating_sub(ROI_MARGIN);
    let y0 = y0.saturating_sub(ROI_MARGIN);
    let x1 = (x1 + ROI_MARGIN).min(w - 1);
    let y1 = (y1 + ROI_MARGIN).min(h - 1);
    let roi = Roi {
        x0,
        y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    };
    let has_bg = (0..roi.h).any(|dy| {
        (0..roi.w).any(|dx| trimap.get(x0 + dx, y0 + dy) == TrimapLabel::DefiniteBg)
    });
    if has_bg {
        roi
    } else {
        Roi { x0: 0, y0: 0, w, h }
    }
}

/// Runs the fixed-iteration segmentation and returns a 0/1 plane with the
/// full image dimensions. Definite labels never change.
pub fn segment_iris(img: &ImageBuffer, trimap: &Trimap) -> Result<FloatPlane, IrisError> {
    let labels = segment_labels(img, trimap)?;
    let mut mask = FloatPlane::zeros(trimap.width(), trimap.height());
    for (m, l) in mask.data_mut().iter_mut().zip(&labels) {
        *m = if l.is_foreground() { 1.0 } else { 0.0 };
    }
    Ok(mask)
}

pub(crate) fn segment_labels(
    img: &ImageBuffer,
    trimap: &Trimap,
) -> Result<Vec<TrimapLabel>, IrisError> {
    if img.width() != trimap.width() || img.height() != trimap.height() {
        return Err(IrisError::DimensionMismatch);
    }
    if trimap.count(TrimapLabel::DefiniteFg) == 0 || trimap.count(TrimapLabel::DefiniteBg) == 0 {
        return Err(IrisError::DegenerateTrimap);
    }
    let mut labels = trimap.labels().to_vec();
    let probable = labels.iter().filter(|l| !l.is_definite()).count();
    if probable == 0 {
        return Ok(labels);
    }

    let roi = roi_for(trimap);
    let n = roi.w * roi.h;
    let (iw, ch) = (img.width(), img.channels());
    let colors: Vec<Color> = (0..n)
        .map(|i| {
            let (x, y) = (roi.x0 + i % roi.w, roi.y0 + i / roi.w);
            let p = &img.data()[(y * iw + x) * ch..(y * iw + x) * ch + ch];
            if ch == 3 {
                [p[0] as f64, p[1] as f64, p[2] as f64]
            } else {
                [p[0] as f64; 3]
            }
        })
        .collect();
    let lab = |labels: &[TrimapLabel], i: usize| {
        labels[(roi.y0 + i / roi.w) * trimap.width() + roi.x0 + i % roi.w]
    };

    // Initial colour models from the definite regions.
    let (mut fg_gmm, mut bg_gmm) = {
        let fg: Vec<Color> = (0..n)
            .filter(|&i| lab(&labels, i) == TrimapLabel::DefiniteFg)
            .map(|i| colors[i])
            .collect();
        let bg: Vec<Color> = (0..n)
            .filter(|&i| lab(&labels, i) == TrimapLabel::DefiniteBg)
            .map(|i| colors[i])
            .collect();
        if fg.is_empty() || bg.is_empty() {
            return Err(IrisError::DegenerateTrimap);
        }
        let fk = kmeans(&fg, COMPONENTS, 0x9e37);
        let bk = kmeans(&bg, COMPONENTS, 0x79b9);
        (Gmm::learn(&fg, &fk), Gmm::learn(&bg, &bk))
    };

    // Pairwise weights: left, up-left, up, up-right neighbours.
    const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (-1, -1), (0, -1), (1, -1)];
    let neighbor = |i: usize, d: (isize, isize)| -> Option<usize> {
        let (x, y) = ((i % roi.w) as isize + d.0, (i / roi.w) as isize + d.1);
        (x >= 0 && y >= 0 && x < roi.w as isize && y < roi.h as isize)
            .then(|| y as usize * roi.w + x as usize)
    };
    let beta = {
        let (mut sum, mut cnt) = (0.0, 0usize);
        for i in 0..n {
            for d in NEIGHBORS {
                if let Some(j) = neighbor(i, d) {
                    sum += dist2(&colors[i], &colors[j]);
                    cnt += 1;
                }
            }
        }
        if sum <= f64::EPSILON || cnt == 0 {
            0.0
        } else {
            1.0 / (2.0 * sum / cnt as f64)
        }
    };
    let mut pair_w: Vec<[f64; 4]> = vec![[0.0; 4]; n];
    for i in 0..n {
        for (k, d) in NEIGHBORS.iter().enumerate() {
            if let Some(j) = neighbor(i, *d) {
                let geo = if d.0 != 0 && d.1 != 0 {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                pair_w[i][k] = GAMMA / geo * (-beta * dist2(&colors[i], &colors[j])).exp();
            }
        }
    }

    let free: Vec<usize> = (0..n).filter(|&i| !lab(trimap.labels(), i).is_definite()).collect();
    let mut node_of = vec![usize::MAX; n];
    for (node, &i) in free.iter().enumerate() {
        node_of[i] = node;
    }
    let mut comp = vec![0usize; n];
    for _ in 0..GRABCUT_ITERATIONS {
        // Assign components and refit both mixtures on the current partition.
        let (mut fg_s, mut fg_c, mut bg_s, mut bg_c) = (vec![], vec![], vec![], vec![]);
        for i in 0..n {
            let z = &colors[i];
            if lab(&labels, i).is_foreground() {
                comp[i] = fg_gmm.most_likely(z);
                fg_s.push(*z);
                fg_c.push(comp[i]);
            } else {
                comp[i] = bg_gmm.most_likely(z);
                bg_s.push(*z);
                bg_c.push(comp[i]);
            }
        }
        fg_gmm = Gmm::learn(&fg_s, &fg_c);
        bg_gmm = Gmm::learn(&bg_s, &bg_c);

        // Definite pixels never change side (their terminal weight exceeds
        // the sum of their pairwise weights), so only probable pixels become
        // graph nodes; edges to definite neighbours fold into terminals.
        let mut g = Graph::new(free.len(), 4 * free.len());
        for (node, &i) in free.iter().enumerate() {
            g.add_tweights(
                node,
                bg_gmm.data_cost(&colors[i]),
                fg_gmm.data_cost(&colors[i]),
            );
        }
        for (node, &i) in free.iter().enumerate() {
            for (k, d) in NEIGHBORS.iter().enumerate() {
                let Some(j) = neighbor(i, *d) else { continue };
                let w = pair_w[i][k];
                match lab(trimap.labels(), j) {
                    TrimapLabel::DefiniteFg => g.add_tweights(node, w, 0.0),
                    TrimapLabel::DefiniteBg => g.add_tweights(node, 0.0, w),
                    _ => g.add_edge(node, node_of[j], w, w),
                }
            }
            // Edges whose other end is a definite pixel listed later in
            // scan order.
            for (k, d) in NEIGHBORS.iter().enumerate() {
                let back = (-d.0, -d.1);
                let Some(j) = neighbor(i, back) else { continue };
                let w = pair_w[j][k];
                match lab(trimap.labels(), j) {
                    TrimapLabel::DefiniteFg => g.add_tweights(node, w, 0.0),
                    TrimapLabel::DefiniteBg => g.add_tweights(node, 0.0, w),
                    _ => {}
                }
            }
        }
        g.maxflow();
        for (node, &i) in free.iter().enumerate() {
            let idx = (roi.y0 + i / roi.w) * trimap.width() + roi.x0 + i % roi.w;
            labels[idx] = if g.in_source(node) {
                TrimapLabel::ProbableFg
            } else {
                TrimapLabel::ProbableBg
            };
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iris::trimap::build_trimap;
    use crate::iris::InitialIrisEstimate;

    fn disk_image(cx: f64, cy: f64, r: f64) -> ImageBuffer {
        let mut img = ImageBuffer::new(200, 160, 3);
        for y in 0..160 {
            for x in 0..200 {
                let inside = (x as f64 - cx).hypot(y as f64 - cy) <= r;
                let v = if inside { 40 } else { 220 };
                for c in 0..3 {
                    img.set(x, y, c, v);
                }
            }
        }
        img
    }

    fn iou(mask: &FloatPlane, cx: f64, cy: f64, r: f64) -> f64 {
        let (mut inter, mut uni) = (0, 0);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let t = (x as f64 - cx).hypot(y as f64 - cy) <= r;
                let m = mask.get(x, y) > 0.5;
                inter += (t && m) as u32;
                uni += (t || m) as u32;
            }
        }
        inter as f64 / uni as f64
    }

    #[test]
    fn no_probable_pixels_keeps_definite_labels() {
        let img = disk_image(100.0, 80.0, 30.0);
        let labels: Vec<TrimapLabel> = (0..200 * 160)
            .map(|i| {
                if (i % 200) < 100 {
                    TrimapLabel::DefiniteFg
                } else {
                    TrimapLabel::DefiniteBg
                }
            })
            .collect();
        let t = Trimap::from_labels(200, 160, labels);
        let mask = segment_iris(&img, &t).unwrap();
        for y in 0..160 {
            for x in 0..200 {
                assert_eq!(mask.get(x, y), if x < 100 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn dark_disk_on_bright_sclera() {
        let img = disk_image(100.0, 80.0, 40.0);
        let est = InitialIrisEstimate {
            center: (100.0, 80.0),
            width: 80.0,
            height: 80.0,
        };
        let t = build_trimap(200, 160, &est).unwrap();
        let mask = segment_iris(&img, &t).unwrap();
        assert!(iou(&mask, 100.0, 80.0, 40.0) >= 0.95);
    }

    #[test]
    fn offset_trimap_stays_robust() {
        let img = disk_image(100.0, 80.0, 40.0);
        let est = InitialIrisEstimate {
            center: (108.0, 80.0),
            width: 80.0,
            height: 80.0,
        };
        let t = build_trimap(200, 160, &est).unwrap();
        let mask = segment_iris(&img, &t).unwrap();
        assert!(iou(&mask, 100.0, 80.0, 40.0) >= 0.90);
    }

    #[test]
    fn degenerate_trimap_is_an_error() {
        let img = disk_image(100.0, 80.0, 40.0);
        let t = Trimap::from_labels(200, 160, vec![TrimapLabel::ProbableFg; 200 * 160]);
        assert!(matches!(segment_iris(&img, &t), Err(IrisError::DegenerateTrimap)));
    }
}
