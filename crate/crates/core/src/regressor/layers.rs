//! Batched dense and strided-convolution kernels over row-major buffers.
//!
//! Activations are stored sample-major; convolution maps are channel-last
//! (`h x w x c`). Backward passes accumulate into the gradient buffers.

use crate::scalar::Real;

/// 3x3 convolution, stride 2, zero padding 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvGeom {
    pub const fn new(h: usize, w: usize, cin: usize, cout: usize) -> Self {
        Self { h, w, cin, cout }
    }

    pub const fn ho(&self) -> usize {
        self.h.div_ceil(2)
    }

    pub const fn wo(&self) -> usize {
        self.w.div_ceil(2)
    }

    /// Patch length, `9 * cin`.
    pub const fn k(&self) -> usize {
        9 * self.cin
    }

    pub const fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    pub const fn out_len(&self) -> usize {
        self.ho() * self.wo() * self.cout
    }

    /// The layer that consumes this one's output.
    pub const fn next(&self, cout: usize) -> Self {
        Self::new(self.ho(), self.wo(), self.cout, cout)
    }
}

pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, n: usize) -> Vec<T> {
    let (ho, wo, k) = (g.ho(), g.wo(), g.k());
    let mut col = vec![T::zero(); n * ho * wo * k];
    for s in 0..n {
        let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut col[((s * ho + oy) * wo + ox) * k..][..k];
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.w + ix as usize) * g.cin;
                        let dst = (ky * 3 + kx) * g.cin;
                        row[dst..dst + g.cin].copy_from_slice(&xs[src..src + g.cin]);
                    }
                }
            }
        }
    }
    col
}

pub fn col2im<T: Real>(dcol: &[T], g: &ConvGeom, n: usize) -> Vec<T> {
    let (ho, wo, k) = (g.ho(), g.wo(), g.k());
    let mut dx = vec![T::zero(); n * g.in_len()];
    for s in 0..n {
        let xs = &mut dx[s * g.in_len()..(s + 1) * g.in_len()];
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &dcol[((s * ho + oy) * wo + ox) * k..][..k];
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * g.cin;
                        let src = (ky * 3 + kx) * g.cin;
                        for c in 0..g.cin {
                            xs[dst + c] = xs[dst + c] + row[src + c];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `y = x w^T + b` with `w` stored `out x inp`.
pub fn dense_forward<T: Real>(x: &[T], n: usize, w: &[T], b: &[T], inp: usize, out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    T::gemm(n, inp, out, T::one(), x, false, w, true, T::one(), &mut y);
    y
}

/// Accumulates `dw`, `db`; returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    w: &[T],
    inp: usize,
    out: usize,
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    T::gemm(out, n, inp, T::one(), dy, true, x, false, T::one(), dw);
    for row in dy.chunks_exact(out) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g = *g + d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![T::zero(); n * inp];
        T::gemm(n, out, inp, T::one(), dy, false, w, false, T::zero(), &mut dx);
        dx
    })
}

pub fn relu<T: Real>(y: &mut [T]) {
    for v in y {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `dy` where the rectified output `y` is not positive.
pub fn relu_backward<T: Real>(dy: &mut [T], y: &[T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], g: &ConvGeom, w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; g.out_len()];
        for oy in 0..g.ho() {
            for ox in 0..g.wo() {
                for co in 0..g.cout {
                    let mut acc = b[co];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (2 * oy as isize + ky as isize - 1, 2 * ox as isize + kx as isize - 1);
                            if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                continue;
                            }
                            for ci in 0..g.cin {
                                acc += w[co * g.k() + (ky * 3 + kx) * g.cin + ci]
                                    * x[(iy as usize * g.w + ix as usize) * g.cin + ci];
                            }
                        }
                    }
                    y[(oy * g.wo() + ox) * g.cout + co] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn geometry() {
        let g = ConvGeom::new(101, 50, 1, 8);
        assert_eq!((g.ho(), g.wo()), (51, 25));
        let g2 = g.next(16);
        assert_eq!((g2.ho(), g2.wo(), g2.out_len()), (26, 13, 26 * 13 * 16));
    }

    #[test]
    fn conv_via_im2col_matches_direct() {
        let g = ConvGeom::new(7, 6, 2, 3);
        let x: Vec<f64> = (0..2 * g.in_len()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let w: Vec<f64> = (0..g.cout * g.k()).map(|i| ((i * 5 % 11) as f64 - 5.0) / 7.0).collect();
        let b = vec![0.1, -0.2, 0.3];
        let col = im2col(&x, &g, 2);
        let y = dense_forward(&col, 2 * g.ho() * g.wo(), &w, &b, g.k(), g.cout);
        for s in 0..2 {
            let want = naive_conv(&x[s * g.in_len()..(s + 1) * g.in_len()], &g, &w, &b);
            for (a, e) in y[s * g.out_len()..(s + 1) * g.out_len()].iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::new(5, 8, 3, 1);
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.31).sin()).collect();
        let c: Vec<f64> = (0..g.ho() * g.wo() * g.k()).map(|i| (i as f64 * 0.17).cos()).collect();
        let lhs: f64 = im2col(&x, &g, 1).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&c, &g, 1)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn dense_backward_shapes_and_values() {
        // y = x w^T + b with one sample: dw = dy^T x, dx = dy w
        let (x, w, b) = (vec![1.0, 2.0], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![0.5, 0.0, -1.0]);
        assert_eq!(dense_forward(&x, 1, &w, &b, 2, 3), vec![1.5, 2.0, 2.0]);
        let (mut dw, mut db) = (vec![0.0; 6], vec![0.0; 3]);
        let dx = dense_backward(&x, &[1.0, -1.0, 2.0], 1, &w, 2, 3, &mut dw, &mut db, true).unwrap();
        assert_eq!(dw, vec![1.0, 2.0, -1.0, -2.0, 2.0, 4.0]);
        assert_eq!(db, vec![1.0, -1.0, 2.0]);
        assert_eq!(dx, vec![3.0, 1.0]);
    }
}
