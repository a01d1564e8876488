//! Circle estimation: algebraic (Kåsa) initialisation, geometric
//! Gauss–Newton refinement and RANSAC outlier rejection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::IrisError;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Circle<T> {
    pub cx: T,
    pub cy: T,
    pub radius: T,
}

impl<T: Real> Circle<T> {
    pub fn new(cx: T, cy: T, radius: T) -> Self {
        Self { cx, cy, radius }
    }

    pub fn diameter(&self) -> T {
        self.radius + self.radius
    }

    pub fn center(&self) -> (T, T) {
        (self.cx, self.cy)
    }

    /// Signed geometric distance of `p` from the circle.
    #[inline]
    pub fn residual(&self, p: (T, T)) -> T {
        (p.0 - self.cx).hypot(p.1 - self.cy) - self.radius
    }

    pub fn cast<U: Real>(&self) -> Circle<U> {
        Circle {
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            radius: U::lit(self.radius.as_f64()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.radius.is_finite() && self.radius > T::zero()
    }
}

/// Sum of squared geometric residuals.
pub fn geometric_cost<T: Real>(c: &Circle<T>, pts: &[(T, T)]) -> T {
    pts.iter().map(|&p| c.residual(p).powi(2)).sum()
}

fn solve3<T: Real>(mut a: [[T; 3]; 3], mut b: [T; 3]) -> Option<[T; 3]> {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[piv][col].abs() <= T::min_positive_value() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] = a[row][k] - f * a[col][k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = [T::zero(); 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s = s - a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Algebraic least-squares circle (minimises `sum (x^2 + y^2 + Dx + Ey + F)^2`).
pub fn kasa_fit<T: Real>(pts: &[(T, T)]) -> Result<Circle<T>, IrisError> {
    if pts.len() < 3 {
        return Err(IrisError::TooFewPoints(pts.len()));
    }
    let n = T::lit(pts.len() as f64);
    let mx = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz, mut sz) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for &(x, y) in pts {
        let (u, v) = (x - mx, y - my);
        let z = u * u + v * v;
        sxx = sxx + u * u;
        sxy = sxy + u * v;
        syy = syy + v * v;
        sxz = sxz + u * z;
        syz = syz + v * z;
        sz = sz + z;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy) * (sxx + syy);
    if scale <= T::zero() || det <= scale * T::lit(1e-12) {
        return Err(IrisError::CollinearPoints);
    }
    // Centered coordinates decouple F from (D, E).
    let d = -(sxz * syy - syz * sxy) / det;
    let e = -(syz * sxx - sxz * sxy) / det;
    let f = -sz / n;
    let (a, b) = (-d / T::lit(2.0), -e / T::lit(2.0));
    let r2 = a * a + b * b - f;
    if !(r2 > T::zero()) {
        return Err(IrisError::CollinearPoints);
    }
    Ok(Circle::new(a + mx, b + my, r2.sqrt()))
}

pub const GN_MAX_ITERS: usize = 100;
pub const GN_STEP_TOL: f64 = 1e-9;

/// Geometric circle fit plus the cost after every accepted iterate
/// (starting with the algebraic initialisation).
pub fn fit_circle_lsq_traced<T: Real>(pts: &[(T, T)]) -> Result<(Circle<T>, Vec<T>), IrisError> {
    let mut c = kasa_fit(pts)?;
    let mut cost = geometric_cost(&c, pts);
    let mut history = vec![cost];
    for _ in 0..GN_MAX_ITERS {
        let mut jtj = [[T::zero(); 3]; 3];
        let mut jtr = [T::zero(); 3];
        for &(x, y) in pts {
            let (dx, dy) = (x - c.cx, y - c.cy);
            let d = dx.hypot(dy);
            if d <= T::epsilon() {
                continue;
            }
            let j = [-dx / d, -dy / d, -T::one()];
            let r = d - c.radius;
            for a in 0..3 {
                jtr[a] = jtr[a] + j[a] * r;
                for b in 0..3 {
                    jtj[a][b] = jtj[a][b] + j[a] * j[b];
                }
            }
        }
        let Some(step) = solve3(jtj, [-jtr[0], -jtr[1], -jtr[2]]) else {
            break;
        };
        let norm = (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt();
        // Halve the step until the cost does not increase.
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand = Circle::new(c.cx + t * step[0], c.cy + t * step[1], c.radius + t * step[2]);
            let cc = geometric_cost(&cand, pts);
            if cc <= cost {
                accepted = Some((cand, cc));
                break;
            }
            t = t / T::lit(2.0);
        }
        let Some((cand, cc)) = accepted else { break };
        c = cand;
        cost = cc;
        history.push(cost);
        if (t * norm).as_f64() < GN_STEP_TOL {
            break;
        }
    }
    if c.radius < T::zero() {
        c.radius = -c.radius;
    }
    if !c.is_valid() {
        return Err(IrisError::CollinearPoints);
    }
    Ok((c, history))
}

/// Minimises `sum (dist(p, center) - r)^2` by damped Gauss–Newton from the
/// algebraic fit.
pub fn fit_circle_lsq<T: Real>(pts: &[(T, T)]) -> Result<Circle<T>, IrisError> {
    fit_circle_lsq_traced(pts).map(|(c, _)| c)
}

/// Circle through three points; `None` when they are (nearly) collinear.
pub fn circumscribed<T: Real>(a: (T, T), b: (T, T), c: (T, T)) -> Option<Circle<T>> {
    let (bx, by) = (b.0 - a.0, b.1 - a.1);
    let (cx, cy) = (c.0 - a.0, c.1 - a.1);
    let d = T::lit(2.0) * (bx * cy - by * cx);
    let scale = (bx * bx + by * by) * (cx * cx + cy * cy);
    if d.abs() <= T::epsilon().sqrt() * scale.sqrt().max(T::epsilon()) {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let circle = Circle::new(a.0 + ux, a.1 + uy, ux.hypot(uy));
    circle.is_valid().then_some(circle)
}

#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    pub n_iter: usize,
    pub inlier_tol: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            n_iter: 200,
            inlier_tol: 1.5,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacFit<T> {
    /// Indices into the input slice, ascending.
    pub inliers: Vec<usize>,
    pub circle: Circle<T>,
}

/// Consensus of `circle` over `pts`: inlier indices and summed |residual|.
pub fn consensus<T: Real>(circle: &Circle<T>, pts: &[(T, T)], tol: T) -> (Vec<usize>, T) {
    let mut idx = Vec::new();
    let mut resid = T::zero();
    for (i, &p) in pts.iter().enumerate() {
        let r = circle.residual(p).abs();
        if r <= tol {
            idx.push(i);
            resid = resid + r;
        }
    }
    (idx, resid)
}

/// RANSAC over circumscribed circles of random triples, followed by a
/// geometric refit on the winning consensus set.
///
/// Triples are drawn as positions in the `(y, x)`-sorted point order, so
/// the selected inlier set does not depend on the input order.
pub fn ransac_circle<T: Real>(
    pts: &[(T, T)],
    cfg: &RansacConfig,
) -> Result<RansacFit<T>, IrisError> {
    let n = pts.len();
    if n < 3 {
        return Err(IrisError::TooFewPoints(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        (pts[i].1, pts[i].0)
            .partial_cmp(&(pts[j].1, pts[j].0))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let tol = T::lit(cfg.inlier_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<usize>, T)> = None;
    for _ in 0..cfg.n_iter {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for lo in [i.min(j), i.max(j)] {
            if k >= lo {
                k += 1;
            }
        }
        let Some(c) = circumscribed(pts[order[i]], pts[order[j]], pts[order[k]]) else {
            continue;
        };
        let (inl, resid) = consensus(&c, pts, tol);
        let better = match &best {
            None => true,
            Some((b, br)) => inl.len() > b.len() || (inl.len() == b.len() && resid < *br),
        };
        if better {
            best = Some((inl, resid));
        }
    }
    let Some((inliers, _)) = best.filter(|(b, _)| b.len() >= 3) else {
        return Err(IrisError::NoConsensus);
    };
    let winners: Vec<(T, T)> = inliers.iter().map(|&i| pts[i]).collect();
    let circle = fit_circle_lsq(&winners)?;
    Ok(RansacFit { inliers, circle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn on_circle(n: usize, cx: f64, cy: f64, r: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                (cx + r * t.cos(), cy + r * t.sin())
            })
            .collect()
    }

    #[test]
    fn exact_points_are_recovered() {
        let pts = on_circle(12, 31.5, -7.25, 17.0);
        let c = fit_circle_lsq(&pts).unwrap();
        assert!((c.cx - 31.5).abs() < 1e-9);
        assert!((c.cy + 7.25).abs() < 1e-9);
        assert!((c.radius - 17.0).abs() < 1e-9);
    }

    #[test]
    fn works_in_single_precision() {
        let pts: Vec<(f32, f32)> = on_circle(30, 100.0, 80.0, 45.0)
            .into_iter()
            .map(|(x, y)| (x as f32, y as f32))
            .collect();
        let c = fit_circle_lsq(&pts).unwrap();
        assert!((c.cx - 100.0).abs() < 1e-3 && (c.radius - 45.0).abs() < 1e-3);
    }

    #[test]
    fn square_pushed_outward() {
        let pts: Vec<(f64, f64)> = on_circle(4, 0.0, 0.0, 11.0);
        let c = fit_circle_lsq(&pts).unwrap();
        assert!(c.cx.abs() < 1e-9 && c.cy.abs() < 1e-9);
        assert!((c.radius - 11.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_rejected() {
        let pts = vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (5.0, 5.0)];
        assert!(matches!(fit_circle_lsq(&pts), Err(IrisError::CollinearPoints)));
        assert!(circumscribed((0.0, 0.0), (1.0, 0.0), (2.0, 0.0)).is_none());
    }

    fn noisy_fixture() -> (Vec<(f64, f64)>, (f64, f64, f64)) {
        let truth = (40.0, 25.0, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let pts = (0..50)
            .map(|i| {
                let t = i as f64 / 50.0 * std::f64::consts::TAU;
                let r = truth.2 + noise.sample(&mut rng);
                (truth.0 + r * t.cos(), truth.1 + r * t.sin())
            })
            .collect();
        (pts, truth)
    }

    #[test]
    fn beats_grid_search_oracle() {
        let (pts, truth) = noisy_fixture();
        let fit = fit_circle_lsq(&pts).unwrap();
        let fit_cost = geometric_cost(&fit, &pts);
        let mut grid_best = f64::INFINITY;
        for i in -20..=20 {
            for j in -20..=20 {
                for k in -20..=20 {
                    let c = Circle::new(
                        truth.0 + 0.05 * i as f64,
                        truth.1 + 0.05 * j as f64,
                        truth.2 + 0.05 * k as f64,
                    );
                    grid_best = grid_best.min(geometric_cost(&c, &pts));
                }
            }
        }
        assert!(fit_cost <= grid_best, "fit {fit_cost} grid {grid_best}");
    }

    #[test]
    fn cost_never_increases() {
        let (mut pts, _) = noisy_fixture();
        // Skewed arc so the algebraic start is off the optimum.
        pts.truncate(15);
        let (_, hist) = fit_circle_lsq_traced(&pts).unwrap();
        assert!(hist.len() >= 2);
        for w in hist.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    fn outlier_fixture() -> Vec<(f64, f64)> {
        let mut pts = on_circle(20, 100.0, 100.0, 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..8 {
            pts.push((rng.random_range(40.0..160.0), rng.random_range(40.0..160.0)));
        }
        pts
    }

    #[test]
    fn ransac_exact_circle() {
        let pts = on_circle(20, 3.0, 4.0, 9.0);
        let fit = ransac_circle(&pts, &RansacConfig::default()).unwrap();
        assert_eq!(fit.inliers.len(), 20);
        assert!((fit.circle.cx - 3.0).abs() < 1e-9 && (fit.circle.radius - 9.0).abs() < 1e-9);
    }

    #[test]
    fn ransac_matches_exhaustive_search() {
        let pts = outlier_fixture();
        let cfg = RansacConfig::default();
        let fit = ransac_circle(&pts, &cfg).unwrap();
        assert!((fit.circle.cx - 100.0).abs() <= 0.5 && (fit.circle.cy - 100.0).abs() <= 0.5);

        // Exhaustive oracle over every triple.
        let n = pts.len();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    if let Some(c) = circumscribed(pts[i], pts[j], pts[k]) {
                        let (inl, r) = consensus(&c, &pts, cfg.inlier_tol);
                        let better = match &best {
                            None => true,
                            Some((b, br)) => inl.len() > b.len() || (inl.len() == b.len() && r < *br),
                        };
                        if better {
                            best = Some((inl, r));
                        }
                    }
                }
            }
        }
        let (oracle, _) = best.unwrap();
        assert_eq!(fit.inliers, oracle);
    }

    #[test]
    fn ransac_is_permutation_invariant() {
        let pts = outlier_fixture();
        let cfg = RansacConfig::default();
        let a = ransac_circle(&pts, &cfg).unwrap();
        let mut shuffled: Vec<(usize, (f64, f64))> = pts.iter().copied().enumerate().collect();
        shuffled.reverse();
        shuffled.rotate_left(7);
        let perm: Vec<(f64, f64)> = shuffled.iter().map(|p| p.1).collect();
        let b = ransac_circle(&perm, &cfg).unwrap();
        let mut mapped: Vec<usize> = b.inliers.iter().map(|&i| shuffled[i].0).collect();
        mapped.sort_unstable();
        assert_eq!(a.inliers, mapped);
    }

    #[test]
    fn ransac_degenerate_inputs() {
        let collinear = vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        assert!(matches!(
            ransac_circle(&collinear, &RansacConfig::default()),
            Err(IrisError::NoConsensus)
        ));
        assert!(matches!(
            ransac_circle(&collinear[..2], &RansacConfig::default()),
            Err(IrisError::TooFewPoints(2))
        ));
    }
}
