//! Iris-circle refinement: trimap, GrabCut segmentation, contour tracing,
//! eyelid filtering, RANSAC and geometric circle fitting.

pub mod circle;
pub mod contour;
pub mod grabcut;
pub mod maxflow;
pub mod trimap;

use thiserror::Error;

use crate::imaging::{FloatPlane, ImageBuffer};

pub use circle::{fit_circle_lsq, ransac_circle, Circle, RansacConfig, RansacFit};
pub use contour::{extract_contour, filter_eyelid_points, ContourPoint};
pub use grabcut::segment_iris;
pub use trimap::{build_trimap, Trimap, TrimapLabel};

/// Refined iris in eye-image pixel coordinates.
pub type IrisCircle = Circle<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrisError {
    #[error("initial estimate center ({x:.1}, {y:.1}) lies outside the eye image")]
    EstimateOutOfFrame { x: f64, y: f64 },
    #[error("trimap has no definite foreground or no definite background")]
    DegenerateTrimap,
    #[error("image and trimap dimensions differ")]
    DimensionMismatch,
    #[error("segmentation mask has no foreground pixels")]
    EmptyMask,
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("no circle reached a consensus of 3 points")]
    NoConsensus,
    #[error("points are collinear")]
    CollinearPoints,
    #[error("invalid initial estimate: {0}")]
    InvalidEstimate(&'static str),
}

/// Noisy landmark-style iris estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InitialIrisEstimate {
    pub center: (f64, f64),
    pub width: f64,
    pub height: f64,
}

impl InitialIrisEstimate {
    pub fn new(center: (f64, f64), width: f64, height: f64) -> Result<Self, IrisError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(IrisError::InvalidEstimate("width and height must be positive"));
        }
        if !(center.0.is_finite() && center.1.is_finite()) {
            return Err(IrisError::InvalidEstimate("center must be finite"));
        }
        Ok(Self {
            center,
            width,
            height,
        })
    }

    /// The estimate itself as a circle of radius `width / 2`.
    pub fn as_circle(&self) -> IrisCircle {
        Circle::new(self.center.0, self.center.1, self.width / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrisFit {
    pub circle: IrisCircle,
    /// True when the estimate was returned unrefined.
    pub degraded: bool,
    pub inliers: usize,
    pub contour_points: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LocateConfig {
    pub ransac: RansacConfig,
    /// Minimum luma standard deviation inside the probable-background disk.
    pub min_contrast: f64,
    /// Allowed center displacement from the estimate, in estimate radii.
    pub max_shift: f64,
    /// Accepted fitted radius range, as multiples of the estimate radius.
    pub radius_range: (f64, f64),
}

impl Default for LocateConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            min_contrast: 4.0,
            max_shift: 0.5,
            radius_range: (0.5, 1.5),
        }
    }
}

// Luma spread over the disk the segmentation can relabel.
fn local_contrast(img: &ImageBuffer, est: &InitialIrisEstimate) -> f64 {
    let (_, _, r3) = trimap::trimap_radii(est);
    let (cx, cy) = est.center;
    let ch = img.channels();
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
    let y0 = (cy - r3).floor().max(0.0) as usize;
    let y1 = ((cy + r3).ceil() as usize).min(img.height() - 1);
    let x0 = (cx - r3).floor().max(0.0) as usize;
    let x1 = ((cx + r3).ceil() as usize).min(img.width() - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if (x as f64 - cx).hypot(y as f64 - cy) > r3 {
                continue;
            }
            let v = (0..ch).map(|c| img.get(x, y, c) as f64).sum::<f64>() / ch as f64;
            s += v;
            s2 += v * v;
            n += 1.0;
        }
    }
    if n < 2.0 {
        return 0.0;
    }
    let m = s / n;
    (s2 / n - m * m).max(0.0).sqrt()
}

/// Full refinement pipeline. Contour pixel centers sit half a pixel inside
/// the iris edge; the fitted radius is corrected by that amount.
pub fn locate_iris_with(
    img: &ImageBuffer,
    est: &InitialIrisEstimate,
    cfg: &LocateConfig,
) -> Result<(IrisFit, Option<FloatPlane>), IrisError> {
    let trimap = build_trimap(img.width(), img.height(), est)?;
    let fallback = |contour_points| IrisFit {
        circle: est.as_circle(),
        degraded: true,
        inliers: 0,
        contour_points,
    };
    if local_contrast(img, est) < cfg.min_contrast {
        return Ok((fallback(0), None));
    }
    let mask = segment_iris(img, &trimap)?;
    let contour = match extract_contour(&mask) {
        Ok(c) => c,
        Err(IrisError::EmptyMask) => return Ok((fallback(0), Some(mask))),
        Err(e) => return Err(e),
    };
    let kept: Vec<(f64, f64)> = filter_eyelid_points(&contour)
        .iter()
        .map(|p| (p.x, p.y))
        .collect();
    let fit = match ransac_circle(&kept, &cfg.ransac) {
        Ok(f) => f,
        Err(IrisError::NoConsensus | IrisError::TooFewPoints(_) | IrisError::CollinearPoints) => {
            return Ok((fallback(contour.len()), Some(mask)))
        }
        Err(e) => return Err(e),
    };
    let mut c = fit.circle;
    c.radius += 0.5;
    let r0 = est.width / 2.0;
    let shift = (c.cx - est.center.0).hypot(c.cy - est.center.1);
    let sane = c.is_valid()
        && shift <= cfg.max_shift * r0
        && c.radius >= cfg.radius_range.0 * r0
        && c.radius <= cfg.radius_range.1 * r0;
    if !sane {
        return Ok((fallback(contour.len()), Some(mask)));
    }
    Ok((
        IrisFit {
            circle: c,
            degraded: false,
            inliers: fit.inliers.len(),
            contour_points: contour.len(),
        },
        Some(mask),
    ))
}

/// Refines `est` into an iris circle; falls back to the estimate (flagged
/// `degraded`) when segmentation gives no usable boundary.
pub fn locate_iris(img: &ImageBuffer, est: &InitialIrisEstimate) -> Result<IrisFit, IrisError> {
    locate_iris_with(img, est, &LocateConfig::default()).map(|(f, _)| f)
}
