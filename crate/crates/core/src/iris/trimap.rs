use super::{InitialIrisEstimate, IrisError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimapLabel {
    DefiniteFg,
    ProbableFg,
    ProbableBg,
    DefiniteBg,
}

impl TrimapLabel {
    pub fn is_definite(self) -> bool {
        matches!(self, TrimapLabel::DefiniteFg | TrimapLabel::DefiniteBg)
    }

    pub fn is_foreground(self) -> bool {
        matches!(self, TrimapLabel::DefiniteFg | TrimapLabel::ProbableFg)
    }
}

/// Per-pixel four-way labeling seeding the iris segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trimap {
    width: usize,
    height: usize,
    labels: Vec<TrimapLabel>,
}

/// Disk radii `(definite fg, probable fg, probable bg)` for an estimate.
///
/// The inner radius scales with the iris height, the outer two with its
/// width.
pub fn trimap_radii(est: &InitialIrisEstimate) -> (f64, f64, f64) {
    (0.4 * est.height, 0.5 * est.width, 0.65 * est.width)
}

impl Trimap {
    pub fn from_labels(width: usize, height: usize, labels: Vec<TrimapLabel>) -> Self {
        assert_eq!(labels.len(), width * height);
        Self {
            width,
            height,
            labels,
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
    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> TrimapLabel {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: TrimapLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Concentric-disk trimap about the estimate center.
pub fn build_trimap(
    width: usize,
    height: usize,
    est: &InitialIrisEstimate,
) -> Result<Trimap, IrisError> {
    let (cx, cy) = est.center;
    if !(cx >= 0.0 && cy >= 0.0 && cx <= (width - 1) as f64 && cy <= (height - 1) as f64) {
        return Err(IrisError::EstimateOutOfFrame { x: cx, y: cy });
    }
    let (r1, r2, r3) = trimap_radii(est);
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            labels.push(if d <= r1 {
                TrimapLabel::DefiniteFg
            } else if d <= r2 {
                TrimapLabel::ProbableFg
            } else if d <= r3 {
                TrimapLabel::ProbableBg
            } else {
                TrimapLabel::DefiniteBg
            });
        }
    }
    Ok(Trimap {
        width,
        height,
        labels,
    })
}
