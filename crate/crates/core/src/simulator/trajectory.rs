use serde::{Deserialize, Serialize};

pub const SPEED_PX_S: f64 = 100.0;
pub const HORIZONTAL_PATHS: usize = 9;
pub const VERTICAL_PATHS: usize = 5;
/// Path lengths follow from 3.5 s and 7.1 s at 100 px/s.
pub const HORIZONTAL_EXTENT: f64 = 350.0;
pub const VERTICAL_EXTENT: f64 = 710.0;
pub const WARMUP_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Session clock; paths run back to back.
    pub t: f64,
    /// Time since the start of this path.
    pub t_path: f64,
    pub gaze_px: (f64, f64),
    pub path_id: usize,
    pub path_kind: PathKind,
    pub in_warmup: bool,
}

/// Cross-hatch of 9 horizontal and 5 vertical smooth-pursuit paths centered
/// on the screen. Horizontal lines are equally spaced across the vertical
/// extent and vice versa; successive paths of a kind alternate direction.
pub fn gen_trajectory(screen_dims: (usize, usize), fps: f64) -> Vec<TrajectorySample> {
    assert!(fps > 0.0, "fps must be positive");
    let (cx, cy) = (screen_dims.0 as f64 / 2.0, screen_dims.1 as f64 / 2.0);
    let (x0, y0) = (cx - HORIZONTAL_EXTENT / 2.0, cy - VERTICAL_EXTENT / 2.0);
    let mut paths: Vec<(PathKind, (f64, f64), (f64, f64))> = Vec::new();
    for k in 0..HORIZONTAL_PATHS {
        let y = y0 + VERTICAL_EXTENT * k as f64 / (HORIZONTAL_PATHS - 1) as f64;
        let (a, b) = (x0, x0 + HORIZONTAL_EXTENT);
        let (s, e) = if k % 2 == 0 { (a, b) } else { (b, a) };
        paths.push((PathKind::Horizontal, (s, y), (e, y)));
    }
    for k in 0..VERTICAL_PATHS {
        let x = x0 + HORIZONTAL_EXTENT * k as f64 / (VERTICAL_PATHS - 1) as f64;
        let (a, b) = (y0, y0 + VERTICAL_EXTENT);
        let (s, e) = if k % 2 == 0 { (a, b) } else { (b, a) };
        paths.push((PathKind::Vertical, (x, s), (x, e)));
    }

    let mut out = Vec::new();
    let mut clock = 0.0;
    for (path_id, (kind, start, end)) in paths.into_iter().enumerate() {
        let len = (end.0 - start.0).hypot(end.1 - start.1);
        let duration = len / SPEED_PX_S;
        let n = (duration * fps).round() as usize;
        let dir = ((end.0 - start.0) / len, (end.1 - start.1) / len);
        for i in 0..n {
            let t_path = i as f64 / fps;
            let d = SPEED_PX_S * t_path;
            out.push(TrajectorySample {
                t: clock + t_path,
                t_path,
                gaze_px: (start.0 + dir.0 * d, start.1 + dir.1 * d),
                path_id,
                path_kind: kind,
                in_warmup: t_path < WARMUP_S - 1e-9,
            });
        }
        clock += n as f64 / fps;
    }
    out
}
