use std::collections::VecDeque;

use super::IrisError;
use crate::imaging::FloatPlane;

/// Boundary pixel with the acute angle (degrees, `[0, 90]`) between the
/// local contour tangent and the horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourPoint {
    pub x: f64,
    pub y: f64,
    pub local_angle: f64,
}

/// Half-width, in contour points, of the tangent estimation window.
pub const TANGENT_WINDOW: usize = 2;

/// Angle below which a contour point is treated as eyelid edge.
pub const EYELID_ANGLE_DEG: f64 = 45.0;

// Clockwise on screen (y grows downward).
const DIRS: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn largest_component(fg: &[bool], w: usize, h: usize) -> Option<Vec<bool>> {
    let mut label = vec![0u32; w * h];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 1u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        let id = next;
        next += 1;
        label[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in DIRS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if fg[j] && label[j] == 0 {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    best.map(|(id, _)| label.iter().map(|&l| l == id).collect())
}

/// Ordered outer boundary of the largest 8-connected foreground component.
pub fn extract_contour(mask: &FloatPlane) -> Result<Vec<ContourPoint>, IrisError> {
    let (w, h) = (mask.width(), mask.height());
    let fg: Vec<bool> = mask.data().iter().map(|&v| v > 0.5).collect();
    let comp = largest_component(&fg, w, h).ok_or(IrisError::EmptyMask)?;
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && x < w as isize && y < h as isize && comp[y as usize * w + x as usize]
    };

    let start = comp.iter().position(|&b| b).unwrap();
    let s = ((start % w) as isize, (start / w) as isize);
    let mut pts = vec![s];
    // Moore-neighbour tracing; the pixel west of the start is background.
    let mut p = s;
    let mut back = 4usize;
    let limit = 4 * w * h + 8;
    for _ in 0..limit {
        let mut step = None;
        for k in 1..=8 {
            let d = (back + k) % 8;
            let q = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
            if inside(q.0, q.1) {
                step = Some((q, d));
                break;
            }
        }
        let Some((q, d)) = step else { break };
        if p == s && pts.len() > 1 && q == pts[1] {
            break;
        }
        // The neighbour scanned just before `q` is background; keep it as
        // the backtrack position relative to `q`.
        let prev = (p.0 + DIRS[(d + 7) % 8].0, p.1 + DIRS[(d + 7) % 8].1);
        let rel = (prev.0 - q.0, prev.1 - q.1);
        back = DIRS.iter().position(|&dd| dd == rel).unwrap_or((d + 4) % 8);
        p = q;
        if p != s {
            pts.push(p);
        }
    }
    Ok(with_angles(&pts))
}

fn with_angles(pts: &[(isize, isize)]) -> Vec<ContourPoint> {
    let n = pts.len();
    let win = TANGENT_WINDOW.min(n / 2);
    pts.iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let angle = if win == 0 {
                0.0
            } else {
                let a = pts[(i + n - win) % n];
                let b = pts[(i + win) % n];
                let (dx, dy) = ((b.0 - a.0) as f64, (b.1 - a.1) as f64);
                if dx == 0.0 && dy == 0.0 {
                    0.0
                } else {
                    dy.abs().atan2(dx.abs()).to_degrees()
                }
            };
            ContourPoint {
                x: x as f64,
                y: y as f64,
                local_angle: angle,
            }
        })
        .collect()
}

/// Drops near-horizontal contour points (eyelid edges).
pub fn filter_eyelid_points(pts: &[ContourPoint]) -> Vec<ContourPoint> {
    pts.iter()
        .filter(|p| p.local_angle >= EYELID_ANGLE_DEG)
        .copied()
        .collect()
}
