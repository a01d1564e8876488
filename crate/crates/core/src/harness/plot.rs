use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, HarnessError, ReportSet};

pub const PLOT_FILES: [&str; 3] = ["errors.svg", "spatial.svg", "brightness.svg"];

const BAR_W: f64 = 48.0;
const GAP: f64 = 24.0;
const PLOT_H: f64 = 260.0;
const MARGIN: f64 = 60.0;

fn header(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 || !v.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&m| m >= v).unwrap_or(10.0 * mag)
}

fn y_axis(svg: &mut String, top: f64, ymax: f64, label: &str) {
    let base = top + PLOT_H;
    let _ = writeln!(svg, "<line x1=\"{MARGIN}\" y1=\"{top}\" x2=\"{MARGIN}\" y2=\"{base}\" stroke=\"black\"/>");
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let y = base - PLOT_H * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
            MARGIN - 4.0,
            MARGIN - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text transform=\"translate(14 {:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        top + PLOT_H / 2.0,
        escape(label)
    );
}

/// Mean ± sd error per variant in cm, with the centroid baseline as a line.
pub fn errors_svg(report: &ReportSet) -> String {
    let n = report.variants.len();
    let w = 2.0 * MARGIN + n.max(1) as f64 * (BAR_W + GAP);
    let top = 40.0;
    let base = top + PLOT_H;
    let ymax = nice_max(
        report
            .variants
            .iter()
            .map(|v| v.pooled.mean_cm + v.pooled.sd_cm)
            .fold(report.baseline_centroid.mean_cm, f64::max),
    );
    let sy = |v: f64| base - PLOT_H * (v / ymax).min(1.0);
    let mut svg = header(w, base + 70.0, &format!("LOOCV gaze error ({} camera)", report.camera));
    y_axis(&mut svg, top, ymax, "error (cm)");
    for (i, v) in report.variants.iter().enumerate() {
        let x = MARGIN + GAP / 2.0 + i as f64 * (BAR_W + GAP);
        let (m, sd) = (v.pooled.mean_cm, v.pooled.sd_cm);
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{BAR_W}\" height=\"{:.1}\" fill=\"#4477aa\"/>",
            sy(m),
            base - sy(m)
        );
        let cx = x + BAR_W / 2.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            sy((m - sd).max(0.0)),
            sy(m + sd)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text><text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{m:.2}</text>",
            base + 16.0,
            escape(&v.variant),
            base + 30.0
        );
    }
    let yb = sy(report.baseline_centroid.mean_cm);
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{yb:.1}\" x2=\"{:.1}\" y2=\"{yb:.1}\" stroke=\"#cc3311\" stroke-dasharray=\"4 3\"/>\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#cc3311\">centroid baseline</text>",
        w - MARGIN / 2.0,
        w - MARGIN / 2.0,
        yb - 4.0
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{base}\" x2=\"{:.1}\" y2=\"{base}\" stroke=\"black\"/>\n</svg>",
        w - MARGIN / 2.0
    );
    svg
}

fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let g = (200.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}{g:02x}40")
}

/// One 9×5 mean-error grid per variant on a shared colour scale.
pub fn spatial_svg(report: &ReportSet) -> String {
    const CELL: f64 = 26.0;
    let (cols, rows) = (super::GRID_COLS, super::GRID_ROWS);
    let pw = cols as f64 * CELL + 20.0;
    let ph = rows as f64 * CELL + 36.0;
    let per_row = 4usize;
    let n = report.variants.len().max(1);
    let w = per_row.min(n) as f64 * pw + 20.0;
    let h = n.div_ceil(per_row) as f64 * ph + 50.0;
    let vmax = report
        .variants
        .iter()
        .flat_map(|v| v.spatial.mean_px.iter().flatten().flatten().copied())
        .fold(0.0, f64::max)
        .max(1e-9);
    let mut svg = header(w, h, &format!("Mean error by gaze position (px, max {vmax:.1})"));
    for (k, v) in report.variants.iter().enumerate() {
        let ox = 10.0 + (k % per_row) as f64 * pw;
        let oy = 34.0 + (k / per_row) as f64 * ph;
        let _ = writeln!(svg, "<text x=\"{ox:.1}\" y=\"{:.1}\">{}</text>", oy + 10.0, escape(&v.variant));
        for (r, line) in v.spatial.mean_px.iter().enumerate() {
            for (c, cell) in line.iter().enumerate() {
                let fill = cell.map_or_else(|| "#dddddd".to_string(), |e| heat_color(e / vmax));
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{fill}\" stroke=\"white\"/>",
                    ox + c as f64 * CELL,
                    oy + 16.0 + r as f64 * CELL
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bright versus dark mean error per variant that has both classes.
pub fn brightness_svg(report: &ReportSet) -> String {
    let split: Vec<_> = report.variants.iter().filter_map(|v| v.brightness.as_ref().map(|b| (v, b))).collect();
    let group = 2.0 * BAR_W / 1.5 + GAP;
    let w = 2.0 * MARGIN + split.len().max(1) as f64 * group;
    let top = 40.0;
    let base = top + PLOT_H;
    let ymax = nice_max(split.iter().map(|(_, b)| b.bright.mean_cm.max(b.dark.mean_cm)).fold(0.0, f64::max));
    let sy = |v: f64| base - PLOT_H * (v / ymax).min(1.0);
    let mut svg = header(w, base + 60.0, "Error on bright and dark screens");
    y_axis(&mut svg, top, ymax, "error (cm)");
    let bw = BAR_W / 1.5;
    for (i, (v, b)) in split.iter().enumerate() {
        let x = MARGIN + GAP / 2.0 + i as f64 * group;
        for (j, (m, fill)) in [(b.bright.mean_cm, "#ddaa33"), (b.dark.mean_cm, "#333366")].into_iter().enumerate() {
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"{fill}\"/>",
                x + j as f64 * bw,
                sy(m),
                base - sy(m)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x + bw,
            base + 16.0,
            escape(&v.variant)
        );
    }
    if split.is_empty() {
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">no dark frames evaluated</text>", w / 2.0, top + PLOT_H / 2.0);
    }
    let _ = writeln!(
        svg,
        "<text x=\"{MARGIN}\" y=\"{:.1}\" fill=\"#ddaa33\">bright</text><text x=\"{:.1}\" y=\"{:.1}\" fill=\"#333366\">dark</text>\n</svg>",
        base + 40.0,
        MARGIN + 50.0,
        base + 40.0
    );
    svg
}

/// Writes one SVG per report section into `out_dir`.
pub fn write_plots(report: &ReportSet, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let docs = [errors_svg(report), spatial_svg(report), brightness_svg(report)];
    let mut paths = Vec::new();
    for (name, doc) in PLOT_FILES.iter().zip(docs) {
        let p = out_dir.join(name);
        fs::write(&p, doc).map_err(io_err(&p))?;
        paths.push(p);
    }
    Ok(paths)
}
