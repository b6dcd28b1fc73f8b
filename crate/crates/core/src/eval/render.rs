//! SVG and CSV report emission. Output depends only on the inputs, and
//! numbers are printed with fixed precision so re-renders are byte-identical.

use std::fmt::Write as _;

use super::metrics::ErrorReport;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, FEATURES_PER_NODE};
use crate::ingest::Frame;

const PX_PER_M: f64 = 30.0;
const MARGIN: f64 = 20.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"];
const RSSI_SLOT: usize = 9;

/// Ground truth plus one polyline per model over the hall outline.
pub fn trajectory_svg(grid: &GridSpec, truth: &[[f64; 2]], models: &[(String, Vec<[f64; 2]>)]) -> Result<String> {
    if let Some((name, p)) = models.iter().find(|(_, p)| p.len() != truth.len()) {
        return Err(Error::Alignment(format!(
            "model {name} has {} positions, ground truth {}",
            p.len(),
            truth.len()
        )));
    }
    let w = grid.hall_length * PX_PER_M + 2.0 * MARGIN;
    let h = grid.hall_width * PX_PER_M + 2.0 * MARGIN + 16.0 * (models.len() + 1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        grid.hall_length * PX_PER_M,
        grid.hall_width * PX_PER_M
    );
    for id in grid.nodes() {
        let (x, y) = grid.node_position(id)?;
        let (px, py) = to_px(grid, [x, y]);
        let _ = writeln!(s, r##"<circle cx="{px:.1}" cy="{py:.1}" r="1.5" fill="#bbb"/>"##);
    }
    let mut lines = vec![("ground truth".to_string(), truth, "#000000")];
    for (i, (name, p)) in models.iter().enumerate() {
        lines.push((name.clone(), p, PALETTE[i % PALETTE.len()]));
    }
    for (k, (name, pts, color)) in lines.iter().enumerate() {
        let mut d = String::new();
        for p in pts.iter() {
            let (px, py) = to_px(grid, *p);
            let _ = write!(d, "{px:.1},{py:.1} ");
        }
        let _ = writeln!(
            s,
            r#"<polyline class="track" data-name="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            d.trim_end()
        );
        let ly = grid.hall_width * PX_PER_M + 2.0 * MARGIN + 16.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{ly:.0}" font-size="12" fill="{color}">{name}</text>"#
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn to_px(grid: &GridSpec, p: [f64; 2]) -> (f64, f64) {
    // y axis points up in hall coordinates
    (MARGIN + p[0] * PX_PER_M, MARGIN + (grid.hall_width - p[1]) * PX_PER_M)
}

/// Green for the weakest signal through white for the strongest.
pub fn heat_color(v: f64, lo: f64, hi: f64) -> String {
    let u = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 1.0 };
    let r = (255.0 * u).round() as u8;
    let g = (128.0 + 127.0 * u).round() as u8;
    let b = (255.0 * u).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// One panel per frame, one cell per node, colored by raw RSSI on a scale
/// shared by all panels.
pub fn rssi_heatmap_svg(grid: &GridSpec, frames: &[&Frame]) -> Result<String> {
    let width = grid.feature_count();
    if let Some(f) = frames.iter().find(|f| f.features.len() != width) {
        return Err(Error::Alignment(format!(
            "frame at t={} has {} features, grid needs {width}",
            f.t,
            f.features.len()
        )));
    }
    let rssi = |f: &Frame, i: usize| f.features[i * FEATURES_PER_NODE + RSSI_SLOT];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for f in frames {
        for i in 0..grid.node_count() {
            lo = lo.min(rssi(f, i));
            hi = hi.max(rssi(f, i));
        }
    }
    let cell = 12.0;
    let pw = grid.n_strips as f64 * cell;
    let ph = grid.nodes_per_strip as f64 * cell;
    let cols = frames.len().clamp(1, 4);
    let rows = frames.len().div_ceil(cols).max(1);
    let w = cols as f64 * (pw + MARGIN) + MARGIN;
    let h = rows as f64 * (ph + MARGIN + 14.0) + MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    for (k, f) in frames.iter().enumerate() {
        let ox = MARGIN + (k % cols) as f64 * (pw + MARGIN);
        let oy = MARGIN + 14.0 + (k / cols) as f64 * (ph + MARGIN + 14.0);
        let _ = writeln!(s, r#"<g class="frame" data-t="{}">"#, f.t);
        let _ = writeln!(s, r#"<text x="{ox:.0}" y="{:.0}" font-size="11">t = {:.2} s</text>"#, oy - 3.0, f.t);
        for id in grid.nodes() {
            let i = grid.index(id);
            let x = ox + (id.strip as usize - 1) as f64 * cell;
            // node 1 at the bottom, like the hall's y axis
            let y = oy + (grid.nodes_per_strip - id.node as usize) as f64 * cell;
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x:.0}" y="{y:.0}" width="{cell:.0}" height="{cell:.0}" fill="{}"/>"#,
                heat_color(rssi(f, i), lo, hi)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// `model,mean,median,variance` table.
pub fn comparison_csv(rows: &[(String, ErrorReport)]) -> String {
    let mut s = String::from("model,mean,median,variance\n");
    for (name, r) in rows {
        let _ = writeln!(s, "{name},{},{},{}", r.mean, r.median, r.variance);
    }
    s
}
