//! Ground-truth and prediction strips as SVG, plus the per-frame CSV.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const STRIP_WIDTH: f64 = 800.0;
pub const STRIP_HEIGHT: f64 = 24.0;
pub const STRIP_GAP: f64 = 8.0;
pub const LABEL_WIDTH: f64 = 48.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22",
    "#17becf", "#7f7f7f",
];

pub fn class_color(class: usize) -> &'static str {
    if class == 0 {
        "#e0e0e0"
    } else {
        PALETTE[(class - 1) % PALETTE.len()]
    }
}

/// Runs of equal labels as `(label, start, end_exclusive)`.
pub fn runs(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for (t, &y) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == y => last.2 = t + 1,
            _ => out.push((y, t, t + 1)),
        }
    }
    out
}

/// Horizontal position of frame boundary `t` in a `frames`-long strip.
pub fn frame_x(t: usize, frames: usize) -> f64 {
    LABEL_WIDTH + STRIP_WIDTH * t as f64 / frames as f64
}

fn check(gt: &[usize], pred: &[usize]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::Data(format!(
            "ground truth has {} frames, prediction has {}",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Data("empty sequence".into()));
    }
    Ok(())
}

pub fn render_svg(title: &str, gt: &[usize], pred: &[usize]) -> Result<String> {
    check(gt, pred)?;
    let frames = gt.len();
    let width = LABEL_WIDTH + STRIP_WIDTH;
    let height = 2.0 * STRIP_HEIGHT + 3.0 * STRIP_GAP + 14.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    for (row, (name, labels)) in [("gt", gt), ("pred", pred)].into_iter().enumerate() {
        let y = 14.0 + STRIP_GAP + row as f64 * (STRIP_HEIGHT + STRIP_GAP);
        let _ = writeln!(
            s,
            r#"<text x="0" y="{}" font-family="monospace" font-size="12">{name}</text>"#,
            y + STRIP_HEIGHT * 0.7
        );
        let _ = writeln!(s, r#"<g class="{name}">"#);
        for (label, start, end) in runs(labels) {
            let x0 = frame_x(start, frames);
            let x1 = frame_x(end, frames);
            let _ = writeln!(
                s,
                r#"<rect x="{x0}" y="{y}" width="{}" height="{STRIP_HEIGHT}" fill="{}" data-label="{label}" data-start="{start}" data-end="{end}"/>"#,
                x1 - x0,
                class_color(label)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r#"<text x="{LABEL_WIDTH}" y="11" font-family="monospace" font-size="11">{} ({frames} frames)</text>"#,
        escape(title)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_csv(gt: &[usize], pred: &[usize]) -> Result<String> {
    check(gt, pred)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame_index", "gt", "pred"])?;
    for (t, (g, p)) in gt.iter().zip(pred).enumerate() {
        w.write_record([t.to_string(), g.to_string(), p.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
