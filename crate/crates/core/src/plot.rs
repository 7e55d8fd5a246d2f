//! Standalone SVG scenario plots.
//!
//! Lateral position runs horizontally and longitudinal position vertically
//! (up is forward), both in meters in the ego-centered frame. History points
//! are drawn as individual triangles so their spacing shows speed.

use std::fmt::Write as _;

use crate::scene::{Point, ScenePiece, EGO_SLOT};

const WIDTH: f64 = 420.0;
const HEIGHT: f64 = 720.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

const EGO_COLOR: &str = "#d62728";
const NEIGHBOR_COLOR: &str = "#7f7f7f";
const TRUTH_COLOR: &str = "#2ca02c";
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Maps meters to canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Viewport {
    fn fit(points: impl Iterator<Item = Point>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in points {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let widen = |lo: f64, hi: f64, min_span: f64| {
            let span = (hi - lo).max(min_span);
            let mid = 0.5 * (lo + hi);
            (mid - 0.55 * span, mid + 0.55 * span)
        };
        let (x_min, x_max) = widen(x0, x1, 8.0);
        let (y_min, y_max) = widen(y0, y1, 20.0);
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn to_px(&self, p: Point) -> (f64, f64) {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let px = MARGIN_LEFT + (p[0] - self.x_min) / (self.x_max - self.x_min) * w;
        let py = MARGIN_TOP + (self.y_max - p[1]) / (self.y_max - self.y_min) * h;
        (px, py)
    }
}

fn tick_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(t: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{t:.decimals$}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') { "0".to_string() } else { s }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn polyline(out: &mut String, frame: &Viewport, pts: &[Point], color: &str, class: &str) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = frame.to_px(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        coords.join(" ")
    );
}

fn markers(out: &mut String, frame: &Viewport, pts: &[Point], symbol: &str, class: &str) {
    for &p in pts {
        let (x, y) = frame.to_px(p);
        let _ = writeln!(out, r##"<use class="{class}" href="#{symbol}" x="{x:.2}" y="{y:.2}"/>"##);
    }
}

/// Renders histories, ground truth and each named prediction of one piece.
///
/// Output depends only on the inputs, so repeated renders are byte-identical.
pub fn render_scenario(piece: &ScenePiece, predictions: &[(String, Vec<Point>)]) -> String {
    let all = piece
        .histories
        .iter()
        .flatten()
        .chain(&piece.future)
        .chain(predictions.iter().flat_map(|(_, p)| p))
        .copied();
    let frame = Viewport::fit(all);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        "<title>ego {} at frame {} ({}, {:+} frames from lane change)</title>",
        piece.ego_id,
        piece.t_frame,
        piece.label,
        piece.offset()
    );
    s.push_str("<defs>\n");
    for (id, color) in [("tri-ego", EGO_COLOR), ("tri-nbr", NEIGHBOR_COLOR)] {
        let _ = writeln!(s, r#"<path id="{id}" d="M0,-3 L2.6,1.5 L-2.6,1.5 Z" fill="{color}"/>"#);
    }
    let _ = writeln!(s, r#"<circle id="dot-gt" r="2.2" fill="{TRUTH_COLOR}"/>"#);
    for (i, color) in PALETTE.iter().enumerate() {
        let _ = writeln!(s, r#"<rect id="sq-{i}" x="-2" y="-2" width="4" height="4" fill="{color}"/>"#);
    }
    s.push_str("</defs>\n");
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // axes
    let (left, top) = (MARGIN_LEFT, MARGIN_TOP);
    let (right, bottom) = (WIDTH - MARGIN_RIGHT, HEIGHT - MARGIN_BOTTOM);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#, right - left, bottom - top);
    let x_step = tick_step(frame.x_max - frame.x_min);
    for t in ticks(frame.x_min, frame.x_max) {
        let (x, _) = frame.to_px([t, 0.0]);
        let t = tick_label(t, x_step);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, bottom + 4.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, bottom + 16.0);
    }
    let y_step = tick_step(frame.y_max - frame.y_min);
    for t in ticks(frame.y_min, frame.y_max) {
        let (_, y) = frame.to_px([0.0, t]);
        let t = tick_label(t, y_step);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/>"#, left - 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">lateral (m)</text>"#, 0.5 * (left + right), HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">longitudinal (m)</text>"#,
        0.5 * (top + bottom),
        0.5 * (top + bottom)
    );

    for (k, h) in piece.histories.iter().enumerate() {
        if k + 1 != EGO_SLOT {
            markers(&mut s, &frame, h, "tri-nbr", "nbr-hist");
        }
    }
    markers(&mut s, &frame, piece.ego_history(), "tri-ego", "ego-hist");

    let mut truth = vec![[0.0, 0.0]];
    truth.extend_from_slice(&piece.future);
    polyline(&mut s, &frame, &truth, TRUTH_COLOR, "gt-fut");
    markers(&mut s, &frame, &piece.future, "dot-gt", "gt-fut");

    for (i, (_, pred)) in predictions.iter().enumerate() {
        let mut line = vec![[0.0, 0.0]];
        line.extend_from_slice(pred);
        polyline(&mut s, &frame, &line, PALETTE[i % PALETTE.len()], "prediction");
        markers(&mut s, &frame, pred, &format!("sq-{}", i % PALETTE.len()), "prediction");
    }

    let (ox, oy) = frame.to_px([0.0, 0.0]);
    let _ = writeln!(s, r#"<circle id="origin" cx="{ox:.2}" cy="{oy:.2}" r="5" fill="none" stroke="black"/>"#);

    // legend
    let lx = right + 12.0;
    let mut ly = top + 10.0;
    let mut entry = |s: &mut String, symbol: &str, color: &str, label: &str| {
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.5"/>"#, lx + 18.0);
        let _ = writeln!(s, r##"<use href="#{symbol}" x="{}" y="{ly}"/>"##, lx + 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(label));
        ly += 16.0;
    };
    entry(&mut s, "tri-ego", EGO_COLOR, "Ego hist");
    entry(&mut s, "tri-nbr", NEIGHBOR_COLOR, "Nbrs hist");
    entry(&mut s, "dot-gt", TRUTH_COLOR, "GT fut");
    for (i, (name, _)) in predictions.iter().enumerate() {
        entry(&mut s, &format!("sq-{}", i % PALETTE.len()), PALETTE[i % PALETTE.len()], name);
    }
    s.push_str("</svg>\n");
    s
}
