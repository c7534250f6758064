//! Static SVG charts drawn straight from search-report records.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::ops::OpKind;
use crate::search::ReportRecord;

const PALETTE: [&str; 8] = [
    "#7f7f7f", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
];

fn colour(op: OpKind) -> &'static str {
    PALETTE[OpKind::ALL.iter().position(|&o| o == op).unwrap_or(0)]
}

/// Axis-aligned plotting area mapping data coordinates into pixels.
struct Frame {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let span = |(lo, hi): (f64, f64)| if hi > lo { hi - lo } else { 1.0 };
        (
            self.x + (x - self.x_range.0) / span(self.x_range) * self.w,
            self.y + self.h - (y - self.y_range.0) / span(self.y_range) * self.h,
        )
    }

    fn border(&self, out: &mut String) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            self.x, self.y, self.w, self.h
        );
    }

    fn polyline(&self, out: &mut String, points: &[(f64, f64)], stroke: &str) {
        if points.is_empty() {
            return;
        }
        let pts: Vec<String> = points
            .iter()
            .map(|&(x, y)| {
                let (a, b) = self.px(x, y);
                format!("{a:.1},{b:.1}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }

    fn dots(&self, out: &mut String, points: &[(f64, f64)], fill: &str) {
        for &(x, y) in points {
            let (a, b) = self.px(x, y);
            let _ = writeln!(out, r#"<circle cx="{a:.1}" cy="{b:.1}" r="2" fill="{fill}"/>"#);
        }
    }
}

fn text(out: &mut String, x: f64, y: f64, size: u32, s: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="{size}">{s}</text>"#
    );
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Sampled-architecture accuracy per evaluation (dots) and the per-round mean (line).
pub fn accuracy_svg(records: &[ReportRecord]) -> String {
    let evals: Vec<(usize, f64)> = records
        .iter()
        .filter_map(|r| match r {
            ReportRecord::Eval { round, accuracy, .. } => Some((*round, *accuracy)),
            _ => None,
        })
        .collect();
    let frame = Frame {
        x: 60.0,
        y: 30.0,
        w: 560.0,
        h: 300.0,
        x_range: (0.0, evals.len().saturating_sub(1).max(1) as f64),
        y_range: (0.0, 1.0),
    };
    let mut body = String::new();
    frame.border(&mut body);
    text(&mut body, 60.0, 20.0, 14, "sampled-architecture accuracy");
    text(&mut body, 300.0, 360.0, 12, "evaluation");
    text(&mut body, 30.0, 35.0, 11, "1.0");
    text(&mut body, 30.0, 333.0, 11, "0.0");
    let points: Vec<(f64, f64)> = evals.iter().enumerate().map(|(i, &(_, a))| (i as f64, a)).collect();
    frame.dots(&mut body, &points, "#1f77b4");
    let mut by_round: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, &(round, a)) in evals.iter().enumerate() {
        by_round.entry(round).or_default().push((i as f64, a));
    }
    let means: Vec<(f64, f64)> = by_round
        .values()
        .map(|v| {
            let n = v.len() as f64;
            (v.iter().map(|p| p.0).sum::<f64>() / n, v.iter().map(|p| p.1).sum::<f64>() / n)
        })
        .collect();
    frame.polyline(&mut body, &means, "#d62728");
    document(660.0, 380.0, &body)
}

/// One small panel per edge with the selection likelihood `s` of each op
/// after every round; an op's line ends at the round it was pruned.
pub fn s_trajectories_svg(records: &[ReportRecord]) -> String {
    // edge -> op -> [(round, s)]
    let mut series: BTreeMap<usize, (String, BTreeMap<usize, (OpKind, Vec<(f64, f64)>)>)> = BTreeMap::new();
    for r in records {
        if let ReportRecord::Round { round, edges, .. } = r {
            for e in edges {
                let entry = series.entry(e.edge).or_insert_with(|| (e.name.clone(), BTreeMap::new()));
                for (op, &s) in e.ops.iter().zip(&e.s_after) {
                    let key = OpKind::ALL.iter().position(|o| o == op).unwrap_or(0);
                    entry.1.entry(key).or_insert_with(|| (*op, Vec::new())).1.push((*round as f64, s));
                }
            }
        }
    }
    let cols = 7usize;
    let rows = series.len().div_ceil(cols).max(1);
    let (pw, ph) = (150.0, 110.0);
    let mut body = String::new();
    text(&mut body, 10.0, 18.0, 14, "selection likelihood s per edge (x: round)");
    for (i, (name, ops)) in series.values().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let points = ops.values().flat_map(|(_, p)| p.iter().copied());
        let (x_range, y_range) = {
            let pts: Vec<(f64, f64)> = points.collect();
            (range(pts.iter().map(|p| p.0)), range(pts.iter().map(|p| p.1)))
        };
        let frame = Frame {
            x: 10.0 + c as f64 * (pw + 10.0),
            y: 40.0 + r as f64 * (ph + 25.0),
            w: pw,
            h: ph,
            x_range,
            y_range,
        };
        frame.border(&mut body);
        text(&mut body, frame.x, frame.y - 4.0, 10, name);
        for (op, pts) in ops.values() {
            frame.polyline(&mut body, pts, colour(*op));
            frame.dots(&mut body, pts, colour(*op));
        }
    }
    let legend_y = 40.0 + rows as f64 * (ph + 25.0);
    for (i, op) in OpKind::ALL.iter().enumerate() {
        let x = 10.0 + i as f64 * 140.0;
        let _ = writeln!(
            body,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
            legend_y,
            colour(*op)
        );
        text(&mut body, x + 14.0, legend_y + 10.0, 11, op.name());
    }
    document(10.0 + cols as f64 * (pw + 10.0), legend_y + 30.0, &body)
}
