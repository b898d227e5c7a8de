//! Minimal self-contained SVG charts.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::metrics::{ApplianceMetrics, PlotTrace};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn header(out: &mut String, w: f64, h: f64) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mains, truth and prediction against sample index.
pub fn line_plot(p: &PlotTrace) -> String {
    let n = p.mains.len().max(p.truth.len()).max(p.prediction.len());
    let ymax = p
        .mains
        .iter()
        .chain(&p.truth)
        .chain(&p.prediction)
        .fold(0.0f64, |m, &v| m.max(v))
        .max(1.0);
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x = |i: usize| MARGIN + if n > 1 { pw * i as f64 / (n - 1) as f64 } else { 0.0 };
    let y = |v: f64| MARGIN + ph * (1.0 - v / ymax);

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} (samples {}..{})</text>"#,
        WIDTH / 2.0,
        escape(&p.appliance),
        p.start,
        p.start + n
    )
    .unwrap();
    writeln!(
        out,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .unwrap();
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}</text>"#,
            MARGIN - 4.0,
            y(v) + 4.0,
            v
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">W</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();
    let series = [("mains", &p.mains, "#bbbbbb"), ("truth", &p.truth, PALETTE[0]), ("prediction", &p.prediction, PALETTE[1])];
    for (k, (label, values, color)) in series.iter().enumerate() {
        if !values.is_empty() {
            let mut d = String::new();
            for (i, &v) in values.iter().enumerate() {
                write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, x(i), y(v)).unwrap();
            }
            writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.2"/>"#).unwrap();
        }
        let ly = MARGIN + 14.0 * k as f64;
        writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            WIDTH - MARGIN - 110.0,
            WIDTH - MARGIN - 90.0,
            WIDTH - MARGIN - 84.0,
            ly + 4.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Pie chart of predicted energy shares.
pub fn share_chart(rows: &[ApplianceMetrics]) -> String {
    let (cx, cy, r) = (HEIGHT / 2.0, HEIGHT / 2.0, HEIGHT / 2.0 - MARGIN);
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    let mut angle = -PI / 2.0;
    for (i, row) in rows.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let frac = row.share_pct / 100.0;
        if frac >= 1.0 - 1e-12 {
            writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{color}"/>"#).unwrap();
        } else if frac > 0.0 {
            let end = angle + 2.0 * PI * frac;
            let (x0, y0) = (cx + r * angle.cos(), cy + r * angle.sin());
            let (x1, y1) = (cx + r * end.cos(), cy + r * end.sin());
            let large = u8::from(frac > 0.5);
            writeln!(
                out,
                r#"<path d="M{cx:.2} {cy:.2} L{x0:.2} {y0:.2} A{r:.2} {r:.2} 0 {large} 1 {x1:.2} {y1:.2} Z" fill="{color}" stroke="white"/>"#
            )
            .unwrap();
            angle = end;
        }
        let ly = MARGIN + 20.0 * i as f64;
        writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{:.1}">{} {:.1}%</text>"#,
            HEIGHT + 20.0,
            ly,
            HEIGHT + 38.0,
            ly + 11.0,
            escape(&row.appliance),
            row.share_pct
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
