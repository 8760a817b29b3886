//! Static SVG comparison plot: one median line and one shaded
//! interquartile band per method.

use std::fmt::Write as _;
use std::path::Path;

use crate::aggregate::{read_summary, SummaryRow};
use crate::error::{CliError, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 52.0;

/// Fixed colors so a method looks the same in every figure.
fn method_color(method: &str, fallback_index: usize) -> &'static str {
    const FALLBACK: [&str; 6] = ["#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79"];
    match method {
        "independent" => "#1f77b4",
        "direct_transfer" => "#7f7f7f",
        "fine_tuning" => "#2ca02c",
        "matl_u" => "#9467bd",
        "matl" => "#d62728",
        "matl_f" => "#ff7f0e",
        _ => FALLBACK[fallback_index % FALLBACK.len()],
    }
}

struct Series<'a> {
    method: &'a str,
    rows: Vec<&'a SummaryRow>,
}

/// Methods in the order they first appear in the summary.
fn group(rows: &[SummaryRow]) -> Vec<Series<'_>> {
    let mut out: Vec<Series> = Vec::new();
    for row in rows {
        match out.iter_mut().find(|s| s.method == row.method) {
            Some(s) => s.rows.push(row),
            None => out.push(Series {
                method: &row.method,
                rows: vec![row],
            }),
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render summary rows. The output depends only on `rows`, so replotting
/// the same summary gives the same bytes.
pub fn render_svg(rows: &[SummaryRow], title: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(CliError::Usage("summary is empty; nothing to plot".into()));
    }
    let series = group(rows);
    let x_max = rows.iter().map(|r| r.iteration).max().unwrap_or(0).max(1) as f64;
    let finite = rows.iter().flat_map(|r| [r.norm_q25, r.norm_q75, r.norm_median]).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((0.0f64, 1.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |i: usize| LEFT + plot_w * i as f64 / x_max;
    let sy = |v: f64| TOP + plot_h * (1.0 - (v.clamp(lo, hi) - lo) / (hi - lo));

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{:.1}" y="16" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(title)).unwrap();

    // Axes with five ticks each.
    writeln!(w, r#"<g stroke="black" stroke-width="1">"#).unwrap();
    writeln!(w, r#"<line x1="{LEFT:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}"/>"#, TOP + plot_h, LEFT + plot_w, TOP + plot_h).unwrap();
    writeln!(w, r#"<line x1="{LEFT:.1}" y1="{TOP:.1}" x2="{LEFT:.1}" y2="{:.1}"/>"#, TOP + plot_h).unwrap();
    writeln!(w, "</g>").unwrap();
    for k in 0..=4 {
        let frac = k as f64 / 4.0;
        let it = (x_max * frac).round() as usize;
        let (x, y) = (sx(it), TOP + plot_h);
        writeln!(w, r#"<line x1="{x:.1}" y1="{y:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y + 4.0).unwrap();
        writeln!(w, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{it}</text>"#, y + 18.0).unwrap();
        let v = lo + (hi - lo) * frac;
        let yv = sy(v);
        writeln!(w, r#"<line x1="{:.1}" y1="{yv:.1}" x2="{LEFT:.1}" y2="{yv:.1}" stroke="black"/>"#, LEFT - 4.0).unwrap();
        writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 7.0, yv + 4.0).unwrap();
    }
    writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">target iterations</text>"#, LEFT + plot_w / 2.0, HEIGHT - 12.0).unwrap();
    writeln!(w, r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">normalized performance</text>"#, TOP + plot_h / 2.0).unwrap();

    for (k, s) in series.iter().enumerate() {
        let color = method_color(s.method, k);
        let upper: Vec<String> = s.rows.iter().map(|r| format!("{:.2},{:.2}", sx(r.iteration), sy(r.norm_q75))).collect();
        let lower: Vec<String> = s.rows.iter().rev().map(|r| format!("{:.2},{:.2}", sx(r.iteration), sy(r.norm_q25))).collect();
        writeln!(w, r#"<polygon class="iqr" data-method="{}" points="{} {}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, escape(s.method), upper.join(" "), lower.join(" ")).unwrap();
    }
    for (k, s) in series.iter().enumerate() {
        let color = method_color(s.method, k);
        let d: Vec<String> = s
            .rows
            .iter()
            .enumerate()
            .map(|(j, r)| format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, sx(r.iteration), sy(r.norm_median)))
            .collect();
        writeln!(w, r#"<path class="median" data-method="{}" d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, escape(s.method), d.join(" ")).unwrap();
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 14.0;
        writeln!(w, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 22.0).unwrap();
        writeln!(w, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 28.0, ly + 4.0, escape(s.method)).unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}

pub fn plot(summary: &Path, out: &Path) -> Result<()> {
    let rows = read_summary(summary)?;
    let title = summary.parent().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let svg = render_svg(&rows, &title)?;
    std::fs::write(out, svg).map_err(CliError::io(out))
}
