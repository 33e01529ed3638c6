//! Plain SVG charts of a run directory's trajectories. Output depends only on
//! the input rows, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::experiment::{read_gsnr_csv, read_mi_csv, GsnrRow};
use crate::infoplane::InfoPoint;
use crate::nn::LayerFilter;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Blue (early) to yellow (late).
fn epoch_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(68.0, 253.0),
        lerp(1.0, 231.0),
        lerp(84.0, 37.0)
    )
}

struct Chart {
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Chart {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(body, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{title}</text>"#,
            W / 2.0
        );
        let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
        let _ = writeln!(
            body,
            r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
        );
        let mut chart = Chart { body, x, y };
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x.0 + f * (x.1 - x.0);
            let yv = y.0 + f * (y.1 - y.0);
            let (px, py) = (chart.px(xv), chart.py(yv));
            let _ = writeln!(
                chart.body,
                r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 4.0,
                y0 + 18.0,
                tick(xv)
            );
            let _ = writeln!(
                chart.body,
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                py + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            chart.body,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
            (x0 + x1) / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            chart.body,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
        chart
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", self.px(x), self.py(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>"#,
            coords.join(" ")
        );
    }

    fn marker(&mut self, x: f64, y: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    fn legend(&mut self, row: usize, label: &str, color: &str) {
        let y = TOP + 6.0 + 16.0 * row as f64;
        let x = W - RIGHT - 90.0;
        let _ = writeln!(
            self.body,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            x + 18.0,
            x + 24.0,
            y + 4.0
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn layers_of(points: &[InfoPoint]) -> Vec<usize> {
    let mut v: Vec<usize> = points.iter().map(|p| p.layer).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Information plane: one polyline per hidden layer, markers colored by epoch.
pub fn info_plane_svg(points: &[InfoPoint]) -> String {
    let unit = points.first().map_or("bits", |p| p.unit.as_str());
    let x = span(points.iter().map(|p| p.mi_xt));
    let y = span(points.iter().map(|p| p.mi_ty));
    let mut c = Chart::new(
        "Information plane",
        &format!("I(X;T) [{unit}]"),
        &format!("I(T;Y) [{unit}]"),
        x,
        y,
    );
    let max_epoch = points.iter().map(|p| p.epoch).max().unwrap_or(0).max(1) as f64;
    for layer in layers_of(points) {
        let path: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.layer == layer)
            .map(|p| (p.mi_xt, p.mi_ty))
            .collect();
        c.polyline(&path, "#bbbbbb", false);
        for p in points.iter().filter(|p| p.layer == layer) {
            c.marker(p.mi_xt, p.mi_ty, &epoch_color(p.epoch as f64 / max_epoch));
        }
    }
    c.finish()
}

fn layer_series(rows: &[GsnrRow]) -> Vec<LayerFilter> {
    let mut out: Vec<LayerFilter> = Vec::new();
    for r in rows {
        if !out.contains(&r.layer) {
            out.push(r.layer);
        }
    }
    out
}

fn layer_name(f: LayerFilter) -> String {
    match f {
        LayerFilter::Whole => "all".into(),
        LayerFilter::Layer(k) => format!("layer {k}"),
    }
}

/// `log10` GSNR against epoch, one line per layer; non-finite values are skipped.
pub fn gsnr_svg(rows: &[GsnrRow]) -> String {
    let vals = |f: LayerFilter| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| r.layer == f)
            .filter_map(|r| {
                r.gsnr
                    .finite()
                    .filter(|&g| g > 0.0)
                    .map(|g| (r.epoch as f64, g.log10()))
            })
            .collect()
    };
    let series: Vec<(LayerFilter, Vec<(f64, f64)>)> = layer_series(rows).into_iter().map(|f| (f, vals(f))).collect();
    let x = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let y = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let mut c = Chart::new("Gradient signal-to-noise ratio", "epoch", "log10 GSNR", x, y);
    for (i, (f, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        c.polyline(pts, color, false);
        if pts.len() == 1 {
            c.marker(pts[0].0, pts[0].1, color);
        }
        c.legend(i, &layer_name(*f), color);
    }
    c.finish()
}

/// H/L squared-norm ratio against epoch with the [0.5, 2] band dashed.
pub fn ratio_svg(rows: &[GsnrRow]) -> String {
    let series: Vec<(LayerFilter, Vec<(f64, f64)>)> = layer_series(rows)
        .into_iter()
        .map(|f| {
            let pts = rows
                .iter()
                .filter(|r| r.layer == f)
                .filter_map(|r| r.ratio_h_l.map(|v| (r.epoch as f64, v)))
                .collect::<Vec<_>>();
            (f, pts)
        })
        .filter(|s| !s.1.is_empty())
        .collect();
    let x = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let y = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).chain([0.5, 2.0]));
    let mut c = Chart::new("Stratum gradient-norm ratio", "epoch", "avg |g|^2 in H / in L", x, y);
    for band in [0.5, 2.0] {
        c.polyline(&[(x.0, band), (x.1, band)], "#999999", true);
    }
    for (i, (f, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        c.polyline(pts, color, false);
        if pts.len() == 1 {
            c.marker(pts[0].0, pts[0].1, color);
        }
        c.legend(i, &layer_name(*f), color);
    }
    c.finish()
}

/// Reads `mi.csv` and `gsnr.csv` from a run directory and renders the three
/// panels as `(file name, svg)`.
pub fn render_run(dir: &Path) -> Result<Vec<(String, String)>> {
    let mi: Vec<InfoPoint> = read_mi_csv(&dir.join("mi.csv"))?.into_iter().map(|p| p.0).collect();
    let gsnr = read_gsnr_csv(&dir.join("gsnr.csv"))?;
    Ok(vec![
        ("infoplane.svg".into(), info_plane_svg(&mi)),
        ("gsnr.svg".into(), gsnr_svg(&gsnr)),
        ("ratio.svg".into(), ratio_svg(&gsnr)),
    ])
}
