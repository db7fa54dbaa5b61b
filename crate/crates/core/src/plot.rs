//! Self-contained SVG line charts.

use std::fmt::Write as _;

/// Series colors shared by every figure.
pub mod palette {
    pub const INPUT: &str = "#9e9e9e";
    pub const Q2: &str = "#1f4fd1";
    pub const Q15: &str = "#7b2cbf";
    pub const Q1: &str = "#d62828";
    pub const MEAN: &str = "#2a9d3f";
    pub const MEDIAN: &str = "#f77f00";
    pub const OTHER: &str = "#333333";
}

/// Consensus color for power `q`.
pub fn color_for_q(q: f64) -> &'static str {
    if (q - 2.0).abs() < 1e-9 {
        palette::Q2
    } else if (q - 1.5).abs() < 1e-9 {
        palette::Q15
    } else if (q - 1.0).abs() < 1e-9 {
        palette::Q1
    } else {
        palette::OTHER
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: Option<String>,
    pub color: String,
    pub width: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(label: Option<&str>, color: &str, width: f64, x: &[f64], y: &[f64]) -> Self {
        Series {
            label: label.map(str::to_owned),
            color: color.to_owned(),
            width,
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub width: f64,
    pub height: f64,
}

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Ticks at 1, 2 or 5 times a power of ten.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

impl LineChart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LineChart {
            title: title.to_owned(),
            x_label: x_label.to_owned(),
            y_label: y_label.to_owned(),
            series: Vec::new(),
            width: 800.0,
            height: 480.0,
        }
    }

    pub fn push(&mut self, series: Series) {
        self.series.push(series);
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let finite = |v: &&f64| v.is_finite();
        let xs = self.series.iter().flat_map(|s| s.x.iter()).filter(finite);
        let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        let ys = self.series.iter().flat_map(|s| s.y.iter()).filter(finite);
        let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let (y0, y1) = (
            y0.min(0.0),
            if y1 > y0.min(0.0) {
                y1
            } else {
                y0.min(0.0) + 1.0
            },
        );
        let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
        (x0, x1, y0, y1 * 1.05)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = self.width - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = self.height - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_TOP + ph - (y - y0) / (y1 - y0) * ph;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in ticks(x0, x1, 8) {
            let x = sx(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{b2:.2}" stroke="black"/><text x="{x:.2}" y="{ty:.2}" text-anchor="middle">{}</text>"#,
                tick_label(t),
                b = MARGIN_TOP + ph,
                b2 = MARGIN_TOP + ph + 5.0,
                ty = MARGIN_TOP + ph + 18.0
            );
        }
        for t in ticks(y0, y1, 6) {
            let y = sy(t);
            let _ = writeln!(
                out,
                r##"<line x1="{l:.2}" y1="{y:.2}" x2="{r:.2}" y2="{y:.2}" stroke="#e6e6e6"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="end">{}</text>"##,
                tick_label(t),
                l = MARGIN_LEFT,
                r = MARGIN_LEFT + pw,
                tx = MARGIN_LEFT - 6.0,
                ty = y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            self.height - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for s in &self.series {
            let mut d = String::new();
            let mut pen_down = false;
            for (&x, &y) in s.x.iter().zip(&s.y) {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(
                    d,
                    "{}{:.2},{:.2} ",
                    if pen_down { "L" } else { "M" },
                    sx(x),
                    sy(y)
                );
                pen_down = true;
            }
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
                d.trim_end(),
                escape(&s.color),
                s.width
            );
        }
        let mut row = 0.0;
        for s in self.series.iter().filter(|s| s.label.is_some()) {
            let y = MARGIN_TOP + 12.0 + 18.0 * row;
            let x = MARGIN_LEFT + pw + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{x}" y1="{y}" x2="{x2}" y2="{y}" stroke="{c}" stroke-width="3"/><text x="{tx}" y="{ty}">{}</text>"#,
                escape(s.label.as_deref().unwrap_or_default()),
                x2 = x + 24.0,
                c = escape(&s.color),
                tx = x + 30.0,
                ty = y + 4.0
            );
            row += 1.0;
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colors_follow_the_palette() {
        assert_eq!(color_for_q(2.0), palette::Q2);
        assert_eq!(color_for_q(1.5), palette::Q15);
        assert_eq!(color_for_q(1.0), palette::Q1);
        assert_eq!(color_for_q(1.2), palette::OTHER);
    }

    #[test]
    fn svg_has_one_path_per_series_and_legend_entries() {
        let mut chart = LineChart::new("I(t) <test>", "day", "count");
        let x = [0.0, 1.0, 2.0];
        chart.push(Series::new(None, palette::INPUT, 1.0, &x, &[0.0, 5.0, 1.0]));
        chart.push(Series::new(
            Some("mean"),
            palette::MEAN,
            2.0,
            &x,
            &[0.0, 3.0, f64::NAN],
        ));
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains(palette::MEAN));
        assert!(svg.contains("&lt;test&gt;"));
        assert!(svg.contains(">mean</text>"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(
            ticks(0.0, 720.0, 8),
            (0..=7).map(|k| k as f64 * 100.0).collect::<Vec<_>>()
        );
    }
}
