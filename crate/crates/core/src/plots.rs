//! Minimal SVG line plots and histograms.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// A plottable series stored in a result envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Series {
    Lines {
        title: String,
        x_label: String,
        y_label: String,
        lines: Vec<Line>,
    },
    Histogram {
        title: String,
        x_label: String,
        values: Vec<f64>,
        /// Unit-width bins centred on integers when true.
        integer_bins: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Bin edges and counts; every value lands in exactly one bin.
pub fn histogram_bins(values: &[f64], integer_bins: bool) -> (Vec<f64>, Vec<u64>) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (vec![0.0, 1.0], vec![0]);
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (start, width, bins) = if integer_bins {
        let start = lo.round() - 0.5;
        let bins = (hi.round() - lo.round()) as usize + 1;
        (start, 1.0, bins.min(500))
    } else {
        let bins = ((finite.len() as f64).sqrt().ceil() as usize).clamp(1, 60);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        (lo, width, bins)
    };
    let mut counts = vec![0u64; bins];
    for v in &finite {
        let i = (((v - start) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let edges = (0..=bins).map(|i| start + i as f64 * width).collect();
    (edges, counts)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, out: &mut String, title: &str, xl: &str, yl: &str) {
        let _ = write!(
            out,
            r##"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>
<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>
<text x="{cx}" y="24" text-anchor="middle" font-size="15">{t}</text>
<text x="{cx}" y="{xb}" text-anchor="middle" font-size="12">{xl}</text>
<text x="14" y="{cy}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {cy})">{yl}</text>
<text x="{PAD}" y="{tick}" text-anchor="middle" font-size="10">{x0:.3}</text>
<text x="{r}" y="{tick}" text-anchor="middle" font-size="10">{x1:.3}</text>
<text x="{yt}" y="{b}" text-anchor="end" font-size="10">{y0:.3}</text>
<text x="{yt}" y="{top}" text-anchor="end" font-size="10">{y1:.3}</text>
"##,
            b = H - PAD,
            r = W - PAD,
            cx = W / 2.0,
            cy = H / 2.0,
            xb = H - 12.0,
            tick = H - PAD + 14.0,
            yt = PAD - 4.0,
            top = PAD + 4.0,
            t = escape(title),
            xl = escape(xl),
            yl = escape(yl),
            x0 = self.x0,
            x1 = self.x1,
            y0 = self.y0,
            y1 = self.y1,
        );
    }
}

/// Render a series as a standalone SVG document.
pub fn render_svg(series: &Series) -> String {
    let mut out = format!(r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
"#);
    match series {
        Series::Lines {
            title,
            x_label,
            y_label,
            lines,
        } => {
            let all = lines.iter().flat_map(|l| l.points.iter());
            let frame = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1));
            frame.axes(&mut out, title, x_label, y_label);
            for (i, line) in lines.iter().enumerate() {
                let pts: Vec<String> = line
                    .points
                    .iter()
                    .filter(|p| p.0.is_finite() && p.1.is_finite())
                    .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                    .collect();
                let colour = COLOURS[i % COLOURS.len()];
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#,
                    pts.join(" ")
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" font-size="10" fill="{colour}">{}</text>"#,
                    W - PAD + 4.0,
                    PAD + 12.0 * i as f64,
                    escape(&line.name)
                );
            }
        }
        Series::Histogram {
            title,
            x_label,
            values,
            integer_bins,
        } => {
            let (edges, counts) = histogram_bins(values, *integer_bins);
            let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
            let frame = Frame {
                x0: edges[0],
                x1: *edges.last().unwrap(),
                y0: 0.0,
                y1: top,
            };
            frame.axes(&mut out, title, x_label, "count");
            for (i, c) in counts.iter().enumerate() {
                let (xa, xb) = (frame.px(edges[i]), frame.px(edges[i + 1]));
                let y = frame.py(*c as f64);
                let _ = writeln!(
                    out,
                    r##"<rect x="{xa:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white" data-count="{c}"/>"##,
                    (xb - xa).max(0.5),
                    (H - PAD - y).max(0.0)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_conserves_counts() {
        let vals: Vec<f64> = (0..200).map(|i| (i % 17) as f64).collect();
        let (edges, counts) = histogram_bins(&vals, true);
        assert_eq!(counts.iter().sum::<u64>(), 200);
        assert_eq!(edges.len(), counts.len() + 1);
        let (_, counts) = histogram_bins(&vals, false);
        assert_eq!(counts.iter().sum::<u64>(), 200);
    }

    #[test]
    fn svg_has_balanced_root() {
        let s = Series::Lines {
            title: "a < b".into(),
            x_label: "t".into(),
            y_label: "v".into(),
            lines: vec![Line {
                name: "r0".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            }],
        };
        let svg = render_svg(&s);
        assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
    }
}
