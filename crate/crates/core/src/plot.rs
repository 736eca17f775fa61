//! Minimal SVG figures — line charts, violin summaries, and success-region
//! grids — emitted as plain strings with no external renderer. Figures are
//! built from already-parsed table data, so a plot can always be regenerated
//! from its CSV without re-running the experiment that produced it.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One named line on a chart. Non-finite points split the line into
/// separate segments rather than being drawn.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One named mean ± spread curve on a band chart.
pub struct Band {
    pub name: String,
    /// (x, mean, spread) triples; the band covers mean ± spread.
    pub points: Vec<(f64, f64, f64)>,
}

/// One named sample set on a violin chart.
pub struct Violin {
    pub name: String,
    pub samples: Vec<f64>,
}

/// One colored grid cell on a region plot, centred at (x, y).
pub struct Cell {
    pub x: f64,
    pub y: f64,
    /// 0 draws the failure color, 1 the success color; values between
    /// interpolate.
    pub value: f64,
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_ranges(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for x in xs {
            if x.is_finite() {
                f.x_min = f.x_min.min(x);
                f.x_max = f.x_max.max(x);
            }
        }
        for y in ys {
            if y.is_finite() {
                f.y_min = f.y_min.min(y);
                f.y_max = f.y_max.max(y);
            }
        }
        if !f.x_min.is_finite() {
            f.x_min = 0.0;
            f.x_max = 1.0;
        }
        if !f.y_min.is_finite() {
            f.y_min = 0.0;
            f.y_max = 1.0;
        }
        if f.x_max == f.x_min {
            f.x_max += 0.5;
            f.x_min -= 0.5;
        }
        if f.y_max == f.y_min {
            f.y_max += 0.5;
            f.y_min -= 0.5;
        }
        let pad = 0.04 * (f.y_max - f.y_min);
        f.y_min -= pad;
        f.y_max += pad;
        f
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open_svg(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"11\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = write!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = frame.x_min + t * (frame.x_max - frame.x_min);
        let yv = frame.y_min + t * (frame.y_max - frame.y_min);
        let sx = frame.sx(xv);
        let sy = frame.sy(yv);
        let _ = write!(
            out,
            "<line x1=\"{sx}\" y1=\"{y0}\" x2=\"{sx}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{sx}\" y=\"{}\" text-anchor=\"middle\">{xv:.3}</text>\n\
             <line x1=\"{x0}\" y1=\"{sy}\" x2=\"{}\" y2=\"{sy}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{yv:.3}</text>\n",
            y0 + 4.0,
            y0 + 16.0,
            x0 - 4.0,
            x0 - 6.0,
            sy + 4.0
        );
    }
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        esc(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN_T + 14.0 * i as f64 + 8.0;
        let x = WIDTH - MARGIN_R - 150.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            out,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\">{}</text>\n",
            x + 18.0,
            x + 24.0,
            y + 4.0,
            esc(name)
        );
    }
}

/// Multi-series line chart.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame::from_ranges(
        series.iter().flat_map(|s| s.points.iter().map(|p| p.0)),
        series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
    );
    let mut out = String::new();
    open_svg(&mut out, title);
    axes(&mut out, &frame, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, out: &mut String| {
            if seg.len() >= 2 {
                let _ = write!(
                    out,
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    seg.join(" ")
                );
            }
            seg.clear();
        };
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                segment.push(format!("{:.2},{:.2}", frame.sx(x), frame.sy(y)));
            } else {
                flush(&mut segment, &mut out);
            }
        }
        flush(&mut segment, &mut out);
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Mean ± spread curves: a translucent band around each mean line.
pub fn band_plot(title: &str, x_label: &str, y_label: &str, bands: &[Band]) -> String {
    let frame = Frame::from_ranges(
        bands.iter().flat_map(|b| b.points.iter().map(|p| p.0)),
        bands
            .iter()
            .flat_map(|b| b.points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2].into_iter())),
    );
    let mut out = String::new();
    open_svg(&mut out, title);
    axes(&mut out, &frame, x_label, y_label);
    for (i, b) in bands.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite: Vec<&(f64, f64, f64)> = b
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite() && p.2.is_finite())
            .collect();
        if finite.len() < 2 {
            continue;
        }
        let mut pts: Vec<String> = finite
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.sx(p.0), frame.sy(p.1 + p.2)))
            .collect();
        for p in finite.iter().rev() {
            pts.push(format!("{:.2},{:.2}", frame.sx(p.0), frame.sy(p.1 - p.2)));
        }
        let _ = write!(
            out,
            "<polygon fill=\"{color}\" fill-opacity=\"0.18\" stroke=\"none\" points=\"{}\"/>\n",
            pts.join(" ")
        );
        let line: Vec<String> = finite
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.sx(p.0), frame.sy(p.1)))
            .collect();
        let _ = write!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            line.join(" ")
        );
    }
    let names: Vec<&str> = bands.iter().map(|b| b.name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Linear-interpolated percentile of an ascending-sorted slice; `p` in [0, 1].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = p * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Violin-style distribution summary: mirrored histogram profile with
/// median and 5th/95th percentile marks. Empty sample sets are labelled
/// instead of drawn.
pub fn violin_plot(title: &str, y_label: &str, violins: &[Violin]) -> String {
    let frame = Frame::from_ranges(
        (0..violins.len()).map(|i| i as f64),
        violins.iter().flat_map(|v| v.samples.iter().copied()),
    );
    let mut out = String::new();
    open_svg(&mut out, title);
    axes(&mut out, &frame, "", y_label);
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / violins.len() as f64;
    let half_width = 0.36 * slot;
    for (i, v) in violins.iter().enumerate() {
        let cx = MARGIN_L + slot * (i as f64 + 0.5);
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            out,
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 16.0,
            esc(&v.name)
        );
        let mut sorted: Vec<f64> = v.samples.iter().copied().filter(|s| s.is_finite()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.is_empty() {
            let _ = write!(
                out,
                "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" fill=\"#888\">no data</text>\n",
                (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
            );
            continue;
        }
        let lo = sorted[0];
        let hi = *sorted.last().unwrap();
        let bins = 15usize;
        let span = (hi - lo).max(1e-12);
        let mut counts = vec![0usize; bins];
        for &s in &sorted {
            let b = (((s - lo) / span) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let peak = *counts.iter().max().unwrap() as f64;
        let mut right: Vec<(f64, f64)> = Vec::with_capacity(bins + 2);
        right.push((cx, frame.sy(lo)));
        for (b, &c) in counts.iter().enumerate() {
            let y = lo + span * (b as f64 + 0.5) / bins as f64;
            right.push((cx + half_width * c as f64 / peak, frame.sy(y)));
        }
        right.push((cx, frame.sy(hi)));
        let mut pts: Vec<String> = right.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        for (x, y) in right.iter().rev() {
            pts.push(format!("{:.2},{y:.2}", 2.0 * cx - x));
        }
        let _ = write!(
            out,
            "<polygon fill=\"{color}\" fill-opacity=\"0.45\" stroke=\"{color}\" points=\"{}\"/>\n",
            pts.join(" ")
        );
        for (p, w) in [(0.05, 0.5), (0.5, 1.0), (0.95, 0.5)] {
            let y = frame.sy(percentile(&sorted, p));
            let _ = write!(
                out,
                "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"black\" stroke-width=\"{}\"/>\n",
                cx - half_width * w,
                cx + half_width * w,
                if p == 0.5 { 1.6 } else { 0.8 }
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn lerp_color(value: f64) -> String {
    // failure #d62728 -> success #2ca02c
    let t = value.clamp(0.0, 1.0);
    let (r0, g0, b0) = (0xd6 as f64, 0x27 as f64, 0x28 as f64);
    let (r1, g1, b1) = (0x2c as f64, 0xa0 as f64, 0x2c as f64);
    format!(
        "#{:02x}{:02x}{:02x}",
        (r0 + t * (r1 - r0)) as u8,
        (g0 + t * (g1 - g0)) as u8,
        (b0 + t * (b1 - b0)) as u8
    )
}

/// Grid of colored cells, e.g. a disturbance-recovery success region over a
/// torque grid. Cell size is inferred from the smallest spacing between
/// distinct coordinates.
pub fn region_plot(title: &str, x_label: &str, y_label: &str, cells: &[Cell]) -> String {
    let spacing = |mut vals: Vec<f64>| -> f64 {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        vals.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    };
    let dx = spacing(cells.iter().map(|c| c.x).collect());
    let dy = spacing(cells.iter().map(|c| c.y).collect());
    let dx = if dx.is_finite() { dx } else { 1.0 };
    let dy = if dy.is_finite() { dy } else { 1.0 };
    let frame = Frame::from_ranges(
        cells.iter().flat_map(|c| [c.x - dx / 2.0, c.x + dx / 2.0].into_iter()),
        cells.iter().flat_map(|c| [c.y - dy / 2.0, c.y + dy / 2.0].into_iter()),
    );
    let mut out = String::new();
    open_svg(&mut out, title);
    axes(&mut out, &frame, x_label, y_label);
    for c in cells {
        let x0 = frame.sx(c.x - dx / 2.0);
        let x1 = frame.sx(c.x + dx / 2.0);
        let y0 = frame.sy(c.y + dy / 2.0);
        let y1 = frame.sy(c.y - dy / 2.0);
        let _ = write!(
            out,
            "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"{}\" stroke=\"white\" stroke-width=\"0.5\"/>\n",
            x1 - x0,
            y1 - y0,
            lerp_color(c.value)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(svg: &str, tag: &str) {
        let opens = svg.matches(&format!("<{tag}")).count();
        let self_closed = svg.matches("/>").count();
        let closes = svg.matches(&format!("</{tag}>")).count();
        assert!(opens > 0, "missing <{tag}>");
        assert!(closes > 0 || self_closed > 0);
    }

    #[test]
    fn line_plot_draws_each_series() {
        let series = [
            Series {
                name: "a".into(),
                points: vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)],
            },
            Series {
                name: "b".into(),
                points: vec![(0.0, 1.0), (1.0, 0.0)],
            },
        ];
        let svg = line_plot("two lines", "t", "y", &series);
        balanced(&svg, "svg");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">a</text>") && svg.contains(">b</text>"));
        assert!(svg.contains("two lines"));
    }

    #[test]
    fn line_plot_splits_at_non_finite_points() {
        let series = [Series {
            name: "gap".into(),
            points: vec![(0.0, 0.0), (1.0, 1.0), (2.0, f64::NAN), (3.0, 0.0), (4.0, 1.0)],
        }];
        let svg = line_plot("gap", "t", "y", &series);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn line_plot_maps_extremes_to_frame_corners() {
        let series = [Series {
            name: "d".into(),
            points: vec![(0.0, 0.0), (10.0, 1.0)],
        }];
        let svg = line_plot("map", "t", "y", &series);
        // x extremes land exactly on the plot edges.
        let points = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        let first = points.split(' ').next().unwrap();
        let last = points.split(' ').next_back().unwrap();
        let fx: f64 = first.split(',').next().unwrap().parse().unwrap();
        let lx: f64 = last.split(',').next().unwrap().parse().unwrap();
        assert!((fx - MARGIN_L).abs() < 0.01, "first x {fx}");
        assert!((lx - (WIDTH - MARGIN_R)).abs() < 0.01, "last x {lx}");
    }

    #[test]
    fn band_plot_draws_band_and_mean_per_curve() {
        let bands = [
            Band {
                name: "ctde".into(),
                points: (0..10).map(|i| (i as f64, i as f64 * 0.1, 0.05)).collect(),
            },
            Band {
                name: "dtde".into(),
                points: (0..10).map(|i| (i as f64, i as f64 * 0.08, 0.04)).collect(),
            },
        ];
        let svg = band_plot("bands", "iteration", "r_vt", &bands);
        assert_eq!(svg.matches("<polygon").count(), 2);
        // two mean lines plus two legend swatches
        assert!(svg.matches("<polyline").count() >= 2);
        assert!(svg.contains(">ctde</text>"));
    }

    #[test]
    fn violin_plot_handles_data_and_empty_sets() {
        let violins = [
            Violin {
                name: "full".into(),
                samples: (0..200).map(|i| (i as f64 * 0.7).sin()).collect(),
            },
            Violin {
                name: "empty".into(),
                samples: vec![],
            },
        ];
        let svg = violin_plot("dist", "mz", &violins);
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(svg.contains("no data"));
        // three percentile marks for the populated violin
        assert!(svg.matches("stroke=\"black\"").count() >= 3);
    }

    #[test]
    fn region_plot_colors_success_and_failure() {
        let cells = [
            Cell { x: 0.0, y: 0.0, value: 1.0 },
            Cell { x: 1.0, y: 0.0, value: 0.0 },
            Cell { x: 0.0, y: 1.0, value: 1.0 },
            Cell { x: 1.0, y: 1.0, value: 0.0 },
        ];
        let svg = region_plot("grid", "tx", "ty", &cells);
        assert_eq!(svg.matches("<rect").count(), 1 + 4); // background + cells
        assert!(svg.contains("#2ca02c") && svg.contains("#d62728"));
    }

    #[test]
    fn titles_are_escaped() {
        let svg = line_plot("a < b & c", "x", "y", &[]);
        assert!(svg.contains("a &lt; b &amp; c"));
    }
}
