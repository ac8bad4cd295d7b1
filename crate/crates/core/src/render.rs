//! Plain-text image output: PGM for matrices and small SVG plots.

use std::fmt::Write as _;

use ndarray::ArrayView2;

/// Binary PGM (`P5`) with values mapped linearly from `[min, max]` to
/// `[0, 255]`. A constant matrix renders black.
pub fn matrix_to_pgm(m: ArrayView2<'_, f64>) -> Vec<u8> {
    let (h, w) = m.dim();
    let (lo, hi) = m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(m.iter().map(|&v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Categorical colours, cycled.
const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
];

/// Continuous hue for a value in `[0, 1]`.
fn hue(t: f64) -> String {
    format!("hsl({:.0},70%,45%)", 300.0 * t.clamp(0.0, 1.0))
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 50.0;

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (a, b) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !a.is_finite() {
                (0.0, 1.0)
            } else if a == b {
                (a - 0.5, b + 0.5)
            } else {
                (a, b)
            }
        };
        let (x0, x1) = range(&mut xs.clone());
        let (y0, y1) = range(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn open_svg(title: &str, f: &Frame) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        W / 2.0,
        escape(title),
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(
        s,
        "<text x=\"{PAD}\" y=\"{}\">{:.3}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>",
        H - PAD + 16.0,
        f.x0,
        W - PAD,
        H - PAD + 16.0,
        f.x1
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>",
        PAD - 4.0,
        H - PAD,
        f.y0,
        PAD - 4.0,
        PAD + 10.0,
        f.y1
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// How scatter points are coloured.
pub enum PointColour<'a> {
    /// Categorical labels, one colour per distinct value.
    Labels(&'a [u8]),
    /// Values in `[0, 1]` on a continuous hue ramp.
    Continuous(&'a [f64]),
}

/// Scatter plot of `points` (`B x 2`).
pub fn scatter_svg(points: ArrayView2<'_, f64>, colour: PointColour<'_>, title: &str) -> String {
    let f = Frame::fit(points.column(0).iter().copied(), points.column(1).iter().copied());
    let mut s = open_svg(title, &f);
    for (i, p) in points.outer_iter().enumerate() {
        let fill = match &colour {
            PointColour::Labels(l) => PALETTE[l[i] as usize % PALETTE.len()].to_string(),
            PointColour::Continuous(v) => hue(v[i]),
        };
        let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.2\" fill=\"{fill}\" fill-opacity=\"0.7\"/>", f.px(p[0]), f.py(p[1]));
    }
    if let PointColour::Labels(l) = colour {
        let mut seen: Vec<u8> = l.to_vec();
        seen.sort_unstable();
        seen.dedup();
        for (k, lab) in seen.iter().enumerate() {
            let y = PAD + 14.0 * (k as f64 + 1.0);
            let _ = writeln!(
                s,
                "<circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{lab}</text>",
                W - PAD - 30.0,
                PALETTE[*lab as usize % PALETTE.len()],
                W - PAD - 22.0,
                y + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Line plot of `values` against their index.
pub fn line_svg(values: &[f64], title: &str) -> String {
    let f = Frame::fit((0..values.len()).map(|i| i as f64), values.iter().copied());
    let mut s = open_svg(title, &f);
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.1},{:.1}", f.px(i as f64), f.py(v)))
        .collect();
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
    s.push_str("</svg>\n");
    s
}

/// Greyscale heatmap, block-averaged down to at most `max_cells` per side.
pub fn heatmap_svg(m: ArrayView2<'_, f64>, title: &str, max_cells: usize) -> String {
    let (h, w) = m.dim();
    let step = h.max(w).div_ceil(max_cells.max(1)).max(1);
    let (rows, cols) = (h.div_ceil(step), w.div_ceil(step));
    let mut cells = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let block = m.slice(ndarray::s![r * step..((r + 1) * step).min(h), c * step..((c + 1) * step).min(w)]);
            cells[r * cols + c] = block.mean().unwrap_or(0.0);
        }
    }
    let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let f = Frame {
        x0: 0.0,
        x1: cols as f64,
        y0: rows as f64,
        y1: 0.0,
    };
    let mut s = open_svg(title, &f);
    let (cw, ch) = ((W - 2.0 * PAD) / cols as f64, (H - 2.0 * PAD) / rows as f64);
    for r in 0..rows {
        for c in 0..cols {
            let g = (255.0 * (1.0 - (cells[r * cols + c] - lo) / span)).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({g},{g},{g})\"/>",
                PAD + c as f64 * cw,
                PAD + r as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn pgm_header_and_scaling() {
        let m = array![[0.0, 1.0], [0.5, 1.0]];
        let p = matrix_to_pgm(m.view());
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&p[..header.len()], header);
        assert_eq!(&p[header.len()..], &[0, 255, 128, 255]);
    }

    #[test]
    fn svgs_are_well_formed_enough() {
        let pts = array![[0.0, 1.0], [2.0, 3.0], [1.0, -1.0]];
        let s = scatter_svg(pts.view(), PointColour::Labels(&[0, 1, 1]), "a < b");
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 3 + 2);
        assert!(s.contains("a &lt; b"));
        let l = line_svg(&[3.0, 2.0, 1.5], "loss");
        assert!(l.contains("<polyline"));
        let h = heatmap_svg(array![[1.0, 2.0], [3.0, 4.0]].view(), "m", 64);
        assert_eq!(h.matches("rgb(").count(), 4);
    }
}
