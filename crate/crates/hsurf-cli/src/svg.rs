//! Diagnostic raster of one scan column over a two-dimensional chart.

use std::fmt::Write;

const CELL: usize = 12;
const MARGIN: usize = 40;
const LEGEND_W: usize = 20;

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn ramp(stops: &[[f64; 3]], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    lerp(stops[i], stops[i + 1], t - i as f64)
}

const SEQUENTIAL: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];
const DIVERGING: [[f64; 3]; 3] = [[49.0, 54.0, 149.0], [247.0, 247.0, 247.0], [165.0, 0.0, 38.0]];

/// Colour scale: diverging around zero when the data change sign.
struct Scale {
    lo: f64,
    hi: f64,
    diverging: bool,
}

impl Scale {
    fn new(values: &[f64]) -> Self {
        let finite = values.iter().filter(|v| v.is_finite());
        let lo = finite.clone().cloned().fold(f64::INFINITY, f64::min);
        let hi = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Scale { lo: 0.0, hi: 1.0, diverging: false };
        }
        if lo < 0.0 && hi > 0.0 {
            let m = lo.abs().max(hi);
            Scale { lo: -m, hi: m, diverging: true }
        } else if hi > lo {
            Scale { lo, hi, diverging: false }
        } else {
            Scale { lo: lo - 0.5, hi: hi + 0.5, diverging: false }
        }
    }

    fn colour(&self, v: f64) -> String {
        if !v.is_finite() {
            return "#bdbdbd".into();
        }
        let t = (v - self.lo) / (self.hi - self.lo);
        let c = if self.diverging { ramp(&DIVERGING, t) } else { ramp(&SEQUENTIAL, t) };
        format!("#{:02x}{:02x}{:02x}", c[0].round() as u8, c[1].round() as u8, c[2].round() as u8)
    }
}

/// `values` in row-major node order over an `nx × ny` grid (first chart
/// coordinate slowest).  Masked nodes are drawn grey.
pub fn heatmap(title: &str, values: &[f64], masked: &[bool], nx: usize, ny: usize, lo: [f64; 2], hi: [f64; 2]) -> String {
    let scale = Scale::new(
        &values
            .iter()
            .zip(masked)
            .map(|(v, m)| if *m { f64::NAN } else { *v })
            .collect::<Vec<_>>(),
    );
    let w = 2 * MARGIN + nx * CELL + 3 * LEGEND_W + 80;
    let h = 2 * MARGIN + ny * CELL;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#, w, h).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, MARGIN, MARGIN / 2, escape(title)).unwrap();
    for i in 0..nx {
        for j in 0..ny {
            let k = i * ny + j;
            let v = if masked[k] { f64::NAN } else { values[k] };
            // second coordinate increases upwards
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                MARGIN + i * CELL,
                MARGIN + (ny - 1 - j) * CELL,
                CELL,
                CELL,
                scale.colour(v)
            )
            .unwrap();
        }
    }
    let bottom = MARGIN + ny * CELL;
    writeln!(s, r#"<text x="{}" y="{}">u1: {} .. {}</text>"#, MARGIN, bottom + 16, lo[0], hi[0]).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" transform="rotate(-90 {} {})">u2: {} .. {}</text>"#,
        MARGIN - 8,
        bottom,
        MARGIN - 8,
        bottom,
        lo[1],
        hi[1]
    )
    .unwrap();
    // legend
    let lx = MARGIN + nx * CELL + LEGEND_W;
    let steps = 32;
    let lh = ny * CELL;
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        let y0 = MARGIN + lh - (k + 1) * lh / steps;
        let y1 = MARGIN + lh - k * lh / steps;
        writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            lx,
            y0,
            LEGEND_W,
            y1 - y0,
            scale.colour(scale.lo + t * (scale.hi - scale.lo))
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}">{:.4e}</text>"#, lx + LEGEND_W + 4, MARGIN + 8, scale.hi).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">{:.4e}</text>"#, lx + LEGEND_W + 4, MARGIN + lh, scale.lo).unwrap();
    writeln!(s, r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#bdbdbd"/>"##, lx, bottom + 8, LEGEND_W, 10).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">masked</text>"#, lx + LEGEND_W + 4, bottom + 17).unwrap();
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
