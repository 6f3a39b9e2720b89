//! Minimal SVG renderings of sampled fields.

use std::fmt::Write;

const SIZE: f64 = 480.0;

fn to_px(v: f64, lo: f64, hi: f64) -> f64 {
    (v - lo) / (hi - lo) * SIZE
}

/// Blue-to-yellow ramp for `t ∈ [0, 1]`.
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (68.0 + t * (253.0 - 68.0)) as u8;
    let g = (1.0 + t * (231.0 - 1.0)) as u8;
    let b = (84.0 + t * (37.0 - 84.0)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn frame(body: &str, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{h}\" viewBox=\"0 0 {s} {h}\">\n\
         <title>{title}</title>\n<g transform=\"translate(0,{s}) scale(1,-1)\">\n{body}</g>\n\
         <text x=\"8\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n</svg>\n",
        s = SIZE,
        h = SIZE + 24.0,
        ty = SIZE + 18.0,
    )
}

/// Heat map of a scalar sampled on a `per_axis × per_axis` grid (first axis slowest).
pub fn heatmap(
    points: &[(f64, f64, f64)],
    per_axis: usize,
    bounds: (f64, f64),
    title: &str,
) -> String {
    let (lo, hi) = bounds;
    let vmin = points.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let vmax = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let cell = SIZE / per_axis as f64;
    let mut body = String::new();
    for &(x, y, v) in points {
        let cx = to_px(x, lo, hi) * (per_axis - 1) as f64 / per_axis as f64;
        let cy = to_px(y, lo, hi) * (per_axis - 1) as f64 / per_axis as f64;
        let _ = writeln!(
            body,
            "<rect x=\"{cx:.2}\" y=\"{cy:.2}\" width=\"{w:.2}\" height=\"{w:.2}\" fill=\"{c}\"/>",
            w = cell + 0.5,
            c = color((v - vmin) / span)
        );
    }
    frame(&body, title)
}

/// Arrows of a planar vector field, scaled so the longest spans one grid cell.
pub fn quiver(
    points: &[(f64, f64, f64, f64)],
    per_axis: usize,
    bounds: (f64, f64),
    title: &str,
) -> String {
    let (lo, hi) = bounds;
    let longest = points.iter().map(|p| p.2.hypot(p.3)).fold(0.0, f64::max);
    let scale = if longest > 0.0 {
        0.9 * SIZE / per_axis as f64 / longest
    } else {
        0.0
    };
    let mut body = String::from("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for &(x, y, u, v) in points {
        let (px, py) = (to_px(x, lo, hi), to_px(y, lo, hi));
        let (qx, qy) = (px + u * scale, py + v * scale);
        let _ = writeln!(
            body,
            "<line x1=\"{px:.2}\" y1=\"{py:.2}\" x2=\"{qx:.2}\" y2=\"{qy:.2}\" stroke=\"#1f3b73\" stroke-width=\"1\"/>\
             <circle cx=\"{qx:.2}\" cy=\"{qy:.2}\" r=\"1.2\" fill=\"#1f3b73\"/>"
        );
    }
    frame(&body, title)
}
