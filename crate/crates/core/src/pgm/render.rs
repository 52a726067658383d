use super::types::{LineObj, PanelSpec, ShapeObj};
use crate::error::{Error, Result};

pub const SUPPORTED_RESOLUTIONS: [usize; 2] = [40, 80];
const SUBSAMPLES: usize = 4;

/// Gray value for an intensity level; level 0 is the white background.
pub fn gray(level: u8) -> f32 {
    255.0 - 22.0 * level as f32
}

fn shape_radius(res: f32, size: u8) -> f32 {
    res / 3.0 * 0.5 * (0.25 + 0.065 * size as f32)
}

/// Vertices of a regular polygon with the first corner pointing up.
fn polygon(cx: f32, cy: f32, r: f32, corners: usize) -> Vec<(f32, f32)> {
    (0..corners)
        .map(|k| {
            let a = -std::f32::consts::FRAC_PI_2 + std::f32::consts::TAU * k as f32 / corners as f32;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

fn inside_convex(poly: &[(f32, f32)], x: f32, y: f32) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (ax, ay) = poly[i];
        let (bx, by) = poly[(i + 1) % n];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
    })
}

fn segments(motif: u8, res: f32) -> Vec<[f32; 4]> {
    let (lo, mid, hi) = (0.0, res / 2.0, res);
    let inset = res * 0.1;
    let (a, b) = (inset, res - inset);
    match motif {
        0 => vec![[lo, mid, hi, mid]],
        1 => vec![[mid, lo, mid, hi]],
        2 => vec![[lo, lo, hi, hi]],
        3 => vec![[lo, hi, hi, lo]],
        4 => vec![[mid, lo, hi, mid], [hi, mid, mid, hi], [mid, hi, lo, mid], [lo, mid, mid, lo]],
        _ => vec![[a, a, b, a], [b, a, b, b], [b, b, a, b], [a, b, a, a]],
    }
}

fn segment_distance(s: &[f32; 4], x: f32, y: f32) -> f32 {
    let (dx, dy) = (s[2] - s[0], s[3] - s[1]);
    let t = (((x - s[0]) * dx + (y - s[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (px, py) = (s[0] + t * dx - x, s[1] + t * dy - y);
    (px * px + py * py).sqrt()
}

/// Alpha-composites one primitive given by its sample-coverage test over the
/// pixel box `[x0, x1) × [y0, y1)`.
fn paint(canvas: &mut [f32], res: usize, bbox: [f32; 4], tone: f32, covers: impl Fn(f32, f32) -> bool) {
    let clampi = |v: f32| (v.floor().max(0.0) as usize).min(res);
    let (x0, y0) = (clampi(bbox[0]), clampi(bbox[1]));
    let (x1, y1) = (clampi(bbox[2] + 1.0), clampi(bbox[3] + 1.0));
    let step = 1.0 / SUBSAMPLES as f32;
    for py in y0..y1 {
        for px in x0..x1 {
            let mut hits = 0;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let x = px as f32 + (sx as f32 + 0.5) * step;
                    let y = py as f32 + (sy as f32 + 0.5) * step;
                    hits += covers(x, y) as usize;
                }
            }
            if hits > 0 {
                let a = hits as f32 / (SUBSAMPLES * SUBSAMPLES) as f32;
                let cell = &mut canvas[py * res + px];
                *cell = *cell * (1.0 - a) + tone * a;
            }
        }
    }
}

fn draw_line(canvas: &mut [f32], res: usize, line: &LineObj) {
    let r = res as f32;
    let half = 0.018 * r;
    for s in segments(line.motif, r) {
        let bbox = [
            s[0].min(s[2]) - half,
            s[1].min(s[3]) - half,
            s[0].max(s[2]) + half,
            s[1].max(s[3]) + half,
        ];
        paint(canvas, res, bbox, gray(line.colour), |x, y| segment_distance(&s, x, y) <= half);
    }
}

fn draw_shape(canvas: &mut [f32], res: usize, shape: &ShapeObj) {
    let r = res as f32;
    let cell = r / 3.0;
    let cx = (shape.position % 3) as f32 * cell + cell / 2.0;
    let cy = (shape.position / 3) as f32 * cell + cell / 2.0;
    let rad = shape_radius(r, shape.size);
    let bbox = [cx - rad, cy - rad, cx + rad, cy + rad];
    let tone = gray(shape.colour);
    if shape.glyph == 6 {
        paint(canvas, res, bbox, tone, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= rad * rad);
    } else {
        let poly = polygon(cx, cy, rad, shape.glyph as usize + 3);
        paint(canvas, res, bbox, tone, |x, y| inside_convex(&poly, x, y));
    }
}

/// Rasterizes a panel to `resolution²` row-major gray bytes.  Lines are drawn
/// first, shapes on top.
pub fn render_panel(spec: &PanelSpec, resolution: usize) -> Result<Vec<u8>> {
    if !SUPPORTED_RESOLUTIONS.contains(&resolution) {
        return Err(Error::param(format!("resolution {resolution} is not one of {SUPPORTED_RESOLUTIONS:?}")));
    }
    spec.validate()?;
    let mut canvas = vec![255.0f32; resolution * resolution];
    for l in &spec.lines {
        draw_line(&mut canvas, resolution, l);
    }
    for s in &spec.shapes {
        draw_shape(&mut canvas, resolution, s);
    }
    Ok(canvas.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
}
