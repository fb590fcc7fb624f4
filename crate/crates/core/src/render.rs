//! Deterministic SVG scatter plots and PGM digit mosaics.
//!
//! SVG profile: 800x800 canvas, 40 px margins, radius-3 circles, axes along
//! the left and bottom margins, coordinates printed with two decimals. Each
//! screen axis is scaled to the tight bounding box of the data; an axis with
//! zero extent maps to the canvas center. 3-D rows are projected
//! orthographically after rotating by [`AZIMUTH_DEG`] about the third axis
//! and tilting by [`ELEVATION_DEG`].

use std::fmt::Write as _;

use crate::dataset::IMAGE_SIDE;
use crate::numerics::Matrix;

pub const CANVAS: f64 = 800.0;
pub const MARGIN: f64 = 40.0;
pub const RADIUS: f64 = 3.0;
pub const AZIMUTH_DEG: f64 = 45.0;
pub const ELEVATION_DEG: f64 = 30.0;

pub const LABEL_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
pub const REAL_COLOR: &str = "#1f3fbf";
pub const SYNTHETIC_COLOR: &str = "#d62728";

/// One embedded point with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub coords: Vec<f64>,
    pub label: u8,
    pub synthetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorBy {
    Label,
    Source,
}

/// Screen-plane coordinates (x right, y up) of a 2-D or 3-D point.
pub fn project(coords: &[f64]) -> (f64, f64) {
    match coords {
        [x, y] => (*x, *y),
        [x, y, z] => {
            let (sa, ca) = AZIMUTH_DEG.to_radians().sin_cos();
            let (se, ce) = ELEVATION_DEG.to_radians().sin_cos();
            let u = x * ca - y * sa;
            let depth = x * sa + y * ca;
            (u, z * ce + depth * se)
        }
        _ => (coords.first().copied().unwrap_or(0.0), coords.get(1).copied().unwrap_or(0.0)),
    }
}

fn axis_map(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let span = CANVAS - 2.0 * MARGIN;
    move |v| {
        if !(hi > lo) {
            CANVAS / 2.0
        } else {
            MARGIN + (v - lo) / (hi - lo) * span
        }
    }
}

pub fn render_svg(points: &[PlotPoint], color_by: ColorBy) -> String {
    let projected: Vec<(f64, f64)> = points.iter().map(|p| project(&p.coords)).collect();
    let mx = axis_map(projected.iter().map(|p| p.0));
    let my = axis_map(projected.iter().map(|p| p.1));

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{CANVAS}" height="{CANVAS}" fill="white"/>"#).unwrap();
    let far = CANVAS - MARGIN;
    writeln!(s, r#"<line x1="{MARGIN}" y1="{far}" x2="{far}" y2="{far}" stroke="black" stroke-width="1"/>"#).unwrap();
    writeln!(s, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{far}" stroke="black" stroke-width="1"/>"#).unwrap();
    for (p, &(u, v)) in points.iter().zip(&projected) {
        let color = match color_by {
            ColorBy::Label => LABEL_PALETTE[usize::from(p.label) % LABEL_PALETTE.len()],
            ColorBy::Source if p.synthetic => SYNTHETIC_COLOR,
            ColorBy::Source => REAL_COLOR,
        };
        // screen y grows downwards
        let cx = mx(u);
        let cy = CANVAS - my(v);
        writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{RADIUS}" fill="{color}"/>"#).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Binary PGM (P5, maxval 255) tiling the chosen raw-pixel rows of `images`
/// in a square-ish grid of 28x28 cells, row-major, unused cells black.
pub fn mosaic_pgm(images: &Matrix, rows: &[usize]) -> Vec<u8> {
    let k = rows.len().max(1);
    let grid_cols = (k as f64).sqrt().ceil() as usize;
    let grid_rows = k.div_ceil(grid_cols);
    let width = grid_cols * IMAGE_SIDE;
    let height = grid_rows * IMAGE_SIDE;
    let mut pixels = vec![0u8; width * height];
    for (cell, &r) in rows.iter().enumerate() {
        let (gy, gx) = (cell / grid_cols, cell % grid_cols);
        let img = images.row(r);
        for py in 0..IMAGE_SIDE {
            for px in 0..IMAGE_SIDE {
                let v = img[py * IMAGE_SIDE + px].round().clamp(0.0, 255.0) as u8;
                pixels[(gy * IMAGE_SIDE + py) * width + gx * IMAGE_SIDE + px] = v;
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}
