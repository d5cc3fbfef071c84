//! Minimal PNG line charts for training curves. Axes autoscale, labels
//! use the built-in bitmap font, so no plotting dependency is needed.

use std::path::Path;

use crate::datagen::text_bitmap;
use crate::error::{Error, Result};

/// One polyline with a legend entry.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
}

/// One chart panel; panels stack vertically in the output image.
#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

/// Distinguishable default series colors.
pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [23, 190, 207],
    [127, 127, 127],
];

const MARGIN_LEFT: usize = 64;
const MARGIN_RIGHT: usize = 14;
const MARGIN_TOP: usize = 22;
const MARGIN_BOTTOM: usize = 26;
const PANEL_HEIGHT: usize = 220;

struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Raster {
    fn new(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![255; width * height * 3],
        }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str, color: [u8; 3]) {
        let Ok(bitmap) = text_bitmap(s) else { return };
        for ((gy, gx), &v) in bitmap.indexed_iter() {
            if v == 1 {
                self.put((x + gx) as i64, (y + gy) as i64, color);
            }
        }
    }

    fn text_width(s: &str) -> usize {
        s.chars().count() * 6
    }
}

/// Short numeric label with only font-renderable characters.
fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(0.01..10000.0).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let mut it = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let first = it.next()?;
    let mut b = (first.0, first.0, first.1, first.1);
    for p in it {
        b.0 = b.0.min(p.0);
        b.1 = b.1.max(p.0);
        b.2 = b.2.min(p.1);
        b.3 = b.3.max(p.1);
    }
    if b.0 == b.1 {
        b.0 -= 0.5;
        b.1 += 0.5;
    }
    if b.2 == b.3 {
        b.2 -= 0.5;
        b.3 += 0.5;
    }
    let pad = (b.3 - b.2) * 0.05;
    Some((b.0, b.1, b.2 - pad, b.3 + pad))
}

fn draw_panel(r: &mut Raster, top: usize, width: usize, panel: &Panel) {
    let axis = [60, 60, 60];
    let grid = [225, 225, 225];
    let plot_x0 = MARGIN_LEFT;
    let plot_x1 = width - MARGIN_RIGHT;
    let plot_y0 = top + MARGIN_TOP;
    let plot_y1 = top + PANEL_HEIGHT - MARGIN_BOTTOM;
    r.text(plot_x0, top + 7, &panel.title.to_ascii_uppercase(), axis);

    let Some((x_min, x_max, y_min, y_max)) = bounds(&panel.series) else {
        r.text(plot_x0, plot_y0, "NO DATA", axis);
        return;
    };
    let to_px = |x: f64| {
        plot_x0 as f64 + (x - x_min) / (x_max - x_min) * (plot_x1 - plot_x0) as f64
    };
    let to_py = |y: f64| {
        plot_y1 as f64 - (y - y_min) / (y_max - y_min) * (plot_y1 - plot_y0) as f64
    };

    for i in 0..=4 {
        let ty = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = to_py(ty) as i64;
        r.line(plot_x0 as i64, py, plot_x1 as i64, py, grid);
        let label = format_tick(ty);
        let lx = plot_x0.saturating_sub(Raster::text_width(&label) + 4);
        r.text(lx, (py - 3).max(0) as usize, &label, axis);

        let tx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let px = to_px(tx) as i64;
        r.line(px, plot_y0 as i64, px, plot_y1 as i64, grid);
        let label = format_tick(tx);
        let lx = (px as usize).saturating_sub(Raster::text_width(&label) / 2);
        r.text(lx, plot_y1 + 4, &label, axis);
    }
    r.line(plot_x0 as i64, plot_y0 as i64, plot_x0 as i64, plot_y1 as i64, axis);
    r.line(plot_x0 as i64, plot_y1 as i64, plot_x1 as i64, plot_y1 as i64, axis);

    for s in &panel.series {
        let mut prev: Option<(i64, i64)> = None;
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                prev = None;
                continue;
            }
            let p = (to_px(x) as i64, to_py(y) as i64);
            if let Some(q) = prev {
                r.line(q.0, q.1, p.0, p.1, s.color);
            } else {
                r.put(p.0, p.1, s.color);
            }
            prev = Some(p);
        }
    }

    let mut lx = plot_x1;
    for s in panel.series.iter().rev() {
        let label = s.label.to_ascii_uppercase();
        lx = lx.saturating_sub(Raster::text_width(&label) + 18);
        for dx in 0..10i64 {
            for dy in 0..3i64 {
                r.put(lx as i64 + dx, top as i64 + 9 + dy, s.color);
            }
        }
        r.text(lx + 13, top + 7, &label, axis);
    }
}

/// Render stacked panels to a PNG.
pub fn render_chart<P: AsRef<Path>>(path: P, panels: &[Panel], width: usize) -> Result<()> {
    if panels.is_empty() {
        return Err(Error::Config("chart needs at least one panel".into()));
    }
    let width = width.max(160);
    let mut raster = Raster::new(width, panels.len() * PANEL_HEIGHT);
    for (i, panel) in panels.iter().enumerate() {
        draw_panel(&mut raster, i * PANEL_HEIGHT, width, panel);
    }
    let img = image::RgbImage::from_raw(
        raster.width as u32,
        raster.height as u32,
        raster.data,
    )
    .expect("raster buffer matches dimensions");
    img.save(path.as_ref())
        .map_err(|e| Error::Data(format!("chart save failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_panel() -> Panel {
        Panel {
            title: "loss".into(),
            series: vec![
                Series {
                    label: "total".into(),
                    color: PALETTE[0],
                    points: (0..50).map(|i| (i as f64, (i as f64 * -0.1).exp())).collect(),
                },
                Series {
                    label: "dice".into(),
                    color: PALETTE[1],
                    points: (0..50).map(|i| (i as f64, 0.5 / (1.0 + i as f64))).collect(),
                },
            ],
        }
    }

    #[test]
    fn renders_a_readable_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.png");
        render_chart(&path, &[demo_panel(), demo_panel()], 640).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.width(), 640);
        assert_eq!(img.height(), 440);
        // Both series colors appear somewhere.
        let has = |c: [u8; 3]| img.pixels().any(|p| p.0 == c);
        assert!(has(PALETTE[0]) && has(PALETTE[1]));
    }

    #[test]
    fn empty_series_still_renders() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.png");
        let panel = Panel {
            title: "empty".into(),
            series: vec![],
        };
        render_chart(&path, &[panel], 320).unwrap();
        assert!(path.exists());
    }

    #[test]
    fn rejects_zero_panels() {
        assert!(render_chart("/tmp/never.png", &[], 320).is_err());
    }

    #[test]
    fn tick_labels_use_renderable_glyphs() {
        for v in [0.0, 0.5, -1.25, 1234.0, 0.0001, -3.2e7] {
            for ch in format_tick(v).chars() {
                assert!(
                    crate::datagen::glyph_bitmap(ch).is_some(),
                    "tick {v} produced unrenderable {ch:?}"
                );
            }
        }
    }
}
