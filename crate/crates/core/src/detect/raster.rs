use serde::{Deserialize, Serialize};

use super::DetectError;
use crate::model::ParsedPage;

pub const BACKGROUND: u8 = 255;
pub const CELL: u8 = 128;
pub const PATH: u8 = 0;
pub const DEFAULT_SCALE: f64 = 2.0;

/// Grayscale image of a page's cell and path geometry. Row 0 is the top of
/// the page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutRaster {
    pub width: usize,
    pub height: usize,
    /// Pixels per point, stored as thousandths to keep the type `Eq`.
    pub scale_milli: u32,
    pub pixels: Vec<u8>,
}

impl LayoutRaster {
    pub fn scale(&self) -> f64 {
        self.scale_milli as f64 / 1000.0
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Fraction of pixels that are not background.
    pub fn foreground_fraction(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().filter(|&&p| p != BACKGROUND).count() as f64 / self.pixels.len() as f64
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Fills every pixel whose center lies inside a cell, then draws paths one
/// pixel wide on top. Text never reaches the raster.
pub fn render_layout_image(page: &ParsedPage, scale: f64) -> Result<LayoutRaster, DetectError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(DetectError::BadScale(scale));
    }
    let g = page.geometry;
    let width = (g.width * scale).ceil().max(1.0) as usize;
    let height = (g.height * scale).ceil().max(1.0) as usize;
    let mut pixels = vec![BACKGROUND; width * height];

    // Pixel column c covers x in [c/s, (c+1)/s); its center is inside
    // [x0, x1) iff c in [ceil(x0*s - 0.5), ceil(x1*s - 0.5)).
    let span = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let a = (lo * scale - 0.5).ceil().max(0.0) as usize;
        let b = ((hi * scale - 0.5).ceil().max(0.0) as usize).min(n);
        (a.min(n), b)
    };
    for c in &page.cells {
        let b = c.bbox;
        let (c0, c1) = span(b.x0, b.x1, width);
        // Rows count downward from the top edge.
        let (r0, r1) = span(g.height - b.y1, g.height - b.y0, height);
        for r in r0..r1 {
            pixels[r * width + c0..r * width + c1].fill(CELL);
        }
    }

    let px = |x: f64| ((x * scale).floor().max(0.0) as usize).min(width - 1);
    let py = |y: f64| (((g.height - y) * scale).floor().max(0.0) as usize).min(height - 1);
    for s in &page.paths {
        // Bresenham between the endpoint pixels.
        let (mut x, mut y) = (px(s.x0) as i64, py(s.y0) as i64);
        let (x1, y1) = (px(s.x1) as i64, py(s.y1) as i64);
        let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
        let (sx, sy) = ((x1 - x).signum(), (y1 - y).signum());
        let mut err = dx + dy;
        loop {
            pixels[y as usize * width + x as usize] = PATH;
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

    Ok(LayoutRaster {
        width,
        height,
        scale_milli: (scale * 1000.0).round() as u32,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, PageGeometry, Segment, Style, TextCell};

    fn page_with(cells: Vec<TextCell>) -> ParsedPage {
        let mut p = ParsedPage::new(PageGeometry::new(1, 100.0, 200.0));
        p.cells = cells;
        p
    }

    #[test]
    fn empty_page_is_blank() {
        let r = render_layout_image(&page_with(vec![]), 2.0).unwrap();
        assert_eq!((r.width, r.height), (200, 400));
        assert!(r.pixels.iter().all(|&p| p == BACKGROUND));
    }

    #[test]
    fn ten_percent_cell() {
        let cell = TextCell::new(0, BBox::new(10.0, 30.0, 60.0, 70.0), "x", Style::default());
        let r = render_layout_image(&page_with(vec![cell]), 2.0).unwrap();
        let f = r.foreground_fraction();
        assert!((f - 0.10).abs() <= 0.01, "{f}");
        // The top-left cell corner (10, 70) lands at column 20, row 260.
        assert_eq!(r.get(20, 260), CELL);
        assert_eq!(r.get(19, 260), BACKGROUND);
        assert_eq!(r.get(20, 259), BACKGROUND);
    }

    #[test]
    fn text_does_not_matter() {
        let a = TextCell::new(0, BBox::new(10.0, 30.0, 60.0, 40.0), "alpha", Style::default());
        let mut b = a.clone();
        b.text = "\u{05d0}\u{05d1}".into();
        assert_eq!(
            render_layout_image(&page_with(vec![a]), 1.5).unwrap(),
            render_layout_image(&page_with(vec![b]), 1.5).unwrap()
        );
    }

    #[test]
    fn paths_are_black() {
        let mut p = page_with(vec![]);
        p.paths.push(Segment::new(50.0, 10.0, 50.0, 190.0));
        let r = render_layout_image(&p, 1.0).unwrap();
        assert_eq!(r.get(50, 100), PATH);
        assert!(r.pixels.iter().filter(|&&v| v == PATH).count() >= 180);
    }

    #[test]
    fn bad_scale() {
        assert_eq!(
            render_layout_image(&page_with(vec![]), 0.0).unwrap_err().code(),
            "bad-scale"
        );
        assert!(render_layout_image(&page_with(vec![]), f64::NAN).is_err());
    }
}
