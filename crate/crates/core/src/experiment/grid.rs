//! Labeled image grids with a built-in 5×7 font.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{save_png, RgbImage};

pub const HEADER: usize = 12;
pub const GUTTER: usize = 2;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const ADVANCE: usize = GLYPH_W + 1;
const WHITE: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [0, 0, 0];

/// A named column of equally sized images.
#[derive(Clone, Debug)]
pub struct GridColumn {
    pub name: String,
    pub images: Vec<RgbImage>,
}

impl GridColumn {
    pub fn new(name: &str, images: Vec<RgbImage>) -> Self {
        GridColumn {
            name: name.to_string(),
            images,
        }
    }
}

// Rows top to bottom, bit 4 is the leftmost pixel.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '=' => [0, 0, 0x1F, 0, 0x1F, 0, 0],
        '+' => [0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '/' => [0, 0x01, 0x02, 0x04, 0x08, 0x10, 0],
        ' ' => [0; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04],
    }
}

/// Draws `text` into the header band of a column starting at `x0`, clipped
/// to `width` pixels. Centered when it fits.
fn draw_label(img: &mut RgbImage, text: &str, x0: usize, width: usize) {
    let n = text.chars().count();
    let text_w = if n == 0 { 0 } else { n * ADVANCE - 1 };
    let mut x = if text_w <= width { x0 + (width - text_w) / 2 } else { x0 + 1.min(width) };
    let top = (HEADER - GLYPH_H) / 2;
    let limit = x0 + width;
    for c in text.chars() {
        let rows = glyph(c);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                let px = x + dx;
                if px < limit && bits & (0x10 >> dx) != 0 {
                    img.set_pixel(top + dy, px, INK);
                }
            }
        }
        x += ADVANCE;
        if x >= limit {
            break;
        }
    }
}

/// Output (height, width) for `cols` columns of `rows` images sized h×w.
pub fn grid_dims(cols: usize, rows: usize, h: usize, w: usize) -> (usize, usize) {
    (
        HEADER + rows * h + rows.saturating_sub(1) * GUTTER,
        cols * w + cols.saturating_sub(1) * GUTTER,
    )
}

pub fn render_grid(columns: &[GridColumn]) -> Result<RgbImage> {
    let first = columns.first().ok_or_else(|| Error::validation("grid needs at least one column"))?;
    let rows = first.images.len();
    let (h, w) = first
        .images
        .first()
        .map(RgbImage::dims)
        .ok_or_else(|| Error::validation(format!("grid column {:?} is empty", first.name)))?;
    for c in columns {
        if c.images.len() != rows {
            return Err(Error::validation(format!(
                "ragged grid: column {:?} has {} images, expected {rows}",
                c.name,
                c.images.len()
            )));
        }
        if let Some(img) = c.images.iter().find(|i| i.dims() != (h, w)) {
            return Err(Error::Shape(format!(
                "grid column {:?} mixes {}x{} with {h}x{w}",
                c.name,
                img.height(),
                img.width()
            )));
        }
    }
    let (gh, gw) = grid_dims(columns.len(), rows, h, w);
    let mut out = RgbImage::filled(gh, gw, WHITE)?;
    for (ci, col) in columns.iter().enumerate() {
        let x0 = ci * (w + GUTTER);
        draw_label(&mut out, &col.name, x0, w);
        for (ri, img) in col.images.iter().enumerate() {
            let y0 = HEADER + ri * (h + GUTTER);
            for y in 0..h {
                for x in 0..w {
                    out.set_pixel(y0 + y, x0 + x, img.pixel(y, x));
                }
            }
        }
    }
    Ok(out)
}

pub fn save_grid(columns: &[GridColumn], path: &Path) -> Result<()> {
    save_png(&render_grid(columns)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: u8) -> RgbImage {
        RgbImage::filled(32, 32, [v, v / 2, 255 - v]).unwrap()
    }

    #[test]
    fn layout_arithmetic() {
        let names = ["cover", "hidden", "encoded", "decoded", "predicted"];
        let cols: Vec<_> = names
            .iter()
            .enumerate()
            .map(|(i, n)| GridColumn::new(n, (0..5).map(|r| solid((i * 40 + r * 7) as u8)).collect()))
            .collect();
        let g = render_grid(&cols).unwrap();
        assert_eq!((g.width(), g.height()), (168, 180));
        // gutters stay white, image pixels are copied
        assert_eq!(g.pixel(100, 33), WHITE);
        assert_eq!(g.pixel(12 + 34, 34), cols[1].images[1].pixel(0, 0));
        assert_eq!(render_grid(&cols).unwrap(), g);
    }

    #[test]
    fn degenerate_grid() {
        let g = render_grid(&[GridColumn::new("x", vec![solid(3)])]).unwrap();
        assert_eq!((g.width(), g.height()), (32, 44));
    }

    #[test]
    fn labels_draw_ink_inside_header() {
        let g = render_grid(&[GridColumn::new("cover", vec![solid(9)])]).unwrap();
        let ink = (0..HEADER).flat_map(|y| (0..32).map(move |x| (y, x))).filter(|&(y, x)| g.pixel(y, x) == INK).count();
        assert!(ink > 20);
        // long names are clipped, never spill into the next column
        let long = render_grid(&[
            GridColumn::new("reconstruction", vec![solid(9)]),
            GridColumn::new("", vec![solid(9)]),
        ])
        .unwrap();
        assert!((0..HEADER).all(|y| (32..66).all(|x| long.pixel(y, x) == WHITE)));
    }

    #[test]
    fn rejects_ragged_and_mixed() {
        let a = GridColumn::new("a", vec![solid(1), solid(2)]);
        assert!(render_grid(&[a.clone(), GridColumn::new("b", vec![solid(1)])]).is_err());
        let small = RgbImage::filled(8, 8, [0; 3]).unwrap();
        assert!(render_grid(&[a, GridColumn::new("b", vec![solid(1), small])]).is_err());
        assert!(render_grid(&[]).is_err());
        assert!(render_grid(&[GridColumn::new("a", vec![])]).is_err());
    }
}
