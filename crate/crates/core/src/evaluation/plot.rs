use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use super::font::{glyph, GLYPH_H, GLYPH_W};
use super::{ConfusionMatrix, EvalError, Result};

const CELL: u32 = 96;
const SCALE: u32 = 2;
const MARGIN_LEFT: u32 = 130;
const MARGIN_TOP: u32 = 70;
const MARGIN: u32 = 20;

const LOW: [f64; 3] = [247.0, 251.0, 255.0];
const HIGH: [f64; 3] = [8.0, 48.0, 107.0];

fn text_width(s: &str, scale: u32) -> u32 {
    let n = s.chars().count() as u32;
    if n == 0 {
        0
    } else {
        n * (GLYPH_W + 1) * scale - scale
    }
}

fn draw_text(img: &mut RgbImage, s: &str, x0: u32, y0: u32, scale: u32, color: Rgb<u8>) {
    for (k, c) in s.chars().enumerate() {
        let rows = glyph(c);
        let gx = x0 + k as u32 * (GLYPH_W + 1) * scale;
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - rx)) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (x, y) = (gx + rx * scale + dx, y0 + ry as u32 * scale + dy);
                        if x < img.width() && y < img.height() {
                            img.put_pixel(x, y, color);
                        }
                    }
                }
            }
        }
    }
}

fn shade(t: f64) -> Rgb<u8> {
    let c = |i: usize| (LOW[i] + (HIGH[i] - LOW[i]) * t).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Draw the matrix as an annotated heatmap (rows = true class, columns =
/// predicted class). The output format follows the file extension.
pub fn emit_confusion_plot(matrix: &ConfusionMatrix, output_path: &Path) -> Result<()> {
    let io_err = |message: String| EvalError::Io { path: output_path.to_path_buf(), message };
    let k = matrix.classes.len() as u32;
    if k == 0 || matrix.counts.len() != k as usize || matrix.counts.iter().any(|r| r.len() != k as usize) {
        return Err(EvalError::InconsistentClasses("matrix is not square over its classes".into()));
    }
    let format = ImageFormat::from_path(output_path).map_err(|e| io_err(e.to_string()))?;

    let width = MARGIN_LEFT + k * CELL + MARGIN;
    let height = MARGIN_TOP + k * CELL + MARGIN;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let white = Rgb([255, 255, 255]);
    let max = matrix.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let line_h = GLYPH_H * SCALE;

    let title = "predicted";
    draw_text(&mut img, title, MARGIN_LEFT + (k * CELL - text_width(title, SCALE)) / 2, 10, SCALE, black);
    draw_text(&mut img, "true", 10, 10, SCALE, black);

    for (j, name) in matrix.classes.iter().enumerate() {
        let w = text_width(name, SCALE).min(CELL);
        let x = MARGIN_LEFT + j as u32 * CELL + (CELL - w) / 2;
        draw_text(&mut img, name, x, MARGIN_TOP - line_h - 8, SCALE, black);
    }
    for (i, row) in matrix.counts.iter().enumerate() {
        let y_cell = MARGIN_TOP + i as u32 * CELL;
        let name = &matrix.classes[i];
        draw_text(&mut img, name, 10, y_cell + (CELL - line_h) / 2, SCALE, black);
        for (j, &count) in row.iter().enumerate() {
            let t = count as f64 / max;
            let x_cell = MARGIN_LEFT + j as u32 * CELL;
            let fill = shade(t);
            for y in y_cell..y_cell + CELL {
                for x in x_cell..x_cell + CELL {
                    let border = x == x_cell || y == y_cell || x == x_cell + CELL - 1 || y == y_cell + CELL - 1;
                    img.put_pixel(x, y, if border { Rgb([200, 200, 200]) } else { fill });
                }
            }
            let label = count.to_string();
            let scale = SCALE + 1;
            let tx = x_cell + (CELL.saturating_sub(text_width(&label, scale))) / 2;
            let ty = y_cell + (CELL - GLYPH_H * scale) / 2;
            draw_text(&mut img, &label, tx, ty, scale, if t > 0.5 { white } else { black });
        }
    }

    img.save_with_format(output_path, format).map_err(|e| io_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(k: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes: ["female", "male", "unknown"][..k].iter().map(|s| s.to_string()).collect(),
            counts: (0..k).map(|i| (0..k).map(|j| if i == j { 40 } else { 3 + j as u64 }).collect()).collect(),
        }
    }

    #[test]
    fn writes_decodable_heatmaps() {
        let dir = tempfile::tempdir().unwrap();
        for k in [2, 3] {
            let path = dir.path().join(format!("cm{k}.png"));
            emit_confusion_plot(&matrix(k), &path).unwrap();
            let img = image::open(&path).unwrap().to_rgb8();
            assert_eq!(img.width(), MARGIN_LEFT + k as u32 * CELL + MARGIN);
            // diagonal cell centre is the darkest shade, off-diagonal is light
            let centre = |i: u32, j: u32| *img.get_pixel(MARGIN_LEFT + j * CELL + 5, MARGIN_TOP + i * CELL + 5);
            assert_eq!(centre(0, 0), shade(1.0));
            assert!(centre(0, 1)[0] > 200);
        }
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = emit_confusion_plot(&matrix(2), Path::new("/nonexistent-dir/x/cm.png")).unwrap_err();
        assert!(matches!(err, EvalError::Io { .. }));
    }

    #[test]
    fn unknown_extension_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_confusion_plot(&matrix(2), &dir.path().join("cm.what")), Err(EvalError::Io { .. })));
    }
}
