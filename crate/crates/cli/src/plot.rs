//! Minimal plot rasterizer: polylines on a white canvas with a tiny 3x5
//! digit font for axis labels. Enough for loss curves and metric-vs-level
//! charts without pulling in a plotting stack.

use forgeloc_core::data::ImageTensor;
use forgeloc_core::Result;
use std::path::Path;

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>, // rgb
}

pub const MARGIN: usize = 36;

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1.0; width * height * 3],
        }
    }

    pub fn put(&mut self, x: i64, y: i64, rgb: [f32; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let idx = (y as usize * self.width + x as usize) * 3;
        self.data[idx..idx + 3].copy_from_slice(&rgb);
    }

    pub fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, rgb: [f32; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = x0 + (x1 - x0) * t;
            let y = y0 + (y1 - y0) * t;
            self.put(x.round() as i64, y.round() as i64, rgb);
        }
    }

    pub fn disc(&mut self, x: f64, y: f64, r: i64, rgb: [f32; 3]) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(x.round() as i64 + dx, y.round() as i64 + dy, rgb);
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let img = ImageTensor {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        };
        forgeloc_core::data::save_image(&img, path)
    }

    /// 3x5 glyphs for digits, '.', '-', 'e'; scale 2.
    pub fn label(&mut self, x: i64, y: i64, text: &str, rgb: [f32; 3]) {
        let mut cx = x;
        for ch in text.chars() {
            let glyph = glyph(ch);
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (1 << (2 - col)) != 0 {
                        for sy in 0..2 {
                            for sx in 0..2 {
                                self.put(
                                    cx + (col * 2 + sx) as i64,
                                    y + (row * 2 + sy) as i64,
                                    rgb,
                                );
                            }
                        }
                    }
                }
            }
            cx += 8;
        }
    }
}

fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
        _ => [0b000; 5],
    }
}

pub const SERIES_COLORS: [[f32; 3]; 5] = [
    [0.15, 0.35, 0.85], // blue
    [0.85, 0.25, 0.15], // red
    [0.10, 0.60, 0.25], // green
    [0.70, 0.45, 0.05], // amber
    [0.45, 0.15, 0.65], // violet
];

/// Polyline chart of one or more named series over a shared x index.
/// Y range is [0, y_max]; gridlines at quarters.
pub fn line_chart(
    path: &Path,
    series: &[(String, Vec<f64>)],
    y_max: f64,
    width: usize,
    height: usize,
) -> Result<()> {
    let mut canvas = Canvas::new(width, height);
    let (w, h) = (width as f64, height as f64);
    let m = MARGIN as f64;
    let gray = [0.75, 0.75, 0.75];
    let black = [0.1, 0.1, 0.1];

    for q in 0..=4 {
        let y = h - m - (h - 2.0 * m) * q as f64 / 4.0;
        canvas.line(m, y, w - m / 2.0, y, gray);
        let value = y_max * q as f64 / 4.0;
        canvas.label(2, y as i64 - 5, &format!("{value:.2}"), black);
    }
    canvas.line(m, m / 2.0, m, h - m, black);
    canvas.line(m, h - m, w - m / 2.0, h - m, black);

    let max_len = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1);
    for (si, (_, values)) in series.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let mut prev: Option<(f64, f64)> = None;
        for (i, &v) in values.iter().enumerate() {
            let x = m + (w - 1.5 * m) * i as f64 / (max_len.max(2) - 1) as f64;
            let y = h - m - (h - 2.0 * m) * (v / y_max).clamp(0.0, 1.0);
            canvas.disc(x, y, 2, color);
            if let Some((px, py)) = prev {
                canvas.line(px, py, x, y, color);
            }
            prev = Some((x, y));
        }
    }
    canvas.save(path)
}
