//! Learning-curve rendering to PNG.
//!
//! Renders mean steps per epoch on a log-scale y axis, one curve per run
//! label with a shaded min/max band across the seeds of that label. The
//! rasterizer and PNG encoder are self-contained: the encoder emits stored
//! (uncompressed) deflate blocks, which keeps the output byte-stable across
//! toolchains at the cost of file size — fine for diagnostic charts.

use std::path::Path;

use super::metrics::MetricsFile;
use super::HarnessError;

// ---------------------------------------------------------------------------
// PNG encoding
// ---------------------------------------------------------------------------

fn crc32(data: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, t) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *t = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = table[((crc ^ u32::from(b)) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &byte in data {
        a = (a + u32::from(byte)) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

fn chunk(out: &mut Vec<u8>, kind: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(body);
    let mut crc_input = Vec::with_capacity(4 + body.len());
    crc_input.extend_from_slice(kind);
    crc_input.extend_from_slice(body);
    out.extend_from_slice(&crc32(&crc_input).to_be_bytes());
}

/// Encode an RGB byte buffer (row-major, 3 bytes per pixel) as a PNG.
pub fn encode_png(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    // Raw zlib payload: one filter byte (0 = none) per scanline.
    let mut raw = Vec::with_capacity(height * (1 + width * 3));
    for row in 0..height {
        raw.push(0);
        raw.extend_from_slice(&rgb[row * width * 3..(row + 1) * width * 3]);
    }
    let mut idat = vec![0x78, 0x01];
    let mut offset = 0;
    while offset < raw.len() {
        let len = (raw.len() - offset).min(65535);
        let last = offset + len == raw.len();
        idat.push(u8::from(last));
        idat.extend_from_slice(&(len as u16).to_le_bytes());
        idat.extend_from_slice(&(!(len as u16)).to_le_bytes());
        idat.extend_from_slice(&raw[offset..offset + len]);
        offset += len;
    }
    idat.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(width as u32).to_be_bytes());
    ihdr.extend_from_slice(&(height as u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]); // 8-bit RGB, no interlace

    let mut out = Vec::new();
    out.extend_from_slice(&[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]);
    chunk(&mut out, b"IHDR", &ihdr);
    chunk(&mut out, b"IDAT", &idat);
    chunk(&mut out, b"IEND", &[]);
    out
}

// ---------------------------------------------------------------------------
// Rasterizer
// ---------------------------------------------------------------------------

pub type Color = (u8, u8, u8);

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, bg: Color) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&[bg.0, bg.1, bg.2]);
        }
        Canvas { width, height, rgb }
    }

    pub fn set(&mut self, x: i64, y: i64, c: Color) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.rgb[i] = c.0;
        self.rgb[i + 1] = c.1;
        self.rgb[i + 2] = c.2;
    }

    pub fn vline(&mut self, x: i64, y0: i64, y1: i64, c: Color) {
        for y in y0.min(y1)..=y0.max(y1) {
            self.set(x, y, c);
        }
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
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

    /// Thick-ish line: the base line plus one pixel below, for visibility.
    pub fn line2(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        self.line(x0, y0, x1, y1, c);
        self.line(x0, y0 + 1, x1, y1 + 1, c);
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Color) {
        let mut cx = x;
        for ch in s.chars() {
            let glyph = glyph(ch.to_ascii_uppercase());
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (1 << (4 - col)) != 0 {
                        for dy in 0..scale {
                            for dx in 0..scale {
                                self.set(
                                    cx + col as i64 * scale + dx,
                                    y + row as i64 * scale + dy,
                                    c,
                                );
                            }
                        }
                    }
                }
            }
            cx += 6 * scale;
        }
    }

    pub fn text_width(s: &str, scale: i64) -> i64 {
        s.chars().count() as i64 * 6 * scale
    }

    pub fn into_png(self) -> Vec<u8> {
        encode_png(self.width, self.height, &self.rgb)
    }
}

/// 5x7 glyphs; bit 4 is the leftmost column.
fn glyph(ch: char) -> [u8; 7] {
    match ch {
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b01110, 0b10001, 0b00001, 0b00110, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '.' => [0, 0, 0, 0, 0, 0b01100, 0b01100],
        ',' => [0, 0, 0, 0, 0b01100, 0b00100, 0b01000],
        '-' => [0, 0, 0, 0b11111, 0, 0, 0],
        '+' => [0, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0],
        ':' => [0, 0b01100, 0b01100, 0, 0b01100, 0b01100, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0b11111],
        '/' => [0b00001, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b10000],
        '=' => [0, 0, 0b11111, 0, 0b11111, 0, 0],
        '(' => [0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010],
        ')' => [0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000],
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b11011, 0b10001],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        ' ' => [0; 7],
        _ => [0b11111, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11111],
    }
}

// ---------------------------------------------------------------------------
// Chart
// ---------------------------------------------------------------------------

const PALETTE: [Color; 6] = [
    (31, 119, 180),
    (214, 39, 40),
    (44, 160, 44),
    (255, 127, 14),
    (148, 103, 189),
    (23, 126, 137),
];

fn tint(c: Color) -> Color {
    let mix = |v: u8| ((u16::from(v) * 3 + 255 * 7) / 10) as u8;
    (mix(c.0), mix(c.1), mix(c.2))
}

/// One labeled group of runs: the same configuration over several seeds.
pub struct RunGroup {
    pub label: String,
    /// Per run: (epoch, mean_steps) rows.
    pub curves: Vec<Vec<(f64, f64)>>,
}

/// Group parsed metrics files by label; files without a label each form
/// their own group named after their position.
pub fn group_by_label(files: &[(String, MetricsFile)]) -> Vec<RunGroup> {
    let mut groups: Vec<RunGroup> = Vec::new();
    for (fallback, file) in files {
        let label = if file.label.is_empty() {
            fallback.clone()
        } else {
            file.label.clone()
        };
        let curve: Vec<(f64, f64)> = file
            .rows
            .iter()
            .map(|r| (r.epoch as f64, r.mean_steps))
            .collect();
        match groups.iter_mut().find(|g| g.label == label) {
            Some(g) => g.curves.push(curve),
            None => groups.push(RunGroup {
                label,
                curves: vec![curve],
            }),
        }
    }
    groups
}

struct LogAxis {
    min: f64,
    max: f64,
    px0: i64,
    px1: i64,
}

impl LogAxis {
    fn map(&self, v: f64) -> i64 {
        let v = v.max(1e-9);
        let t = (v.ln() - self.min.ln()) / (self.max.ln() - self.min.ln());
        // px1 is the top of the plot (smaller y pixel).
        self.px0 - ((self.px0 - self.px1) as f64 * t).round() as i64
    }
}

/// Render grouped learning curves to a PNG file. Y is the mean steps per
/// episode on a log scale; the shaded band spans the min/max across the
/// seeds of each label.
pub fn render_learning_curves(groups: &[RunGroup], out: &Path) -> Result<(), HarnessError> {
    if groups.is_empty() || groups.iter().all(|g| g.curves.iter().all(Vec::is_empty)) {
        return Err(HarnessError::Config("no data rows to plot".into()));
    }
    let (width, height) = (960usize, 640usize);
    let (ml, mr, mt, mb) = (80i64, 30i64, 50i64, 60i64);
    let mut canvas = Canvas::new(width, height, (255, 255, 255));

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for g in groups {
        for c in &g.curves {
            for &(x, y) in c {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y.max(1e-9));
                y_max = y_max.max(y);
            }
        }
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let y_axis = LogAxis {
        min: (y_min * 0.9).max(1e-3),
        max: y_max * 1.1,
        px0: height as i64 - mb,
        px1: mt,
    };
    let x_px = |x: f64| -> i64 {
        ml + (((width as i64 - ml - mr) as f64) * (x - x_min) / (x_max - x_min)).round() as i64
    };

    // Bands first so lines draw on top.
    for (gi, g) in groups.iter().enumerate() {
        if g.curves.len() < 2 {
            continue;
        }
        let color = tint(PALETTE[gi % PALETTE.len()]);
        let mut epochs: Vec<i64> = g
            .curves
            .iter()
            .flat_map(|c| c.iter().map(|&(x, _)| x as i64))
            .collect();
        epochs.sort_unstable();
        epochs.dedup();
        let envelope: Vec<(f64, f64, f64)> = epochs
            .iter()
            .filter_map(|&e| {
                let vals: Vec<f64> = g
                    .curves
                    .iter()
                    .flat_map(|c| {
                        c.iter()
                            .find(|&&(x, _)| x as i64 == e)
                            .map(|&(_, y)| y)
                    })
                    .collect();
                if vals.is_empty() {
                    None
                } else {
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    Some((e as f64, lo, hi))
                }
            })
            .collect();
        for w in envelope.windows(2) {
            let (x0, lo0, hi0) = w[0];
            let (x1, lo1, hi1) = w[1];
            let (p0, p1) = (x_px(x0), x_px(x1));
            for px in p0..=p1 {
                let t = if p1 == p0 {
                    0.0
                } else {
                    (px - p0) as f64 / (p1 - p0) as f64
                };
                let lo = lo0 + t * (lo1 - lo0);
                let hi = hi0 + t * (hi1 - hi0);
                canvas.vline(px, y_axis.map(lo), y_axis.map(hi), color);
            }
        }
    }

    // Mean lines.
    for (gi, g) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let mut epochs: Vec<i64> = g
            .curves
            .iter()
            .flat_map(|c| c.iter().map(|&(x, _)| x as i64))
            .collect();
        epochs.sort_unstable();
        epochs.dedup();
        let mean_curve: Vec<(f64, f64)> = epochs
            .iter()
            .filter_map(|&e| {
                let vals: Vec<f64> = g
                    .curves
                    .iter()
                    .flat_map(|c| {
                        c.iter()
                            .find(|&&(x, _)| x as i64 == e)
                            .map(|&(_, y)| y)
                    })
                    .collect();
                if vals.is_empty() {
                    None
                } else {
                    Some((e as f64, vals.iter().sum::<f64>() / vals.len() as f64))
                }
            })
            .collect();
        for w in mean_curve.windows(2) {
            canvas.line2(
                x_px(w[0].0),
                y_axis.map(w[0].1),
                x_px(w[1].0),
                y_axis.map(w[1].1),
                color,
            );
        }
        if mean_curve.len() == 1 {
            let (x, y) = mean_curve[0];
            canvas.set(x_px(x), y_axis.map(y), color);
        }
    }

    // Axes.
    let axis_color = (0, 0, 0);
    canvas.line(ml, mt, ml, height as i64 - mb, axis_color);
    canvas.line(ml, height as i64 - mb, width as i64 - mr, height as i64 - mb, axis_color);

    // Y ticks on a 1-2-5 ladder within range.
    let mut tick = 10f64.powf(y_axis.min.log10().floor());
    let mut y_ticks: Vec<f64> = Vec::new();
    while tick <= y_axis.max * 1.001 {
        for m in [1.0, 2.0, 5.0] {
            let v = tick * m;
            if v >= y_axis.min && v <= y_axis.max {
                y_ticks.push(v);
            }
        }
        tick *= 10.0;
    }
    while y_ticks.len() > 8 {
        y_ticks = y_ticks.iter().step_by(2).cloned().collect();
    }
    for v in &y_ticks {
        let py = y_axis.map(*v);
        canvas.line(ml - 4, py, ml, py, axis_color);
        let label = if *v >= 10.0 || (*v - v.round()).abs() < 1e-9 {
            format!("{}", v.round() as i64)
        } else {
            format!("{v:.1}")
        };
        let w = Canvas::text_width(&label, 1);
        canvas.text(ml - 8 - w, py - 3, &label, 1, axis_color);
        // light gridline
        for px in (ml + 1..width as i64 - mr).step_by(4) {
            canvas.set(px, py, (225, 225, 225));
        }
    }

    // X ticks: up to 6 evenly spaced.
    let n_x_ticks = 6usize.min((x_max - x_min) as usize + 1).max(2);
    for i in 0..n_x_ticks {
        let v = x_min + (x_max - x_min) * i as f64 / (n_x_ticks - 1) as f64;
        let v = v.round();
        let px = x_px(v);
        canvas.line(px, height as i64 - mb, px, height as i64 - mb + 4, axis_color);
        let label = format!("{}", v as i64);
        let w = Canvas::text_width(&label, 1);
        canvas.text(px - w / 2, height as i64 - mb + 8, &label, 1, axis_color);
    }

    canvas.text(ml, mt - 30, "MEAN STEPS PER EPISODE (LOG SCALE)", 2, axis_color);
    let xl = "EPOCH";
    let xw = Canvas::text_width(xl, 2);
    canvas.text(
        ml + (width as i64 - ml - mr - xw) / 2,
        height as i64 - mb + 24,
        xl,
        2,
        axis_color,
    );

    // Legend, top-right.
    let mut ly = mt + 8;
    for (gi, g) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let text = if g.curves.len() > 1 {
            format!("{} ({} seeds)", g.label, g.curves.len())
        } else {
            g.label.clone()
        };
        let tw = Canvas::text_width(&text, 2);
        let lx = width as i64 - mr - tw - 40;
        canvas.line2(lx, ly + 6, lx + 28, ly + 6, color);
        canvas.text(lx + 36, ly, &text, 2, axis_color);
        ly += 24;
    }

    std::fs::write(out, canvas.into_png())?;
    Ok(())
}
