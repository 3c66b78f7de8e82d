use robodet::data::RgbImage;
use robodet::detect::{BBox, Detection};
use robodet::Class;

pub fn class_color(class: Class) -> [u8; 3] {
    match class {
        Class::Ball => [255, 140, 0],
        Class::Crossing => [0, 255, 255],
        Class::Goalpost => [255, 255, 0],
        Class::Robot => [255, 0, 255],
    }
}

/// Inclusive pixel bounds of a normalized box, clipped to the image.
pub fn pixel_rect(b: &BBox, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (x0, y0, x1, y1) = b.corners();
    let clip = |v: f32, n: usize| (v.max(0.0) as usize).min(n - 1);
    // Absorb float noise so edges on exact pixel boundaries stay put.
    let lo = |v: f32, n: usize| clip((v * n as f32 + 1e-3).floor(), n);
    let hi = |v: f32, n: usize| clip((v * n as f32 - 1e-3).ceil() - 1.0, n);
    let (x0, y0) = (lo(x0, width), lo(y0, height));
    let (x1, y1) = (hi(x1, width).max(x0), hi(y1, height).max(y0));
    (x0, y0, x1, y1)
}

/// 3×5 glyphs for digits and the decimal point, one row per nibble.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b001, 0b001],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, x: usize, y: usize, text: &str, color: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..3 {
                if bits & (0b100 >> dx) != 0 {
                    let (px, py) = (x + i * 4 + dx, y + dy);
                    if px < img.width && py < img.height {
                        img.put(px, py, color);
                    }
                }
            }
        }
    }
}

/// Copy of `img` with a one-pixel rectangle and a confidence label per detection.
pub fn render_overlay(img: &RgbImage, dets: &[Detection]) -> RgbImage {
    let mut out = img.clone();
    for d in dets {
        let color = class_color(d.class);
        let (x0, y0, x1, y1) = pixel_rect(&d.bbox, img.width, img.height);
        for x in x0..=x1 {
            out.put(x, y0, color);
            out.put(x, y1, color);
        }
        for y in y0..=y1 {
            out.put(x0, y, color);
            out.put(x1, y, color);
        }
        let label = format!("{:.2}", d.confidence);
        let ly = if y0 >= 6 { y0 - 6 } else { y0 + 2 };
        draw_text(&mut out, x0 + if y0 >= 6 { 0 } else { 2 }, ly, &label, color);
    }
    out
}
