use rand::Rng;

use crate::data::{Annotation, RgbImage};
use crate::detect::BBox;

pub const PHOTOMETRIC_RANGE: f32 = 0.25;
pub const HUE_RANGE_DEG: f32 = 18.0;

/// One draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_deg: f32,
}

impl Jitter {
    pub const IDENTITY: Jitter = Jitter {
        flip: false,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_deg: 0.0,
    };

    pub fn sample(rng: &mut impl Rng) -> Self {
        let r = PHOTOMETRIC_RANGE;
        Jitter {
            flip: rng.random_bool(0.5),
            brightness: rng.random_range(1.0 - r..=1.0 + r),
            contrast: rng.random_range(1.0 - r..=1.0 + r),
            saturation: rng.random_range(1.0 - r..=1.0 + r),
            hue_deg: rng.random_range(-HUE_RANGE_DEG..=HUE_RANGE_DEG),
        }
    }

    pub fn apply(&self, img: &RgbImage, anns: &[Annotation]) -> (RgbImage, Vec<Annotation>) {
        let mut out = if self.flip { flip_horizontal(img) } else { img.clone() };
        let boxes = anns
            .iter()
            .map(|a| Annotation {
                class: a.class,
                bbox: if self.flip {
                    BBox::new(1.0 - a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h)
                } else {
                    a.bbox
                },
            })
            .collect();
        self.photometric(&mut out);
        (out, boxes)
    }

    fn photometric(&self, img: &mut RgbImage) {
        let color = self.saturation != 1.0 || self.hue_deg != 0.0;
        if self.brightness == 1.0 && self.contrast == 1.0 && !color {
            return;
        }
        let mean = if self.contrast != 1.0 {
            let sum: f64 = img
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .sum();
            (sum / (img.width * img.height) as f64) as f32 * self.brightness
        } else {
            0.0
        };
        for px in img.data.chunks_exact_mut(3) {
            let mut rgb = [px[0], px[1], px[2]].map(|c| c as f32 * self.brightness);
            if self.contrast != 1.0 {
                rgb = rgb.map(|c| mean + (c - mean) * self.contrast);
            }
            rgb = rgb.map(|c| c.clamp(0.0, 255.0));
            if color {
                let [h, s, v] = rgb_to_hsv(rgb);
                rgb = hsv_to_rgb([
                    (h + self.hue_deg).rem_euclid(360.0),
                    (s * self.saturation).clamp(0.0, 1.0),
                    v,
                ]);
            }
            for (dst, c) in px.iter_mut().zip(rgb) {
                *dst = c.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// Random flip and photometric jitter in RGB space.
pub fn augment(img: &RgbImage, anns: &[Annotation], rng: &mut impl Rng) -> (RgbImage, Vec<Annotation>) {
    Jitter::sample(rng).apply(img, anns)
}

pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    let mut out = RgbImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            out.put(img.width - 1 - x, y, img.get(x, y));
        }
    }
    out
}

/// Hue in degrees, saturation and value in `[0, 1]` / `[0, 255]`.
fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}
