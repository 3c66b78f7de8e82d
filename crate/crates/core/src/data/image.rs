use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        RgbImage::from_ppm(&bytes).map_err(|msg| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg,
        })
    }

    /// Binary PPM (P6, maxval 255) with optional `#` comments in the header.
    pub fn from_ppm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PPM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(format!("unsupported image format `{}` (only binary P6 PPM)", fields[0]));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PPM header value `{s}`"));
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(format!("unsupported PPM maxval {maxval}"));
        }
        pos += 1;
        let len = w * h * 3;
        if bytes.len() < pos + len {
            return Err("truncated PPM pixel data".into());
        }
        Ok(RgbImage {
            width: w,
            height: h,
            data: bytes[pos..pos + len].to_vec(),
        })
    }

    /// Bilinear resampling (pixel-center aligned).
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = RgbImage::new(width, height);
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(self.width - 1);
                let mut px = [0u8; 3];
                for (c, p) in px.iter_mut().enumerate() {
                    let v = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * 3 + c] as f32;
                    let top = v(x0, y0) * (1.0 - tx) + v(x1, y0) * tx;
                    let bot = v(x0, y1) * (1.0 - tx) + v(x1, y1) * tx;
                    *p = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
                }
                out.put(x, y, px);
            }
        }
        out
    }
}

/// Full-range BT.601 RGB → YUV for one pixel, each channel in [0, 1] with
/// chroma centered on 128/255.
pub fn yuv_pixel([r, g, b]: [u8; 3]) -> [f32; 3] {
    let (r, g, b) = (r as f32, g as f32, b as f32);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
    let v = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    [y / 255.0, u / 255.0, v / 255.0]
}

/// Inverse of [`yuv_pixel`], rounded and clamped to 8 bits.
pub fn rgb_pixel([y, u, v]: [f32; 3]) -> [u8; 3] {
    let (y, u, v) = (y * 255.0, u * 255.0 - 128.0, v * 255.0 - 128.0);
    let r = y + 1.402 * v;
    let g = y - 0.344_136 * u - 0.714_136 * v;
    let b = y + 1.772 * u;
    [r, g, b].map(|c| c.round().clamp(0.0, 255.0) as u8)
}

/// Planar `(1, 3, h, w)` YUV tensor for network input.
pub fn rgb_to_yuv(img: &RgbImage) -> Tensor {
    let plane = img.width * img.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        let yuv = yuv_pixel([px[0], px[1], px[2]]);
        data[i] = yuv[0];
        data[plane + i] = yuv[1];
        data[2 * plane + i] = yuv[2];
    }
    Tensor::from_vec(Shape::new(1, 3, img.height, img.width), data).expect("sized above")
}

pub fn yuv_to_rgb(t: &Tensor) -> RgbImage {
    let s = t.shape();
    let plane = s.plane();
    let mut img = RgbImage::new(s.w, s.h);
    let d = t.data();
    for i in 0..plane {
        let rgb = rgb_pixel([d[i], d[plane + i], d[2 * plane + i]]);
        img.data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gray_and_black_have_centered_chroma() {
        let [y, u, v] = yuv_pixel([128, 128, 128]);
        assert!((y - 0.502).abs() < 1e-3);
        assert!((u - 0.5).abs() < 1.0 / 255.0 && (v - 0.5).abs() < 1.0 / 255.0);
        let [y, u, v] = yuv_pixel([0, 0, 0]);
        assert_eq!(y, 0.0);
        assert!((u - 0.5).abs() < 1.0 / 255.0 && (v - 0.5).abs() < 1.0 / 255.0);
    }

    #[test]
    fn conversion_matches_matrix_oracle_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut img = RgbImage::new(16, 16);
        rng.fill(&mut img.data[..]);
        let t = rgb_to_yuv(&img);
        let m = [
            [0.299, 0.587, 0.114],
            [-0.168736, -0.331264, 0.5],
            [0.5, -0.418688, -0.081312],
        ];
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for (c, row) in m.iter().enumerate() {
                let offset = if c == 0 { 0.0 } else { 128.0 };
                let expected = (row[0] * px[0] as f64 + row[1] * px[1] as f64 + row[2] * px[2] as f64
                    + offset)
                    / 255.0;
                assert!((t.data()[c * 256 + i] as f64 - expected).abs() < 1.0 / 255.0);
            }
        }
        let back = yuv_to_rgb(&t);
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((*a as i32 - *b as i32).abs() <= 2);
        }
    }

    #[test]
    fn ppm_round_trip_with_comment() {
        let mut img = RgbImage::filled(3, 2, [10, 20, 30]);
        img.put(2, 1, [255, 0, 7]);
        let mut bytes = img.to_ppm();
        assert_eq!(RgbImage::from_ppm(&bytes).unwrap(), img);
        bytes.splice(3..3, b"# made by hand\n".iter().copied());
        assert_eq!(RgbImage::from_ppm(&bytes).unwrap(), img);
        assert!(RgbImage::from_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(RgbImage::from_ppm(&img.to_ppm()[..14]).is_err());
    }

    #[test]
    fn resize_identity_and_uniform() {
        let img = RgbImage::filled(8, 6, [9, 99, 199]);
        assert_eq!(img.resize(8, 6), img);
        assert_eq!(img.resize(4, 3), RgbImage::filled(4, 3, [9, 99, 199]));
    }
}
