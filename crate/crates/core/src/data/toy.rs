//! Procedural 256×192 soccer-field scenes with exact box annotations.
//!
//! Balls are filled circles, crossings thin `+` marks, goalposts tall white
//! bars and robots dark rounded rectangles. Objects never overlap, stay one
//! pixel clear of the border, and two objects of the same class never share
//! a 64-pixel cell.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_annotations, Annotation, Dataset, DatasetIndex, RgbImage, Sample};
use crate::class::{Class, NUM_CLASSES};
use crate::detect::BBox;
use crate::error::{Error, Result};

pub const TOY_WIDTH: usize = 256;
pub const TOY_HEIGHT: usize = 192;
const CELL: usize = 64;
const MAX_OBJECTS: usize = 4;
const PLACEMENT_ATTEMPTS: usize = 200;

/// Scene palette family; B shifts every color to exercise transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyStyle {
    A,
    B,
}

impl FromStr for ToyStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(ToyStyle::A),
            "B" | "b" => Ok(ToyStyle::B),
            other => Err(Error::Validation(format!("unknown toy style `{other}` (A or B)"))),
        }
    }
}

struct Palette {
    field: [f32; 3],
    stripe: f32,
    light_top: f32,
    light_bottom: f32,
    noise: f32,
    white: [u8; 3],
    robot: [u8; 3],
    robot_accent: [u8; 3],
    ball_spot: [u8; 3],
}

impl ToyStyle {
    fn palette(self) -> Palette {
        match self {
            ToyStyle::A => Palette {
                field: [48.0, 140.0, 58.0],
                stripe: 0.06,
                light_top: 1.08,
                light_bottom: 0.92,
                noise: 10.0,
                white: [242, 242, 238],
                robot: [38, 40, 46],
                robot_accent: [150, 150, 160],
                ball_spot: [30, 30, 30],
            },
            ToyStyle::B => Palette {
                field: [70.0, 118.0, 108.0],
                stripe: 0.0,
                light_top: 0.82,
                light_bottom: 1.1,
                noise: 16.0,
                white: [236, 220, 186],
                robot: [84, 60, 72],
                robot_accent: [196, 172, 138],
                ball_spot: [70, 44, 30],
            },
        }
    }
}

/// A placed object: its class, pixel bounds `[x0, x1) × [y0, y1)`, and the
/// stroke thickness used by crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyObject {
    pub class: Class,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub thickness: usize,
}

impl ToyObject {
    pub fn bbox(&self, width: usize, height: usize) -> BBox {
        BBox::from_corners(
            self.x0 as f32 / width as f32,
            self.y0 as f32 / height as f32,
            self.x1 as f32 / width as f32,
            self.y1 as f32 / height as f32,
        )
    }

    fn center_cell(&self) -> (usize, usize) {
        ((self.x0 + self.x1) / 2 / CELL, (self.y0 + self.y1) / 2 / CELL)
    }

    fn overlaps(&self, other: &ToyObject, gap: usize) -> bool {
        self.x0 < other.x1 + gap
            && other.x0 < self.x1 + gap
            && self.y0 < other.y1 + gap
            && other.y0 < self.y1 + gap
    }
}

fn sample_object(class: Class, rng: &mut ChaCha8Rng) -> ToyObject {
    let (w, h, thickness) = match class {
        Class::Ball => {
            let d = 2 * rng.random_range(5..=10);
            (d, d, 0)
        }
        Class::Crossing => {
            let d = 2 * rng.random_range(7..=13);
            (d, d, rng.random_range(2..=3))
        }
        Class::Goalpost => (rng.random_range(6..=11), rng.random_range(40..=80), 0),
        Class::Robot => (rng.random_range(22..=38), rng.random_range(30..=56), 0),
    };
    let x0 = rng.random_range(1..=TOY_WIDTH - 1 - w);
    let y0 = rng.random_range(1..=TOY_HEIGHT - 1 - h);
    ToyObject {
        class,
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
        thickness,
    }
}

fn blend(a: [u8; 3], b: [u8; 3], t: f32) -> [u8; 3] {
    [0, 1, 2].map(|c| (a[c] as f32 * (1.0 - t) + b[c] as f32 * t).round() as u8)
}

/// Draws `obj` onto `img`; only pixels inside its bounds are touched.
pub fn render_object(img: &mut RgbImage, obj: &ToyObject, style: ToyStyle) {
    let p = style.palette();
    let (w, h) = (obj.x1 - obj.x0, obj.y1 - obj.y0);
    match obj.class {
        Class::Ball => {
            let r = w as f32 / 2.0;
            let (cx, cy) = (obj.x0 as f32 + r, obj.y0 as f32 + r);
            for y in obj.y0..obj.y1 {
                for x in obj.x0..obj.x1 {
                    let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                    let d2 = dx * dx + dy * dy;
                    if d2 <= r * r {
                        let spot = d2 <= (0.35 * r) * (0.35 * r);
                        img.put(x, y, if spot { p.ball_spot } else { p.white });
                    }
                }
            }
        }
        Class::Crossing => {
            let t = obj.thickness;
            let (mx, my) = (obj.x0 + w / 2 - t / 2, obj.y0 + h / 2 - t / 2);
            for y in obj.y0..obj.y1 {
                for x in obj.x0..obj.x1 {
                    if (my..my + t).contains(&y) || (mx..mx + t).contains(&x) {
                        img.put(x, y, p.white);
                    }
                }
            }
        }
        Class::Goalpost => {
            let shade = blend(p.white, [0, 0, 0], 0.18);
            for y in obj.y0..obj.y1 {
                for x in obj.x0..obj.x1 {
                    img.put(x, y, if x - obj.x0 < 2 { shade } else { p.white });
                }
            }
        }
        Class::Robot => {
            let radius = 5.0f32;
            let band = obj.y0 + h / 5;
            for y in obj.y0..obj.y1 {
                for x in obj.x0..obj.x1 {
                    // Distance from the nearest corner-circle center.
                    let fx = (x as f32 + 0.5).clamp(obj.x0 as f32 + radius, obj.x1 as f32 - radius);
                    let fy = (y as f32 + 0.5).clamp(obj.y0 as f32 + radius, obj.y1 as f32 - radius);
                    let (dx, dy) = (x as f32 + 0.5 - fx, y as f32 + 0.5 - fy);
                    if dx * dx + dy * dy > radius * radius {
                        continue;
                    }
                    let color = if (band..band + 3).contains(&y) { p.robot_accent } else { p.robot };
                    img.put(x, y, color);
                }
            }
        }
    }
}

fn render_background(style: ToyStyle, rng: &mut ChaCha8Rng) -> RgbImage {
    let p = style.palette();
    let mut img = RgbImage::new(TOY_WIDTH, TOY_HEIGHT);
    let stripe_phase = rng.random_range(0..2usize);
    for y in 0..TOY_HEIGHT {
        let t = y as f32 / (TOY_HEIGHT - 1) as f32;
        let light = p.light_top * (1.0 - t) + p.light_bottom * t;
        for x in 0..TOY_WIDTH {
            let stripe = if (x / 32 + stripe_phase) % 2 == 0 { 1.0 + p.stripe } else { 1.0 - p.stripe };
            let noise = rng.random_range(-p.noise..=p.noise);
            let px = p.field.map(|c| (c * light * stripe + noise).round().clamp(0.0, 255.0) as u8);
            img.put(x, y, px);
        }
    }
    img
}

/// Cycles through a shuffled deck so draws stay balanced.
struct Deck<T: Copy> {
    items: Vec<T>,
    pending: Vec<T>,
}

impl<T: Copy> Deck<T> {
    fn new(items: Vec<T>) -> Self {
        Deck {
            items,
            pending: Vec::new(),
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> T {
        if self.pending.is_empty() {
            self.pending = self.items.clone();
            self.pending.shuffle(rng);
        }
        self.pending.pop().expect("deck refilled")
    }
}

/// Objects and image for one scene.
fn scene(
    style: ToyStyle,
    rng: &mut ChaCha8Rng,
    counts: &mut Deck<usize>,
    classes: &mut Deck<Class>,
) -> (RgbImage, Vec<ToyObject>) {
    let mut img = render_background(style, rng);
    let n = counts.draw(rng);
    let mut placed: Vec<ToyObject> = Vec::with_capacity(n);
    for _ in 0..n {
        let class = classes.draw(rng);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let obj = sample_object(class, rng);
            let clash = placed.iter().any(|o| {
                o.overlaps(&obj, 2) || (o.class == obj.class && o.center_cell() == obj.center_cell())
            });
            if !clash {
                placed.push(obj);
                break;
            }
        }
    }
    for obj in &placed {
        render_object(&mut img, obj, style);
    }
    (img, placed)
}

/// Generates `n` scenes in memory. Deterministic for a given seed.
pub fn generate_toy_scenes(n: usize, style: ToyStyle, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Validation("toy dataset needs at least one image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Deck::new((0..=MAX_OBJECTS).collect());
    let mut classes = Deck::new(Class::ALL.to_vec());
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (image, objects) = scene(style, &mut rng, &mut counts, &mut classes);
        let annotations = objects
            .iter()
            .map(|o| Annotation {
                class: o.class,
                bbox: o.bbox(TOY_WIDTH, TOY_HEIGHT),
            })
            .collect();
        samples.push(Sample { image, annotations });
    }
    debug_assert!(NUM_CLASSES == Class::ALL.len());
    Dataset::new(samples)
}

/// Writes `images/NNNNN.ppm`, `labels/NNNNN.txt` and `index.txt` under `out_dir`.
pub fn generate_toy_dataset(
    n: usize,
    style: ToyStyle,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetIndex> {
    let root = out_dir.as_ref().to_path_buf();
    let data = generate_toy_scenes(n, style, seed)?;
    for sub in ["images", "labels"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::with_capacity(n);
    for (i, s) in data.samples.iter().enumerate() {
        let img = PathBuf::from(format!("images/{i:05}.ppm"));
        let ann = PathBuf::from(format!("labels/{i:05}.txt"));
        s.image.write_ppm(root.join(&img))?;
        save_annotations(&s.annotations, root.join(&ann))?;
        entries.push((img, ann));
    }
    let index = DatasetIndex { root, entries };
    index.write()?;
    Ok(index)
}
