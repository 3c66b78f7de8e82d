//! Datasets on disk and in memory: annotation files, PPM images, the
//! sample index, and the toy scene generator.

mod image;
mod toy;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use image::{rgb_pixel, rgb_to_yuv, yuv_pixel, yuv_to_rgb, RgbImage};
pub use toy::{generate_toy_dataset, generate_toy_scenes, render_object, ToyObject, ToyStyle};

use crate::class::Class;
use crate::detect::BBox;
use crate::error::{Error, Result};

/// Minimum box side in pixels kept by [`filter_min_size`] by default.
pub const DEFAULT_MIN_SIZE_PX: f32 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub class: Class,
    pub bbox: BBox,
}

pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(err(format!("expected `class_id cx cy w h`, found {} fields", f.len())));
        }
        let id: usize = f[0]
            .parse()
            .map_err(|_| err(format!("class id `{}` is not an integer", f[0])))?;
        let class = Class::from_id(id).ok_or_else(|| {
            Error::Validation(format!("{source}:{}: class id {id} outside 0..=3", lineno + 1))
        })?;
        let mut v = [0.0f32; 4];
        for (slot, s) in v.iter_mut().zip(&f[1..]) {
            *slot = s.parse().map_err(|_| err(format!("`{s}` is not a number")))?;
        }
        let [cx, cy, w, h] = v;
        let in_unit = |x: f32| (0.0..=1.0).contains(&x);
        if !(in_unit(cx) && in_unit(cy) && w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return Err(Error::Validation(format!(
                "{source}:{}: box ({cx}, {cy}, {w}, {h}) is not a normalized in-image box",
                lineno + 1
            )));
        }
        out.push(Annotation {
            class,
            bbox: BBox::new(cx, cy, w, h),
        });
    }
    Ok(out)
}

pub fn format_annotations(anns: &[Annotation]) -> String {
    let mut out = String::new();
    for a in anns {
        let b = a.bbox;
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            a.class.id(),
            b.cx,
            b.cy,
            b.w,
            b.h
        );
    }
    out
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn save_annotations(anns: &[Annotation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_annotations(anns)).map_err(|e| Error::io(path, e))
}

/// Drops boxes narrower or shorter than `min_wh` (normalized).
pub fn filter_min_size(anns: &[Annotation], min_wh: f32) -> Vec<Annotation> {
    anns.iter()
        .filter(|a| a.bbox.w >= min_wh && a.bbox.h >= min_wh)
        .copied()
        .collect()
}

/// The default threshold for images `image_width` pixels wide.
pub fn default_min_size(image_width: usize) -> f32 {
    DEFAULT_MIN_SIZE_PX / image_width as f32
}

/// One image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub annotations: Vec<Annotation>,
}

/// In-memory dataset; all images share one pixel size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub image_width: usize,
    pub image_height: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Validation("dataset is empty".into()))?;
        let (w, h) = (first.image.width, first.image.height);
        if let Some(bad) = samples.iter().position(|s| (s.image.width, s.image.height) != (w, h)) {
            return Err(Error::Validation(format!(
                "sample {bad} is {}x{}, expected {w}x{h}",
                samples[bad].image.width, samples[bad].image.height
            )));
        }
        Ok(Dataset {
            samples,
            image_width: w,
            image_height: h,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.samples.iter().flat_map(|s| &s.annotations)
    }

    /// Applies [`filter_min_size`] to every sample.
    pub fn filter_min_size(&mut self, min_wh: f32) {
        for s in &mut self.samples {
            s.annotations = filter_min_size(&s.annotations, min_wh);
        }
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for a in self.annotations() {
            counts[a.class.id()] += 1;
        }
        counts
    }
}

/// Name of the index file inside a dataset directory.
pub const INDEX_FILE: &str = "index.txt";

/// `relative/image.ppm relative/labels.txt` pairs, one per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl DatasetIndex {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "expected `image_path annotation_path`".into(),
                });
            }
            entries.push((PathBuf::from(f[0]), PathBuf::from(f[1])));
        }
        Ok(DatasetIndex { root, entries })
    }

    pub fn write(&self) -> Result<()> {
        let mut text = String::new();
        for (img, ann) in &self.entries {
            let _ = writeln!(text, "{} {}", img.display(), ann.display());
        }
        let path = self.root.join(INDEX_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(&self) -> Result<Dataset> {
        self.load_parallel(1)
    }

    /// Reads the listed files with up to `threads` workers; sample order
    /// follows the index.
    pub fn load_parallel(&self, threads: usize) -> Result<Dataset> {
        let read = |(img, ann): &(PathBuf, PathBuf)| -> Result<Sample> {
            Ok(Sample {
                image: RgbImage::read_ppm(self.root.join(img))?,
                annotations: load_annotations(self.root.join(ann))?,
            })
        };
        let threads = threads.clamp(1, self.entries.len().max(1));
        let chunk = self.entries.len().div_ceil(threads).max(1);
        let parts: Vec<Result<Vec<Sample>>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .entries
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(read).collect::<Result<Vec<_>>>()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("loader thread panicked"))
                .collect()
        });
        let mut samples = Vec::with_capacity(self.entries.len());
        for part in parts {
            samples.extend(part?);
        }
        Dataset::new(samples)
    }
}

/// Reads `dir/index.txt` and every listed file.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    DatasetIndex::read(dir)?.load()
}
