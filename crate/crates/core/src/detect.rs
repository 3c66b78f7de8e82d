//! Class-specific anchors, grid encoding/decoding of boxes, and
//! post-processing of decoded candidates.

use std::fmt::Write as _;

use crate::class::{Class, NUM_CLASSES};
use crate::data::{rgb_to_yuv, Annotation, RgbImage};
use crate::error::{Error, Result};
use crate::model::{HeadSpec, HeadTap, InferenceNet, ModelSpec, Network, HEAD_CHANNELS, VALUES_PER_CLASS};
use crate::tensor::{Shape, Tensor};

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub const fn new(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x0: f32, y0: f32, x1: f32, y1: f32) -> Self {
        BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)`
    pub fn corners(&self) -> (f32, f32, f32, f32) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class: Class,
    pub confidence: f32,
}

/// One `(width, height)` prior per class, in [`Class::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSet(pub [(f32, f32); NUM_CLASSES]);

impl Default for AnchorSet {
    fn default() -> Self {
        AnchorSet([(0.1, 0.1); NUM_CLASSES])
    }
}

impl AnchorSet {
    pub fn get(&self, class: Class) -> (f32, f32) {
        self.0[class.id()]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (class, (w, h)) in Class::ALL.iter().zip(self.0) {
            let _ = writeln!(out, "{} {w:.6} {h:.6}", class.id());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<AnchorSet> {
        let mut anchors = [None; NUM_CLASSES];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                path: "anchors".into(),
                line: lineno + 1,
                msg: msg.into(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err("expected `class_id width height`"));
            }
            let class = f[0]
                .parse::<usize>()
                .ok()
                .and_then(Class::from_id)
                .ok_or_else(|| err("bad class id"))?;
            let w: f32 = f[1].parse().map_err(|_| err("bad width"))?;
            let h: f32 = f[2].parse().map_err(|_| err("bad height"))?;
            if !(w > 0.0 && h > 0.0) {
                return Err(err("anchor sizes must be positive"));
            }
            anchors[class.id()] = Some((w, h));
        }
        let mut out = [(0.0, 0.0); NUM_CLASSES];
        for (slot, (class, a)) in out.iter_mut().zip(Class::ALL.iter().zip(anchors)) {
            *slot = a.ok_or(Error::EmptyClass(class.name()))?;
        }
        Ok(AnchorSet(out))
    }
}

/// Per-class mean box width and height.
pub fn compute_anchors(annotations: &[Annotation]) -> Result<AnchorSet> {
    let mut sums = [(0.0f64, 0.0f64, 0usize); NUM_CLASSES];
    for a in annotations {
        let s = &mut sums[a.class.id()];
        s.0 += a.bbox.w as f64;
        s.1 += a.bbox.h as f64;
        s.2 += 1;
    }
    let mut anchors = [(0.0, 0.0); NUM_CLASSES];
    for (class, (slot, (sw, sh, n))) in Class::ALL.iter().zip(anchors.iter_mut().zip(sums)) {
        if n == 0 {
            return Err(Error::EmptyClass(class.name()));
        }
        *slot = ((sw / n as f64) as f32, (sh / n as f64) as f32);
    }
    Ok(AnchorSet(anchors))
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Box for grid cell `(row, col)` from sigmoid-space offsets and log-space sizes.
pub fn cell_box(
    (row, col): (usize, usize),
    (rows, cols): (usize, usize),
    (off_x, off_y): (f32, f32),
    (tw, th): (f32, f32),
    (aw, ah): (f32, f32),
) -> BBox {
    BBox {
        cx: (col as f32 + off_x) / cols as f32,
        cy: (row as f32 + off_y) / rows as f32,
        w: aw * tw.exp(),
        h: ah * th.exp(),
    }
}

/// One candidate per (cell, owned class) from a head's raw output.
pub fn decode(
    raw: &Tensor,
    head: &HeadSpec,
    anchors: &AnchorSet,
    grid: (usize, usize),
) -> Result<Vec<Detection>> {
    let (rows, cols) = grid;
    let expected = Shape::new(1, HEAD_CHANNELS, rows, cols);
    let s = raw.shape();
    if s != expected {
        for (dim, e, a) in [
            ("batch", 1, s.n),
            ("channels", HEAD_CHANNELS, s.c),
            ("grid rows", rows, s.h),
            ("grid cols", cols, s.w),
        ] {
            crate::tensor::ensure_dim("decode", dim, e, a)?;
        }
    }
    let plane = rows * cols;
    let data = raw.data();
    let mut out = Vec::with_capacity(plane * head.classes_owned.len());
    for row in 0..rows {
        for col in 0..cols {
            let cell = row * cols + col;
            for (slot, &class) in head.classes_owned.iter().enumerate() {
                let v = |k: usize| data[(slot * VALUES_PER_CLASS + k) * plane + cell];
                out.push(Detection {
                    bbox: cell_box(
                        (row, col),
                        grid,
                        (sigmoid(v(0)), sigmoid(v(1))),
                        (v(2), v(3)),
                        anchors.get(class),
                    ),
                    class,
                    confidence: sigmoid(v(4)),
                });
            }
        }
    }
    Ok(out)
}

/// Responsible cell and regression targets for a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoded {
    pub row: usize,
    pub col: usize,
    /// Targets for σ(tx), σ(ty): offset of the center inside the cell.
    pub offset: (f32, f32),
    /// Targets for tw, th: log size relative to the anchor.
    pub log_size: (f32, f32),
}

impl Encoded {
    pub fn to_box(&self, grid: (usize, usize), anchor: (f32, f32)) -> BBox {
        cell_box((self.row, self.col), grid, self.offset, self.log_size, anchor)
    }
}

pub fn encode(
    class: Class,
    bbox: &BBox,
    anchors: &AnchorSet,
    (rows, cols): (usize, usize),
) -> Result<Encoded> {
    if !(0.0..=1.0).contains(&bbox.cx) || !(0.0..=1.0).contains(&bbox.cy) {
        return Err(Error::Validation(format!(
            "box center ({}, {}) lies outside the image",
            bbox.cx, bbox.cy
        )));
    }
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::Validation(format!(
            "box size {}x{} must be positive",
            bbox.w, bbox.h
        )));
    }
    let gy = bbox.cy * rows as f32;
    let gx = bbox.cx * cols as f32;
    // A center on the far edge belongs to the last cell.
    let row = (gy.floor() as usize).min(rows - 1);
    let col = (gx.floor() as usize).min(cols - 1);
    let (aw, ah) = anchors.get(class);
    Ok(Encoded {
        row,
        col,
        offset: (gx - col as f32, gy - row as f32),
        log_size: ((bbox.w / aw).ln(), (bbox.h / ah).ln()),
    })
}

/// Merges both heads' candidates, applies the confidence threshold and,
/// when `nms_iou` is set, greedy per-class non-maximum suppression.
pub fn postprocess(
    dets_lo: &[Detection],
    dets_hi: &[Detection],
    conf_threshold: f32,
    nms_iou: Option<f32>,
) -> Vec<Detection> {
    let mut kept: Vec<Detection> = dets_lo
        .iter()
        .chain(dets_hi)
        .filter(|d| d.confidence >= conf_threshold)
        .copied()
        .collect();
    let Some(limit) = nms_iou else {
        return kept;
    };
    kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut out: Vec<Detection> = Vec::with_capacity(kept.len());
    for d in kept {
        let suppressed = out
            .iter()
            .any(|s| s.class == d.class && iou(&s.bbox, &d.bbox) > limit);
        if !suppressed {
            out.push(d);
        }
    }
    out
}

/// `class_id confidence cx cy w h` per line, six decimals.
pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let b = d.bbox;
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.class.id(),
            d.confidence,
            b.cx,
            b.cy,
            b.w,
            b.h
        );
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: "detections".into(),
            line: lineno + 1,
            msg: msg.into(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(err("expected `class_id confidence cx cy w h`"));
        }
        let class = f[0]
            .parse::<usize>()
            .ok()
            .and_then(Class::from_id)
            .ok_or_else(|| err("bad class id"))?;
        let mut v = [0.0f32; 5];
        for (slot, s) in v.iter_mut().zip(&f[1..]) {
            *slot = s.parse().map_err(|_| err("bad number"))?;
        }
        out.push(Detection {
            class,
            confidence: v[0],
            bbox: BBox::new(v[1], v[2], v[3], v[4]),
        });
    }
    Ok(out)
}

/// Default confidence threshold for reported detections.
pub const DEFAULT_CONF_THRESHOLD: f32 = 0.5;

/// Network input for a batch of images, resized to the model's input size
/// and converted to YUV.
pub fn preprocess(images: &[&RgbImage], spec: &ModelSpec) -> Result<Tensor> {
    let items: Vec<Tensor> = images
        .iter()
        .map(|img| rgb_to_yuv(&img.resize(spec.input_width, spec.input_height)))
        .collect();
    Tensor::stack(&items)
}

/// Inference pipeline: preprocessing, folded network, decoding and
/// post-processing.
#[derive(Debug, Clone)]
pub struct Detector {
    net: InferenceNet,
    spec: ModelSpec,
    anchors: AnchorSet,
    pub conf_threshold: f32,
    pub nms_iou: Option<f32>,
    pub batch: usize,
}

impl Detector {
    pub fn new(net: &Network, sparse_below: Option<f64>) -> Result<Self> {
        Ok(Detector {
            net: InferenceNet::compile(net, sparse_below)?,
            spec: net.spec.clone(),
            anchors: net.anchors,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_iou: None,
            batch: 16,
        })
    }

    pub fn detect(&self, images: &[&RgbImage]) -> Result<Vec<Vec<Detection>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.batch.max(1)) {
            let input = preprocess(chunk, &self.spec)?;
            let (lo, hi) = self.net.forward(&input)?;
            for i in 0..chunk.len() {
                let lo_dets = decode(&lo.item(i), self.spec.head(HeadTap::Lo), &self.anchors, self.spec.head_grid(HeadTap::Lo))?;
                let hi_dets = decode(&hi.item(i), self.spec.head(HeadTap::Hi), &self.anchors, self.spec.head_grid(HeadTap::Hi))?;
                out.push(postprocess(&lo_dets, &hi_dets, self.conf_threshold, self.nms_iou));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadTap;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ann(class: Class, w: f32, h: f32) -> Annotation {
        Annotation {
            class,
            bbox: BBox::new(0.5, 0.5, w, h),
        }
    }

    fn hi_head() -> HeadSpec {
        HeadSpec {
            tap: HeadTap::Hi,
            source_layer: 9,
            in_ch: 64,
            classes_owned: HeadTap::Hi.classes(),
        }
    }

    #[test]
    fn anchors_are_class_means() {
        let mut anns = vec![ann(Class::Ball, 0.1, 0.2), ann(Class::Ball, 0.3, 0.4)];
        for c in &Class::ALL[1..] {
            anns.push(ann(*c, 0.5, 0.25));
        }
        let a = compute_anchors(&anns).unwrap();
        assert!((a.get(Class::Ball).0 - 0.2).abs() < 1e-6);
        assert!((a.get(Class::Ball).1 - 0.3).abs() < 1e-6);
        assert_eq!(a.get(Class::Robot), (0.5, 0.25));
    }

    #[test]
    fn anchors_require_every_class() {
        let anns = vec![ann(Class::Ball, 0.1, 0.1), ann(Class::Robot, 0.1, 0.1)];
        assert!(matches!(compute_anchors(&anns), Err(Error::EmptyClass("crossing"))));
    }

    #[test]
    fn anchors_match_streaming_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut anns = Vec::new();
        for c in Class::ALL {
            for _ in 0..1000 {
                anns.push(ann(c, rng.random_range(0.01..0.5), rng.random_range(0.01..0.5)));
            }
        }
        let a = compute_anchors(&anns).unwrap();
        for c in Class::ALL {
            // Welford-style running mean, independent of the summing path.
            let (mut mw, mut mh, mut n) = (0.0f64, 0.0f64, 0.0f64);
            for x in anns.iter().filter(|x| x.class == c) {
                n += 1.0;
                mw += (x.bbox.w as f64 - mw) / n;
                mh += (x.bbox.h as f64 - mh) / n;
            }
            assert!((a.get(c).0 as f64 - mw).abs() < 1e-6);
            assert!((a.get(c).1 as f64 - mh).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_offsets_land_mid_cell_with_anchor_size() {
        let raw = Tensor::zeros(Shape::new(1, 10, 6, 8));
        let anchors = AnchorSet([(0.05, 0.07), (0.1, 0.1), (0.2, 0.3), (0.15, 0.25)]);
        let dets = decode(&raw, &hi_head(), &anchors, (6, 8)).unwrap();
        assert_eq!(dets.len(), 6 * 8 * 2);
        let first = dets[0];
        assert!((first.bbox.cx - 0.5 / 8.0).abs() < 1e-7);
        assert!((first.bbox.cy - 0.5 / 6.0).abs() < 1e-7);
        assert_eq!((first.bbox.w, first.bbox.h), anchors.get(Class::Ball));
        assert_eq!(first.class, Class::Ball);
        assert_eq!(dets[1].class, Class::Crossing);
        assert_eq!(first.confidence, 0.5);
    }

    #[test]
    fn decode_rejects_wrong_grid() {
        let raw = Tensor::zeros(Shape::new(1, 10, 6, 8));
        assert!(decode(&raw, &hi_head(), &AnchorSet::default(), (12, 16)).is_err());
    }

    #[test]
    fn decode_matches_per_cell_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (6, 8);
        let data: Vec<f32> = (0..10 * rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
        let raw = Tensor::from_vec(Shape::new(1, 10, rows, cols), data).unwrap();
        let anchors = AnchorSet([(0.05, 0.07), (0.1, 0.12), (0.2, 0.3), (0.15, 0.25)]);
        let dets = decode(&raw, &hi_head(), &anchors, (rows, cols)).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut idx = 0;
        for i in 0..rows {
            for j in 0..cols {
                for (slot, class) in [Class::Ball, Class::Crossing].into_iter().enumerate() {
                    let v = |k: usize| raw.at(0, slot * 5 + k, i, j) as f64;
                    let (aw, ah) = anchors.get(class);
                    let d = dets[idx];
                    idx += 1;
                    assert_eq!(d.class, class);
                    assert!((d.bbox.cx as f64 - (j as f64 + sig(v(0))) / cols as f64).abs() < 1e-6);
                    assert!((d.bbox.cy as f64 - (i as f64 + sig(v(1))) / rows as f64).abs() < 1e-6);
                    assert!((d.bbox.w as f64 - aw as f64 * v(2).exp()).abs() < 1e-6);
                    assert!((d.bbox.h as f64 - ah as f64 * v(3).exp()).abs() < 1e-6);
                    assert!((d.confidence as f64 - sig(v(4))).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn encode_center_of_image() {
        let anchors = AnchorSet::default();
        let e = encode(Class::Robot, &BBox::new(0.5, 0.5, 0.1, 0.1), &anchors, (6, 8)).unwrap();
        assert_eq!((e.row, e.col), (3, 4));
        assert_eq!(e.offset, (0.0, 0.0));
        assert!(e.log_size.0.abs() < 1e-6 && e.log_size.1.abs() < 1e-6);
    }

    #[test]
    fn encode_clamps_far_edge_and_rejects_outside() {
        let anchors = AnchorSet::default();
        let e = encode(Class::Ball, &BBox::new(1.0, 1.0, 0.1, 0.1), &anchors, (6, 8)).unwrap();
        assert_eq!((e.row, e.col), (5, 7));
        assert!((e.offset.0 - 1.0).abs() < 1e-6);
        assert!(encode(Class::Ball, &BBox::new(1.2, 0.5, 0.1, 0.1), &anchors, (6, 8)).is_err());
    }

    #[test]
    fn encode_decode_round_trip_random_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let anchors = AnchorSet([(0.05, 0.07), (0.1, 0.12), (0.2, 0.3), (0.15, 0.25)]);
        for _ in 0..100 {
            let class = Class::ALL[rng.random_range(0..4)];
            let b = BBox::new(
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.01..0.6),
                rng.random_range(0.01..0.6),
            );
            let grid = (6, 8);
            let e = encode(class, &b, &anchors, grid).unwrap();
            // Through the raw parameterization: logit of the offsets, log sizes.
            let logit = |p: f32| (p / (1.0 - p)).ln();
            let (rx, ry) = (logit(e.offset.0), logit(e.offset.1));
            let back = cell_box(
                (e.row, e.col),
                grid,
                (sigmoid(rx), sigmoid(ry)),
                e.log_size,
                anchors.get(class),
            );
            for (x, y) in [(back.cx, b.cx), (back.cy, b.cy), (back.w, b.w), (back.h, b.h)] {
                assert!((x - y).abs() < 1e-6, "{back:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.25, 0.5, 0.5, 1.0);
        let b = BBox::new(0.75, 0.5, 0.5, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b), 0.0);
        let c = BBox::new(0.5, 0.5, 0.5, 1.0);
        assert!((iou(&a, &c) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn iou_half_overlap_matches_raster_count() {
        let a = BBox::new(0.25, 0.5, 0.5, 1.0);
        let c = BBox::new(0.5, 0.5, 0.5, 1.0);
        let n = 1000;
        let inside = |b: &BBox, x: f64, y: f64| {
            let (x0, y0, x1, y1) = b.corners();
            x >= x0 as f64 && x < x1 as f64 && y >= y0 as f64 && y < y1 as f64
        };
        let (mut inter, mut union) = (0u64, 0u64);
        for py in 0..n {
            for px in 0..n {
                let (x, y) = ((px as f64 + 0.5) / n as f64, (py as f64 + 0.5) / n as f64);
                let (ia, ic) = (inside(&a, x, y), inside(&c, x, y));
                inter += (ia && ic) as u64;
                union += (ia || ic) as u64;
            }
        }
        let raster = inter as f64 / union as f64;
        assert!((raster - 1.0 / 3.0).abs() < 1e-3);
        assert!((iou(&a, &c) as f64 - raster).abs() < 1e-3);
    }

    fn det(class: Class, conf: f32, b: BBox) -> Detection {
        Detection { bbox: b, class, confidence: conf }
    }

    #[test]
    fn postprocess_threshold_and_identical_boxes() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        let zero = vec![det(Class::Ball, 0.0, b); 3];
        assert!(postprocess(&zero, &[], 0.5, None).is_empty());
        let pair = [det(Class::Robot, 0.8, b), det(Class::Robot, 0.9, b)];
        let out = postprocess(&pair, &[], 0.0, Some(0.5));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 0.9);
        // Different classes never suppress each other.
        let mixed = [det(Class::Robot, 0.8, b), det(Class::Goalpost, 0.9, b)];
        assert_eq!(postprocess(&mixed, &[], 0.0, Some(0.5)).len(), 2);
    }

    #[test]
    fn nms_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let dets: Vec<Detection> = (0..20)
                .map(|_| {
                    det(
                        Class::ALL[rng.random_range(0..2)],
                        rng.random_range(0.0..1.0),
                        BBox::new(
                            rng.random_range(0.3..0.7),
                            rng.random_range(0.3..0.7),
                            rng.random_range(0.1..0.3),
                            rng.random_range(0.1..0.3),
                        ),
                    )
                })
                .collect();
            let got = postprocess(&dets, &[], 0.2, Some(0.4));
            // O(n²): a candidate survives iff no surviving same-class
            // candidate of higher confidence overlaps it too much.
            let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].confidence >= 0.2).collect();
            order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
            let mut alive = vec![true; dets.len()];
            for (pos, &i) in order.iter().enumerate() {
                for &j in &order[..pos] {
                    if alive[j] && dets[j].class == dets[i].class && iou(&dets[j].bbox, &dets[i].bbox) > 0.4 {
                        alive[i] = false;
                        break;
                    }
                }
            }
            let expected: Vec<Detection> = order.iter().filter(|&&i| alive[i]).map(|&i| dets[i]).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn detection_dump_round_trip() {
        let dets = vec![
            det(Class::Crossing, 0.25, BBox::new(0.1, 0.2, 0.3, 0.4)),
            det(Class::Robot, 1.0, BBox::new(0.9, 0.8, 0.05, 0.5)),
        ];
        let text = format_detections(&dets);
        assert!(text.starts_with("1 0.250000 0.100000 0.200000 0.300000 0.400000\n"));
        assert_eq!(parse_detections(&text).unwrap(), dets);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f32..1.0, 0.0f32..1.0, 0.01f32..1.0, 0.01f32..1.0)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-4);
        }

        #[test]
        fn postprocess_survivors_are_confident_subset(
            confs in proptest::collection::vec(0.0f32..1.0, 0..30),
            threshold in 0.0f32..1.0,
        ) {
            let dets: Vec<Detection> = confs.iter().enumerate().map(|(i, &c)| {
                det(Class::ALL[i % 4], c, BBox::new(0.5, (i % 7) as f32 / 7.0, 0.2, 0.2))
            }).collect();
            let out = postprocess(&dets, &[], threshold, Some(0.5));
            for d in &out {
                prop_assert!(d.confidence >= threshold);
                prop_assert!(dets.contains(d));
            }
        }
    }
}
