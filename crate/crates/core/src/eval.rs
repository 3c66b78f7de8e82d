//! Matching detections to ground truth and (mean) average precision under
//! IoU and center-distance criteria.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::class::{Class, NUM_CLASSES};
use crate::data::{Annotation, Dataset};
use crate::detect::{iou, Detection, Detector};
use crate::error::{Error, Result};
use crate::model::Network;

/// Confidence threshold used when collecting detections for AP.
pub const EVAL_CONF_THRESHOLD: f32 = 0.01;
pub const IOU_SWEEP: [f32; 5] = [0.75, 0.5, 0.25, 0.1, 0.05];
pub const DISTANCE_SWEEP_PX: [f32; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

/// A detection matches a ground truth when IoU ≥ t, or when their centers
/// lie within t pixels of each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchCriterion {
    Iou(f32),
    Distance(f32),
}

impl MatchCriterion {
    /// Match quality (higher is better) if the pair satisfies the criterion.
    /// `image_size` is `(width, height)` in pixels.
    pub fn score(&self, det: &Detection, gt: &Annotation, image_size: (usize, usize)) -> Option<f64> {
        match *self {
            MatchCriterion::Iou(t) => {
                let v = iou(&det.bbox, &gt.bbox);
                (v >= t).then_some(v as f64)
            }
            MatchCriterion::Distance(t) => {
                let dx = (det.bbox.cx - gt.bbox.cx) as f64 * image_size.0 as f64;
                let dy = (det.bbox.cy - gt.bbox.cy) as f64 * image_size.1 as f64;
                let d = (dx * dx + dy * dy).sqrt();
                (d <= t as f64).then_some(-d)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            MatchCriterion::Iou(t) => format!("iou@{t}"),
            MatchCriterion::Distance(t) => format!("dist@{t}px"),
        }
    }
}

impl fmt::Display for MatchCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MatchCriterion {
    type Err = Error;

    /// `iou:0.5` or `dist:16`.
    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::Validation(format!("bad criterion `{s}`, expected iou:<t> or dist:<px>"));
        let (kind, value) = s.split_once(':').ok_or_else(err)?;
        let t: f32 = value.parse().map_err(|_| err())?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(err());
        }
        match kind {
            "iou" if t <= 1.0 => Ok(MatchCriterion::Iou(t)),
            "dist" => Ok(MatchCriterion::Distance(t)),
            _ => Err(err()),
        }
    }
}

/// The ten criteria of the standard report, IoU first.
pub fn default_sweep() -> Vec<MatchCriterion> {
    IOU_SWEEP
        .iter()
        .map(|&t| MatchCriterion::Iou(t))
        .chain(DISTANCE_SWEEP_PX.iter().map(|&t| MatchCriterion::Distance(t)))
        .collect()
}

/// True-positive flag per detection (input order) for one image.
///
/// Within each class, detections in descending confidence claim the
/// best-scoring unmatched ground truth; ties go to the lower index.
pub fn match_detections(
    dets: &[Detection],
    gts: &[Annotation],
    crit: MatchCriterion,
    image_size: (usize, usize),
) -> Vec<bool> {
    let mut flags = vec![false; dets.len()];
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut taken = vec![false; gts.len()];
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.class != d.class {
                continue;
            }
            if let Some(s) = crit.score(d, g, image_size) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            flags[i] = true;
        }
    }
    flags
}

/// All-point interpolated AP from `(confidence, is_tp)` pairs; `None` when
/// there is no ground truth.
pub fn average_precision(scored: &[(f32, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = Vec::with_capacity(sorted.len());
    let mut precision = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, hit) in &sorted {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    Some(ap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassResult {
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub gt: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub criterion: MatchCriterion,
    pub classes: [ClassResult; NUM_CLASSES],
    /// Mean AP over classes that have ground truth.
    pub map: f64,
}

/// AP per class and mAP over a dataset of per-image detections.
pub fn evaluate_detections(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<Annotation>],
    crit: MatchCriterion,
    image_size: (usize, usize),
) -> Result<EvalReport> {
    if detections.len() != ground_truth.len() {
        return Err(Error::Validation(format!(
            "{} detection lists for {} images",
            detections.len(),
            ground_truth.len()
        )));
    }
    let mut scored: [Vec<(f32, bool)>; NUM_CLASSES] = Default::default();
    let mut n_gt = [0usize; NUM_CLASSES];
    for (dets, gts) in detections.iter().zip(ground_truth) {
        for g in gts {
            n_gt[g.class.id()] += 1;
        }
        for (d, hit) in dets.iter().zip(match_detections(dets, gts, crit, image_size)) {
            scored[d.class.id()].push((d.confidence, hit));
        }
    }
    let mut classes = [ClassResult {
        ap: None,
        tp: 0,
        fp: 0,
        fn_: 0,
        gt: 0,
    }; NUM_CLASSES];
    let mut aps = Vec::with_capacity(NUM_CLASSES);
    for class in Class::ALL {
        let c = class.id();
        let tp = scored[c].iter().filter(|s| s.1).count();
        let ap = average_precision(&scored[c], n_gt[c]);
        match ap {
            Some(v) => aps.push(v),
            None => log::warn!("no ground truth for class {class}; excluded from mAP"),
        }
        classes[c] = ClassResult {
            ap,
            tp,
            fp: scored[c].len() - tp,
            fn_: n_gt[c] - tp,
            gt: n_gt[c],
        };
    }
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    Ok(EvalReport {
        criterion: crit,
        classes,
        map,
    })
}

/// Runs the network over the dataset with the low evaluation threshold.
pub fn predict(net: &Network, data: &Dataset) -> Result<Vec<Vec<Detection>>> {
    let mut det = Detector::new(net, None)?;
    det.conf_threshold = EVAL_CONF_THRESHOLD;
    let images: Vec<_> = data.samples.iter().map(|s| &s.image).collect();
    det.detect(&images)
}

/// Inference plus one report per criterion.
pub fn evaluate(net: &Network, data: &Dataset, sweep: &[MatchCriterion]) -> Result<Vec<EvalReport>> {
    let dets = predict(net, data)?;
    let gts: Vec<Vec<Annotation>> = data.samples.iter().map(|s| s.annotations.clone()).collect();
    let size = (data.image_width, data.image_height);
    sweep
        .iter()
        .map(|&c| evaluate_detections(&dets, &gts, c, size))
        .collect()
}

/// One row per model, one mAP column per criterion.
pub fn sweep_csv(rows: &[(&str, &[EvalReport])]) -> String {
    let mut out = String::from("model");
    if let Some((_, first)) = rows.first() {
        for r in first.iter() {
            let _ = write!(out, ",{}", r.criterion);
        }
    }
    out.push('\n');
    for (name, reports) in rows {
        out.push_str(name);
        for r in reports.iter() {
            let _ = write!(out, ",{:.4}", r.map);
        }
        out.push('\n');
    }
    out
}

/// `model,criterion,class,ap,tp,fp,fn,gt` rows; undefined AP is left empty.
pub fn per_class_csv(model: &str, reports: &[EvalReport]) -> String {
    let mut out = String::from("model,criterion,class,ap,tp,fp,fn,gt\n");
    for r in reports {
        for class in Class::ALL {
            let c = &r.classes[class.id()];
            let ap = c.ap.map_or(String::new(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{model},{},{class},{ap},{},{},{},{}",
                r.criterion, c.tp, c.fp, c.fn_, c.gt
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::BBox;
    use proptest::prelude::*;

    const SIZE: (usize, usize) = (640, 480);

    fn gt(class: Class, cx: f32, cy: f32, w: f32, h: f32) -> Annotation {
        Annotation {
            class,
            bbox: BBox::new(cx, cy, w, h),
        }
    }

    fn det(a: &Annotation, confidence: f32) -> Detection {
        Detection {
            bbox: a.bbox,
            class: a.class,
            confidence,
        }
    }

    #[test]
    fn exact_detection_is_tp_and_duplicate_is_fp() {
        let g = gt(Class::Ball, 0.5, 0.5, 0.1, 0.1);
        assert_eq!(match_detections(&[det(&g, 0.9)], &[g], MatchCriterion::Iou(0.5), SIZE), vec![true]);
        let flags = match_detections(&[det(&g, 0.8), det(&g, 0.9)], &[g], MatchCriterion::Iou(0.5), SIZE);
        assert_eq!(flags, vec![false, true]);
    }

    #[test]
    fn ap_hand_examples() {
        assert_eq!(average_precision(&[(0.9, true), (0.8, true)], 2), Some(1.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[(0.9, true), (0.5, false)], 2), Some(0.5));
        assert_eq!(average_precision(&[(0.9, true)], 0), None);
        // Envelope: TP, FP, TP over 2 gts → 0.5·1 + 0.5·(2/3).
        let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn perfect_detector_scores_one_everywhere() {
        let gts = vec![
            vec![gt(Class::Ball, 0.2, 0.3, 0.05, 0.05), gt(Class::Robot, 0.6, 0.5, 0.2, 0.3)],
            vec![gt(Class::Goalpost, 0.1, 0.4, 0.04, 0.3), gt(Class::Crossing, 0.7, 0.8, 0.1, 0.1)],
        ];
        let dets: Vec<Vec<Detection>> = gts.iter().map(|g| g.iter().map(|a| det(a, 1.0)).collect()).collect();
        for crit in default_sweep() {
            let r = evaluate_detections(&dets, &gts, crit, SIZE).unwrap();
            assert_eq!(r.map, 1.0, "{crit}");
        }
        assert_eq!(default_sweep().len(), 10);
    }

    #[test]
    fn missing_class_is_excluded_from_map() {
        let gts = vec![vec![gt(Class::Ball, 0.2, 0.3, 0.05, 0.05)]];
        let dets = vec![vec![det(&gts[0][0], 0.7)]];
        let r = evaluate_detections(&dets, &gts, MatchCriterion::Iou(0.5), SIZE).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.classes[Class::Robot.id()].ap, None);
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("iou:0.5".parse::<MatchCriterion>().unwrap(), MatchCriterion::Iou(0.5));
        assert_eq!("dist:16".parse::<MatchCriterion>().unwrap(), MatchCriterion::Distance(16.0));
        assert!("iou:1.5".parse::<MatchCriterion>().is_err());
        assert!("dist:-1".parse::<MatchCriterion>().is_err());
        assert!("area:3".parse::<MatchCriterion>().is_err());
    }

    #[test]
    fn csv_layout() {
        let gts = vec![vec![gt(Class::Ball, 0.2, 0.3, 0.05, 0.05)]];
        let dets = vec![vec![det(&gts[0][0], 0.7)]];
        let reports: Vec<EvalReport> = default_sweep()
            .into_iter()
            .map(|c| evaluate_detections(&dets, &gts, c, SIZE).unwrap())
            .collect();
        let csv = sweep_csv(&[("robo", &reports)]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,iou@0.75,iou@0.5,iou@0.25,iou@0.1,iou@0.05,dist@4px,dist@8px,dist@16px,dist@32px,dist@64px"
        );
        assert!(lines.next().unwrap().starts_with("robo,1.0000,"));
        assert_eq!(per_class_csv("robo", &reports).lines().count(), 1 + 40);
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<Annotation>, Vec<Detection>)> {
        let ann = (0usize..4, 0.05f32..0.95, 0.05f32..0.95, 0.02f32..0.3, 0.02f32..0.3)
            .prop_map(|(c, cx, cy, w, h)| gt(Class::from_id(c).unwrap(), cx, cy, w, h));
        let d = (ann.clone(), 0.0f32..1.0).prop_map(|(a, c)| det(&a, c));
        (proptest::collection::vec(ann, 0..5), proptest::collection::vec(d, 0..10))
    }

    proptest! {
        #[test]
        fn loosening_never_lowers_ap(scenes in proptest::collection::vec(arb_scene(), 1..6)) {
            let (gts, dets): (Vec<_>, Vec<_>) = scenes.into_iter().unzip();
            for sweep in [IOU_SWEEP.map(MatchCriterion::Iou), DISTANCE_SWEEP_PX.map(MatchCriterion::Distance)] {
                let mut prev: Option<EvalReport> = None;
                for crit in sweep {
                    let r = evaluate_detections(&dets, &gts, crit, SIZE).unwrap();
                    if let Some(p) = &prev {
                        for c in 0..NUM_CLASSES {
                            if let (Some(a), Some(b)) = (p.classes[c].ap, r.classes[c].ap) {
                                prop_assert!(b >= a - 1e-12);
                            }
                            prop_assert!(r.classes[c].tp <= r.classes[c].gt);
                        }
                    }
                    prev = Some(r);
                }
            }
        }

        #[test]
        fn ap_ignores_monotone_rescaling(scenes in proptest::collection::vec(arb_scene(), 1..6)) {
            let (gts, dets): (Vec<_>, Vec<_>) = scenes.into_iter().unzip();
            let squashed: Vec<Vec<Detection>> = dets
                .iter()
                .map(|v| v.iter().map(|d| Detection { confidence: d.confidence * d.confidence * 0.5, ..*d }).collect())
                .collect();
            let a = evaluate_detections(&dets, &gts, MatchCriterion::Iou(0.25), SIZE).unwrap();
            let b = evaluate_detections(&squashed, &gts, MatchCriterion::Iou(0.25), SIZE).unwrap();
            prop_assert!((a.map - b.map).abs() < 1e-12);
        }

        #[test]
        fn distance_matching_ignores_box_size((gts, dets) in arb_scene(), scale in 0.1f32..3.0) {
            let crit = MatchCriterion::Distance(16.0);
            let resized: Vec<Detection> = dets
                .iter()
                .map(|d| Detection { bbox: BBox::new(d.bbox.cx, d.bbox.cy, d.bbox.w * scale, d.bbox.h * scale), ..*d })
                .collect();
            prop_assert_eq!(
                match_detections(&dets, &gts, crit, SIZE),
                match_detections(&resized, &gts, crit, SIZE)
            );
        }
    }
}
