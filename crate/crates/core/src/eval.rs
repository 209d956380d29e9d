//! Detection-quality metrics: greedy IoU matching, per-class average
//! precision (area under the precision envelope), box-level recall, the
//! class-mean mAP@0.5, and the image-level recall (fraction of annotated
//! images whose every annotated class got at least one true positive).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::postprocess::{iou_xyxy, BoxXyxy, Detection};

/// One annotated box from a dataset label file.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BoxXyxy,
}

/// A detection tagged with the image it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDetection {
    pub image_id: String,
    pub detection: Detection,
}

/// Matching outcome: per-detection true-positive labels (aligned with the
/// input order) and per-ground-truth matched flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub det_is_tp: Vec<bool>,
    pub gt_matched: Vec<bool>,
}

/// Greedy VOC-style matching, independently per image and class:
/// detections in descending score order (ties toward the lower input index)
/// each claim the unmatched ground truth with the highest IoU at or above
/// the threshold; IoU ties go to the lower ground-truth index.
pub fn match_detections(
    dets: &[EvalDetection],
    gts: &[GroundTruth],
    iou_threshold: f32,
) -> MatchOutcome {
    let mut det_groups: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        det_groups
            .entry((d.image_id.as_str(), d.detection.class_id))
            .or_default()
            .push(i);
    }
    let mut gt_groups: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_groups
            .entry((g.image_id.as_str(), g.class_id))
            .or_default()
            .push(i);
    }

    let mut det_is_tp = vec![false; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for (key, det_idxs) in &det_groups {
        let empty = Vec::new();
        let gt_idxs = gt_groups.get(key).unwrap_or(&empty);
        let mut order = det_idxs.clone();
        order.sort_by(|&a, &b| {
            dets[b]
                .detection
                .score
                .partial_cmp(&dets[a].detection.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for di in order {
            let mut best: Option<(usize, f32)> = None;
            for &gi in gt_idxs {
                if gt_matched[gi] {
                    continue;
                }
                let iou = iou_xyxy(&dets[di].detection.bbox, &gts[gi].bbox);
                if iou < iou_threshold {
                    continue;
                }
                best = match best {
                    None => Some((gi, iou)),
                    Some((_, bi)) if iou > bi => Some((gi, iou)),
                    keep => keep,
                };
            }
            if let Some((gi, _)) = best {
                gt_matched[gi] = true;
                det_is_tp[di] = true;
            }
        }
    }
    MatchOutcome {
        det_is_tp,
        gt_matched,
    }
}

/// Average precision from (score, is_tp) labels against `gt_count` ground
/// truths. `defined` is false when there are no ground truths to recall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub defined: bool,
}

/// Area under the precision envelope over the cumulative PR points
/// (all-point interpolation). With `eleven_point`, the historical 11-point
/// average is used instead.
pub fn average_precision(labeled: &[(f32, bool)], gt_count: usize, eleven_point: bool) -> ApResult {
    if gt_count == 0 {
        return ApResult {
            ap: 0.0,
            defined: false,
        };
    }
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.sort_by(|&a, &b| {
        labeled[b].0
            .partial_cmp(&labeled[a].0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut points: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &i in &order {
        if labeled[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((
            tp as f64 / gt_count as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    // Precision envelope: best precision at any recall >= r.
    let mut envelope = points.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }

    let ap = if eleven_point {
        let mut acc = 0.0;
        for step in 0..=10 {
            let r = step as f64 / 10.0;
            let p = envelope
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0f64, f64::max);
            acc += p;
        }
        acc / 11.0
    } else {
        let mut acc = 0.0;
        let mut prev_r = 0.0;
        for &(r, p) in &envelope {
            acc += (r - prev_r) * p;
            prev_r = r;
        }
        acc
    };
    ApResult { ap, defined: true }
}

/// Per-class slice of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub name: String,
    pub ap: f64,
    pub ap_defined: bool,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub gt: usize,
}

/// Dataset-level evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    pub map50: f64,
    pub image_recall: f64,
    pub images_with_gt: usize,
}

/// Evaluation knobs; defaults match the conventional protocol.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub iou_threshold: f32,
    pub eleven_point: bool,
    /// Leave classes without ground truth out of the mAP mean instead of
    /// counting them as zero.
    pub exclude_undefined_from_map: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iou_threshold: 0.5,
            eleven_point: false,
            exclude_undefined_from_map: false,
        }
    }
}

/// Evaluates a detection set against ground truth: per-class AP and recall,
/// their class mean (mAP@0.5), and image-level recall.
pub fn evaluate_dataset(
    dets: &[EvalDetection],
    gts: &[GroundTruth],
    class_names: &[String],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let nc = class_names.len();
    for d in dets {
        if d.detection.class_id >= nc {
            return Err(Error::Data(format!(
                "detection on image '{}' has class id {} >= class count {nc}",
                d.image_id, d.detection.class_id
            )));
        }
    }
    for g in gts {
        if g.class_id >= nc {
            return Err(Error::Data(format!(
                "ground truth on image '{}' has class id {} >= class count {nc}",
                g.image_id, g.class_id
            )));
        }
    }

    let outcome = match_detections(dets, gts, opts.iou_threshold);

    let mut classes = Vec::with_capacity(nc);
    for (c, name) in class_names.iter().enumerate() {
        let labeled: Vec<(f32, bool)> = dets
            .iter()
            .zip(&outcome.det_is_tp)
            .filter(|(d, _)| d.detection.class_id == c)
            .map(|(d, &tp)| (d.detection.score, tp))
            .collect();
        let gt_count = gts.iter().filter(|g| g.class_id == c).count();
        let tp = labeled.iter().filter(|(_, t)| *t).count();
        let fp = labeled.len() - tp;
        let fn_count = gt_count - tp;
        let ap = average_precision(&labeled, gt_count, opts.eleven_point);
        let recall = if gt_count == 0 {
            0.0
        } else {
            tp as f64 / gt_count as f64
        };
        classes.push(ClassReport {
            name: name.clone(),
            ap: ap.ap,
            ap_defined: ap.defined,
            recall,
            tp,
            fp,
            fn_count,
            gt: gt_count,
        });
    }

    let map50 = {
        let included: Vec<f64> = classes
            .iter()
            .filter(|c| !opts.exclude_undefined_from_map || c.ap_defined)
            .map(|c| c.ap)
            .collect();
        if included.is_empty() {
            0.0
        } else {
            included.iter().sum::<f64>() / included.len() as f64
        }
    };

    // Image-level recall: among images that carry ground truth, the share
    // where every annotated class got at least one true positive.
    let mut needed: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for g in gts {
        needed.entry(g.image_id.as_str()).or_default().insert(g.class_id);
    }
    let mut satisfied: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for (d, &tp) in dets.iter().zip(&outcome.det_is_tp) {
        if tp {
            satisfied
                .entry(d.image_id.as_str())
                .or_default()
                .insert(d.detection.class_id);
        }
    }
    let images_with_gt = needed.len();
    let recognized = needed
        .iter()
        .filter(|(img, classes)| {
            satisfied
                .get(*img)
                .map(|got| classes.is_subset(got))
                .unwrap_or(false)
        })
        .count();
    let image_recall = if images_with_gt == 0 {
        1.0
    } else {
        recognized as f64 / images_with_gt as f64
    };

    Ok(EvalReport {
        classes,
        map50,
        image_recall,
        images_with_gt,
    })
}
