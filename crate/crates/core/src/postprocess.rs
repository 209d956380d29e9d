//! From raw head tensors to pixel-space boxes: sigmoid grid/anchor decoding,
//! confidence filtering, per-class greedy non-maximum suppression, and the
//! letterbox coordinate transform between original and model frames.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anchor priors for one detection scale: the stride in pixels and three
/// (width, height) prior boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleAnchors {
    pub stride: usize,
    pub anchors: [(f32, f32); 3],
}

/// The three-scale anchor configuration. Strides must strictly increase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSet {
    pub scales: [ScaleAnchors; 3],
}

impl Default for AnchorSet {
    fn default() -> Self {
        AnchorSet {
            scales: [
                ScaleAnchors {
                    stride: 8,
                    anchors: [(10.0, 13.0), (16.0, 30.0), (33.0, 23.0)],
                },
                ScaleAnchors {
                    stride: 16,
                    anchors: [(30.0, 61.0), (62.0, 45.0), (59.0, 119.0)],
                },
                ScaleAnchors {
                    stride: 32,
                    anchors: [(116.0, 90.0), (156.0, 198.0), (373.0, 326.0)],
                },
            ],
        }
    }
}

impl AnchorSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.scales[0].stride < self.scales[1].stride
            && self.scales[1].stride < self.scales[2].stride)
        {
            return Err(Error::Param("anchor strides must strictly increase".into()));
        }
        for s in &self.scales {
            if s.stride == 0 {
                return Err(Error::Param("anchor stride must be positive".into()));
            }
            for &(w, h) in &s.anchors {
                if !(w > 0.0 && h > 0.0) {
                    return Err(Error::Param(format!("anchor dims must be positive, got ({w}, {h})")));
                }
            }
        }
        Ok(())
    }

    /// Anchors per scale (fixed at three).
    pub const PER_SCALE: usize = 3;
}

/// Axis-aligned box, corner form, absolute pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXyxy {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BoxXyxy {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BoxXyxy { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f32 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }
}

/// One decoded detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    pub bbox: BoxXyxy,
}

/// Intersection-over-union of two corner-form boxes. Zero for disjoint
/// boxes and when both are degenerate.
pub fn iou_xyxy(a: &BoxXyxy, b: &BoxXyxy) -> f32 {
    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    let inter = (ix2 - ix1).max(0.0) * (iy2 - iy1).max(0.0);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Decodes the three raw head tensors into detections in the model
/// (letterboxed) frame.
///
/// Per cell (cx, cy) and anchor: center = (2*sigma(t) - 0.5 + cell) * stride,
/// size = (2*sigma(t))^2 * anchor, score = sigma(objectness) * best class
/// probability; detections below `conf_threshold` are dropped. Emission
/// order is scale, then row, then column, then anchor.
pub fn decode_predictions(
    raw: &[&Tensor; 3],
    anchors: &AnchorSet,
    conf_threshold: f32,
) -> Result<Vec<Detection>> {
    anchors.validate()?;
    let mut dets = Vec::new();
    for (scale, t) in anchors.scales.iter().zip(raw.iter()) {
        let s = t.shape();
        if s.n != 1 {
            return Err(Error::Shape(format!(
                "decode expects batch 1, got {}",
                s.n
            )));
        }
        if s.c % AnchorSet::PER_SCALE != 0 || s.c / AnchorSet::PER_SCALE < 6 {
            return Err(Error::Shape(format!(
                "head channels {} are not 3*(5+nc) with nc >= 1",
                s.c
            )));
        }
        let per = s.c / AnchorSet::PER_SCALE;
        let nc = per - 5;
        let stride = scale.stride as f64;
        for cy in 0..s.h {
            for cx in 0..s.w {
                for a in 0..AnchorSet::PER_SCALE {
                    let ch = |k: usize| t.get(0, a * per + k, cy, cx).map(|v| v as f64);
                    let sg = |v: f64| 1.0 / (1.0 + (-v).exp());
                    let bx = (2.0 * sg(ch(0)?) - 0.5 + cx as f64) * stride;
                    let by = (2.0 * sg(ch(1)?) - 0.5 + cy as f64) * stride;
                    let tw = 2.0 * sg(ch(2)?);
                    let th = 2.0 * sg(ch(3)?);
                    let (aw, ah) = scale.anchors[a];
                    let bw = tw * tw * aw as f64;
                    let bh = th * th * ah as f64;
                    let obj = sg(ch(4)?);

                    let mut best_k = 0usize;
                    let mut best_logit = f64::NEG_INFINITY;
                    for k in 0..nc {
                        let logit = ch(5 + k)?;
                        if logit > best_logit {
                            best_logit = logit;
                            best_k = k;
                        }
                    }
                    let score = obj * sg(best_logit);
                    if (score as f32) < conf_threshold {
                        continue;
                    }
                    dets.push(Detection {
                        class_id: best_k,
                        score: score as f32,
                        bbox: BoxXyxy::new(
                            (bx - bw / 2.0) as f32,
                            (by - bh / 2.0) as f32,
                            (bx + bw / 2.0) as f32,
                            (by + bh / 2.0) as f32,
                        ),
                    });
                }
            }
        }
    }
    Ok(dets)
}

/// Per-class greedy non-maximum suppression.
///
/// Within each class, the highest-scoring box is kept and every remaining
/// box with IoU strictly above `iou_threshold` against a kept box is
/// dropped; score ties break toward the lower original index. The result is
/// sorted by descending score, then original index.
pub fn nms(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .partial_cmp(&dets[i].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut suppressed = vec![false; dets.len()];
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order {
            if suppressed[j] || j == i || dets[j].class_id != dets[i].class_id {
                continue;
            }
            if iou_xyxy(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    // `order` is already (score desc, index asc); keep that ordering.
    kept.iter().map(|&i| dets[i].clone()).collect()
}

/// Mapping between an original image frame and the model's letterboxed
/// frame: uniform scale plus symmetric padding. The transform math runs in
/// f64 so forward-then-inverse corner mapping stays well below 1e-6 error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub image_w: usize,
    pub image_h: usize,
    pub model_w: usize,
    pub model_h: usize,
}

impl LetterboxTransform {
    /// Original-frame point into the model frame.
    pub fn map_forward(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + self.pad_x, y * self.scale + self.pad_y)
    }

    /// Model-frame point back to the original frame, clamped to the image.
    pub fn map_inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (
            ((x - self.pad_x) / self.scale).clamp(0.0, self.image_w as f64),
            ((y - self.pad_y) / self.scale).clamp(0.0, self.image_h as f64),
        )
    }
}

/// Computes the letterbox transform placing an image_w x image_h frame
/// inside a model_w x model_h canvas.
pub fn letterbox_map(
    image_w: usize,
    image_h: usize,
    model_w: usize,
    model_h: usize,
) -> Result<LetterboxTransform> {
    if image_w == 0 || image_h == 0 || model_w == 0 || model_h == 0 {
        return Err(Error::Param("letterbox sizes must be positive".into()));
    }
    let scale = (model_w as f64 / image_w as f64).min(model_h as f64 / image_h as f64);
    let pad_x = (model_w as f64 - image_w as f64 * scale) / 2.0;
    let pad_y = (model_h as f64 - image_h as f64 * scale) / 2.0;
    Ok(LetterboxTransform {
        scale,
        pad_x,
        pad_y,
        image_w,
        image_h,
        model_w,
        model_h,
    })
}

/// Maps a detection from the model frame back to original image pixels,
/// clamping to the image bounds.
pub fn apply_inverse(t: &LetterboxTransform, det: &Detection) -> Detection {
    let (x1, y1) = t.map_inverse(det.bbox.x1 as f64, det.bbox.y1 as f64);
    let (x2, y2) = t.map_inverse(det.bbox.x2 as f64, det.bbox.y2 as f64);
    Detection {
        class_id: det.class_id,
        score: det.score,
        bbox: BoxXyxy::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32),
    }
}

/// Maps a box from original image pixels into the model frame (the forward
/// direction of the letterbox transform).
pub fn apply_forward(t: &LetterboxTransform, b: &BoxXyxy) -> BoxXyxy {
    let (x1, y1) = t.map_forward(b.x1 as f64, b.y1 as f64);
    let (x2, y2) = t.map_forward(b.x2 as f64, b.y2 as f64);
    BoxXyxy::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32)
}

/// Resamples an image tensor (1, 3, h, w) into the letterboxed model canvas
/// with nearest-neighbour sampling; uncovered margins take the neutral gray
/// 114/255.
pub fn letterbox_image(image: &Tensor, model_w: usize, model_h: usize) -> Result<(Tensor, LetterboxTransform)> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Shape(format!(
            "letterbox expects a (1, 3, h, w) image, got {s}"
        )));
    }
    let t = letterbox_map(s.w, s.h, model_w, model_h)?;
    let fill = 114.0f32 / 255.0;
    let mut out = Tensor::new((1, 3, model_h, model_w), fill)?;
    for c in 0..3 {
        let src = image.plane(0, c);
        let base = out.offset(0, c, 0, 0);
        let dst = &mut out.data_mut()[base..base + model_h * model_w];
        for y in 0..model_h {
            // Output pixel centers map back through the transform; outside
            // the scaled image the gray fill stays.
            let sy = ((y as f64 + 0.5 - t.pad_y) / t.scale - 0.5).round();
            if sy < 0.0 || sy >= s.h as f64 {
                continue;
            }
            let sy = sy as usize;
            for x in 0..model_w {
                let sx = ((x as f64 + 0.5 - t.pad_x) / t.scale - 0.5).round();
                if sx < 0.0 || sx >= s.w as f64 {
                    continue;
                }
                dst[y * model_w + x] = src[sy * s.w + sx as usize];
            }
        }
    }
    Ok((out, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::tensor::Prng;
    use proptest::prelude::*;

    #[test]
    fn decode_all_zero_logits_hand_case() {
        let anchors = AnchorSet::default();
        let nc = 6;
        let p3 = Tensor::zeros((1, 3 * (5 + nc), 1, 1)).unwrap();
        let p4 = Tensor::zeros((1, 3 * (5 + nc), 1, 1)).unwrap();
        let p5 = Tensor::zeros((1, 3 * (5 + nc), 1, 1)).unwrap();
        let dets = decode_predictions(&[&p3, &p4, &p5], &anchors, 0.0).unwrap();
        assert_eq!(dets.len(), 9);

        // Scale stride 8, anchor 1 = (16, 30): center (4,4), size (16,30),
        // score = sigma(0) * sigma(0) = 0.25.
        let d = &dets[1];
        assert_eq!(d.score, 0.25);
        assert!((d.bbox.x1 - (4.0 - 8.0)).abs() < 1e-6);
        assert!((d.bbox.y1 - (4.0 - 15.0)).abs() < 1e-6);
        assert!((d.bbox.x2 - (4.0 + 8.0)).abs() < 1e-6);
        assert!((d.bbox.y2 - (4.0 + 15.0)).abs() < 1e-6);
    }

    #[test]
    fn decode_threshold_above_one_empty() {
        let anchors = AnchorSet::default();
        let t = Tensor::zeros((1, 33, 2, 2)).unwrap();
        let dets = decode_predictions(&[&t, &t, &t], &anchors, 1.1).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn decode_rejects_bad_channel_count() {
        let anchors = AnchorSet::default();
        let t = Tensor::zeros((1, 32, 2, 2)).unwrap();
        assert!(decode_predictions(&[&t, &t, &t], &anchors, 0.0).is_err());
    }

    #[test]
    fn decode_matches_slow_reference() {
        let mut prng = Prng::new(900);
        let anchors = AnchorSet::default();
        let nc = 6;
        let p3 = oracle::random_tensor(&mut prng, (1, 3 * (5 + nc), 4, 5), -3.0, 3.0).unwrap();
        let p4 = oracle::random_tensor(&mut prng, (1, 3 * (5 + nc), 2, 3), -3.0, 3.0).unwrap();
        let p5 = oracle::random_tensor(&mut prng, (1, 3 * (5 + nc), 1, 2), -3.0, 3.0).unwrap();
        let fast = decode_predictions(&[&p3, &p4, &p5], &anchors, 0.01).unwrap();
        let slow = oracle::decode_slow(&[&p3, &p4, &p5], &anchors, 0.01).unwrap();
        assert_eq!(fast.len(), slow.len());
        for (f, s) in fast.iter().zip(&slow) {
            assert_eq!(f.class_id, s.class_id);
            assert!((f.score - s.score).abs() <= 1e-6);
            assert!((f.bbox.x1 - s.bbox.x1).abs() <= 1e-6);
            assert!((f.bbox.y1 - s.bbox.y1).abs() <= 1e-6);
            assert!((f.bbox.x2 - s.bbox.x2).abs() <= 1e-6);
            assert!((f.bbox.y2 - s.bbox.y2).abs() <= 1e-6);
        }
    }

    #[test]
    fn decoded_centers_and_sizes_stay_bounded() {
        let mut prng = Prng::new(901);
        let anchors = AnchorSet::default();
        let t = oracle::random_tensor(&mut prng, (1, 33, 3, 3), -20.0, 20.0).unwrap();
        let t2 = oracle::random_tensor(&mut prng, (1, 33, 2, 2), -20.0, 20.0).unwrap();
        let t3 = oracle::random_tensor(&mut prng, (1, 33, 1, 1), -20.0, 20.0).unwrap();
        let dets = decode_predictions(&[&t, &t2, &t3], &anchors, 0.0).unwrap();
        for d in &dets {
            let cx = (d.bbox.x1 + d.bbox.x2) / 2.0;
            let cy = (d.bbox.y1 + d.bbox.y2) / 2.0;
            let w = d.bbox.x2 - d.bbox.x1;
            let h = d.bbox.y2 - d.bbox.y1;
            // Grid is at most 3 cells; widest anchor 373, tallest 326.
            assert!(cx >= -0.5 * 32.0 && cx <= 3.5 * 32.0, "cx {cx}");
            assert!(cy >= -0.5 * 32.0 && cy <= 3.5 * 32.0, "cy {cy}");
            assert!(w >= 0.0 && w <= 4.0 * 373.0);
            assert!(h >= 0.0 && h <= 4.0 * 326.0);
            assert!(d.score >= 0.0 && d.score <= 1.0);
        }
    }

    #[test]
    fn iou_examples() {
        let a = BoxXyxy::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou_xyxy(&a, &a), 1.0);

        let b = BoxXyxy::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou_xyxy(&a, &b) - 1.0 / 7.0).abs() < 1e-7);

        let c = BoxXyxy::new(10.0, 10.0, 12.0, 12.0);
        assert_eq!(iou_xyxy(&a, &c), 0.0);

        let d = BoxXyxy::new(5.0, 5.0, 5.0, 5.0);
        assert_eq!(iou_xyxy(&d, &d), 0.0);
    }

    #[test]
    fn nms_keeps_best_of_identical_boxes() {
        let b = BoxXyxy::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![
            Detection { class_id: 0, score: 0.8, bbox: b },
            Detection { class_id: 0, score: 0.9, bbox: b },
        ];
        let kept = nms(&dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_is_per_class() {
        let b = BoxXyxy::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![
            Detection { class_id: 0, score: 0.9, bbox: b },
            Detection { class_id: 1, score: 0.8, bbox: b },
        ];
        let kept = nms(&dets, 0.5);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_ties_break_to_lower_index() {
        let b = BoxXyxy::new(0.0, 0.0, 10.0, 10.0);
        let shifted = BoxXyxy::new(1.0, 0.0, 11.0, 10.0);
        let dets = vec![
            Detection { class_id: 0, score: 0.7, bbox: shifted },
            Detection { class_id: 0, score: 0.7, bbox: b },
        ];
        let kept = nms(&dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox, shifted);
    }

    #[test]
    fn nms_matches_brute_force_on_random_scenes() {
        let mut prng = Prng::new(77);
        for _ in 0..50 {
            let n = 1 + (prng.next_u64() % 60) as usize;
            let dets = oracle::random_detections(&mut prng, n, 3, 64.0);
            let fast = nms(&dets, 0.45);
            let slow = oracle::nms_brute(&dets, 0.45);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn nms_is_idempotent_and_antichain() {
        let mut prng = Prng::new(78);
        let dets = oracle::random_detections(&mut prng, 80, 2, 48.0);
        let once = nms(&dets, 0.45);
        let twice = nms(&once, 0.45);
        assert_eq!(once, twice);
        for (i, a) in once.iter().enumerate() {
            for b in once.iter().skip(i + 1) {
                if a.class_id == b.class_id {
                    assert!(iou_xyxy(&a.bbox, &b.bbox) <= 0.45);
                }
            }
        }
    }

    #[test]
    fn letterbox_identity_and_hand_case() {
        let t = letterbox_map(640, 640, 640, 640).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.pad_x, 0.0);
        assert_eq!(t.pad_y, 0.0);

        // 640 wide, 320 tall into a 640 square: scale 1, vertical pad 160.
        let t = letterbox_map(640, 320, 640, 640).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.pad_x, 0.0);
        assert_eq!(t.pad_y, 160.0);
        let d = Detection {
            class_id: 0,
            score: 0.5,
            bbox: BoxXyxy::new(100.0, 200.0, 200.0, 300.0),
        };
        let back = apply_inverse(&t, &d);
        assert_eq!(back.bbox.y1, 40.0);
        assert_eq!(back.bbox.y2, 140.0);
        assert_eq!(back.bbox.x1, 100.0);
    }

    #[test]
    fn letterbox_image_fills_margins_with_gray() {
        let img = Tensor::new((1, 3, 2, 4), 1.0).unwrap();
        let (canvas, t) = letterbox_image(&img, 8, 8).unwrap();
        assert_eq!(t.scale, 2.0);
        assert_eq!(t.pad_y, 2.0);
        // Top margin is gray, center is image content.
        assert_eq!(canvas.get(0, 0, 0, 0).unwrap(), 114.0 / 255.0);
        assert_eq!(canvas.get(0, 0, 4, 4).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn letterbox_round_trip_is_identity(
            iw in 8usize..1024, ih in 8usize..1024,
            fx in 0.0f64..0.45, fy in 0.0f64..0.45,
        ) {
            let t = letterbox_map(iw, ih, 640, 640).unwrap();
            let corners = [
                (fx * iw as f64, fy * ih as f64),
                ((fx + 0.5) * iw as f64, (fy + 0.5) * ih as f64),
            ];
            for (x, y) in corners {
                let (mx, my) = t.map_forward(x, y);
                let (bx, by) = t.map_inverse(mx, my);
                prop_assert!((bx - x).abs() < 1e-6, "x {x} -> {bx}");
                prop_assert!((by - y).abs() < 1e-6, "y {y} -> {by}");
            }
        }

        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in -50.0f32..50.0, ay in -50.0f32..50.0, aw in 0.0f32..40.0, ah in 0.0f32..40.0,
            bx in -50.0f32..50.0, by in -50.0f32..50.0, bw in 0.0f32..40.0, bh in 0.0f32..40.0,
        ) {
            let a = BoxXyxy::new(ax, ay, ax + aw, ay + ah);
            let b = BoxXyxy::new(bx, by, bx + bw, by + bh);
            let ab = iou_xyxy(&a, &b);
            let ba = iou_xyxy(&b, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
