//! Brute-force reference implementations, kept deliberately independent of
//! the production code paths: straightforward loop nests, f64 accumulation,
//! and no layout tricks. The test suites and the `selftest` command compare
//! the fast implementations against these.

use crate::error::{Error, Result};
use crate::eval::{EvalDetection, GroundTruth};
use crate::ops::ConvParams;
use crate::postprocess::{AnchorSet, BoxXyxy, Detection};
use crate::tensor::{Prng, Shape, Tensor};

/// Direct seven-loop convolution: batch, output channel, output row, output
/// column, then input channel within the group, kernel row, kernel column.
/// Accumulates in f64. Out-of-bounds taps are skipped (zero padding).
pub fn conv2d_naive(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    p: &ConvParams,
) -> Result<Tensor> {
    p.validate(input.shape(), weight.shape(), bias)?;
    let s = input.shape();
    let (oh, ow) = p.output_hw(s.h, s.w)?;
    let cin_g = p.in_channels / p.groups;
    let cout_g = p.out_channels / p.groups;
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;

    let mut out = Tensor::zeros((s.n, p.out_channels, oh, ow))?;
    for n in 0..s.n {
        for oc in 0..p.out_channels {
            let group = oc / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for cg in 0..cin_g {
                        let ic = group * cin_g + cg;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let v = input.get(n, ic, iy as usize, ix as usize)?;
                                let w = weight.get(oc, cg, ky, kx)?;
                                acc += v as f64 * w as f64;
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b[oc] as f64;
                    }
                    out.set(n, oc, oy, ox, acc as f32)?;
                }
            }
        }
    }
    Ok(out)
}

/// Window-scan max pooling; out-of-bounds taps act as negative infinity.
pub fn maxpool2d_naive(
    input: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let s = input.shape();
    let (oh, ow) = pool_output_hw(s.h, s.w, kernel, stride, padding)?;
    let mut out = Tensor::zeros((s.n, s.c, oh, ow))?;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    for ky in 0..kernel.0 {
                        for kx in 0..kernel.1 {
                            let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                continue;
                            }
                            best = best.max(input.get(n, c, iy as usize, ix as usize)?);
                        }
                    }
                    out.set(n, c, oy, ox, best)?;
                }
            }
        }
    }
    Ok(out)
}

/// Window-scan average pooling with zero padding; the divisor is always
/// kh*kw, padded taps included.
pub fn avgpool2d_naive(
    input: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let s = input.shape();
    let (oh, ow) = pool_output_hw(s.h, s.w, kernel, stride, padding)?;
    let divisor = (kernel.0 * kernel.1) as f64;
    let mut out = Tensor::zeros((s.n, s.c, oh, ow))?;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ky in 0..kernel.0 {
                        for kx in 0..kernel.1 {
                            let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                continue;
                            }
                            acc += input.get(n, c, iy as usize, ix as usize)? as f64;
                        }
                    }
                    out.set(n, c, oy, ox, (acc / divisor) as f32)?;
                }
            }
        }
    }
    Ok(out)
}

/// Pool output extents with the empty-window guard (padding must stay
/// smaller than the kernel so every window sees at least one real element).
pub fn pool_output_hw(
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(usize, usize)> {
    if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(Error::Param(format!(
            "pool kernel {kernel:?} / stride {stride:?} must be positive"
        )));
    }
    if padding.0 >= kernel.0 || padding.1 >= kernel.1 {
        return Err(Error::Param(format!(
            "pool padding {padding:?} not below kernel {kernel:?}: a window could be all padding"
        )));
    }
    if h + 2 * padding.0 < kernel.0 || w + 2 * padding.1 < kernel.1 {
        return Err(Error::Param(format!(
            "pool kernel {kernel:?} exceeds padded input {h}x{w}"
        )));
    }
    Ok((
        (h + 2 * padding.0 - kernel.0) / stride.0 + 1,
        (w + 2 * padding.1 - kernel.1) / stride.1 + 1,
    ))
}

/// Reference spatial-pyramid block: 1x1 halve, three chained 5x5 pools,
/// channel concat, 1x1 restore — all built from the naive pieces above.
pub fn sppf_naive(
    input: &Tensor,
    cv1_weight: &Tensor,
    cv1_bias: &[f32],
    cv2_weight: &Tensor,
    cv2_bias: &[f32],
    pool_kernel: usize,
) -> Result<Tensor> {
    let c = input.shape().c;
    let mid = c / 2;
    let cv1 = ConvParams::pointwise(c, mid);
    let x = conv2d_naive(input, cv1_weight, Some(cv1_bias), &cv1)?;
    let pad = pool_kernel / 2;
    let p1 = maxpool2d_naive(&x, (pool_kernel, pool_kernel), (1, 1), (pad, pad))?;
    let p2 = maxpool2d_naive(&p1, (pool_kernel, pool_kernel), (1, 1), (pad, pad))?;
    let p3 = maxpool2d_naive(&p2, (pool_kernel, pool_kernel), (1, 1), (pad, pad))?;
    let cat = concat_channels_naive(&[&x, &p1, &p2, &p3])?;
    let cv2 = ConvParams::pointwise(4 * mid, c);
    conv2d_naive(&cat, cv2_weight, Some(cv2_bias), &cv2)
}

fn concat_channels_naive(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts[0].shape();
    let total_c: usize = parts.iter().map(|t| t.shape().c).sum();
    let mut out = Tensor::zeros((first.n, total_c, first.h, first.w))?;
    let mut base = 0;
    for t in parts {
        let s = t.shape();
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        out.set(n, base + c, y, x, t.get(n, c, y, x)?)?;
                    }
                }
            }
        }
        base += s.c;
    }
    Ok(out)
}

/// Inverse of the space-to-depth stem slice; used to round-trip it in tests.
pub fn focus_inverse(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.c % 4 != 0 {
        return Err(Error::Param(format!(
            "inverse slice needs channels divisible by 4, got {}",
            s.c
        )));
    }
    let c = s.c / 4;
    let mut out = Tensor::zeros((s.n, c, s.h * 2, s.w * 2))?;
    // Block order: (even row, even col), (even row, odd col),
    // (odd row, even col), (odd row, odd col).
    let offsets = [(0usize, 0usize), (0, 1), (1, 0), (1, 1)];
    for n in 0..s.n {
        for (b, (dy, dx)) in offsets.iter().enumerate() {
            for ch in 0..c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let v = input.get(n, b * c + ch, y, x)?;
                        out.set(n, ch, 2 * y + dy, 2 * x + dx, v)?;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Largest elementwise |a - b| between two same-shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Result<f32> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "comparing tensors of different shapes: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max))
}

/// Uniform random tensor in [lo, hi) from the deterministic generator;
/// shared by the randomized oracle suites.
pub fn random_tensor(prng: &mut Prng, shape: impl Into<Shape>, lo: f32, hi: f32) -> Result<Tensor> {
    let shape = shape.into();
    let numel = shape.checked_numel()?;
    let data: Vec<f32> = (0..numel)
        .map(|_| lo + (hi - lo) * prng.uniform() as f32)
        .collect();
    Tensor::from_vec(shape, data)
}

/// Scalar-at-a-time reference decoder for the detection heads. Walks every
/// cell/anchor with independently derived channel offsets and f64 math.
pub fn decode_slow(
    raw: &[&Tensor; 3],
    anchors: &AnchorSet,
    conf_threshold: f32,
) -> Result<Vec<Detection>> {
    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
    let mut out = Vec::new();
    for si in 0..3 {
        let t = raw[si];
        let shape = t.shape();
        let per = shape.c / 3;
        if per * 3 != shape.c || per < 6 {
            return Err(Error::Shape(format!(
                "reference decoder: bad channel count {}",
                shape.c
            )));
        }
        let nc = per - 5;
        let stride = anchors.scales[si].stride as f64;
        for row in 0..shape.h {
            for col in 0..shape.w {
                for a in 0..3 {
                    let base = a * per;
                    let tx = t.get(0, base, row, col)? as f64;
                    let ty = t.get(0, base + 1, row, col)? as f64;
                    let tw = t.get(0, base + 2, row, col)? as f64;
                    let th = t.get(0, base + 3, row, col)? as f64;
                    let tobj = t.get(0, base + 4, row, col)? as f64;

                    let center_x = (2.0 * sig(tx) - 0.5 + col as f64) * stride;
                    let center_y = (2.0 * sig(ty) - 0.5 + row as f64) * stride;
                    let (aw, ah) = anchors.scales[si].anchors[a];
                    let half_w = (2.0 * sig(tw)).powi(2) * aw as f64 / 2.0;
                    let half_h = (2.0 * sig(th)).powi(2) * ah as f64 / 2.0;

                    let mut best = 0usize;
                    let mut best_v = f64::NEG_INFINITY;
                    for k in 0..nc {
                        let v = t.get(0, base + 5 + k, row, col)? as f64;
                        if v > best_v {
                            best_v = v;
                            best = k;
                        }
                    }
                    let score = sig(tobj) * sig(best_v);
                    if (score as f32) >= conf_threshold {
                        out.push(Detection {
                            class_id: best,
                            score: score as f32,
                            bbox: BoxXyxy::new(
                                (center_x - half_w) as f32,
                                (center_y - half_h) as f32,
                                (center_x + half_w) as f32,
                                (center_y + half_h) as f32,
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn iou_f64(a: &BoxXyxy, b: &BoxXyxy) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x1 as f64, a.y1 as f64, a.x2 as f64, a.y2 as f64);
    let (bx1, by1, bx2, by2) = (b.x1 as f64, b.y1 as f64, b.x2 as f64, b.y2 as f64);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let area_a = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Quadratic repeated-extraction suppression: per class, repeatedly pull
/// the best remaining box (score desc, then input index) and discard every
/// remaining same-class box overlapping it beyond the threshold.
pub fn nms_brute(dets: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Open,
        Kept,
        Dropped,
    }
    let mut state = vec![State::Open; dets.len()];
    let mut kept_order: Vec<usize> = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if state[i] != State::Open {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) if dets[i].score > dets[j].score => Some(i),
                keep => keep,
            };
        }
        let Some(i) = best else { break };
        state[i] = State::Kept;
        kept_order.push(i);
        for j in 0..dets.len() {
            if state[j] == State::Open
                && dets[j].class_id == dets[i].class_id
                && iou_f64(&dets[i].bbox, &dets[j].bbox) > iou_threshold as f64
            {
                state[j] = State::Dropped;
            }
        }
    }
    kept_order.sort_by(|&i, &j| {
        dets[j]
            .score
            .partial_cmp(&dets[i].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    kept_order.iter().map(|&i| dets[i].clone()).collect()
}

/// Random detection list with deliberately coarse scores so ties occur.
pub fn random_detections(
    prng: &mut Prng,
    count: usize,
    classes: usize,
    extent: f32,
) -> Vec<Detection> {
    (0..count)
        .map(|_| {
            let x1 = prng.uniform() as f32 * extent * 0.8;
            let y1 = prng.uniform() as f32 * extent * 0.8;
            let w = 1.0 + prng.uniform() as f32 * extent * 0.5;
            let h = 1.0 + prng.uniform() as f32 * extent * 0.5;
            Detection {
                class_id: (prng.next_u64() % classes as u64) as usize,
                score: (1 + prng.next_u64() % 9) as f32 / 10.0,
                bbox: BoxXyxy::new(x1, y1, x1 + w, y1 + h),
            }
        })
        .collect()
}

/// Random small evaluation scene: a handful of images, each with a few
/// ground truths and a detection mix of near-hits, duplicates, and noise.
pub fn random_eval_scene(
    prng: &mut Prng,
    classes: usize,
    images: usize,
) -> (Vec<EvalDetection>, Vec<GroundTruth>) {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for i in 0..images {
        let image_id = format!("img_{i}");
        let n_gt = (prng.next_u64() % 4) as usize;
        let mut boxes = Vec::new();
        for _ in 0..n_gt {
            let x1 = prng.uniform() as f32 * 40.0;
            let y1 = prng.uniform() as f32 * 40.0;
            let w = 5.0 + prng.uniform() as f32 * 20.0;
            let h = 5.0 + prng.uniform() as f32 * 20.0;
            let class_id = (prng.next_u64() % classes as u64) as usize;
            let b = BoxXyxy::new(x1, y1, x1 + w, y1 + h);
            boxes.push((class_id, b));
            gts.push(GroundTruth {
                image_id: image_id.clone(),
                class_id,
                bbox: b,
            });
        }
        let n_det = (prng.next_u64() % 6) as usize;
        for _ in 0..n_det {
            let score = (1 + prng.next_u64() % 9) as f32 / 10.0;
            let det = if !boxes.is_empty() && prng.uniform() < 0.6 {
                // Perturbed copy of a ground truth; sometimes wrong class.
                let (mut class_id, b) = boxes[(prng.next_u64() % boxes.len() as u64) as usize];
                if prng.uniform() < 0.2 {
                    class_id = (prng.next_u64() % classes as u64) as usize;
                }
                let dx = (prng.uniform() as f32 - 0.5) * 8.0;
                let dy = (prng.uniform() as f32 - 0.5) * 8.0;
                Detection {
                    class_id,
                    score,
                    bbox: BoxXyxy::new(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy),
                }
            } else {
                let x1 = prng.uniform() as f32 * 40.0;
                let y1 = prng.uniform() as f32 * 40.0;
                Detection {
                    class_id: (prng.next_u64() % classes as u64) as usize,
                    score,
                    bbox: BoxXyxy::new(
                        x1,
                        y1,
                        x1 + 5.0 + prng.uniform() as f32 * 20.0,
                        y1 + 5.0 + prng.uniform() as f32 * 20.0,
                    ),
                }
            };
            dets.push(EvalDetection {
                image_id: image_id.clone(),
                detection: det,
            });
        }
    }
    (dets, gts)
}

/// Reference evaluation report computed by the slow evaluator.
#[derive(Debug, Clone)]
pub struct ReferenceReport {
    pub ap: Vec<f64>,
    pub counts: Vec<(usize, usize, usize)>,
    pub map50: f64,
    pub image_recall: f64,
}

/// Slow, structurally independent evaluator: global score-ordered greedy
/// matching with f64 IoU recomputed from scratch at every step, and an
/// O(n^2) precision-envelope scan for each class's average precision.
pub fn evaluate_reference(
    dets: &[EvalDetection],
    gts: &[GroundTruth],
    classes: usize,
    iou_threshold: f64,
) -> ReferenceReport {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .detection
            .score
            .partial_cmp(&dets[a].detection.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; gts.len()];
    let mut det_tp = vec![false; dets.len()];
    for &di in &order {
        let d = &dets[di];
        let mut best_gi: Option<usize> = None;
        let mut best_iou = -1.0f64;
        for (gi, g) in gts.iter().enumerate() {
            if gt_taken[gi]
                || g.image_id != d.image_id
                || g.class_id != d.detection.class_id
            {
                continue;
            }
            let iou = iou_f64(&d.detection.bbox, &g.bbox);
            if iou >= iou_threshold && iou > best_iou {
                best_iou = iou;
                best_gi = Some(gi);
            }
        }
        if let Some(gi) = best_gi {
            gt_taken[gi] = true;
            det_tp[di] = true;
        }
    }

    let mut ap = Vec::with_capacity(classes);
    let mut counts = Vec::with_capacity(classes);
    for c in 0..classes {
        let class_order: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| dets[i].detection.class_id == c)
            .collect();
        let gt_count = gts.iter().filter(|g| g.class_id == c).count();
        let mut recalls = Vec::new();
        let mut precisions = Vec::new();
        let mut tp = 0usize;
        for (rank, &i) in class_order.iter().enumerate() {
            if det_tp[i] {
                tp += 1;
            }
            if gt_count > 0 {
                recalls.push(tp as f64 / gt_count as f64);
            } else {
                recalls.push(0.0);
            }
            precisions.push(tp as f64 / (rank + 1) as f64);
        }
        let fp = class_order.len() - tp;
        counts.push((tp, fp, gt_count - tp));

        if gt_count == 0 {
            ap.push(0.0);
            continue;
        }
        let mut area = 0.0;
        let mut prev_r = 0.0;
        for i in 0..recalls.len() {
            let envelope = precisions
                .iter()
                .zip(&recalls)
                .filter(|(_, r)| **r >= recalls[i])
                .map(|(p, _)| *p)
                .fold(0.0f64, f64::max);
            area += (recalls[i] - prev_r) * envelope;
            prev_r = recalls[i];
        }
        ap.push(area);
    }

    let map50 = if classes == 0 {
        0.0
    } else {
        ap.iter().sum::<f64>() / classes as f64
    };

    let mut image_ids: Vec<&str> = gts.iter().map(|g| g.image_id.as_str()).collect();
    image_ids.sort_unstable();
    image_ids.dedup();
    let mut recognized = 0usize;
    for img in &image_ids {
        let wanted: Vec<usize> = gts
            .iter()
            .filter(|g| g.image_id == *img)
            .map(|g| g.class_id)
            .collect();
        let ok = wanted.iter().all(|&c| {
            dets.iter().zip(&det_tp).any(|(d, &tp)| {
                tp && d.image_id == *img && d.detection.class_id == c
            })
        });
        if ok {
            recognized += 1;
        }
    }
    let image_recall = if image_ids.is_empty() {
        1.0
    } else {
        recognized as f64 / image_ids.len() as f64
    };

    ReferenceReport {
        ap,
        counts,
        map50,
        image_recall,
    }
}
