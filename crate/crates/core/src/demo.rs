//! Bundled synthetic defect dataset: twelve 96x96 gray images with exactly
//! known box annotations, generated deterministically from a fixed seed.
//!
//! The set exists to exercise the full evaluation pipeline with known
//! answers: a perfect detector derived from the ground truth must score
//! 1.0 everywhere, and a deliberately degraded detector (dropped, shifted,
//! and duplicated boxes plus stray corner boxes) must reproduce a frozen
//! score. Helpers write the set to disk in the image and annotation
//! formats the command-line tools consume.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{EvalDetection, GroundTruth};
use crate::imageio::{encode_pgm, format_annotations};
use crate::postprocess::{BoxXyxy, Detection};
use crate::tensor::Prng;

pub const IMAGE_COUNT: usize = 12;
pub const IMAGE_SIZE: usize = 96;
const SEED: u64 = 0x5EED_0D15;

/// One synthetic image and its ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoImage {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub gray: Vec<u8>,
    pub boxes: Vec<(usize, BoxXyxy)>,
}

fn fill_rect(gray: &mut [u8], w: usize, b: &BoxXyxy, f: impl Fn(usize, usize) -> Option<u8>) {
    let (x1, y1, x2, y2) = (b.x1 as usize, b.y1 as usize, b.x2 as usize, b.y2 as usize);
    for y in y1..y2 {
        for x in x1..x2 {
            if let Some(v) = f(x, y) {
                gray[y * w + x] = v;
            }
        }
    }
}

/// Paints a defect whose texture loosely evokes its class; only the box
/// extents matter to the metrics.
fn paint_defect(gray: &mut [u8], w: usize, class_id: usize, b: &BoxXyxy) {
    match class_id {
        0 => fill_rect(gray, w, b, |_, y| if y % 3 == 0 { Some(38) } else { Some(52) }),
        1 => fill_rect(gray, w, b, |_, _| Some(185)),
        2 => fill_rect(gray, w, b, |x, _| if x % 4 < 2 { Some(45) } else { None }),
        3 => fill_rect(gray, w, b, |_, _| Some(24)),
        4 => fill_rect(gray, w, b, |x, y| if (x + y) % 3 == 0 { Some(30) } else { None }),
        _ => fill_rect(gray, w, b, |x, y| {
            if (x + y) % 7 < 2 {
                Some(210)
            } else {
                None
            }
        }),
    }
}

/// Generates the dataset. Pure function of the built-in seed: repeated
/// calls return identical images and boxes.
pub fn dataset() -> Vec<DemoImage> {
    let mut prng = Prng::new(SEED);
    let w = IMAGE_SIZE;
    let mut images = Vec::with_capacity(IMAGE_COUNT);
    for i in 0..IMAGE_COUNT {
        let mut gray: Vec<u8> = (0..w * w)
            .map(|_| 70 + (prng.next_u64() % 21) as u8)
            .collect();
        let defect_count = i % 3 + 1;
        let mut slots = vec![(24usize, 24usize), (72, 24), (24, 72), (72, 72)];
        let mut boxes = Vec::with_capacity(defect_count);
        for j in 0..defect_count {
            let class_id = (i + 2 * j) % 6;
            let pick = (prng.next_u64() as usize) % slots.len();
            let (cx, cy) = slots.swap_remove(pick);
            let hw = 8 + (prng.next_u64() % 9) as usize;
            let hh = 8 + (prng.next_u64() % 9) as usize;
            let b = BoxXyxy {
                x1: (cx - hw) as f32,
                y1: (cy - hh) as f32,
                x2: (cx + hw) as f32,
                y2: (cy + hh) as f32,
            };
            paint_defect(&mut gray, w, class_id, &b);
            boxes.push((class_id, b));
        }
        images.push(DemoImage {
            name: format!("demo_{i:02}"),
            width: w,
            height: w,
            gray,
            boxes,
        });
    }
    images
}

/// Flattens the dataset's boxes into evaluation ground truths.
pub fn ground_truths(set: &[DemoImage]) -> Vec<GroundTruth> {
    set.iter()
        .flat_map(|img| {
            img.boxes.iter().map(|(class_id, bbox)| GroundTruth {
                image_id: img.name.clone(),
                class_id: *class_id,
                bbox: *bbox,
            })
        })
        .collect()
}

fn as_detection(image_id: &str, class_id: usize, score: f32, bbox: BoxXyxy) -> EvalDetection {
    EvalDetection {
        image_id: image_id.to_string(),
        detection: Detection {
            class_id,
            score,
            bbox,
        },
    }
}

/// A detector that returns exactly the ground truth, with distinct
/// near-one scores. Every metric must evaluate to 1.0 against the set.
pub fn perfect_detections(set: &[DemoImage]) -> Vec<EvalDetection> {
    let mut out = Vec::new();
    let mut k = 0u32;
    for img in set {
        for (class_id, bbox) in &img.boxes {
            out.push(as_detection(&img.name, *class_id, 1.0 - k as f32 * 1e-4, *bbox));
            k += 1;
        }
    }
    out
}

/// A deterministically degraded detector. Walking the ground truth in
/// dataset order with a running index k: k % 4 == 0 boxes are dropped,
/// k % 4 == 1 boxes are shifted far enough to miss the overlap threshold,
/// k % 4 == 2 boxes are returned exactly, and k % 4 == 3 boxes are
/// returned exactly plus a lower-scored duplicate. Every third image also
/// gains a stray corner box.
pub fn corrupted_detections(set: &[DemoImage]) -> Vec<EvalDetection> {
    let mut out = Vec::new();
    let mut k = 0u32;
    for (i, img) in set.iter().enumerate() {
        for (class_id, bbox) in &img.boxes {
            let jitter = k as f32 * 1e-4;
            match k % 4 {
                0 => {}
                1 => {
                    let shifted = BoxXyxy {
                        x1: bbox.x1 + 8.0,
                        y1: bbox.y1 + 5.0,
                        x2: bbox.x2 + 8.0,
                        y2: bbox.y2 + 5.0,
                    };
                    out.push(as_detection(&img.name, *class_id, 0.80 - jitter, shifted));
                }
                2 => out.push(as_detection(&img.name, *class_id, 0.90 - jitter, *bbox)),
                _ => {
                    out.push(as_detection(&img.name, *class_id, 0.85 - jitter, *bbox));
                    out.push(as_detection(&img.name, *class_id, 0.60 - jitter, *bbox));
                }
            }
            k += 1;
        }
        if i % 3 == 0 {
            let corner = BoxXyxy {
                x1: 2.0,
                y1: 2.0,
                x2: 14.0,
                y2: 14.0,
            };
            out.push(as_detection(&img.name, (i + 1) % 6, 0.55 - i as f32 * 1e-4, corner));
        }
    }
    out
}

/// Writes the images (binary PGM) and annotations (normalized text) into
/// two directories, creating them if needed.
pub fn write_dataset(images_dir: &Path, labels_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(images_dir)?;
    std::fs::create_dir_all(labels_dir)?;
    for img in dataset() {
        let pgm = encode_pgm(&img.gray, img.width, img.height)?;
        std::fs::write(images_dir.join(format!("{}.pgm", img.name)), pgm)?;
        let text = format_annotations(&img.boxes, img.width, img.height);
        std::fs::write(labels_dir.join(format!("{}.txt", img.name)), text)?;
    }
    Ok(())
}

/// Sanity bound used by generation tests: boxes stay inside the image.
pub fn validate(set: &[DemoImage]) -> Result<()> {
    if set.len() != IMAGE_COUNT {
        return Err(Error::Data(format!(
            "expected {IMAGE_COUNT} images, got {}",
            set.len()
        )));
    }
    for img in set {
        for (class_id, b) in &img.boxes {
            if *class_id >= 6 {
                return Err(Error::Data(format!("{}: class {class_id} out of range", img.name)));
            }
            if !(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= img.width as f32 && b.y2 <= img.height as f32 && b.x1 < b.x2 && b.y1 < b.y2)
            {
                return Err(Error::Data(format!("{}: degenerate box", img.name)));
            }
        }
    }
    Ok(())
}
