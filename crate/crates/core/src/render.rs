//! Draws detection boxes onto an image as one-pixel rectangle outlines.

use crate::imageio::ImageBuf;
use crate::postprocess::Detection;

/// Fixed palette; a class's color is its id modulo the palette length.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
];

pub fn class_color(class_id: usize) -> [u8; 3] {
    PALETTE[class_id % PALETTE.len()]
}

fn clamp_axis(v: f32, max: usize) -> usize {
    let r = v.round();
    if r <= 0.0 {
        0
    } else if r >= (max - 1) as f32 {
        max - 1
    } else {
        r as usize
    }
}

/// Returns a copy of the image with each detection's perimeter drawn in
/// its class color. Boxes are drawn in ascending score order (stable for
/// ties), so the highest-scoring box ends up on top; coordinates are
/// rounded and clamped to the image bounds.
pub fn render_detections(image: &ImageBuf, dets: &[Detection]) -> ImageBuf {
    let mut out = image.clone();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[a]
            .score
            .partial_cmp(&dets[b].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for i in order {
        let d = &dets[i];
        let color = class_color(d.class_id);
        let x1 = clamp_axis(d.bbox.x1, image.width);
        let x2 = clamp_axis(d.bbox.x2, image.width);
        let y1 = clamp_axis(d.bbox.y1, image.height);
        let y2 = clamp_axis(d.bbox.y2, image.height);
        for x in x1..=x2 {
            out.set_pixel(x, y1, color);
            out.set_pixel(x, y2, color);
        }
        for y in y1..=y2 {
            out.set_pixel(x1, y, color);
            out.set_pixel(x2, y, color);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::encode_ppm;
    use crate::postprocess::{BoxXyxy, Detection};

    fn flat_image(w: usize, h: usize, value: u8) -> ImageBuf {
        ImageBuf::new(w, h, vec![value; 3 * w * h]).unwrap()
    }

    fn det(class_id: usize, score: f32, x1: f32, y1: f32, x2: f32, y2: f32) -> Detection {
        Detection {
            class_id,
            score,
            bbox: BoxXyxy { x1, y1, x2, y2 },
        }
    }

    #[test]
    fn no_detections_is_byte_identical() {
        let img = flat_image(7, 5, 100);
        let out = render_detections(&img, &[]);
        assert_eq!(encode_ppm(&out), encode_ppm(&img));
    }

    #[test]
    fn one_box_recolors_exactly_the_perimeter() {
        let img = flat_image(8, 6, 0);
        let out = render_detections(&img, &[det(1, 0.9, 2.0, 1.0, 5.0, 4.0)]);
        let color = class_color(1);
        for y in 0..6 {
            for x in 0..8 {
                let on_perimeter = (2..=5).contains(&x)
                    && (1..=4).contains(&y)
                    && (x == 2 || x == 5 || y == 1 || y == 4);
                let expect = if on_perimeter { color } else { [0, 0, 0] };
                assert_eq!(out.pixel(x, y), expect, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn higher_score_draws_on_top() {
        let img = flat_image(6, 6, 0);
        let a = det(0, 0.4, 1.0, 1.0, 4.0, 4.0);
        let b = det(3, 0.8, 1.0, 1.0, 4.0, 4.0);
        for dets in [vec![a.clone(), b.clone()], vec![b, a]] {
            let out = render_detections(&img, &dets);
            assert_eq!(out.pixel(1, 1), class_color(3));
        }
    }

    #[test]
    fn out_of_bounds_boxes_clamp_to_edges() {
        let img = flat_image(5, 5, 10);
        let out = render_detections(&img, &[det(2, 0.5, -3.0, -3.0, 9.0, 9.0)]);
        assert_eq!(out.pixel(0, 0), class_color(2));
        assert_eq!(out.pixel(4, 4), class_color(2));
        assert_eq!(out.pixel(2, 2), [10, 10, 10]);
    }
}
