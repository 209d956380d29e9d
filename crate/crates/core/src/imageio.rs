//! Binary PPM/PGM image reading and writing, plus normalized-center-box
//! annotation parsing.
//!
//! Only the 8-bit binary forms (magic `P6` and `P5`) are accepted: header
//! comments are allowed, the max value must be 255, and the payload must be
//! exactly the advertised size. Parse errors always carry a byte offset.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::postprocess::BoxXyxy;
use crate::tensor::Tensor;

/// Decoded 8-bit RGB image, row-major, tightly packed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    /// `3 * width * height` bytes, RGB interleaved.
    pub rgb: Vec<u8>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        let need = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| Error::Image(format!("image extents overflow: {width}x{height}")))?;
        if rgb.len() != need {
            return Err(Error::Image(format!(
                "pixel buffer holds {} bytes, {width}x{height} needs {need}",
                rgb.len()
            )));
        }
        Ok(ImageBuf { width, height, rgb })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.rgb[i..i + 3].copy_from_slice(&rgb);
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn decimal(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Image(format!(
                "expected {what} at byte offset {start}"
            )));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Image(format!("unreadable {what} at byte offset {start}")))
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) byte stream; gray images are
/// replicated across the three channels.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuf> {
    if bytes.len() < 2 {
        return Err(Error::Image("file shorter than a magic number".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        other => {
            return Err(Error::Image(format!(
                "unsupported magic {:?} at byte offset 0 (binary P5/P6 only)",
                String::from_utf8_lossy(other)
            )));
        }
    };
    let mut r = ByteReader { bytes, pos: 2 };
    let width = r.decimal("width")?;
    let height = r.decimal("height")?;
    let maxval = r.decimal("max value")?;
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("degenerate extents {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::Image(format!(
            "max value {maxval} unsupported (8-bit images only), near byte offset {}",
            r.pos
        )));
    }
    // Exactly one separator byte between the header and the payload.
    if r.pos >= bytes.len() || !matches!(bytes[r.pos], b' ' | b'\t' | b'\r' | b'\n') {
        return Err(Error::Image(format!(
            "missing separator after header at byte offset {}",
            r.pos
        )));
    }
    r.pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::Image(format!("image extents overflow: {width}x{height}")))?;
    let have = bytes.len() - r.pos;
    if have < need {
        return Err(Error::Image(format!(
            "payload truncated at byte offset {}: need {need} bytes, have {have}",
            r.pos
        )));
    }
    if have > need {
        return Err(Error::Image(format!(
            "{} trailing bytes after pixel data (payload ends at byte offset {})",
            have - need,
            r.pos + need
        )));
    }
    let payload = &bytes[r.pos..];
    let rgb = if channels == 3 {
        payload.to_vec()
    } else {
        let mut rgb = Vec::with_capacity(need * 3);
        for &g in payload {
            rgb.extend_from_slice(&[g, g, g]);
        }
        rgb
    };
    ImageBuf::new(width, height, rgb)
}

/// Encodes an image as binary PPM (`P6`).
pub fn encode_ppm(image: &ImageBuf) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.rgb);
    out
}

/// Encodes a single-channel buffer as binary PGM (`P5`).
pub fn encode_pgm(gray: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    if gray.len() != width * height {
        return Err(Error::Image(format!(
            "gray buffer holds {} bytes, {width}x{height} needs {}",
            gray.len(),
            width * height
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    Ok(out)
}

/// Converts to a (1, 3, h, w) tensor with values in [0, 1].
pub fn image_to_tensor(image: &ImageBuf) -> Result<Tensor> {
    let mut t = Tensor::zeros((1, 3, image.height, image.width))?;
    let (w, h) = (image.width, image.height);
    let data = t.data_mut();
    for y in 0..h {
        for x in 0..w {
            let src = 3 * (y * w + x);
            for c in 0..3 {
                data[(c * h + y) * w + x] = image.rgb[src + c] as f32 / 255.0;
            }
        }
    }
    Ok(t)
}

/// Reads and decodes an image file.
pub fn read_image(path: &Path) -> Result<ImageBuf> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Image(format!("cannot read {}: {e}", path.display())))?;
    decode_image(&bytes)
}

/// Parses normalized center-size annotation text ("class cx cy w h" per
/// line) into absolute-pixel ground truths for one image. Corners are
/// clamped to the image bounds.
pub fn parse_annotations(
    text: &str,
    image_id: &str,
    image_w: usize,
    image_h: usize,
    class_count: usize,
) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "{image_id} line {lineno}: expected 5 fields, got {}",
                fields.len()
            )));
        }
        let class_id: usize = fields[0].parse().map_err(|_| {
            Error::Data(format!(
                "{image_id} line {lineno}: unreadable class id '{}'",
                fields[0]
            ))
        })?;
        if class_id >= class_count {
            return Err(Error::Data(format!(
                "{image_id} line {lineno}: class id {class_id} outside 0..{class_count}"
            )));
        }
        let mut vals = [0f64; 4];
        for (j, v) in vals.iter_mut().enumerate() {
            let raw = fields[j + 1];
            *v = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "{image_id} line {lineno}: unreadable value '{raw}'"
                ))
            })?;
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::Data(format!(
                    "{image_id} line {lineno}: value {raw} outside [0, 1]"
                )));
            }
        }
        let [cx, cy, bw, bh] = vals;
        let (iw, ih) = (image_w as f64, image_h as f64);
        let x1 = ((cx - bw / 2.0) * iw).clamp(0.0, iw);
        let y1 = ((cy - bh / 2.0) * ih).clamp(0.0, ih);
        let x2 = ((cx + bw / 2.0) * iw).clamp(0.0, iw);
        let y2 = ((cy + bh / 2.0) * ih).clamp(0.0, ih);
        out.push(GroundTruth {
            image_id: image_id.to_string(),
            class_id,
            bbox: BoxXyxy {
                x1: x1 as f32,
                y1: y1 as f32,
                x2: x2 as f32,
                y2: y2 as f32,
            },
        });
    }
    Ok(out)
}

/// Formats ground truths back into normalized annotation lines.
pub fn format_annotations(gts: &[(usize, BoxXyxy)], image_w: usize, image_h: usize) -> String {
    let (iw, ih) = (image_w as f64, image_h as f64);
    let mut out = String::new();
    for (class_id, b) in gts {
        let cx = (b.x1 as f64 + b.x2 as f64) / 2.0 / iw;
        let cy = (b.y1 as f64 + b.y2 as f64) / 2.0 / ih;
        let w = (b.x2 as f64 - b.x1 as f64) / iw;
        let h = (b.y2 as f64 - b.y1 as f64) / ih;
        out.push_str(&format!("{class_id} {cx:.10} {cy:.10} {w:.10} {h:.10}\n"));
    }
    out
}
