//! Deterministic image composition for prompts: highlighted regions,
//! labeled candidate overviews, and padded crops.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::font::{glyph, text_size, GLYPH_H, GLYPH_W};
use crate::geometry::BBox;
use crate::types::Candidate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSpec {
    pub highlight_color: [u8; 3],
    /// Outline width; `None` means `max(3, 0.004 * min(w, h))`.
    pub stroke_px: Option<u32>,
    pub crop_pad_frac: f64,
    pub label_font_px: u32,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            highlight_color: [255, 255, 0],
            stroke_px: None,
            crop_pad_frac: 0.15,
            label_font_px: 10,
        }
    }
}

impl RenderSpec {
    pub fn stroke_for(&self, width: u32, height: u32) -> u32 {
        self.stroke_px
            .unwrap_or_else(|| ((0.004 * width.min(height) as f64).floor() as u32).max(3))
            .max(1)
    }
}

/// Label colors cycled across candidates in the overview.
const PALETTE: [[u8; 3]; 6] = [
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [0, 255, 0],
    [255, 128, 0],
    [0, 128, 255],
];

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::ImageDecode(e.to_string()))
}

pub fn load_image(path: impl AsRef<std::path::Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// PNG with the encoder's fixed default settings; identical pixels give
/// identical bytes.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory png encoding");
    buf.into_inner()
}

fn draw_outline(img: &mut RgbImage, bbox: &BBox, stroke: u32, color: [u8; 3]) {
    let (c0, r0, c1, r1) = bbox.pixel_span(img.width(), img.height());
    for r in r0..r1 {
        for c in c0..c1 {
            let edge = c < c0 + stroke || c + stroke >= c1 || r < r0 + stroke || r + stroke >= r1;
            if edge {
                img.put_pixel(c, r, Rgb(color));
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, color: [u8; 3]) {
    for r in y..(y + h).min(img.height()) {
        for c in x..(x + w).min(img.width()) {
            img.put_pixel(c, r, Rgb(color));
        }
    }
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, scale: u32, color: [u8; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (gy, bits) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - gx) & 1 == 1 {
                    fill_rect(img, cx + gx * scale, y + gy as u32 * scale, scale, scale, color);
                }
            }
        }
        cx += (GLYPH_W + 1) * scale;
    }
}

/// Outline `bbox` (clamped to the image) in the highlight color. The stroke
/// lies inside the box; nothing outside the stroke band changes.
pub fn highlight_region(image: &RgbImage, bbox: &BBox, spec: &RenderSpec) -> Result<RgbImage> {
    let clamped = bbox.clamp_to(image.width(), image.height())?;
    let mut out = image.clone();
    let stroke = spec.stroke_for(image.width(), image.height());
    draw_outline(&mut out, &clamped, stroke, spec.highlight_color);
    Ok(out)
}

/// Draw every candidate box with its id, in id order. Returns the image and
/// the order in which crops will be attached.
pub fn compose_candidate_overview(
    image: &RgbImage,
    candidates: &[Candidate],
    spec: &RenderSpec,
) -> Result<(RgbImage, Vec<String>)> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut ordered: Vec<&Candidate> = candidates.iter().collect();
    ordered.sort_by_key(|c| (c.ordinal().unwrap_or(usize::MAX), c.candidate_id.clone()));
    let mut out = image.clone();
    let stroke = spec.stroke_for(image.width(), image.height());
    let scale = (spec.label_font_px / GLYPH_H).max(1);
    for (i, cand) in ordered.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let Ok(b) = cand.bbox.clamp_to(image.width(), image.height()) else {
            continue;
        };
        draw_outline(&mut out, &b, stroke, color);
        let (tw, th) = text_size(&cand.candidate_id, scale);
        let (x, y) = (b.x1() as u32, b.y1() as u32);
        fill_rect(&mut out, x, y, tw + 2 * scale, th + 2 * scale, [0, 0, 0]);
        draw_text(&mut out, x + scale, y + scale, &cand.candidate_id, scale, color);
    }
    let order = ordered.iter().map(|c| c.candidate_id.clone()).collect();
    Ok((out, order))
}

/// The box a padded crop covers: `bbox` grown by `pad` of its size per side,
/// clamped to the image.
pub fn padded_box(bbox: &BBox, pad: f64, width: u32, height: u32) -> Result<BBox> {
    bbox.expand(pad).clamp_to(width, height)
}

/// Crop around `bbox` with padding. Returns the crop and the continuous box
/// it was cut from.
pub fn crop_padded(image: &RgbImage, bbox: &BBox, spec: &RenderSpec) -> Result<(RgbImage, BBox)> {
    let region = padded_box(bbox, spec.crop_pad_frac, image.width(), image.height())?;
    let (c0, r0, c1, r1) = region.pixel_span(image.width(), image.height());
    let crop = image::imageops::crop_imm(image, c0, r0, c1 - c0, r1 - r0).to_image();
    Ok((crop, region))
}
