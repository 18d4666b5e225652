//! Draws the layout's text boxes onto the poster.

use image::{Rgb, RgbImage};
use serde::Serialize;

use regionpost_core::color::luma;
use regionpost_core::layout::{Emphasis, LayoutSpec};

use crate::font::{glyph, is_set, text_width, ADVANCE, ELLIPSIS, GLYPH_H};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    /// Pixel rectangle of a normalized `[x, y, w, h]` box, clamped to the canvas.
    pub fn from_normalized(bbox: [f64; 4], width: u32, height: u32) -> Self {
        let px = |v: f64, size: u32| (v.clamp(0.0, 1.0) * size as f64).round() as u32;
        let (x0, y0) = (px(bbox[0], width), px(bbox[1], height));
        let (x1, y1) = (px(bbox[0] + bbox[2], width), px(bbox[1] + bbox[3], height));
        Self {
            x: x0,
            y: y0,
            w: x1.saturating_sub(x0),
            h: y1.saturating_sub(y0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacedText {
    pub content: String,
    pub emphasis: Emphasis,
    pub rect: Rect,
    /// Text actually drawn, possibly truncated.
    pub text: String,
    pub scale: u32,
    pub fill: [u8; 3],
}

impl PlacedText {
    /// Bounding box of the drawn glyphs.
    pub fn ink_rect(&self) -> Rect {
        let n = self.text.chars().count();
        let w = text_width(n, self.scale);
        let h = GLYPH_H * self.scale;
        Rect {
            x: self.rect.x + (self.rect.w - w) / 2,
            y: self.rect.y + (self.rect.h - h) / 2,
            w,
            h,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TextOverlayPlan {
    pub boxes: Vec<PlacedText>,
}

/// Largest scale at which the whole text fits, or the text cut with an
/// ellipsis at scale 1. `None` when not even one glyph fits.
pub fn fit_text(text: &str, w: u32, h: u32) -> Option<(u32, String)> {
    let n = text.chars().count();
    if n == 0 || h < GLYPH_H {
        return None;
    }
    for scale in (1..=h / GLYPH_H).rev() {
        if text_width(n, scale) <= w {
            return Some((scale, text.to_owned()));
        }
    }
    let capacity = ((w + 1) / ADVANCE) as usize;
    if capacity == 0 {
        return None;
    }
    let mut cut: String = text.chars().take(capacity - 1).collect();
    cut.push(ELLIPSIS);
    Some((1, cut))
}

/// Black or white, whichever differs more from the mean luma under `rect`.
pub fn contrast_fill(img: &RgbImage, rect: Rect) -> [u8; 3] {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            let p = img.get_pixel(x, y).0;
            sum += luma([p[0] as f64, p[1] as f64, p[2] as f64]);
            n += 1;
        }
    }
    let mean = if n == 0 { 0.0 } else { sum / n as f64 };
    if 255.0 - mean > mean {
        [255, 255, 255]
    } else {
        [0, 0, 0]
    }
}

impl TextOverlayPlan {
    pub fn from_layout(layout: &LayoutSpec, img: &RgbImage) -> Self {
        let (width, height) = img.dimensions();
        let boxes = layout
            .text_boxes
            .iter()
            .filter_map(|b| {
                let rect = Rect::from_normalized(b.bbox, width, height);
                let (scale, text) = fit_text(&b.content, rect.w, rect.h)?;
                Some(PlacedText {
                    content: b.content.clone(),
                    emphasis: b.emphasis,
                    rect,
                    text,
                    scale,
                    fill: contrast_fill(img, rect),
                })
            })
            .collect();
        Self { boxes }
    }
}

pub fn render_text_overlay(img: &RgbImage, plan: &TextOverlayPlan) -> RgbImage {
    let mut out = img.clone();
    for b in &plan.boxes {
        let ink = b.ink_rect();
        for (k, c) in b.text.chars().enumerate() {
            let rows = glyph(c);
            let x0 = ink.x + k as u32 * ADVANCE * b.scale;
            for py in 0..ink.h {
                for px in 0..(ADVANCE - 1) * b.scale {
                    if is_set(&rows, px / b.scale, py / b.scale) {
                        out.put_pixel(x0 + px, ink.y + py, Rgb(b.fill));
                    }
                }
            }
        }
    }
    out
}
