//! Versioned poster layout document produced by the arranger.

use serde::{Deserialize, Serialize};

use crate::geometry::RegionId;

pub const LAYOUT_VERSION: &str = "1";

/// JSON schema shipped with the crate; the serde types below are normative.
pub const LAYOUT_SCHEMA: &str = include_str!("../schemas/layout.schema.json");

/// Maximum allowed intersection between two text boxes, as a fraction of
/// the smaller box's area.
pub const MAX_TEXT_OVERLAP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub version: String,
    pub regions: Vec<LayoutRegion>,
    #[serde(default)]
    pub global_style: Vec<String>,
    #[serde(default)]
    pub text_boxes: Vec<TextBox>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutRegion {
    pub region_id: RegionId,
    pub element: String,
    pub description: String,
    #[serde(default)]
    pub hues: Vec<f64>,
    #[serde(default)]
    pub color_terms: Vec<String>,
    #[serde(default)]
    pub style_tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emphasis {
    Title,
    Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextBox {
    pub content: String,
    /// Normalized `[x, y, w, h]` with the origin at the top-left corner.
    pub bbox: [f64; 4],
    pub emphasis: Emphasis,
}

impl TextBox {
    pub fn area(&self) -> f64 {
        self.bbox[2].max(0.0) * self.bbox[3].max(0.0)
    }

    pub fn intersection(&self, other: &TextBox) -> f64 {
        let [ax, ay, aw, ah] = self.bbox;
        let [bx, by, bw, bh] = other.bbox;
        let w = ((ax + aw).min(bx + bw) - ax.max(bx)).max(0.0);
        let h = ((ay + ah).min(by + bh) - ay.max(by)).max(0.0);
        w * h
    }

    /// Intersection as a fraction of the smaller box's area.
    pub fn overlap_fraction(&self, other: &TextBox) -> f64 {
        let smaller = self.area().min(other.area());
        if smaller <= 0.0 {
            return 0.0;
        }
        self.intersection(other) / smaller
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayoutViolation {
    WrongVersion(String),
    MissingRegion(RegionId),
    UnknownRegion(RegionId),
    DuplicateRegion(RegionId),
    EmptyElement(RegionId),
    HueOutOfRange { region: RegionId, hue: f64 },
    BoxOutsideCanvas { index: usize },
    UnknownText { index: usize, content: String },
    Overlap { a: usize, b: usize, fraction: f64 },
}

impl std::fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayoutViolation::WrongVersion(v) => write!(f, "version must be \"{LAYOUT_VERSION}\", got \"{v}\""),
            LayoutViolation::MissingRegion(id) => write!(f, "region {id} has no entry in the layout"),
            LayoutViolation::UnknownRegion(id) => write!(f, "region {id} does not exist in the region mask"),
            LayoutViolation::DuplicateRegion(id) => write!(f, "region {id} is assigned more than once"),
            LayoutViolation::EmptyElement(id) => write!(f, "region {id} has an empty element name"),
            LayoutViolation::HueOutOfRange { region, hue } => {
                write!(f, "region {region} hue {hue} is outside [0, 360)")
            }
            LayoutViolation::BoxOutsideCanvas { index } => {
                write!(f, "text box {index} is not inside the unit square")
            }
            LayoutViolation::UnknownText { index, content } => {
                write!(f, "text box {index} content {content:?} is not one of the visual texts")
            }
            LayoutViolation::Overlap { a, b, fraction } => write!(
                f,
                "text boxes {a} and {b} overlap by {:.0}% (max {:.0}%)",
                fraction * 100.0,
                MAX_TEXT_OVERLAP * 100.0
            ),
        }
    }
}

impl LayoutSpec {
    /// Structural checks against the region ids of the mask and the visual
    /// texts that may be placed. Returns every violation found.
    pub fn validate(&self, region_ids: &[RegionId], visual_texts: &[String]) -> Result<(), Vec<LayoutViolation>> {
        let mut out = Vec::new();
        if self.version != LAYOUT_VERSION {
            out.push(LayoutViolation::WrongVersion(self.version.clone()));
        }
        let mut seen = Vec::new();
        for r in &self.regions {
            if !region_ids.contains(&r.region_id) {
                out.push(LayoutViolation::UnknownRegion(r.region_id));
            }
            if seen.contains(&r.region_id) {
                out.push(LayoutViolation::DuplicateRegion(r.region_id));
            }
            seen.push(r.region_id);
            if r.element.trim().is_empty() {
                out.push(LayoutViolation::EmptyElement(r.region_id));
            }
            for &hue in &r.hues {
                if !(0.0..360.0).contains(&hue) {
                    out.push(LayoutViolation::HueOutOfRange { region: r.region_id, hue });
                }
            }
        }
        for &id in region_ids {
            if !seen.contains(&id) {
                out.push(LayoutViolation::MissingRegion(id));
            }
        }
        for (index, b) in self.text_boxes.iter().enumerate() {
            let [x, y, w, h] = b.bbox;
            let inside = [x, y, w, h].iter().all(|v| v.is_finite())
                && x >= 0.0
                && y >= 0.0
                && w > 0.0
                && h > 0.0
                && x + w <= 1.0 + 1e-9
                && y + h <= 1.0 + 1e-9;
            if !inside {
                out.push(LayoutViolation::BoxOutsideCanvas { index });
            }
            if !visual_texts.iter().any(|t| t == &b.content) {
                out.push(LayoutViolation::UnknownText {
                    index,
                    content: b.content.clone(),
                });
            }
        }
        for a in 0..self.text_boxes.len() {
            for b in a + 1..self.text_boxes.len() {
                let fraction = self.text_boxes[a].overlap_fraction(&self.text_boxes[b]);
                if fraction > MAX_TEXT_OVERLAP {
                    out.push(LayoutViolation::Overlap { a, b, fraction });
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}
