//! Value types exchanged between the agents.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub theme_text: String,
    pub visual_texts: Vec<String>,
}

impl Theme {
    /// Trims the theme, drops empty visual texts and repeated ones (first
    /// occurrence wins).
    pub fn new(theme_text: &str, visual_texts: impl IntoIterator<Item = String>) -> Result<Self, String> {
        let theme_text = theme_text.trim();
        if theme_text.is_empty() {
            return Err("theme must not be empty".into());
        }
        let mut texts: Vec<String> = Vec::new();
        for t in visual_texts {
            let t = t.trim().to_owned();
            if !t.is_empty() && !texts.contains(&t) {
                texts.push(t);
            }
        }
        Ok(Self {
            theme_text: theme_text.to_owned(),
            visual_texts: texts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HueRelation {
    Complementary,
    Analogous,
    Other,
}

pub const COMPLEMENTARY_MIN_DEG: f64 = 150.0;
pub const ANALOGOUS_MAX_DEG: f64 = 30.0;

/// Circular distance on the colour wheel, in `[0, 180]`.
pub fn hue_distance(h1: f64, h2: f64) -> f64 {
    let d = (h1 - h2).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Relation of two hues by wheel position. Non-finite hues give `Other`.
pub fn hue_relation(h1: f64, h2: f64) -> HueRelation {
    if !h1.is_finite() || !h2.is_finite() {
        return HueRelation::Other;
    }
    let d = hue_distance(h1, h2);
    if d >= COMPLEMENTARY_MIN_DEG {
        HueRelation::Complementary
    } else if d <= ANALOGOUS_MAX_DEG {
        HueRelation::Analogous
    } else {
        HueRelation::Other
    }
}

/// Maps a hue into `[0, 360)`. Returns whether it had to be wrapped.
pub fn normalize_hue(h: f64) -> (f64, bool) {
    if (0.0..360.0).contains(&h) {
        return (h, false);
    }
    let n = h.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    (if n >= 360.0 { 0.0 } else { n }, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub description: String,
    pub hue: f64,
    pub color_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementPair {
    pub scene_a: String,
    pub scene_b: String,
    pub element_a: Element,
    pub element_b: Element,
    pub relation: HueRelation,
}

impl ElementPair {
    pub fn elements(&self) -> [&Element; 2] {
        [&self.element_a, &self.element_b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackTarget {
    Cognition,
    Arranger,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub contrast: u8,
    pub harmony: u8,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { contrast: 7, harmony: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerVerdict {
    pub approved: bool,
    pub contrast_score: u8,
    pub harmony_score: u8,
    pub feedback_target: FeedbackTarget,
    pub feedback_text: String,
}

impl RefinerVerdict {
    /// Applies the approval rule. Low contrast is checked before low harmony.
    pub fn from_scores(contrast: u8, harmony: u8, feedback: String, th: Thresholds) -> Self {
        let target = if contrast < th.contrast {
            FeedbackTarget::Cognition
        } else if harmony < th.harmony {
            FeedbackTarget::Arranger
        } else {
            FeedbackTarget::None
        };
        Self {
            approved: target == FeedbackTarget::None,
            contrast_score: contrast,
            harmony_score: harmony,
            feedback_target: target,
            feedback_text: feedback,
        }
    }

    pub fn score(&self) -> u32 {
        self.contrast_score as u32 + self.harmony_score as u32
    }
}
