//! Velocity predictors `v(z, t, c)` for rectified-flow sampling.
//!
//! Time runs from `t = 1` (pure noise) to `t = 0` (data) along the path
//! `z_t = (1 - t) x + t ε`, and a model returns the velocity `E[ε - x | z_t]`.

mod analytic;
mod remote;
pub mod wire;

pub use analytic::{
    analytic_gaussian_velocity, AnalyticModel, ConstantModel, GaussianComponent, GaussianTarget,
    MeanSpec, ScaleSpec, TargetSpec,
};
pub use remote::{HealthResponse, RemoteVelocityModel, VelocityRequest, VelocityResponse};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ShapeError;
use crate::geometry::RegionId;
use crate::latent::{LatentGrid, Shape};
use crate::layout::LayoutSpec;

#[derive(Debug, Error)]
pub enum VelocityError {
    #[error("time {0} is outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("no target registered for condition {0}")]
    UnknownCondition(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("prompt text must not be empty")]
    EmptyPrompt,
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}")]
    Http { status: u16 },
    #[error("backend response shape {found:?} does not match request shape {expected:?}")]
    ShapeMismatch { expected: [usize; 3], found: [usize; 3] },
    #[error("backend response contains non-finite values")]
    NonFinite,
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Text condition `P_i`, or the unconditional `∅`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "text")]
pub enum Condition {
    Prompt(String),
    Null,
}

impl Condition {
    pub fn prompt(text: impl Into<String>) -> Result<Self, VelocityError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(VelocityError::EmptyPrompt);
        }
        Ok(Condition::Prompt(text))
    }

    pub fn as_prompt(&self) -> Option<&str> {
        match self {
            Condition::Prompt(p) => Some(p),
            Condition::Null => None,
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::Prompt(p) => write!(f, "{p:?}"),
            Condition::Null => f.write_str("∅"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub deterministic: bool,
}

/// A pre-trained velocity predictor. Implementations must be safe to call
/// concurrently and must return a tensor with the input's shape.
pub trait VelocityModel: Send + Sync {
    fn evaluate(&self, z: &LatentGrid, t: f64, condition: &Condition) -> Result<LatentGrid, VelocityError>;

    /// Channel count the model operates on, when fixed.
    fn channels(&self) -> Option<usize>;

    fn info(&self) -> ModelInfo;
}

pub(crate) fn check_time(t: f64) -> Result<(), VelocityError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(VelocityError::TimeOutOfRange(t))
    }
}

pub(crate) fn check_output(input: Shape, out: &LatentGrid) -> Result<(), VelocityError> {
    if out.shape() != input {
        return Err(VelocityError::ShapeMismatch {
            expected: input.as_array(),
            found: out.shape().as_array(),
        });
    }
    Ok(())
}

/// Prompt for region `region_id`:
/// `"<element>, <description>, <color terms>, <style tags>"`, skipping empty
/// segments. Style tags are the layout's global tags followed by any
/// region-specific ones not already listed.
pub fn condition_lookup(layout: &LayoutSpec, region_id: RegionId) -> Result<Condition, VelocityError> {
    let region = layout
        .regions
        .iter()
        .find(|r| r.region_id == region_id)
        .ok_or_else(|| VelocityError::UnknownCondition(format!("region {region_id} is missing from the layout")))?;

    let mut style: Vec<&str> = layout.global_style.iter().map(String::as_str).collect();
    for tag in &region.style_tags {
        if !style.contains(&tag.as_str()) {
            style.push(tag);
        }
    }
    let colors = region.color_terms.join(", ");
    let style = style.join(", ");
    let segments = [region.element.as_str(), region.description.as_str(), &colors, &style];
    let text = segments
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(", ");
    Condition::prompt(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{LayoutRegion, LayoutSpec};

    fn layout(style: Vec<&str>) -> LayoutSpec {
        LayoutSpec {
            version: "1".into(),
            regions: vec![LayoutRegion {
                region_id: 0,
                element: "iceberg".into(),
                description: "towering blue iceberg".into(),
                hues: vec![210.0],
                color_terms: vec!["blue".into()],
                style_tags: vec![],
            }],
            global_style: style.into_iter().map(String::from).collect(),
            text_boxes: vec![],
            rationale: String::new(),
        }
    }

    #[test]
    fn prompt_template() {
        let c = condition_lookup(&layout(vec!["flat illustration", "high contrast"]), 0).unwrap();
        assert_eq!(
            c,
            Condition::Prompt("iceberg, towering blue iceberg, blue, flat illustration, high contrast".into())
        );
    }

    #[test]
    fn empty_style_has_no_dangling_comma() {
        let c = condition_lookup(&layout(vec![]), 0).unwrap();
        assert_eq!(c, Condition::Prompt("iceberg, towering blue iceberg, blue".into()));
    }

    #[test]
    fn unknown_region() {
        assert!(matches!(
            condition_lookup(&layout(vec![]), 3),
            Err(VelocityError::UnknownCondition(_))
        ));
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(Condition::prompt("  ").is_err());
    }
}
