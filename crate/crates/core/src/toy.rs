//! JSON descriptions of analytic Gaussian targets, and how they turn into an
//! [`AnalyticModel`] plus per-region conditions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{RegionId, RegionSet};
use crate::layout::LayoutSpec;
use crate::sampler::RegionConditions;
use crate::velocity::{AnalyticModel, Condition, GaussianTarget, TargetSpec, VelocityError};

/// Targets keyed by region id, for direct sampler runs without agents.
///
/// ```json
/// {"channels": 1, "regions": {"0": {"mean": 3.0}, "1": {"mean": -3.0}}}
/// ```
///
/// Without `null`, the unconditional target is the layout prior (every pixel
/// follows its own region's target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyTargets {
    pub channels: usize,
    pub regions: BTreeMap<RegionId, TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null: Option<TargetSpec>,
}

pub fn region_prompt(id: RegionId) -> String {
    format!("region {id}")
}

impl ToyTargets {
    pub fn build(&self, rs: &RegionSet) -> Result<(AnalyticModel, RegionConditions), VelocityError> {
        for &id in rs.region_ids() {
            if !self.regions.contains_key(&id) {
                return Err(VelocityError::InvalidTarget(format!("no target for region {id}")));
            }
        }
        if let Some(extra) = self.regions.keys().find(|id| !rs.contains(**id)) {
            return Err(VelocityError::InvalidTarget(format!("target given for unknown region {extra}")));
        }
        let targets: BTreeMap<RegionId, GaussianTarget> = self
            .regions
            .iter()
            .map(|(&id, spec)| Ok((id, GaussianTarget::try_from(spec)?)))
            .collect::<Result<_, VelocityError>>()?;
        let null = match &self.null {
            Some(spec) => GaussianTarget::try_from(spec)?,
            None => GaussianTarget::layout_prior(rs, &targets, self.channels)?,
        };
        let mut model = AnalyticModel::new(self.channels).with_null_target(null);
        let mut prompts = Vec::with_capacity(targets.len());
        for (id, target) in targets {
            model = model.with_target(region_prompt(id), target);
            prompts.push(Condition::Prompt(region_prompt(id)));
        }
        Ok((model, RegionConditions::new(prompts)))
    }
}

/// Targets keyed by element name, for full pipeline runs where prompts come
/// from the arranger's layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSpec {
    pub channels: usize,
    pub targets: BTreeMap<String, TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null: Option<TargetSpec>,
}

impl AnalyticSpec {
    fn target_for_element(&self, element: &str) -> Result<GaussianTarget, VelocityError> {
        let spec = self
            .targets
            .get(element)
            .or(self.fallback.as_ref())
            .ok_or_else(|| VelocityError::UnknownCondition(element.to_owned()))?;
        GaussianTarget::try_from(spec)
    }

    /// Model whose prompt keys are the layout's element names; the default
    /// null target is the layout prior of those elements.
    pub fn build_for_layout(&self, layout: &LayoutSpec, rs: &RegionSet) -> Result<AnalyticModel, VelocityError> {
        let mut model = AnalyticModel::new(self.channels);
        for (name, spec) in &self.targets {
            model = model.with_target(name.clone(), GaussianTarget::try_from(spec)?);
        }
        if let Some(fb) = &self.fallback {
            model = model.with_fallback(GaussianTarget::try_from(fb)?);
        }
        let null = match &self.null {
            Some(spec) => GaussianTarget::try_from(spec)?,
            None => {
                let mut per_region = BTreeMap::new();
                for r in &layout.regions {
                    per_region.insert(r.region_id, self.target_for_element(&r.element)?);
                }
                GaussianTarget::layout_prior(rs, &per_region, self.channels)?
            }
        };
        Ok(model.with_null_target(null))
    }
}
