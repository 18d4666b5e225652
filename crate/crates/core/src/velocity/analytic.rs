//! Closed-form velocity fields for Gaussian and Gaussian-mixture data.
//!
//! With `x ~ N(m, s²)` elementwise and `z = (1-t)x + tε`, the posterior
//! expectations are linear in `z`: writing `V = (1-t)²s² + t²`,
//!
//! ```text
//! E[x|z] = m + (1-t)s²/V · (z - (1-t)m)
//! E[ε|z] =        t/V   · (z - (1-t)m)
//! v      = (t - (1-t)s²)/V · (z - (1-t)m) - m
//! ```
//!
//! Mixtures share one component across the whole tensor; the velocity is the
//! component-posterior-weighted sum, with posteriors computed in log space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_time, Condition, ModelInfo, VelocityError, VelocityModel};
use crate::geometry::{RegionId, RegionSet};
use crate::latent::{LatentGrid, Shape};

const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum MeanSpec {
    /// One value per channel; a single value broadcasts to every channel.
    PerChannel(Vec<f64>),
    Field(LatentGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScaleSpec {
    Uniform(f64),
    Field(LatentGrid),
}

impl MeanSpec {
    fn check(&self, shape: Shape) -> Result<(), VelocityError> {
        match self {
            MeanSpec::PerChannel(v) if v.len() == 1 || v.len() == shape.channels => Ok(()),
            MeanSpec::PerChannel(v) => Err(VelocityError::InvalidTarget(format!(
                "mean has {} channels, latent has {}",
                v.len(),
                shape.channels
            ))),
            MeanSpec::Field(g) if g.shape() == shape => Ok(()),
            MeanSpec::Field(g) => Err(VelocityError::InvalidTarget(format!(
                "mean field shape {} does not match latent {}",
                g.shape(),
                shape
            ))),
        }
    }

    #[inline]
    fn at(&self, c: usize, flat: usize) -> f64 {
        match self {
            MeanSpec::PerChannel(v) => v[if v.len() == 1 { 0 } else { c }],
            MeanSpec::Field(g) => g.as_slice()[flat],
        }
    }
}

impl ScaleSpec {
    fn check(&self, shape: Shape) -> Result<(), VelocityError> {
        match self {
            ScaleSpec::Uniform(s) if *s > 0.0 && s.is_finite() => Ok(()),
            ScaleSpec::Uniform(s) => Err(VelocityError::InvalidTarget(format!("scale {s} must be > 0"))),
            ScaleSpec::Field(g) if g.shape() != shape => Err(VelocityError::InvalidTarget(format!(
                "scale field shape {} does not match latent {}",
                g.shape(),
                shape
            ))),
            ScaleSpec::Field(g) if g.as_slice().iter().all(|&s| s > 0.0 && s.is_finite()) => Ok(()),
            ScaleSpec::Field(_) => Err(VelocityError::InvalidTarget("scale field must be > 0".into())),
        }
    }

    #[inline]
    fn at(&self, flat: usize) -> f64 {
        match self {
            ScaleSpec::Uniform(s) => *s,
            ScaleSpec::Field(g) => g.as_slice()[flat],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: MeanSpec,
    pub scale: ScaleSpec,
}

/// Data distribution for one condition: a single Gaussian or a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    components: Vec<GaussianComponent>,
}

impl GaussianTarget {
    pub fn gaussian(mean: Vec<f64>, scale: f64) -> Result<Self, VelocityError> {
        Self::mixture(vec![GaussianComponent {
            weight: 1.0,
            mean: MeanSpec::PerChannel(mean),
            scale: ScaleSpec::Uniform(scale),
        }])
    }

    pub fn mixture(components: Vec<GaussianComponent>) -> Result<Self, VelocityError> {
        if components.is_empty() {
            return Err(VelocityError::InvalidTarget("mixture has no components".into()));
        }
        if components.iter().any(|c| !(c.weight > 0.0) || !c.weight.is_finite()) {
            return Err(VelocityError::InvalidTarget("mixture weights must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(VelocityError::InvalidTarget(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if let Some(bad) = components.iter().find_map(|c| match &c.scale {
            ScaleSpec::Uniform(s) if !(*s > 0.0) => Some(*s),
            _ => None,
        }) {
            return Err(VelocityError::InvalidTarget(format!("scale {bad} must be > 0")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Field-valued single Gaussian where every pixel follows the target of
    /// the region that owns it. Region targets must be single Gaussians.
    pub fn layout_prior(
        rs: &RegionSet,
        targets: &BTreeMap<RegionId, GaussianTarget>,
        channels: usize,
    ) -> Result<Self, VelocityError> {
        let shape = Shape::new(channels, rs.height(), rs.width());
        let mut mean = LatentGrid::zeros(shape);
        let mut scale = LatentGrid::zeros(shape);
        for &id in rs.region_ids() {
            let target = targets
                .get(&id)
                .ok_or_else(|| VelocityError::InvalidTarget(format!("no target for region {id}")))?;
            let [comp] = target.components() else {
                return Err(VelocityError::InvalidTarget(format!(
                    "region {id} target must be a single gaussian to build a layout prior"
                )));
            };
            comp.mean.check(shape)?;
            comp.scale.check(shape)?;
            let plane = shape.plane();
            for c in 0..channels {
                for (k, &l) in rs.labels().iter().enumerate() {
                    if l == id {
                        let flat = c * plane + k;
                        mean.as_mut_slice()[flat] = comp.mean.at(c, flat);
                        scale.as_mut_slice()[flat] = comp.scale.at(flat);
                    }
                }
            }
        }
        Self::mixture(vec![GaussianComponent {
            weight: 1.0,
            mean: MeanSpec::Field(mean),
            scale: ScaleSpec::Field(scale),
        }])
    }

    /// Per-channel mean of the mixture, when every component has per-channel means.
    pub fn channel_mean(&self, channels: usize) -> Option<Vec<f64>> {
        let mut out = vec![0.0; channels];
        for comp in &self.components {
            let MeanSpec::PerChannel(m) = &comp.mean else {
                return None;
            };
            for (c, o) in out.iter_mut().enumerate() {
                *o += comp.weight * m[if m.len() == 1 { 0 } else { c }];
            }
        }
        Some(out)
    }
}

/// Exact posterior-expected velocity `E[ε - x | z_t = z]` under `target`.
pub fn analytic_gaussian_velocity(
    z: &LatentGrid,
    t: f64,
    target: &GaussianTarget,
) -> Result<LatentGrid, VelocityError> {
    check_time(t)?;
    let shape = z.shape();
    for comp in &target.components {
        comp.mean.check(shape)?;
        comp.scale.check(shape)?;
    }
    let plane = shape.plane();
    let zs = z.as_slice();
    let one_minus_t = 1.0 - t;

    let component_velocity = |comp: &GaussianComponent, out: &mut [f64]| -> f64 {
        let mut loglik = 0.0;
        for c in 0..shape.channels {
            for k in 0..plane {
                let flat = c * plane + k;
                let m = comp.mean.at(c, flat);
                let s = comp.scale.at(flat);
                let var = (one_minus_t * one_minus_t * s * s + t * t).max(VARIANCE_FLOOR);
                let resid = zs[flat] - one_minus_t * m;
                let gain = (t - one_minus_t * s * s) / var;
                out[flat] = gain * resid - m;
                loglik -= 0.5 * (resid * resid / var + var.ln());
            }
        }
        loglik
    };

    if let [comp] = target.components.as_slice() {
        let mut out = vec![0.0; shape.len()];
        component_velocity(comp, &mut out);
        return Ok(LatentGrid::from_vec(shape, out)?);
    }

    let mut velocities = Vec::with_capacity(target.components.len());
    let mut logpost = Vec::with_capacity(target.components.len());
    for comp in &target.components {
        let mut v = vec![0.0; shape.len()];
        let ll = component_velocity(comp, &mut v);
        velocities.push(v);
        logpost.push(comp.weight.ln() + ll);
    }
    let weights = softmax(&logpost);
    let mut out = vec![0.0; shape.len()];
    for (w, v) in weights.iter().zip(&velocities) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(LatentGrid::from_vec(shape, out)?)
}

/// Component posterior weights for `z` at time `t`.
#[cfg(test)]
pub(crate) fn posterior_weights(z: &LatentGrid, t: f64, target: &GaussianTarget) -> Vec<f64> {
    let shape = z.shape();
    let plane = shape.plane();
    let one_minus_t = 1.0 - t;
    let logpost: Vec<f64> = target
        .components
        .iter()
        .map(|comp| {
            let mut ll = comp.weight.ln();
            for c in 0..shape.channels {
                for k in 0..plane {
                    let flat = c * plane + k;
                    let m = comp.mean.at(c, flat);
                    let s = comp.scale.at(flat);
                    let var = (one_minus_t * one_minus_t * s * s + t * t).max(VARIANCE_FLOOR);
                    let resid = z.as_slice()[flat] - one_minus_t * m;
                    ll -= 0.5 * (resid * resid / var + var.ln());
                }
            }
            ll
        })
        .collect();
    softmax(&logpost)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// JSON form of a target: `{"mean": [..] | x, "scale": s}` or
/// `{"mixture": [{"weight", "mean", "scale"}, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Mixture { mixture: Vec<ComponentSpec> },
    Single(ComponentSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    #[serde(default = "one")]
    pub weight: f64,
    pub mean: MeanJson,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanJson {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

fn one() -> f64 {
    1.0
}

impl ComponentSpec {
    fn build(&self) -> GaussianComponent {
        GaussianComponent {
            weight: self.weight,
            mean: MeanSpec::PerChannel(match &self.mean {
                MeanJson::Scalar(m) => vec![*m],
                MeanJson::PerChannel(v) => v.clone(),
            }),
            scale: ScaleSpec::Uniform(self.scale),
        }
    }
}

impl TryFrom<&TargetSpec> for GaussianTarget {
    type Error = VelocityError;

    fn try_from(spec: &TargetSpec) -> Result<Self, Self::Error> {
        match spec {
            TargetSpec::Single(c) => {
                let mut comp = c.build();
                comp.weight = 1.0;
                GaussianTarget::mixture(vec![comp])
            }
            TargetSpec::Mixture { mixture } => {
                GaussianTarget::mixture(mixture.iter().map(ComponentSpec::build).collect())
            }
        }
    }
}

/// Analytic flow-matching model: prompts map to Gaussian targets by name.
///
/// A prompt resolves to the entry whose key equals the whole prompt, then to
/// the entry whose key equals the prompt's leading comma-separated segment
/// (the element name), then to the fallback target.
#[derive(Debug, Clone)]
pub struct AnalyticModel {
    name: String,
    channels: usize,
    targets: Vec<(String, GaussianTarget)>,
    null_target: Option<GaussianTarget>,
    fallback: Option<GaussianTarget>,
}

impl AnalyticModel {
    pub fn new(channels: usize) -> Self {
        Self {
            name: "analytic-gaussian".into(),
            channels,
            targets: Vec::new(),
            null_target: None,
            fallback: None,
        }
    }

    pub fn with_target(mut self, key: impl Into<String>, target: GaussianTarget) -> Self {
        self.targets.push((key.into(), target));
        self
    }

    pub fn with_null_target(mut self, target: GaussianTarget) -> Self {
        self.null_target = Some(target);
        self
    }

    pub fn with_fallback(mut self, target: GaussianTarget) -> Self {
        self.fallback = Some(target);
        self
    }

    pub fn target_for(&self, condition: &Condition) -> Result<&GaussianTarget, VelocityError> {
        match condition {
            Condition::Null => self
                .null_target
                .as_ref()
                .ok_or_else(|| VelocityError::UnknownCondition(condition.to_string())),
            Condition::Prompt(p) => {
                let head = p.split(',').next().unwrap_or("").trim();
                self.targets
                    .iter()
                    .find(|(k, _)| k == p)
                    .or_else(|| self.targets.iter().find(|(k, _)| k == head))
                    .map(|(_, t)| t)
                    .or(self.fallback.as_ref())
                    .ok_or_else(|| VelocityError::UnknownCondition(condition.to_string()))
            }
        }
    }
}

impl VelocityModel for AnalyticModel {
    fn evaluate(&self, z: &LatentGrid, t: f64, condition: &Condition) -> Result<LatentGrid, VelocityError> {
        if z.channels() != self.channels {
            return Err(VelocityError::InvalidTarget(format!(
                "model has {} channels, latent has {}",
                self.channels,
                z.channels()
            )));
        }
        analytic_gaussian_velocity(z, t, self.target_for(condition)?)
    }

    fn channels(&self) -> Option<usize> {
        Some(self.channels)
    }

    fn info(&self) -> ModelInfo {
        ModelInfo {
            name: self.name.clone(),
            deterministic: true,
        }
    }
}

/// Spatially constant per-channel velocities keyed by condition. Conditions
/// without an entry get zero.
#[derive(Debug, Clone, Default)]
pub struct ConstantModel {
    values: BTreeMap<Condition, Vec<f64>>,
}

impl ConstantModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with(mut self, condition: Condition, per_channel: Vec<f64>) -> Self {
        self.values.insert(condition, per_channel);
        self
    }
}

impl VelocityModel for ConstantModel {
    fn evaluate(&self, z: &LatentGrid, t: f64, condition: &Condition) -> Result<LatentGrid, VelocityError> {
        check_time(t)?;
        let Some(v) = self.values.get(condition) else {
            return Ok(LatentGrid::zeros(z.shape()));
        };
        Ok(LatentGrid::from_fn(z.shape(), |c, _, _| v[if v.len() == 1 { 0 } else { c }]))
    }

    fn channels(&self) -> Option<usize> {
        None
    }

    fn info(&self) -> ModelInfo {
        ModelInfo {
            name: "constant".into(),
            deterministic: true,
        }
    }
}
