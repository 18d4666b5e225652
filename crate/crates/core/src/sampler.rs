//! Two-stage region sampler.
//!
//! Steps `1..=τ` denoise one full-canvas latent per region under its own
//! prompt and nudge all of them with boundary guidance. At step `τ` the
//! latents are composed through the region masks, and steps `τ+1..=N`
//! denoise the single composed latent with distance-weighted blending of
//! neighbouring regions' predictions and multi-region CFG.
//!
//! The time grid is uniform, `t_k = 1 - k/N`, so step `k` moves from
//! `t_{k-1}` to `t_k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{margin_for, DistanceField, GeometryError, RegionId, RegionSet};
use crate::guidance::{apply_guidance, GuidanceError, GuidancePlan, DEFAULT_STRIP_WIDTH};
use crate::latent::{LatentGrid, Shape};
use crate::layout::LayoutSpec;
use crate::velocity::{condition_lookup, Condition, VelocityError, VelocityModel};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("model failed at step {step}{}: {source}", region_suffix(*.region))]
    Model {
        step: usize,
        region: Option<RegionId>,
        #[source]
        source: VelocityError,
    },
    #[error("non-finite latent after step {step}")]
    NonFinite { step: usize },
    #[error("expected {expected} region conditions, got {found}")]
    ConditionCount { expected: usize, found: usize },
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Velocity(#[from] VelocityError),
}

fn region_suffix(region: Option<RegionId>) -> String {
    region.map(|r| format!(" (region {r})")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Euler steps on the velocity ODE.
    #[default]
    Ode,
    /// DDPM-style ancestral update with the aggregated prediction as `ε̂`.
    Ancestral,
}

impl std::str::FromStr for SamplerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ode" => Ok(SamplerMode::Ode),
            "ancestral" => Ok(SamplerMode::Ancestral),
            other => Err(format!("unknown sampler mode {other:?} (expected ode or ancestral)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// `N`.
    pub total_steps: usize,
    /// Number of independent per-region steps before composition.
    pub tau: usize,
    /// Blend margin as a fraction of the shorter latent side.
    pub r_fraction: f64,
    /// CFG weight `w`.
    pub guidance_weight: f64,
    /// Boundary guidance step `η`.
    pub eta: f64,
    pub strip_width: usize,
    pub mode: SamplerMode,
    pub seed: u64,
    pub channels: usize,
    /// Apply CFG with weight `w` to the stage-1 velocities as well.
    pub stage1_cfg: bool,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Keep a copy of the latent(s) after every step in the trace.
    pub record_latents: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            total_steps: 50,
            tau: 10,
            r_fraction: 1.0 / 32.0,
            guidance_weight: 3.0,
            eta: 0.1,
            strip_width: DEFAULT_STRIP_WIDTH,
            mode: SamplerMode::Ode,
            seed: 0,
            channels: 4,
            stage1_cfg: true,
            beta_start: 1e-4,
            beta_end: 0.02,
            record_latents: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |m: String| Err(SamplerError::Config(m));
        if self.total_steps == 0 {
            return fail("total_steps must be >= 1".into());
        }
        if self.tau > self.total_steps {
            return fail(format!("tau {} exceeds total_steps {}", self.tau, self.total_steps));
        }
        if !(self.guidance_weight >= 0.0) || !self.guidance_weight.is_finite() {
            return fail(format!("guidance_weight must be finite and >= 0, got {}", self.guidance_weight));
        }
        if !(self.r_fraction > 0.0 && self.r_fraction <= 1.0) {
            return fail(format!("r_fraction must be in (0, 1], got {}", self.r_fraction));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return fail(format!("eta must be finite and >= 0, got {}", self.eta));
        }
        if self.strip_width == 0 {
            return fail("strip_width must be >= 1".into());
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        let betas_ok = self.beta_start > 0.0 && self.beta_end < 1.0 && self.beta_start <= self.beta_end;
        if !betas_ok {
            return fail(format!(
                "beta schedule must satisfy 0 < start <= end < 1, got {}..{}",
                self.beta_start, self.beta_end
            ));
        }
        Ok(())
    }

    pub fn time_at(&self, k: usize) -> f64 {
        1.0 - k as f64 / self.total_steps as f64
    }
}

static NULL_CONDITION: Condition = Condition::Null;

/// Prompt per region id plus the shared unconditional condition.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionConditions {
    prompts: Vec<Condition>,
}

impl RegionConditions {
    pub fn new(prompts: Vec<Condition>) -> Self {
        Self { prompts }
    }

    pub fn from_layout(layout: &LayoutSpec, rs: &RegionSet) -> Result<Self, VelocityError> {
        let prompts = rs
            .region_ids()
            .iter()
            .map(|&id| condition_lookup(layout, id))
            .collect::<Result<_, _>>()?;
        Ok(Self { prompts })
    }

    pub fn get(&self, id: RegionId) -> &Condition {
        &self.prompts[id as usize]
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn null(&self) -> &Condition {
        &NULL_CONDITION
    }
}

/// Shared starting latent, `ε ~ N(0, I)` drawn from `ChaCha8Rng(seed)` in
/// row-major order.
pub fn initial_noise(shape: Shape, seed: u64) -> LatentGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_fill(shape, &mut rng)
}

fn gaussian_fill(shape: Shape, rng: &mut ChaCha8Rng) -> LatentGrid {
    let data = (0..shape.len()).map(|_| StandardNormal.sample(rng)).collect();
    LatentGrid::from_vec(shape, data).expect("length matches shape")
}

/// `u + w (c - u)`.
pub fn cfg_combine(uncond: &LatentGrid, cond: &LatentGrid, w: f64) -> LatentGrid {
    let data = uncond
        .as_slice()
        .iter()
        .zip(cond.as_slice())
        .map(|(&u, &c)| u + w * (c - u))
        .collect();
    LatentGrid::from_vec(uncond.shape(), data).expect("same shape")
}

fn euler(z: &LatentGrid, dt: f64, v: &LatentGrid) -> LatentGrid {
    let data = z.as_slice().iter().zip(v.as_slice()).map(|(&a, &b)| a - dt * b).collect();
    LatentGrid::from_vec(z.shape(), data).expect("same shape")
}

fn eval(
    model: &dyn VelocityModel,
    z: &LatentGrid,
    t: f64,
    c: &Condition,
    step: usize,
    region: Option<RegionId>,
) -> Result<LatentGrid, SamplerError> {
    model
        .evaluate(z, t, c)
        .map_err(|source| SamplerError::Model { step, region, source })
}

/// One record per denoising step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Time at the start of the step.
    pub t: f64,
    pub stage: u8,
    /// Boundary loss of the stage-1 latents after the step; absent in stage 2.
    pub l_grad: Option<f64>,
    /// Per-region norm of the velocity that moved the region's pixels.
    pub per_region_vnorm: Vec<f64>,
    /// Per-region norm of the unconditional velocity over the same pixels.
    pub per_region_uncond_vnorm: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerTrace {
    pub header: serde_json::Map<String, serde_json::Value>,
    pub records: Vec<StepRecord>,
    /// Initial latent followed by one composite per step, when recorded.
    pub snapshots: Vec<LatentGrid>,
}

impl SamplerTrace {
    /// Header line (if any) followed by one JSON object per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if !self.header.is_empty() {
            let header = serde_json::json!({ "header": self.header });
            out.push_str(&header.to_string());
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn stage_count(&self, stage: u8) -> usize {
        self.records.iter().filter(|r| r.stage == stage).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub l_grad: Option<f64>,
    pub per_region_vnorm: Vec<f64>,
    pub per_region_uncond_vnorm: Vec<f64>,
}

/// Region-local context reused across steps: masks, guidance plan and
/// distance fields.
#[derive(Debug, Clone)]
pub struct SamplerContext {
    pub masks: Vec<Vec<bool>>,
    pub plan: GuidancePlan,
    pub fields: BlendFields,
}

impl SamplerContext {
    pub fn new(rs: &RegionSet, cfg: &SamplerConfig) -> Result<Self, SamplerError> {
        Ok(Self {
            masks: rs.region_ids().iter().map(|&id| rs.mask(id)).collect(),
            plan: GuidancePlan::new(rs, cfg.strip_width)?,
            fields: BlendFields::new(rs, margin_for(rs.height(), rs.width(), cfg.r_fraction))?,
        })
    }
}

/// Stage-1 step: every region latent takes its own Euler step, then all of
/// them take one joint guidance step.
#[allow(clippy::too_many_arguments)]
pub fn stage1_step(
    latents: &[LatentGrid],
    step: usize,
    t: f64,
    dt: f64,
    conditions: &RegionConditions,
    model: &dyn VelocityModel,
    ctx: &SamplerContext,
    cfg: &SamplerConfig,
) -> Result<(Vec<LatentGrid>, StepStats), SamplerError> {
    let mut moved = Vec::with_capacity(latents.len());
    let mut vnorm = Vec::with_capacity(latents.len());
    let mut unorm = Vec::with_capacity(latents.len());
    for (i, z) in latents.iter().enumerate() {
        let id = i as RegionId;
        let cond = eval(model, z, t, conditions.get(id), step, Some(id))?;
        let v = if cfg.stage1_cfg {
            let uncond = eval(model, z, t, conditions.null(), step, Some(id))?;
            unorm.push(uncond.masked_norm(&ctx.masks[i]));
            cfg_combine(&uncond, &cond, cfg.guidance_weight)
        } else {
            cond
        };
        vnorm.push(v.masked_norm(&ctx.masks[i]));
        moved.push(euler(z, dt, &v));
    }
    if cfg.eta > 0.0 && ctx.plan.boundary_count() > 0 {
        let (_, grads) = ctx.plan.loss_and_gradient(&moved)?;
        moved = moved
            .iter()
            .zip(&grads)
            .map(|(z, g)| apply_guidance(z, g, cfg.eta))
            .collect::<Result<_, _>>()?;
    }
    if moved.iter().any(|z| !z.is_finite()) {
        return Err(SamplerError::NonFinite { step });
    }
    let l_grad = ctx.plan.loss(&moved)?;
    Ok((
        moved,
        StepStats {
            l_grad: Some(l_grad),
            per_region_vnorm: vnorm,
            per_region_uncond_vnorm: unorm,
        },
    ))
}

/// `z = Σ_i ẑ_i ⊙ M_i`, evaluated as a per-pixel selection.
pub fn compose_latents(latents: &[LatentGrid], rs: &RegionSet) -> Result<LatentGrid, SamplerError> {
    if latents.len() != rs.region_count() {
        return Err(GuidanceError::LatentCount {
            expected: rs.region_count(),
            found: latents.len(),
        }
        .into());
    }
    let shape = latents[0].shape();
    for (i, z) in latents.iter().enumerate() {
        if z.shape() != shape || shape.width != rs.width() || shape.height != rs.height() {
            return Err(GuidanceError::LatentSize(i as RegionId).into());
        }
    }
    let labels = rs.labels();
    let plane = shape.plane();
    let data = (0..shape.len())
        .map(|flat| latents[labels[flat % plane] as usize].as_slice()[flat])
        .collect();
    Ok(LatentGrid::from_vec(shape, data).expect("length matches"))
}

/// Clipped distance fields for every ordered adjacent pair, sharing one
/// margin `r`.
#[derive(Debug, Clone)]
pub struct BlendFields {
    margin: f64,
    /// `fields[i]` follows the order of `rs.neighbors(i)`.
    fields: Vec<Vec<DistanceField>>,
}

impl BlendFields {
    pub fn new(rs: &RegionSet, margin: f64) -> Result<Self, GeometryError> {
        let fields = rs
            .region_ids()
            .iter()
            .map(|&i| {
                rs.neighbors(i)
                    .iter()
                    .map(|&j| rs.distance_field(i, j, margin))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { margin, fields })
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn of(&self, region: RegionId) -> &[DistanceField] {
        &self.fields[region as usize]
    }
}

/// Blend weights `((r+d)/2r, (r-d)/2r)` for a clipped distance `d`.
pub fn blend_weights(d: f64, r: f64) -> (f64, f64) {
    ((r + d) / (2.0 * r), (r - d) / (2.0 * r))
}

/// `ε̂_ij` from already evaluated velocities.
pub fn blend_velocities(v_i: &LatentGrid, v_j: &LatentGrid, field: &DistanceField) -> LatentGrid {
    let plane = v_i.shape().plane();
    let r = field.margin();
    let data = v_i
        .as_slice()
        .iter()
        .zip(v_j.as_slice())
        .enumerate()
        .map(|(flat, (&a, &b))| {
            let (wi, wj) = blend_weights(field.at(flat % plane), r);
            wi * a + wj * b
        })
        .collect();
    LatentGrid::from_vec(v_i.shape(), data).expect("same shape")
}

/// Evaluates the model under `P_i` and `P_j` on the full canvas and blends.
#[allow(clippy::too_many_arguments)]
pub fn blended_velocity(
    z: &LatentGrid,
    t: f64,
    i: RegionId,
    j: RegionId,
    field: &DistanceField,
    model: &dyn VelocityModel,
    conditions: &RegionConditions,
) -> Result<LatentGrid, VelocityError> {
    let v_i = model.evaluate(z, t, conditions.get(i))?;
    let v_j = model.evaluate(z, t, conditions.get(j))?;
    Ok(blend_velocities(&v_i, &v_j, field))
}

/// Velocities of one stage-2 step: one unconditional call plus one per region.
#[derive(Debug, Clone)]
pub struct VelocityCache {
    pub uncond: LatentGrid,
    pub cond: Vec<LatentGrid>,
}

impl VelocityCache {
    pub fn evaluate(
        z: &LatentGrid,
        t: f64,
        step: usize,
        conditions: &RegionConditions,
        model: &dyn VelocityModel,
    ) -> Result<Self, SamplerError> {
        let uncond = eval(model, z, t, conditions.null(), step, None)?;
        let cond = (0..conditions.len())
            .map(|i| eval(model, z, t, conditions.get(i as RegionId), step, Some(i as RegionId)))
            .collect::<Result<_, _>>()?;
        Ok(Self { uncond, cond })
    }
}

/// `ε̂_i = v_∅ + (w/|A(i)|) Σ_j (ε̂_ij - v_∅)`, or plain CFG on `P_i` when
/// region `i` has no neighbours.
pub fn aggregate_guided_velocity(
    cache: &VelocityCache,
    i: RegionId,
    neighbors: &[RegionId],
    fields: &[DistanceField],
    w: f64,
) -> LatentGrid {
    let v_i = &cache.cond[i as usize];
    if neighbors.is_empty() {
        return cfg_combine(&cache.uncond, v_i, w);
    }
    let u = cache.uncond.as_slice();
    let mut acc = vec![0.0; u.len()];
    for (&j, field) in neighbors.iter().zip(fields) {
        let e = blend_velocities(v_i, &cache.cond[j as usize], field);
        for ((a, &x), &y) in acc.iter_mut().zip(e.as_slice()).zip(u) {
            *a += x - y;
        }
    }
    let scale = w / neighbors.len() as f64;
    let data = u.iter().zip(&acc).map(|(&y, &a)| y + scale * a).collect();
    LatentGrid::from_vec(cache.uncond.shape(), data).expect("same shape")
}

/// Linear-β DDPM schedule indexed by `n = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct AncestralSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl AncestralSchedule {
    pub fn linear(n: usize, beta_start: f64, beta_end: f64) -> Self {
        let betas: Vec<f64> = (0..n)
            .map(|k| {
                if n == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * k as f64 / (n - 1) as f64
                }
            })
            .collect();
        let mut prod = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                prod *= 1.0 - b;
                prod
            })
            .collect();
        Self { betas, alpha_bars }
    }

    /// `(α_n, ᾱ_n, σ_n)`, with `σ_0 = 0`.
    pub fn coefficients(&self, n: usize) -> (f64, f64, f64) {
        let beta = self.betas[n];
        let abar = self.alpha_bars[n];
        let sigma = if n == 0 {
            0.0
        } else {
            (beta * (1.0 - self.alpha_bars[n - 1]) / (1.0 - abar)).sqrt()
        };
        (1.0 - beta, abar, sigma)
    }
}

/// Per-pixel selection of the region predictions: `Σ_i ε̂_i ⊙ M_i`.
fn masked_sum(per_region: &[LatentGrid], rs: &RegionSet) -> LatentGrid {
    let shape = per_region[0].shape();
    let plane = shape.plane();
    let labels = rs.labels();
    let data = (0..shape.len())
        .map(|flat| per_region[labels[flat % plane] as usize].as_slice()[flat])
        .collect();
    LatentGrid::from_vec(shape, data).expect("length matches")
}

/// Stage-2 step on the composed latent.
#[allow(clippy::too_many_arguments)]
pub fn stage2_step(
    z: &LatentGrid,
    step: usize,
    t: f64,
    dt: f64,
    rs: &RegionSet,
    conditions: &RegionConditions,
    model: &dyn VelocityModel,
    ctx: &SamplerContext,
    cfg: &SamplerConfig,
    ancestral: Option<(&AncestralSchedule, &mut ChaCha8Rng)>,
) -> Result<(LatentGrid, StepStats), SamplerError> {
    let cache = VelocityCache::evaluate(z, t, step, conditions, model)?;
    let per_region: Vec<LatentGrid> = rs
        .region_ids()
        .iter()
        .map(|&i| aggregate_guided_velocity(&cache, i, rs.neighbors(i), ctx.fields.of(i), cfg.guidance_weight))
        .collect();
    let stats = StepStats {
        l_grad: None,
        per_region_vnorm: per_region.iter().zip(&ctx.masks).map(|(e, m)| e.masked_norm(m)).collect(),
        per_region_uncond_vnorm: ctx.masks.iter().map(|m| cache.uncond.masked_norm(m)).collect(),
    };
    let eps = masked_sum(&per_region, rs);
    let next = match ancestral {
        None => euler(z, dt, &eps),
        Some((schedule, rng)) => {
            let n = cfg.total_steps - step;
            let (alpha, abar, sigma) = schedule.coefficients(n);
            let c_eps = (1.0 - alpha) / (1.0 - abar).sqrt();
            let inv = 1.0 / alpha.sqrt();
            let mut out: Vec<f64> = z
                .as_slice()
                .iter()
                .zip(eps.as_slice())
                .map(|(&zz, &e)| inv * (zz - c_eps * e))
                .collect();
            if sigma > 0.0 {
                for o in out.iter_mut() {
                    let xi: f64 = StandardNormal.sample(rng);
                    *o += sigma * xi;
                }
            }
            LatentGrid::from_vec(z.shape(), out).expect("same shape")
        }
    };
    if !next.is_finite() {
        return Err(SamplerError::NonFinite { step });
    }
    Ok((next, stats))
}

/// Full two-stage schedule on `rs` (at latent resolution).
pub fn run_sampler(
    rs: &RegionSet,
    conditions: &RegionConditions,
    model: &dyn VelocityModel,
    cfg: &SamplerConfig,
) -> Result<(LatentGrid, SamplerTrace), SamplerError> {
    cfg.validate()?;
    if conditions.len() != rs.region_count() {
        return Err(SamplerError::ConditionCount {
            expected: rs.region_count(),
            found: conditions.len(),
        });
    }
    let ctx = SamplerContext::new(rs, cfg)?;
    let shape = Shape::new(cfg.channels, rs.height(), rs.width());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = gaussian_fill(shape, &mut rng);
    let schedule = AncestralSchedule::linear(cfg.total_steps, cfg.beta_start, cfg.beta_end);

    let mut trace = SamplerTrace::default();
    if cfg.record_latents {
        trace.snapshots.push(noise.clone());
    }
    let mut latents = vec![noise; rs.region_count()];
    for step in 1..=cfg.tau {
        let (t, t_next) = (cfg.time_at(step - 1), cfg.time_at(step));
        let (next, stats) = stage1_step(&latents, step, t, t - t_next, conditions, model, &ctx, cfg)?;
        latents = next;
        if cfg.record_latents {
            trace.snapshots.push(compose_latents(&latents, rs)?);
        }
        trace.records.push(record(step, t, 1, stats));
    }
    let mut z = compose_latents(&latents, rs)?;
    drop(latents);
    for step in cfg.tau + 1..=cfg.total_steps {
        let (t, t_next) = (cfg.time_at(step - 1), cfg.time_at(step));
        let ancestral = match cfg.mode {
            SamplerMode::Ode => None,
            SamplerMode::Ancestral => Some((&schedule, &mut rng)),
        };
        let (next, stats) = stage2_step(&z, step, t, t - t_next, rs, conditions, model, &ctx, cfg, ancestral)?;
        z = next;
        if cfg.record_latents {
            trace.snapshots.push(z.clone());
        }
        trace.records.push(record(step, t, 2, stats));
    }
    Ok((z, trace))
}

fn record(step: usize, t: f64, stage: u8, stats: StepStats) -> StepRecord {
    StepRecord {
        step,
        t,
        stage,
        l_grad: stats.l_grad,
        per_region_vnorm: stats.per_region_vnorm,
        per_region_uncond_vnorm: stats.per_region_uncond_vnorm,
    }
}
