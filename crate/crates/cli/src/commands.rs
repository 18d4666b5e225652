//! The three subcommands. Each returns a JSON summary for standard output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::{json, Value};

use regionpost_agents::{run_design_loop, ChatClient, LiveClient, MockClient};
use regionpost_core::geometry::{load_mask_file, RegionSet};
use regionpost_core::metrics::{
    default_style_extractor, metrics_report, rgb_to_grid, FeaturesFile, MetricsError, MetricsReport, StyleSource,
};
use regionpost_core::render::{encode_png, toy_decode};
use regionpost_core::sampler::{run_sampler, SamplerConfig, SamplerMode};
use regionpost_core::toy::ToyTargets;
use regionpost_core::velocity::RemoteVelocityModel;

use crate::config::{ClientKind, LoadedConfig};
use crate::failure::{Classify, Failure, FailureKind};
use crate::synth::{Backend, Synth};

pub const ARTIFACTS: [&str; 5] = ["poster.png", "layout.json", "trace.jsonl", "metrics.json", "loop_log.json"];
pub const ERROR_FILE: &str = "error.json";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4o";

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure::new(FailureKind::Config, anyhow!("{msg}"))
}

/// Mask, downsampled to the latent grid when `scale > 1`.
fn load_masks(path: &Path, scale: usize) -> Result<(RegionSet, RegionSet), Failure> {
    let rs = load_mask_file(path)
        .with_context(|| format!("loading mask {}", path.display()))
        .config_err()?;
    if scale == 1 {
        return Ok((rs.clone(), rs));
    }
    if rs.width() % scale != 0 || rs.height() % scale != 0 {
        return Err(config_error(format!(
            "mask is {}x{}, not a multiple of latent_scale {scale}",
            rs.width(),
            rs.height()
        )));
    }
    let latent = rs
        .downsample(rs.width() / scale, rs.height() / scale)
        .context("downsampling mask to the latent grid")
        .config_err()?;
    Ok((rs, latent))
}

pub struct GenerateArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Value, Failure> {
    let mut loaded = LoadedConfig::load(&args.config).config_err()?;
    if let Some(seed) = args.seed {
        loaded.config.seed = Some(seed);
    }
    if let Err(errs) = loaded.config.validate() {
        return Err(config_error(format!("invalid config: {}", errs.join("; "))));
    }
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| loaded.resolve(&loaded.config.paths.output_dir));
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("output directory {} is not writable", out_dir.display()))
        .config_err()?;

    match generate_artifacts(&loaded) {
        Ok((files, summary)) => {
            let _ = fs::remove_file(out_dir.join(ERROR_FILE));
            for name in ARTIFACTS {
                let _ = fs::remove_file(out_dir.join(name));
            }
            for (name, bytes) in files {
                let path = out_dir.join(name);
                fs::write(&path, bytes)
                    .with_context(|| format!("writing {}", path.display()))
                    .pipeline_err()?;
            }
            Ok(json!({ "output_dir": out_dir, "summary": summary }))
        }
        Err(failure) => {
            for name in ARTIFACTS {
                let _ = fs::remove_file(out_dir.join(name));
            }
            let _ = fs::write(out_dir.join(ERROR_FILE), pretty(&failure.to_json()));
            Err(failure)
        }
    }
}

type Artifacts = (Vec<(&'static str, Vec<u8>)>, Value);

fn generate_artifacts(loaded: &LoadedConfig) -> Result<Artifacts, Failure> {
    let cfg = &loaded.config;
    let (rs, latent_rs) = load_masks(&loaded.resolve(&cfg.paths.mask), cfg.latent_scale)?;

    let client: Box<dyn ChatClient> = match cfg.agents.client {
        ClientKind::Mock => {
            let fixture = loaded.resolve(cfg.agents.fixture.as_deref().expect("validated"));
            Box::new(MockClient::load(&fixture).config_err()?)
        }
        ClientKind::Live => {
            let endpoint = cfg.agents.endpoint.clone().expect("validated");
            let model = cfg.agents.model.clone().unwrap_or_else(|| DEFAULT_CHAT_MODEL.into());
            Box::new(LiveClient::from_env(endpoint, model).config_err()?)
        }
    };

    let mut sampler = cfg.effective_sampler();
    let backend = match (&cfg.model.analytic, &cfg.model.remote) {
        (Some(spec), _) => {
            sampler.channels = spec.channels;
            Backend::Analytic(spec.clone())
        }
        (None, Some(remote)) => {
            let model = RemoteVelocityModel::new(&remote.endpoint, &remote.model_id)
                .connect()
                .with_context(|| format!("connecting to {}", remote.endpoint))
                .pipeline_err()?;
            sampler.channels = model.channels().expect("connected");
            Backend::Remote(model)
        }
        (None, None) => unreachable!("validated"),
    };
    let mut synth = Synth {
        latent_rs: &latent_rs,
        width: rs.width() as u32,
        height: rs.height() as u32,
        backend: &backend,
        sampler,
    };

    let outcome = match run_design_loop(&cfg.description, &rs, &mut synth, cfg.agents.loop_config, client.as_ref()) {
        Ok(o) => o,
        Err(e) => {
            let log = serde_json::to_value(&e.log).unwrap_or(Value::Null);
            return Err(Failure::pipeline(e).with_details(json!({ "loop_log": log })));
        }
    };

    let metrics = if cfg.metrics.enabled {
        let features = match &cfg.metrics.features {
            Some(p) => Some(FeaturesFile::load(&loaded.resolve(p)).config_err()?),
            None => None,
        };
        let report = compute_metrics(&outcome.output.image, &rs, cfg.metrics.bgd_strip, features.as_ref())?;
        serde_json::to_value(report).expect("serializable")
    } else {
        json!({ "skipped": true })
    };

    let mut files: Vec<(&'static str, Vec<u8>)> = vec![
        ("poster.png", outcome.output.png.clone()),
        ("layout.json", pretty(&outcome.layout).into_bytes()),
        ("metrics.json", pretty(&metrics).into_bytes()),
        ("loop_log.json", pretty(&outcome.log).into_bytes()),
    ];
    if cfg.trace {
        files.push(("trace.jsonl", outcome.output.trace.to_jsonl().into_bytes()));
    }
    let summary = json!({
        "approved": outcome.log.approved,
        "selected_iteration": outcome.log.selected_iteration,
        "sampler_runs": outcome.log.sampler_runs,
        "bgd": metrics.get("bgd"),
        "rsd": metrics.get("rsd"),
    });
    Ok((files, summary))
}

fn compute_metrics(
    image: &image::RgbImage,
    rs: &RegionSet,
    strip: usize,
    features: Option<&FeaturesFile>,
) -> Result<MetricsReport, Failure> {
    let grid = rgb_to_grid(image);
    let extractor = default_style_extractor();
    let style = match features {
        Some(f) => StyleSource::File(f),
        None => StyleSource::Extractor(&extractor),
    };
    metrics_report(&grid, rs, strip, style).map_err(|e| match e {
        MetricsError::SizeMismatch { .. } | MetricsError::InvalidStrip => Failure::new(FailureKind::Config, e),
        other => Failure::pipeline(other),
    })
}

pub struct SampleToyArgs {
    pub mask: PathBuf,
    pub targets: PathBuf,
    pub steps: Option<usize>,
    pub tau: Option<usize>,
    pub r_frac: Option<f64>,
    pub w: Option<f64>,
    pub eta: Option<f64>,
    pub mode: Option<SamplerMode>,
    pub seed: Option<u64>,
    pub scale: usize,
    pub out: PathBuf,
}

impl SampleToyArgs {
    pub fn sampler_config(&self, channels: usize) -> SamplerConfig {
        let mut c = SamplerConfig {
            channels,
            ..SamplerConfig::default()
        };
        if let Some(n) = self.steps {
            c.total_steps = n;
            c.tau = c.tau.min(n);
        }
        if let Some(t) = self.tau {
            c.tau = t;
        }
        if let Some(r) = self.r_frac {
            c.r_fraction = r;
        }
        if let Some(w) = self.w {
            c.guidance_weight = w;
        }
        if let Some(e) = self.eta {
            c.eta = e;
        }
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }
}

pub fn cmd_sample_toy(args: &SampleToyArgs) -> Result<Value, Failure> {
    if args.scale == 0 {
        return Err(config_error("--scale must be at least 1"));
    }
    let (rs, latent_rs) = load_masks(&args.mask, args.scale)?;
    let text = fs::read_to_string(&args.targets)
        .with_context(|| format!("reading {}", args.targets.display()))
        .config_err()?;
    let targets: ToyTargets = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.targets.display()))
        .config_err()?;
    let cfg = args.sampler_config(targets.channels);
    cfg.validate().config_err()?;
    let (model, conds) = targets.build(&latent_rs).config_err()?;

    let (z, mut trace) = run_sampler(&latent_rs, &conds, &model, &cfg).pipeline_err()?;
    let (img, map) = toy_decode(&z, rs.width(), rs.height());
    trace.header.insert("affine_map".into(), serde_json::to_value(&map).expect("serializable"));
    trace.header.insert("sampler".into(), serde_json::to_value(&cfg).expect("serializable"));
    trace.header.insert("latent_shape".into(), json!(z.shape().as_array()));

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .config_err()?;
    let image_path = args.out.join("sample.png");
    let trace_path = args.out.join("trace.jsonl");
    let png = encode_png(&img).pipeline_err()?;
    fs::write(&image_path, png).pipeline_err()?;
    fs::write(&trace_path, trace.to_jsonl()).pipeline_err()?;
    Ok(json!({
        "image": image_path,
        "trace": trace_path,
        "stage1_steps": trace.stage_count(1),
        "stage2_steps": trace.stage_count(2),
        "affine_map": map,
    }))
}

pub struct MetricsArgs {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub features: Option<PathBuf>,
    pub bgd_strip: usize,
    pub out: PathBuf,
}

pub fn cmd_metrics(args: &MetricsArgs) -> Result<Value, Failure> {
    let img = image::open(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))
        .config_err()?
        .to_rgb8();
    let rs = load_mask_file(&args.mask)
        .with_context(|| format!("loading mask {}", args.mask.display()))
        .config_err()?;
    if img.dimensions() != (rs.width() as u32, rs.height() as u32) {
        return Err(config_error(format!(
            "image is {}x{} but mask is {}x{}",
            img.width(),
            img.height(),
            rs.width(),
            rs.height()
        )));
    }
    let features = match &args.features {
        Some(p) => Some(FeaturesFile::load(p).config_err()?),
        None => None,
    };
    let report = compute_metrics(&img, &rs, args.bgd_strip, features.as_ref())?;
    let value = serde_json::to_value(&report).expect("serializable");
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).config_err()?;
    }
    fs::write(&args.out, pretty(&value))
        .with_context(|| format!("writing {}", args.out.display()))
        .pipeline_err()?;
    Ok(value)
}
