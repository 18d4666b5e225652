//! Run configuration: one JSON file, relative paths resolved against the
//! file's directory, command-line flags applied on top.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use regionpost_agents::LoopConfig;
use regionpost_core::sampler::SamplerConfig;
use regionpost_core::toy::AnalyticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub description: String,
    /// Overrides `sampler.seed` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub paths: Paths,
    /// Mask pixels per latent cell along each axis.
    #[serde(default = "default_latent_scale")]
    pub latent_scale: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub agents: AgentSettings,
    pub model: ModelSource,
    #[serde(default)]
    pub metrics: MetricsSettings,
    #[serde(default = "yes")]
    pub trace: bool,
}

fn default_latent_scale() -> usize {
    8
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub mask: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSettings {
    pub client: ClientKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSettings {
    pub endpoint: String,
    #[serde(default = "default_model_id")]
    pub model_id: String,
}

fn default_model_id() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    pub enabled: bool,
    pub bgd_strip: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            bgd_strip: regionpost_core::metrics::DEFAULT_BGD_STRIP,
            features: None,
        }
    }
}

/// A parsed config and the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

impl RunConfig {
    /// Sampler settings with the top-level seed applied.
    pub fn effective_sampler(&self) -> SamplerConfig {
        let mut s = self.sampler.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.description.trim().is_empty() {
            errs.push("description must not be empty".to_owned());
        }
        match (&self.model.analytic, &self.model.remote) {
            (Some(_), Some(_)) => errs.push("model: set exactly one of \"analytic\" and \"remote\", not both".into()),
            (None, None) => errs.push("model: set one of \"analytic\" or \"remote\"".into()),
            _ => {}
        }
        match self.agents.client {
            ClientKind::Mock if self.agents.fixture.is_none() => errs.push("agents: mock client needs \"fixture\"".into()),
            ClientKind::Live if self.agents.endpoint.is_none() => errs.push("agents: live client needs \"endpoint\"".into()),
            _ => {}
        }
        if self.latent_scale == 0 {
            errs.push("latent_scale must be at least 1".into());
        }
        if self.agents.loop_config.max_iterations == 0 {
            errs.push("agents.loop.max_iterations must be at least 1".into());
        }
        if self.metrics.bgd_strip == 0 {
            errs.push("metrics.bgd_strip must be at least 1".into());
        }
        let mut sampler = self.effective_sampler();
        if let Some(a) = &self.model.analytic {
            sampler.channels = a.channels;
        }
        if let Err(e) = sampler.validate() {
            errs.push(format!("sampler: {e}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "description": "d",
        "paths": {"mask": "m.png", "output_dir": "out"},
        "agents": {"client": "mock", "fixture": "f.json"},
        "model": {"analytic": {"channels": 1, "targets": {}, "fallback": {"mean": 0.0}}}
    }"#;

    #[test]
    fn defaults_and_round_trip() {
        let c: RunConfig = serde_json::from_str(MINIMAL).unwrap();
        assert_eq!(c.latent_scale, 8);
        assert_eq!(c.sampler, SamplerConfig::default());
        assert_eq!(c.agents.loop_config.max_iterations, 3);
        assert!(c.trace && c.metrics.enabled);
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn both_model_sources_rejected() {
        let mut c: RunConfig = serde_json::from_str(MINIMAL).unwrap();
        c.model.remote = Some(RemoteSettings {
            endpoint: "http://localhost:1".into(),
            model_id: "m".into(),
        });
        let errs = c.validate().unwrap_err();
        assert!(errs[0].contains("exactly one"));
    }

    #[test]
    fn client_requirements() {
        let mut c: RunConfig = serde_json::from_str(MINIMAL).unwrap();
        c.agents.fixture = None;
        assert!(c.validate().is_err());
        c.agents.client = ClientKind::Live;
        c.agents.endpoint = Some("http://x".into());
        c.validate().unwrap();
    }

    #[test]
    fn seed_override() {
        let mut c: RunConfig = serde_json::from_str(MINIMAL).unwrap();
        c.sampler.seed = 3;
        assert_eq!(c.effective_sampler().seed, 3);
        c.seed = Some(9);
        assert_eq!(c.effective_sampler().seed, 9);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"description\"", "\"colour\": 1, \"description\"");
        assert!(serde_json::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn relative_paths() {
        let l = LoadedConfig {
            config: serde_json::from_str(MINIMAL).unwrap(),
            base_dir: PathBuf::from("/cfg"),
        };
        assert_eq!(l.resolve(Path::new("m.png")), PathBuf::from("/cfg/m.png"));
        assert_eq!(l.resolve(Path::new("/abs")), PathBuf::from("/abs"));
    }
}
