//! HTTP client for an external velocity backend.
//!
//! `POST /v1/velocity`, `POST /v1/decode` and `POST /v1/health`, all JSON.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{decode_tensor, encode_tensor};
use super::{check_output, check_time, Condition, ModelInfo, VelocityError, VelocityModel};
use crate::latent::LatentGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityRequest {
    pub shape: [usize; 3],
    pub latent_b64: String,
    pub t: f64,
    pub prompt: Option<String>,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityResponse {
    pub shape: [usize; 3],
    pub velocity_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub shape: [usize; 3],
    pub latent_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub ok: bool,
    pub channels: usize,
}

impl VelocityRequest {
    pub fn new(z: &LatentGrid, t: f64, condition: &Condition, model: &str) -> Self {
        Self {
            shape: z.shape().as_array(),
            latent_b64: encode_tensor(z),
            t,
            prompt: condition.as_prompt().map(str::to_owned),
            model: model.to_owned(),
        }
    }
}

impl VelocityResponse {
    /// Decodes the payload, checking it against the request shape.
    pub fn into_grid(self, expected: [usize; 3]) -> Result<LatentGrid, VelocityError> {
        if self.shape != expected {
            return Err(VelocityError::ShapeMismatch {
                expected,
                found: self.shape,
            });
        }
        let grid = decode_tensor(self.shape, &self.velocity_b64)?;
        if !grid.is_finite() {
            return Err(VelocityError::NonFinite);
        }
        Ok(grid)
    }
}

/// Velocity model served over the wire protocol. The underlying agent pools
/// connections and is safe to share across threads.
#[derive(Debug, Clone)]
pub struct RemoteVelocityModel {
    base_url: String,
    model: String,
    channels: Option<usize>,
    agent: ureq::Agent,
}

impl RemoteVelocityModel {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        Self {
            base_url: endpoint.into().trim_end_matches('/').to_owned(),
            model: model.into(),
            channels: None,
            agent,
        }
    }

    /// Queries `/v1/health` and records the backend's channel count.
    pub fn connect(mut self) -> Result<Self, VelocityError> {
        let health = self.health()?;
        if !health.ok {
            return Err(VelocityError::Protocol("backend reports not ok".into()));
        }
        self.channels = Some(health.channels);
        Ok(self)
    }

    /// Channel count from the last successful [`connect`](Self::connect).
    pub fn channels(&self) -> Option<usize> {
        self.channels
    }

    pub fn endpoint(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, VelocityError> {
        let url = format!("{}{}", self.base_url, path);
        let payload = serde_json::to_vec(body).map_err(|e| VelocityError::Protocol(e.to_string()))?;
        let mut response = self
            .agent
            .post(&url)
            .content_type("application/json")
            .send(&payload[..])
            .map_err(map_ureq)?;
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| VelocityError::Protocol(format!("{path}: {e}")))
    }

    pub fn health(&self) -> Result<HealthResponse, VelocityError> {
        self.post("/v1/health", &serde_json::json!({}))
    }

    /// Decodes a latent to PNG bytes through `/v1/decode`.
    pub fn decode_png(&self, z: &LatentGrid) -> Result<Vec<u8>, VelocityError> {
        use base64::Engine;
        let resp: DecodeResponse = self.post(
            "/v1/decode",
            &DecodeRequest {
                shape: z.shape().as_array(),
                latent_b64: encode_tensor(z),
            },
        )?;
        base64::engine::general_purpose::STANDARD
            .decode(resp.png_b64)
            .map_err(|e| VelocityError::Protocol(format!("invalid png base64: {e}")))
    }
}

fn map_ureq(err: ureq::Error) -> VelocityError {
    match err {
        ureq::Error::StatusCode(status) => VelocityError::Http { status },
        other => VelocityError::Transport(other.to_string()),
    }
}

impl VelocityModel for RemoteVelocityModel {
    fn evaluate(&self, z: &LatentGrid, t: f64, condition: &Condition) -> Result<LatentGrid, VelocityError> {
        check_time(t)?;
        let request = VelocityRequest::new(z, t, condition, &self.model);
        let response: VelocityResponse = self.post("/v1/velocity", &request)?;
        let grid = response.into_grid(request.shape)?;
        check_output(z.shape(), &grid)?;
        Ok(grid)
    }

    fn channels(&self) -> Option<usize> {
        self.channels
    }

    fn info(&self) -> ModelInfo {
        ModelInfo {
            name: format!("remote:{}", self.model),
            deterministic: false,
        }
    }
}
