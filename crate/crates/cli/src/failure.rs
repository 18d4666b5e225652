//! Exit-code classification and the machine-readable error report.

use serde_json::{json, Value};

use regionpost_agents::ChatError;
use regionpost_core::velocity::VelocityError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Pipeline,
    Backend,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 2,
            FailureKind::Pipeline => 3,
            FailureKind::Backend => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FailureKind::Config => "config",
            FailureKind::Pipeline => "pipeline",
            FailureKind::Backend => "backend_unreachable",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
    /// Extra structured context, such as the design loop log.
    pub details: Option<Value>,
}

impl Failure {
    pub fn new(kind: FailureKind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
            details: None,
        }
    }

    /// A pipeline failure, promoted to `Backend` when a transport error is
    /// anywhere in the cause chain.
    pub fn pipeline(error: impl Into<anyhow::Error>) -> Self {
        let error = error.into();
        let unreachable = error.chain().any(|e| {
            matches!(e.downcast_ref::<VelocityError>(), Some(VelocityError::Transport(_)))
                || matches!(e.downcast_ref::<ChatError>(), Some(ChatError::Transport(_)))
        });
        let kind = if unreachable {
            FailureKind::Backend
        } else {
            FailureKind::Pipeline
        };
        Self {
            kind,
            error,
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "error": {
                "kind": self.kind.name(),
                "exit_code": self.exit_code(),
                "message": self.error.to_string(),
                "causes": self.error.chain().skip(1).map(ToString::to_string).collect::<Vec<_>>(),
            }
        });
        if let Some(d) = &self.details {
            v["error"]["details"] = d.clone();
        }
        v
    }
}

pub trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn pipeline_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(FailureKind::Config, e))
    }

    fn pipeline_err(self) -> Result<T, Failure> {
        self.map_err(Failure::pipeline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn transport_anywhere_in_chain_is_backend() {
        let r: Result<(), VelocityError> = Err(VelocityError::Transport("refused".into()));
        let f = r.context("sampling").pipeline_err().unwrap_err();
        assert_eq!(f.exit_code(), 4);
        let r: Result<(), VelocityError> = Err(VelocityError::NonFinite);
        assert_eq!(r.pipeline_err().unwrap_err().exit_code(), 3);
    }

    #[test]
    fn json_shape() {
        let f = Failure::new(FailureKind::Config, anyhow::anyhow!("bad")).with_details(json!({"x": 1}));
        let v = f.to_json();
        assert_eq!(v["error"]["kind"], "config");
        assert_eq!(v["error"]["exit_code"], 2);
        assert_eq!(v["error"]["details"]["x"], 1);
    }
}
