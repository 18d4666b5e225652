//! Theme extraction, contrastive element cognition, layout arrangement and
//! refinement, driven by any [`ChatClient`].

pub mod arranger;
pub mod client;
pub mod cognition;
pub mod design_loop;
pub mod exchange;
pub mod prompts;
pub mod refiner;
pub mod theme;
pub mod types;

pub use arranger::{arranger_step, ArrangerOutcome};
pub use client::{ChatClient, ChatError, LiveClient, Message, MockClient, ScriptedReply};
pub use cognition::{cognition_step, CognitionOutput};
pub use design_loop::{run_design_loop, LoopConfig, LoopError, LoopLog, LoopOutcome, PosterImage, PosterSynthesizer};
pub use refiner::refiner_step;
pub use theme::extract_theme;
pub use types::{hue_relation, ElementPair, FeedbackTarget, HueRelation, RefinerVerdict, Theme, Thresholds};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("{role} agent: reply rejected after {attempts} attempts: {last_error}")]
    Exhausted {
        role: String,
        attempts: usize,
        last_error: String,
    },
    #[error("arranger still needs more elements after {count} requests: {reason}")]
    EscalationLimit { count: usize, reason: String },
    #[error("poster synthesis failed: {0}")]
    Synthesis(#[source] design_loop::SynthesisError),
}
