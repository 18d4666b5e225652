use serde::Deserialize;
use serde_json::json;

use regionpost_core::layout::LayoutSpec;

use crate::client::{roles, ChatClient, Message};
use crate::exchange::{exchange, parse_json};
use crate::types::{FeedbackTarget, RefinerVerdict, Theme, Thresholds};
use crate::{prompts, AgentError};

#[derive(Deserialize)]
struct VerdictReply {
    contrast_score: i64,
    harmony_score: i64,
    #[serde(default)]
    feedback: String,
}

fn score(name: &str, v: i64) -> Result<u8, String> {
    if (1..=10).contains(&v) {
        Ok(v as u8)
    } else {
        Err(format!("{name} must be an integer from 1 to 10, got {v}"))
    }
}

/// Judges a rendered poster. Approval and routing are decided here from the
/// scores, not taken from the reply. A reply that never parses yields a
/// rejected verdict routed to the arranger.
pub fn refiner_step(
    poster_png: &[u8],
    layout: &LayoutSpec,
    theme: &Theme,
    iteration: usize,
    client: &dyn ChatClient,
    thresholds: Thresholds,
    attempts: usize,
) -> Result<RefinerVerdict, AgentError> {
    let request = json!({
        "iteration": iteration,
        "theme": theme.theme_text,
        "visual_texts": theme.visual_texts,
        "layout": layout,
    });
    let messages = vec![
        Message::system(prompts::REFINER),
        Message::user(request.to_string()).with_image(poster_png.to_vec()),
    ];
    let result = exchange(client, roles::REFINER, messages, attempts, |reply| {
        let r: VerdictReply = parse_json(reply)?;
        Ok((score("contrast_score", r.contrast_score)?, score("harmony_score", r.harmony_score)?, r.feedback))
    });
    match result {
        Ok(((c, h, feedback), _)) => Ok(RefinerVerdict::from_scores(c, h, feedback, thresholds)),
        Err(AgentError::Exhausted { last_error, .. }) => Ok(RefinerVerdict {
            approved: false,
            contrast_score: 1,
            harmony_score: 1,
            feedback_target: FeedbackTarget::Arranger,
            feedback_text: format!("refiner reply could not be parsed: {last_error}"),
        }),
        Err(e) => Err(e),
    }
}
