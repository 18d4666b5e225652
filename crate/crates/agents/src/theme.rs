use serde::Deserialize;
use serde_json::json;

use crate::client::{roles, ChatClient, Message};
use crate::exchange::{exchange, parse_json};
use crate::types::Theme;
use crate::{prompts, AgentError};

#[derive(Deserialize)]
struct ThemeReply {
    theme: String,
    #[serde(default)]
    visual_texts: Vec<String>,
}

/// Splits a free-text request into the theme and the texts to print.
pub fn extract_theme(description: &str, client: &dyn ChatClient, attempts: usize) -> Result<Theme, AgentError> {
    if description.trim().is_empty() {
        return Err(AgentError::EmptyInput("description"));
    }
    let messages = vec![
        Message::system(prompts::THEME),
        Message::user(json!({ "request": description.trim() }).to_string()),
    ];
    let (theme, _) = exchange(client, roles::THEME, messages, attempts, |reply| {
        let r: ThemeReply = parse_json(reply)?;
        Theme::new(&r.theme, r.visual_texts)
    })?;
    Ok(theme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{MockClient, ScriptedReply};
    use serde_json::Value;

    fn mock(replies: Vec<Value>) -> MockClient {
        MockClient::new(
            replies
                .into_iter()
                .map(|reply| ScriptedReply {
                    role: roles::THEME.into(),
                    reply,
                })
                .collect(),
        )
    }

    #[test]
    fn schema_round_trip() {
        let m = mock(vec![json!({"theme": "climate change awareness", "visual_texts": ["ACT NOW"]})]);
        let t = extract_theme("a poster about climate change that says ACT NOW", &m, 3).unwrap();
        assert_eq!(t.theme_text, "climate change awareness");
        assert_eq!(t.visual_texts, vec!["ACT NOW"]);
    }

    #[test]
    fn duplicates_removed() {
        let m = mock(vec![json!({"theme": "t", "visual_texts": ["A", "B", "A"]})]);
        assert_eq!(extract_theme("x", &m, 3).unwrap().visual_texts, vec!["A", "B"]);
    }

    #[test]
    fn three_malformed_replies_fail() {
        let m = mock(vec![json!("{"), json!("nope"), json!({"visual_texts": []}), json!({"theme": "late"})]);
        match extract_theme("x", &m, 3) {
            Err(AgentError::Exhausted { role, attempts, .. }) => {
                assert_eq!(role, "theme");
                assert_eq!(attempts, 3);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(m.remaining(roles::THEME), 1);
        // each retry saw the previous parse error
        let t = m.transcript();
        assert!(t[2].messages.last().unwrap().content.contains("rejected"));
        assert_eq!(t[2].messages.len(), 6);
    }

    #[test]
    fn empty_description() {
        assert!(matches!(extract_theme("  ", &mock(vec![]), 3), Err(AgentError::EmptyInput(_))));
    }
}
