//! Request/validate/repair cycle shared by every agent.

use serde::de::DeserializeOwned;

use crate::client::{ChatClient, Message};
use crate::AgentError;

pub const DEFAULT_ATTEMPTS: usize = 3;

/// Strips a surrounding markdown code fence, which chat models often add.
pub fn json_body(reply: &str) -> &str {
    let s = reply.trim();
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

pub fn parse_json<T: DeserializeOwned>(reply: &str) -> Result<T, String> {
    serde_json::from_str(json_body(reply)).map_err(|e| format!("reply is not valid JSON for the schema: {e}"))
}

pub fn repair_message(error: &str) -> String {
    format!("Your previous reply was rejected: {error}\nReply again with a single JSON object that fixes this.")
}

/// Sends `messages`, then validates the reply with `parse`. A rejected reply
/// is appended to the conversation with the reason, up to `attempts` calls.
/// Returns the value and the accepted raw reply.
pub fn exchange<T>(
    client: &dyn ChatClient,
    role: &str,
    mut messages: Vec<Message>,
    attempts: usize,
    mut parse: impl FnMut(&str) -> Result<T, String>,
) -> Result<(T, String), AgentError> {
    let mut last_error = String::from("no attempt made");
    for attempt in 0..attempts.max(1) {
        if attempt > 0 {
            messages.push(Message::user(repair_message(&last_error)));
        }
        let reply = client.complete(role, &messages)?;
        match parse(&reply) {
            Ok(v) => return Ok((v, reply)),
            Err(e) => {
                last_error = e;
                messages.push(Message::assistant(reply));
            }
        }
    }
    Err(AgentError::Exhausted {
        role: role.to_owned(),
        attempts: attempts.max(1),
        last_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{MockClient, ScriptedReply};
    use serde_json::json;

    #[test]
    fn fences_are_stripped() {
        assert_eq!(json_body("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(json_body("  {\"a\":1} "), "{\"a\":1}");
    }

    #[test]
    fn retry_carries_the_error() {
        let mock = MockClient::new(vec![
            ScriptedReply {
                role: "r".into(),
                reply: json!("oops"),
            },
            ScriptedReply {
                role: "r".into(),
                reply: json!({"n": 4}),
            },
        ]);
        let (v, _) = exchange(&mock, "r", vec![Message::user("go")], 3, |s| {
            parse_json::<serde_json::Value>(s).map(|v| v["n"].as_i64().unwrap())
        })
        .unwrap();
        assert_eq!(v, 4);
        let t = mock.transcript();
        let last = &t[1].messages;
        assert_eq!(last.len(), 3);
        assert_eq!(last[1].content, "oops");
        assert!(last[2].content.contains("rejected"));
    }
}
