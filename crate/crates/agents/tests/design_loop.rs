use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use regionpost_agents::client::roles;
use regionpost_agents::design_loop::Trigger;
use regionpost_agents::{
    run_design_loop, AgentError, ChatClient, FeedbackTarget, LiveClient, LoopConfig, Message, MockClient,
    PosterSynthesizer, ScriptedReply, Theme,
};
use regionpost_core::geometry::RegionSet;
use regionpost_core::layout::LayoutSpec;
use serde_json::{json, Value};

fn halves() -> RegionSet {
    RegionSet::from_labels(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap()
}

fn reply(role: &str, reply: Value) -> ScriptedReply {
    ScriptedReply {
        role: role.into(),
        reply,
    }
}

fn cognition_round(tag: &str) -> Vec<ScriptedReply> {
    vec![
        reply(roles::COGNITION, json!({"scenes": [{"scene_a": "glacier", "scene_b": "desert"}]})),
        reply(
            roles::COGNITION,
            json!({"pairs": [
                {"scene_a": "glacier", "scene_b": "desert",
                 "element_a": {"name": format!("iceberg{tag}"), "description": "blue iceberg"},
                 "element_b": {"name": format!("sandstorm{tag}"), "description": "yellow sandstorm"}},
                {"scene_a": "glacier", "scene_b": "desert",
                 "element_a": {"name": format!("seal{tag}"), "description": "grey seal"},
                 "element_b": {"name": format!("cactus{tag}"), "description": "green cactus"}}
            ]}),
        ),
        reply(
            roles::COGNITION,
            json!({"pairs": [
                {"element_a": {"name": format!("iceberg{tag}"), "hue": 210, "color_name": "blue"},
                 "element_b": {"name": format!("sandstorm{tag}"), "hue": 40, "color_name": "yellow"}},
                {"element_a": {"name": format!("seal{tag}"), "hue": 220, "color_name": "grey"},
                 "element_b": {"name": format!("cactus{tag}"), "hue": 110, "color_name": "green"}}
            ]}),
        ),
    ]
}

fn layout_reply(tag: &str) -> ScriptedReply {
    reply(
        roles::ARRANGER,
        json!({
            "version": "1",
            "regions": [
                {"region_id": 0, "element": format!("iceberg{tag}"), "description": "blue iceberg",
                 "hues": [210], "color_terms": ["blue"], "style_tags": []},
                {"region_id": 1, "element": format!("sandstorm{tag}"), "description": "yellow sandstorm",
                 "hues": [40], "color_terms": ["yellow"], "style_tags": []}
            ],
            "global_style": ["flat illustration"],
            "text_boxes": [{"content": "ACT NOW", "bbox": [0.1, 0.05, 0.8, 0.15], "emphasis": "title"}],
            "rationale": "cold against hot"
        }),
    )
}

fn verdict(c: u8, h: u8, feedback: &str) -> ScriptedReply {
    reply(roles::REFINER, json!({"contrast_score": c, "harmony_score": h, "feedback": feedback}))
}

fn theme_reply() -> ScriptedReply {
    reply(roles::THEME, json!({"theme": "climate change awareness", "visual_texts": ["ACT NOW"]}))
}

/// Counts runs and hands back a tiny fake PNG tagged with the iteration.
#[derive(Default)]
struct CountingSynth {
    runs: Vec<(usize, LayoutSpec)>,
}

impl PosterSynthesizer for CountingSynth {
    type Output = Vec<u8>;
    fn synthesize(
        &mut self,
        layout: &LayoutSpec,
        _theme: &Theme,
        iteration: usize,
    ) -> Result<Vec<u8>, Box<dyn std::error::Error + Send + Sync>> {
        self.runs.push((iteration, layout.clone()));
        Ok(vec![iteration as u8])
    }
}

/// Theme, one cognition round, then per iteration an arranger layout, the
/// given verdict and whatever the verdict's routing will need next.
fn script(verdicts: &[(u8, u8)]) -> Vec<ScriptedReply> {
    let mut s = vec![theme_reply()];
    s.extend(cognition_round(""));
    for (k, &(c, h)) in verdicts.iter().enumerate() {
        s.push(layout_reply(""));
        s.push(verdict(c, h, &format!("feedback {k}")));
        if c < 7 {
            s.extend(cognition_round(""));
        }
    }
    s
}

#[test]
fn approval_at_first_iteration() {
    let mock = MockClient::new(script(&[(8, 8)]));
    let mut synth = CountingSynth::default();
    let out = run_design_loop("climate poster saying ACT NOW", &halves(), &mut synth, LoopConfig::default(), &mock).unwrap();
    assert_eq!(synth.runs.len(), 1);
    assert!(out.log.approved);
    assert_eq!(out.log.selected_iteration, Some(1));
    assert_eq!(out.output, vec![1]);
    out.layout.validate(&[0, 1], &out.theme.visual_texts).unwrap();
}

#[test]
fn never_approving_returns_best_iteration() {
    let mock = MockClient::new(script(&[(6, 6), (9, 6), (5, 5)]));
    let mut synth = CountingSynth::default();
    let out = run_design_loop("x", &halves(), &mut synth, LoopConfig::default(), &mock).unwrap();
    assert_eq!(synth.runs.len(), 3);
    assert!(!out.log.approved);
    assert_eq!(out.log.selected_iteration, Some(2));
    assert_eq!(out.output, vec![2]);
    assert_eq!(out.verdict.contrast_score, 9);
}

#[test]
fn contrast_feedback_reaches_second_cognition_call() {
    let mock = MockClient::new(script(&[(4, 9), (8, 8)]));
    let mut synth = CountingSynth::default();
    let out = run_design_loop("x", &halves(), &mut synth, LoopConfig::default(), &mock).unwrap();
    assert_eq!(synth.runs.len(), 2);
    let second = &out.log.iterations[1].cognition_calls[0];
    assert_eq!(second.call, 2);
    assert_eq!(second.trigger, Trigger::Refiner);
    assert_eq!(second.feedback.as_deref(), Some("feedback 0"));
    assert_eq!(out.log.iterations[0].verdict.as_ref().unwrap().feedback_target, FeedbackTarget::Cognition);

    // the transcript shows the text verbatim in cognition's next request and nowhere in the arranger's
    let t = mock.transcript();
    let cognition: Vec<_> = t.iter().filter(|e| e.role == roles::COGNITION).collect();
    let request: Value = serde_json::from_str(&cognition[3].messages[1].content).unwrap();
    assert_eq!(request["feedback"], "feedback 0");
    let arranger: Vec<_> = t.iter().filter(|e| e.role == roles::ARRANGER).collect();
    assert!(arranger.iter().all(|e| !e.messages[1].content.contains("feedback 0")));
}

#[test]
fn harmony_feedback_reaches_arranger() {
    let mock = MockClient::new(script(&[(9, 4), (8, 8)]));
    let mut synth = CountingSynth::default();
    let out = run_design_loop("x", &halves(), &mut synth, LoopConfig::default(), &mock).unwrap();
    assert_eq!(out.log.iterations[1].arranger_feedback.as_deref(), Some("feedback 0"));
    assert!(out.log.iterations[1].cognition_calls.is_empty());
    let t = mock.transcript();
    let arranger: Vec<_> = t.iter().filter(|e| e.role == roles::ARRANGER).collect();
    let request: Value = serde_json::from_str(&arranger[1].messages[1].content).unwrap();
    assert_eq!(request["feedback"], "feedback 0");
    // cognition only ran once
    assert_eq!(t.iter().filter(|e| e.role == roles::COGNITION).count(), 3);
}

#[test]
fn escalation_is_bounded() {
    let mut s = vec![theme_reply()];
    s.extend(cognition_round(""));
    for k in 0..3 {
        s.push(reply(roles::ARRANGER, json!({"need_more_elements": format!("more {k}")})));
        s.extend(cognition_round(&k.to_string()));
    }
    let mock = MockClient::new(s);
    let mut synth = CountingSynth::default();
    let err = run_design_loop("x", &halves(), &mut synth, LoopConfig::default(), &mock).unwrap_err();
    assert!(matches!(err.source, AgentError::EscalationLimit { count: 2, .. }), "{err}");
    assert_eq!(err.log.iterations[0].escalations, vec!["more 0", "more 1"]);
    assert_eq!(err.log.iterations[0].cognition_calls.len(), 3);
    assert!(synth.runs.is_empty());
}

#[test]
fn escalation_then_layout() {
    let mut s = vec![theme_reply()];
    s.extend(cognition_round(""));
    s.push(reply(roles::ARRANGER, json!({"need_more_elements": "something brighter"})));
    s.extend(cognition_round("2"));
    s.push(layout_reply("2"));
    s.push(verdict(8, 8, ""));
    let mock = MockClient::new(s);
    let mut synth = CountingSynth::default();
    let out = run_design_loop("x", &halves(), &mut synth, LoopConfig::default(), &mock).unwrap();
    assert_eq!(out.layout.regions[0].element, "iceberg2");
    let calls = &out.log.iterations[0].cognition_calls;
    assert_eq!(calls[1].trigger, Trigger::Arranger);
    assert_eq!(calls[1].feedback.as_deref(), Some("something brighter"));
}

#[test]
fn sub_step_failure_keeps_log() {
    let mut s = vec![theme_reply()];
    s.extend(cognition_round(""));
    let mock = MockClient::new(s);
    let mut synth = CountingSynth::default();
    let err = run_design_loop("x", &halves(), &mut synth, LoopConfig::default(), &mock).unwrap_err();
    assert!(matches!(err.source, AgentError::Chat(_)));
    assert_eq!(err.log.iterations.len(), 1);
    assert_eq!(err.log.iterations[0].cognition_calls.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loop_terminates_and_routes(
        scores in proptest::collection::vec((1u8..=10, 1u8..=10), 1..6),
        max in 1usize..5,
    ) {
        let mock = MockClient::new(script(&scores));
        let mut synth = CountingSynth::default();
        let cfg = LoopConfig { max_iterations: max, ..LoopConfig::default() };
        let result = run_design_loop("x", &halves(), &mut synth, cfg, &mock);
        let first_ok = scores.iter().position(|&(c, h)| c >= 7 && h >= 7);
        prop_assert!(synth.runs.len() <= max);
        match result {
            Ok(out) => {
                let expected_runs = match first_ok {
                    Some(k) if k < max => k + 1,
                    _ => max,
                };
                prop_assert_eq!(synth.runs.len(), expected_runs);
                prop_assert_eq!(out.log.approved, first_ok.is_some_and(|k| k < max));
                for (_, layout) in &synth.runs {
                    prop_assert!(layout.validate(&[0, 1], &out.theme.visual_texts).is_ok());
                }
                if !out.log.approved {
                    let best = scores[..expected_runs].iter().map(|&(c, h)| c as u32 + h as u32).max().unwrap();
                    prop_assert_eq!(out.verdict.score(), best);
                }
                // every rejection routes its text to exactly one agent in the next iteration
                for w in out.log.iterations.windows(2) {
                    let v = w[0].verdict.as_ref().unwrap();
                    let to_cognition = w[1].cognition_calls.iter().any(|c| c.feedback.as_deref() == Some(&v.feedback_text));
                    let to_arranger = w[1].arranger_feedback.as_deref() == Some(&v.feedback_text);
                    prop_assert!(to_cognition != to_arranger);
                    prop_assert_eq!(to_cognition, v.feedback_target == FeedbackTarget::Cognition);
                }
            }
            // the script ran out because there were fewer verdicts than iterations
            Err(e) => {
                prop_assert!(scores.len() < max);
                prop_assert!(matches!(e.source, AgentError::Chat(_)));
            }
        }
    }
}

#[test]
fn live_client_against_stub() {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", server.server_addr().to_ip().unwrap());
    let seen: Arc<Mutex<Vec<(String, Value)>>> = Arc::default();
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let auth = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Authorization"))
                .map(|h| h.value.to_string())
                .unwrap_or_default();
            log.lock().unwrap().push((auth, serde_json::from_str(&body).unwrap()));
            let reply = json!({"choices": [{"message": {"role": "assistant", "content": "{\"ok\":1}"}}]});
            let _ = req.respond(tiny_http::Response::from_string(reply.to_string()));
        }
    });
    let client = LiveClient::new(&url, "some-model", "secret");
    let text = client.complete("refiner", &[Message::user("rate").with_image(vec![0x89, 0x50])]).unwrap();
    assert_eq!(text, "{\"ok\":1}");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].0, "Bearer secret");
    assert_eq!(seen[0].1["model"], "some-model");
    assert_eq!(seen[0].1["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,iVA=");
}
