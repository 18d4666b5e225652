//! Contrastive scenes → concrete elements → colour attributes, as three
//! chained calls in one conversation.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::client::{roles, ChatClient, Message};
use crate::exchange::{exchange, parse_json};
use crate::types::{hue_relation, normalize_hue, Element, ElementPair, Theme};
use crate::{prompts, AgentError};

pub const MIN_PAIRS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitionOutput {
    pub pairs: Vec<ElementPair>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct ScenePair {
    scene_a: String,
    scene_b: String,
}

#[derive(Deserialize)]
struct ScenesReply {
    scenes: Vec<ScenePair>,
}

#[derive(Debug, Clone, Deserialize)]
struct Sketch {
    name: String,
    description: String,
}

#[derive(Debug, Clone, Deserialize)]
struct SketchPair {
    scene_a: String,
    scene_b: String,
    element_a: Sketch,
    element_b: Sketch,
}

#[derive(Deserialize)]
struct ElementsReply {
    pairs: Vec<SketchPair>,
}

#[derive(Deserialize)]
struct Colour {
    name: String,
    hue: f64,
    color_name: String,
}

#[derive(Deserialize)]
struct ColourPair {
    element_a: Colour,
    element_b: Colour,
    #[serde(default)]
    relation: Option<String>,
}

#[derive(Deserialize)]
struct ColoursReply {
    pairs: Vec<ColourPair>,
}

fn non_empty(field: &str, value: &str) -> Result<(), String> {
    if value.trim().is_empty() {
        Err(format!("{field} must not be empty"))
    } else {
        Ok(())
    }
}

fn check_scenes(reply: &str) -> Result<Vec<ScenePair>, String> {
    let r: ScenesReply = parse_json(reply)?;
    if r.scenes.is_empty() {
        return Err("scenes must list at least one pair".into());
    }
    for s in &r.scenes {
        non_empty("scene_a", &s.scene_a)?;
        non_empty("scene_b", &s.scene_b)?;
    }
    Ok(r.scenes)
}

fn check_sketches(reply: &str) -> Result<Vec<SketchPair>, String> {
    let r: ElementsReply = parse_json(reply)?;
    if r.pairs.len() < MIN_PAIRS {
        return Err(format!("need at least {MIN_PAIRS} element pairs, got {}", r.pairs.len()));
    }
    let mut names: Vec<&str> = Vec::new();
    for p in &r.pairs {
        for e in [&p.element_a, &p.element_b] {
            non_empty("element name", &e.name)?;
            if names.contains(&e.name.as_str()) {
                return Err(format!("element name {:?} is used twice", e.name));
            }
            names.push(&e.name);
        }
    }
    Ok(r.pairs)
}

fn attach_colours(sketches: &[SketchPair], reply: &str) -> Result<CognitionOutput, String> {
    let r: ColoursReply = parse_json(reply)?;
    if r.pairs.len() != sketches.len() {
        return Err(format!("expected {} pairs in the same order, got {}", sketches.len(), r.pairs.len()));
    }
    let mut warnings = Vec::new();
    let mut pairs = Vec::with_capacity(sketches.len());
    for (k, (sketch, colour)) in sketches.iter().zip(&r.pairs).enumerate() {
        let mut element = |s: &Sketch, c: &Colour| -> Result<Element, String> {
            if c.name != s.name {
                return Err(format!("pair {k}: expected element {:?}, got {:?}", s.name, c.name));
            }
            non_empty("color_name", &c.color_name)?;
            let (hue, wrapped) = normalize_hue(c.hue);
            if wrapped {
                warnings.push(format!("{}: hue {} wrapped to {hue}", s.name, c.hue));
            }
            Ok(Element {
                name: s.name.clone(),
                description: s.description.clone(),
                hue,
                color_name: c.color_name.clone(),
            })
        };
        let a = element(&sketch.element_a, &colour.element_a)?;
        let b = element(&sketch.element_b, &colour.element_b)?;
        let relation = hue_relation(a.hue, b.hue);
        if let Some(label) = &colour.relation {
            let ours = serde_json::to_value(relation).unwrap();
            if ours.as_str() != Some(label.as_str()) {
                warnings.push(format!("pair {k}: relation {label:?} replaced by {ours} from the hues"));
            }
        }
        pairs.push(ElementPair {
            scene_a: sketch.scene_a.clone(),
            scene_b: sketch.scene_b.clone(),
            element_a: a,
            element_b: b,
            relation,
        });
    }
    Ok(CognitionOutput { pairs, warnings })
}

/// Proposes contrastive element pairs for `theme`. `feedback` is passed
/// verbatim in the first request.
pub fn cognition_step(
    theme: &Theme,
    feedback: Option<&str>,
    client: &dyn ChatClient,
    attempts: usize,
) -> Result<CognitionOutput, AgentError> {
    let mut request = json!({ "theme": theme.theme_text, "visual_texts": theme.visual_texts });
    if let Some(f) = feedback {
        request["feedback"] = json!(f);
    }
    let mut messages = vec![
        Message::system(prompts::COGNITION_SCENES),
        Message::user(request.to_string()),
    ];
    let (_, raw) = exchange(client, roles::COGNITION, messages.clone(), attempts, check_scenes)?;

    messages.push(Message::assistant(raw));
    messages.push(Message::user(prompts::COGNITION_ELEMENTS));
    let (sketches, raw) = exchange(client, roles::COGNITION, messages.clone(), attempts, check_sketches)?;

    messages.push(Message::assistant(raw));
    messages.push(Message::user(prompts::COGNITION_COLORS));
    let (out, _) = exchange(client, roles::COGNITION, messages, attempts, |r| attach_colours(&sketches, r))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{MockClient, ScriptedReply};
    use crate::types::HueRelation;
    use serde_json::Value;

    fn mock(replies: Vec<Value>) -> MockClient {
        MockClient::new(
            replies
                .into_iter()
                .map(|reply| ScriptedReply {
                    role: roles::COGNITION.into(),
                    reply,
                })
                .collect(),
        )
    }

    fn theme() -> Theme {
        Theme::new("climate change", vec!["ACT NOW".into()]).unwrap()
    }

    fn script(hues: [f64; 4]) -> Vec<Value> {
        vec![
            json!({"scenes": [{"scene_a": "glacier", "scene_b": "desert"}]}),
            json!({"pairs": [
                {"scene_a": "glacier", "scene_b": "desert",
                 "element_a": {"name": "iceberg", "description": "blue iceberg"},
                 "element_b": {"name": "sandstorm", "description": "yellow sandstorm"}},
                {"scene_a": "glacier", "scene_b": "desert",
                 "element_a": {"name": "seal", "description": "grey seal"},
                 "element_b": {"name": "cactus", "description": "green cactus"}}
            ]}),
            json!({"pairs": [
                {"element_a": {"name": "iceberg", "hue": hues[0], "color_name": "blue"},
                 "element_b": {"name": "sandstorm", "hue": hues[1], "color_name": "yellow"},
                 "relation": "analogous"},
                {"element_a": {"name": "seal", "hue": hues[2], "color_name": "grey"},
                 "element_b": {"name": "cactus", "hue": hues[3], "color_name": "green"}}
            ]}),
        ]
    }

    #[test]
    fn iceberg_and_sandstorm_are_complementary() {
        let m = mock(script([210.0, 40.0, 200.0, 220.0]));
        let out = cognition_step(&theme(), None, &m, 3).unwrap();
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(out.pairs[0].relation, HueRelation::Complementary);
        assert_eq!(out.pairs[1].relation, HueRelation::Analogous);
        assert_eq!(out.pairs[0].element_a.description, "blue iceberg");
        // the client's "analogous" label was overridden
        assert_eq!(out.warnings.len(), 1);
        // three chained calls, each seeing the previous replies
        let t = m.transcript();
        assert_eq!(t.len(), 3);
        assert_eq!(t[2].messages.len(), 6);
    }

    #[test]
    fn hue_wrap_is_recorded() {
        let m = mock(script([400.0, 220.0, 0.0, 0.0]));
        let out = cognition_step(&theme(), None, &m, 3).unwrap();
        assert_eq!(out.pairs[0].element_a.hue, 40.0);
        assert!(out.warnings.iter().any(|w| w.contains("wrapped")));
    }

    #[test]
    fn feedback_is_verbatim() {
        let m = mock(script([0.0; 4]));
        cognition_step(&theme(), Some("make the contrast starker"), &m, 3).unwrap();
        let first = &m.transcript()[0].messages[1].content;
        let v: Value = serde_json::from_str(first).unwrap();
        assert_eq!(v["feedback"], "make the contrast starker");
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let one = json!({"pairs": [
            {"scene_a": "a", "scene_b": "b",
             "element_a": {"name": "x", "description": ""},
             "element_b": {"name": "y", "description": ""}}]});
        let m = mock(vec![json!({"scenes": [{"scene_a": "a", "scene_b": "b"}]}), one.clone(), one.clone(), one]);
        match cognition_step(&theme(), None, &m, 3) {
            Err(AgentError::Exhausted { last_error, .. }) => assert!(last_error.contains("at least 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn colour_reply_must_keep_names() {
        let mut s = script([0.0; 4]);
        let mut bad = s[2].clone();
        bad["pairs"][0]["element_a"]["name"] = json!("glacier");
        s.insert(2, bad);
        let m = mock(s);
        cognition_step(&theme(), None, &m, 3).unwrap();
        let t = m.transcript();
        assert_eq!(t.len(), 4);
        assert!(t[3].messages.last().unwrap().content.contains("expected element \"iceberg\""));
    }
}
