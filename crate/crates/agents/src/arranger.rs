//! Element selection and composition into a [`LayoutSpec`].

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use regionpost_core::geometry::RegionSet;
use regionpost_core::layout::LayoutSpec;

use crate::client::{roles, ChatClient, Message};
use crate::exchange::{exchange, json_body, parse_json};
use crate::types::{ElementPair, Theme};
use crate::{prompts, AgentError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrangerOutcome {
    Layout(LayoutSpec),
    NeedMoreElements { reason: String },
}

/// Area share, normalized bounding box and neighbours of every region.
pub fn region_summary(rs: &RegionSet) -> Value {
    let (w, h) = (rs.width() as f64, rs.height() as f64);
    let regions: Vec<Value> = rs
        .region_ids()
        .iter()
        .map(|&id| {
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            for p in rs.pixels_of(id) {
                x0 = x0.min(p.x);
                y0 = y0.min(p.y);
                x1 = x1.max(p.x + 1);
                y1 = y1.max(p.y + 1);
            }
            let round = |v: f64| (v * 1000.0).round() / 1000.0;
            json!({
                "region_id": id,
                "area_fraction": round(rs.pixel_count(id) as f64 / (w * h)),
                "bbox": [round(x0 as f64 / w), round(y0 as f64 / h),
                         round((x1 - x0) as f64 / w), round((y1 - y0) as f64 / h)],
                "neighbors": rs.neighbors(id),
            })
        })
        .collect();
    json!({ "width": rs.width(), "height": rs.height(), "regions": regions })
}

fn element_names(pairs: &[ElementPair]) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    for p in pairs {
        for e in p.elements() {
            if !names.contains(&e.name.as_str()) {
                names.push(&e.name);
            }
        }
    }
    names
}

/// Parses and validates one arranger reply. Every violation is listed.
pub fn check_reply(reply: &str, rs: &RegionSet, theme: &Theme, pairs: &[ElementPair]) -> Result<ArrangerOutcome, String> {
    let value: Value = parse_json(reply)?;
    if let Some(reason) = value.get("need_more_elements") {
        let reason = reason.as_str().unwrap_or_default().trim();
        return Ok(ArrangerOutcome::NeedMoreElements {
            reason: if reason.is_empty() { "unspecified".into() } else { reason.to_owned() },
        });
    }
    let layout: LayoutSpec = serde_json::from_str(json_body(reply)).map_err(|e| format!("layout does not match the schema: {e}"))?;
    let mut problems: Vec<String> = match layout.validate(rs.region_ids(), &theme.visual_texts) {
        Ok(()) => Vec::new(),
        Err(v) => v.iter().map(ToString::to_string).collect(),
    };
    let names = element_names(pairs);
    let mut used: Vec<&str> = Vec::new();
    for r in &layout.regions {
        if !names.contains(&r.element.as_str()) {
            problems.push(format!("region {} uses {:?}, which is not a candidate element", r.region_id, r.element));
        }
        if used.contains(&r.element.as_str()) {
            problems.push(format!("element {:?} is assigned to more than one region", r.element));
        }
        used.push(&r.element);
    }
    if problems.is_empty() {
        Ok(ArrangerOutcome::Layout(layout))
    } else {
        Err(problems.join("; "))
    }
}

/// Assigns one candidate element per region. Asks for more elements without
/// calling the client when there are fewer elements than regions.
pub fn arranger_step(
    pairs: &[ElementPair],
    rs: &RegionSet,
    theme: &Theme,
    feedback: Option<&str>,
    client: &dyn ChatClient,
    attempts: usize,
) -> Result<ArrangerOutcome, AgentError> {
    if pairs.is_empty() {
        return Err(AgentError::EmptyInput("element pairs"));
    }
    let available = element_names(pairs).len();
    if available < rs.region_count() {
        return Ok(ArrangerOutcome::NeedMoreElements {
            reason: format!("{} regions but only {available} distinct elements", rs.region_count()),
        });
    }
    let mut request = json!({
        "theme": theme.theme_text,
        "visual_texts": theme.visual_texts,
        "canvas": region_summary(rs),
        "candidates": pairs,
    });
    if let Some(f) = feedback {
        request["feedback"] = json!(f);
    }
    let messages = vec![Message::system(prompts::arranger()), Message::user(request.to_string())];
    let (outcome, _) = exchange(client, roles::ARRANGER, messages, attempts, |r| check_reply(r, rs, theme, pairs))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{MockClient, ScriptedReply};
    use crate::types::{Element, HueRelation};

    fn halves(n: u32) -> RegionSet {
        let labels = (0..8 * 4).map(|k| (k % 8) as u32 * n / 8).collect();
        RegionSet::from_labels(8, 4, labels).unwrap()
    }

    fn pair() -> ElementPair {
        let el = |name: &str, hue| Element {
            name: name.into(),
            description: format!("a {name}"),
            hue,
            color_name: "c".into(),
        };
        ElementPair {
            scene_a: "glacier".into(),
            scene_b: "desert".into(),
            element_a: el("iceberg", 210.0),
            element_b: el("sandstorm", 40.0),
            relation: HueRelation::Complementary,
        }
    }

    fn theme() -> Theme {
        Theme::new("climate", vec!["ACT NOW".into()]).unwrap()
    }

    fn layout(boxes: Value) -> Value {
        json!({
            "version": "1",
            "regions": [
                {"region_id": 0, "element": "iceberg", "description": "a blue iceberg", "hues": [210.0],
                 "color_terms": ["blue"], "style_tags": []},
                {"region_id": 1, "element": "sandstorm", "description": "a yellow sandstorm", "hues": [40.0],
                 "color_terms": ["yellow"], "style_tags": []}
            ],
            "global_style": ["flat"],
            "text_boxes": boxes,
            "rationale": "hot against cold"
        })
    }

    fn mock(replies: Vec<Value>) -> MockClient {
        MockClient::new(
            replies
                .into_iter()
                .map(|reply| ScriptedReply {
                    role: roles::ARRANGER.into(),
                    reply,
                })
                .collect(),
        )
    }

    #[test]
    fn forced_assignment() {
        let m = mock(vec![layout(json!([]))]);
        match arranger_step(&[pair()], &halves(2), &theme(), None, &m, 3).unwrap() {
            ArrangerOutcome::Layout(l) => {
                assert_eq!(l.regions[0].element, "iceberg");
                assert_eq!(l.regions[1].element, "sandstorm");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pigeonhole() {
        let m = mock(vec![]);
        let out = arranger_step(&[pair()], &halves(3), &theme(), None, &m, 3).unwrap();
        assert!(matches!(out, ArrangerOutcome::NeedMoreElements { .. }));
        assert!(m.transcript().is_empty());
    }

    #[test]
    fn overlapping_boxes_trigger_a_repair() {
        let overlapping = layout(json!([
            {"content": "ACT NOW", "bbox": [0.0, 0.0, 0.4, 0.2], "emphasis": "title"},
            {"content": "ACT NOW", "bbox": [0.26, 0.0, 0.4, 0.2], "emphasis": "body"}
        ]));
        let m = mock(vec![overlapping, layout(json!([]))]);
        let out = arranger_step(&[pair()], &halves(2), &theme(), None, &m, 3).unwrap();
        assert!(matches!(out, ArrangerOutcome::Layout(_)));
        let t = m.transcript();
        assert_eq!(t.len(), 2);
        let repair = &t[1].messages.last().unwrap().content;
        assert!(repair.contains("overlap by 35%"), "{repair}");
    }

    #[test]
    fn foreign_and_repeated_elements_rejected() {
        let mut l = layout(json!([]));
        l["regions"][1]["element"] = json!("iceberg");
        let err = check_reply(&l.to_string(), &halves(2), &theme(), &[pair()]).unwrap_err();
        assert!(err.contains("more than one region"));
        l["regions"][1]["element"] = json!("penguin");
        let err = check_reply(&l.to_string(), &halves(2), &theme(), &[pair()]).unwrap_err();
        assert!(err.contains("not a candidate"));
    }

    #[test]
    fn missing_region_named() {
        let mut l = layout(json!([]));
        l["regions"].as_array_mut().unwrap().pop();
        let err = check_reply(&l.to_string(), &halves(2), &theme(), &[pair()]).unwrap_err();
        assert!(err.contains("region 1"), "{err}");
    }

    #[test]
    fn escalation_reply() {
        let out = check_reply(r#"{"need_more_elements": "a third object"}"#, &halves(2), &theme(), &[pair()]).unwrap();
        assert_eq!(
            out,
            ArrangerOutcome::NeedMoreElements {
                reason: "a third object".into()
            }
        );
    }

    #[test]
    fn summary_describes_regions() {
        let s = region_summary(&halves(2));
        assert_eq!(s["regions"][0]["area_fraction"], 0.5);
        assert_eq!(s["regions"][1]["bbox"], json!([0.5, 0.0, 0.5, 1.0]));
        assert_eq!(s["regions"][1]["neighbors"], json!([0]));
    }
}
