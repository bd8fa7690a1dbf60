//! Line grammar for assistant replies.
//!
//! ```text
//! TOOL: <ToolName>
//! ANSWER: <positive|negative> CONFIDENCE: <0.00-1.00>
//! ```
//!
//! The first `TOOL:` match wins and surrounding prose is ignored. A reply that
//! contains a valid answer is an answer even if it also names a tool.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub tool_name: String,
    /// The span of the reply the request was read from.
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssistantTurn {
    Tool(ToolRequest),
    Final { label: Label, confidence: f64 },
    Unparseable,
}

fn tool_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"TOOL:[ \t]*([A-Za-z0-9_]+)").unwrap())
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"ANSWER:\s*\**\s*(?i:(positive|negative))\b\s*\**[\s,;.]*CONFIDENCE:\s*\**\s*([0-9]+(?:\.[0-9]+)?|\.[0-9]+)")
            .unwrap()
    })
}

/// Classifies one assistant reply.
pub fn parse_assistant_turn(text: &str) -> AssistantTurn {
    for caps in answer_re().captures_iter(text) {
        let label = if caps[1].eq_ignore_ascii_case("positive") {
            Label::Positive
        } else {
            Label::Negative
        };
        if let Ok(confidence) = caps[2].parse::<f64>() {
            if (0.0..=1.0).contains(&confidence) {
                return AssistantTurn::Final { label, confidence };
            }
        }
    }
    if let Some(caps) = tool_re().captures(text) {
        return AssistantTurn::Tool(ToolRequest {
            tool_name: caps[1].to_string(),
            raw_text: caps[0].to_string(),
        });
    }
    AssistantTurn::Unparseable
}

pub fn render_tool_request(name: &str) -> String {
    format!("TOOL: {name}")
}

/// Renders an answer line. Confidence uses the shortest exact decimal form so
/// parsing it back yields the same value.
pub fn render_final_answer(label: Label, confidence: f64) -> String {
    format!("ANSWER: {} CONFIDENCE: {}", label.word(), confidence)
}
