use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use thiserror::Error;

use super::{render_final_answer, render_tool_request, Message, Role};
use crate::domain::Label;

#[derive(Debug, Clone, Error)]
pub enum LlmError {
    #[error("language model unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: usize, message: String },
    #[error("conversation carries {images} images; the client accepts at most {limit}")]
    ContextTooLarge { images: usize, limit: usize },
    #[error("invalid response from language model: {0}")]
    InvalidResponse(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChatOptions {
    pub temperature: f64,
    pub seed: Option<u64>,
}

/// A multimodal chat model.
pub trait LmmClient: Send + Sync {
    fn model_id(&self) -> String;

    fn chat(&self, messages: &[Message], opts: &ChatOptions) -> Result<String, LlmError>;

    fn health(&self) -> Result<(), LlmError> {
        Ok(())
    }
}

impl<C: LmmClient + ?Sized> LmmClient for Arc<C> {
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn chat(&self, messages: &[Message], opts: &ChatOptions) -> Result<String, LlmError> {
        (**self).chat(messages, opts)
    }
    fn health(&self) -> Result<(), LlmError> {
        (**self).health()
    }
}

/// Replays a fixed list of replies, then its fallback line forever.
#[derive(Debug)]
pub struct ScriptedClient {
    script: Vec<String>,
    fallback: String,
    cursor: AtomicUsize,
}

impl ScriptedClient {
    pub const DEFAULT_FALLBACK: &'static str = "I am not sure.";

    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        Self::with_fallback(script, Self::DEFAULT_FALLBACK)
    }

    pub fn with_fallback<S: Into<String>>(script: impl IntoIterator<Item = S>, fallback: impl Into<String>) -> Self {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            fallback: fallback.into(),
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl LmmClient for ScriptedClient {
    fn model_id(&self) -> String {
        "scripted".to_string()
    }

    fn chat(&self, _messages: &[Message], _opts: &ChatOptions) -> Result<String, LlmError> {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        Ok(self.script.get(i).cloned().unwrap_or_else(|| self.fallback.clone()))
    }
}

/// Deterministic rule-based stand-in for a real model.
///
/// It calls the prediction tool first and then other listed tools until it has
/// used `tools_to_use`, and answers from the last reported probability. Without
/// tools it answers from the retrieval similarities. Outside a classification
/// conversation it answers questions with a fixed summary sentence.
#[derive(Debug, Clone)]
pub struct PolicyClient {
    tools_to_use: usize,
    delay: Duration,
}

impl PolicyClient {
    pub fn new(tools_to_use: usize) -> Self {
        Self {
            tools_to_use,
            delay: Duration::ZERO,
        }
    }

    /// Waits this long before every reply, like a slow remote model.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

impl Default for PolicyClient {
    fn default() -> Self {
        Self::new(3)
    }
}

fn probability_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"predicts a probability of ([0-9]*\.?[0-9]+)").unwrap())
}

fn similarity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"cosine similarity (-?[0-9]*\.?[0-9]+)").unwrap())
}

fn listed_tools(system: &str) -> Vec<String> {
    let Some(start) = system.find("You can request the following tools:") else {
        return Vec::new();
    };
    system[start..]
        .lines()
        .skip(1)
        .take_while(|l| l.starts_with("- "))
        .filter_map(|l| l[2..].split(':').next().map(|s| s.trim().to_string()))
        .collect()
}

impl PolicyClient {
    fn classify(&self, system: &str, messages: &[Message]) -> String {
        let mut plan = listed_tools(system);
        if let Some(i) = plan.iter().position(|n| n.starts_with("Predict")) {
            let p = plan.remove(i);
            plan.insert(0, p);
        }
        plan.truncate(self.tools_to_use);
        let turns = messages.iter().filter(|m| m.role == Role::Assistant).count();
        let forced = messages
            .last()
            .is_some_and(|m| m.role == Role::User && m.text == super::FORCING_MESSAGE);
        if turns < plan.len() && !forced {
            let name = &plan[turns];
            return format!("I will use {name} to inspect the image.\n{}", render_tool_request(name));
        }

        let reported = messages
            .iter()
            .rev()
            .filter(|m| m.role == Role::User)
            .find_map(|m| probability_re().captures(&m.text).and_then(|c| c[1].parse::<f64>().ok()));
        let (score, reason) = match reported {
            Some(p) => (p.clamp(0.0, 1.0), "the prediction tool's probability"),
            None => {
                let sims: Vec<f64> = similarity_re()
                    .captures_iter(system)
                    .filter_map(|c| c[1].parse().ok())
                    .collect();
                if sims.len() == 2 {
                    ((0.5 + (sims[0] - sims[1]) / 2.0).clamp(0.0, 1.0), "the similarity of the retrieved examples")
                } else {
                    (0.5, "no decisive evidence")
                }
            }
        };
        let label = if score > 0.5 { Label::Positive } else { Label::Negative };
        let confidence = if label.is_positive() { score } else { 1.0 - score };
        let confidence = (confidence * 100.0).round() / 100.0;
        format!(
            "Based on {reason}, the image is {}.\n{}",
            label.word(),
            render_final_answer(label, confidence)
        )
    }
}

impl LmmClient for PolicyClient {
    fn model_id(&self) -> String {
        format!("policy-t{}", self.tools_to_use)
    }

    fn chat(&self, messages: &[Message], _opts: &ChatOptions) -> Result<String, LlmError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let system = messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.text.as_str())
            .unwrap_or("");
        if system.lines().any(|l| l.starts_with("ANSWER: <positive|negative>")) {
            return Ok(self.classify(system, messages));
        }
        let question = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.trim())
            .unwrap_or("");
        Ok(format!(
            "You asked: \"{question}\". The answer in the transcript rests on the tool results and the retrieved \
             examples shown there."
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_then_fallback() {
        let c = ScriptedClient::with_fallback(["a", "b"], "done");
        let opts = ChatOptions::default();
        assert_eq!(c.chat(&[], &opts).unwrap(), "a");
        assert_eq!(c.chat(&[], &opts).unwrap(), "b");
        assert_eq!(c.chat(&[], &opts).unwrap(), "done");
        assert_eq!(c.calls(), 3);
    }

    #[test]
    fn listed_tools_parse() {
        let s = "x\nYou can request the following tools:\n- A: does a\n- PredictB: b\n\nTo request";
        assert_eq!(listed_tools(s), vec!["A", "PredictB"]);
    }
}
