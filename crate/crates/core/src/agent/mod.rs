//! The classification agent: prompt assembly, the bounded tool-use loop and
//! the transcript it leaves behind.

mod grammar;
mod llm;
mod prompt;
mod runner;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{DatasetKind, Prediction};
use crate::embedding::EmbeddingError;
use crate::raster::Raster;

pub use grammar::{parse_assistant_turn, render_final_answer, render_tool_request, AssistantTurn, ToolRequest};
pub use llm::{ChatOptions, LlmError, LmmClient, PolicyClient, ScriptedClient};
pub use prompt::{
    assemble_system_prompt, default_domain_prompt, Example, FORCING_MESSAGE, NEGATIVE_CAPTION, POSITIVE_CAPTION,
    TEST_CAPTION,
};
pub use runner::{run_inference, unknown_tool_message, ExampleImages, InferenceContext, RunMeta};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("attachment `{0}` is empty")]
    EmptyAttachment(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("example image `{id}` unavailable: {message}")]
    Example { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Assistant,
    User,
}

/// A captioned image sent with a message. Serialized as a base64 PNG.
#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub caption: String,
    pub image: Raster,
}

#[derive(Serialize, Deserialize)]
struct AttachmentWire {
    caption: String,
    png_base64: String,
}

impl Serialize for Attachment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let png = self.image.encode_png().map_err(serde::ser::Error::custom)?;
        AttachmentWire {
            caption: self.caption.clone(),
            png_base64: B64.encode(png),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Attachment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = AttachmentWire::deserialize(d)?;
        let bytes = B64.decode(w.png_base64).map_err(serde::de::Error::custom)?;
        let image = Raster::decode(&bytes).map_err(serde::de::Error::custom)?;
        Ok(Attachment {
            caption: w.caption,
            image,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub images: Vec<Attachment>,
    /// Set on user messages that carry a tool's result.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self::plain(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::plain(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, text)
    }

    fn plain(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            images: Vec::new(),
            tool: None,
        }
    }

    pub fn with_image(mut self, caption: impl Into<String>, image: Raster) -> Self {
        self.images.push(Attachment {
            caption: caption.into(),
            image,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_turns: usize,
    pub min_tools_encouraged: usize,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Empty means the dataset's default description.
    #[serde(default)]
    pub domain_prompt: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_turns: 4,
            min_tools_encouraged: 3,
            temperature: 0.0,
            seed: None,
            domain_prompt: String::new(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_turns < 1 {
            return Err(AgentError::InvalidConfig("max_turns must be at least 1".into()));
        }
        if self.min_tools_encouraged > self.max_turns {
            return Err(AgentError::InvalidConfig(format!(
                "min_tools_encouraged ({}) exceeds max_turns ({})",
                self.min_tools_encouraged, self.max_turns
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(AgentError::InvalidConfig("temperature must be a non-negative number".into()));
        }
        Ok(())
    }

    pub(crate) fn domain_text(&self, kind: DatasetKind) -> String {
        if self.domain_prompt.trim().is_empty() {
            default_domain_prompt(kind).to_string()
        } else {
            self.domain_prompt.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    /// 1-based index of the assistant turn that made the request.
    pub turn: usize,
    pub request: ToolRequest,
    pub result_summary: String,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub conversation_id: String,
    pub dataset_kind: DatasetKind,
    pub test_image_id: String,
    pub messages: Vec<Message>,
    pub tool_calls: Vec<ToolCallRecord>,
    pub final_prediction: Option<Prediction>,
    pub visrag_pos_id: Option<String>,
    pub visrag_neg_id: Option<String>,
    pub visrag_pos_similarity: Option<f64>,
    pub visrag_neg_similarity: Option<f64>,
    pub model_id: String,
    pub created_at: String,
}

impl Transcript {
    pub fn assistant_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }

    pub fn inconclusive(&self) -> bool {
        self.final_prediction.is_some_and(|p| p.inconclusive)
    }

    /// Names of the tools called, in order.
    pub fn tool_names(&self) -> Vec<&str> {
        self.tool_calls.iter().map(|c| c.request.tool_name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
