use std::sync::Arc;

use base64::Engine;
use serde_json::{json, Value};
use visagent_core::agent::{Attachment, ChatOptions, LlmError, LmmClient, Message, Role};

use crate::limiter::RateLimiter;
use crate::transport::{probe, send_with_retry, Endpoint, RetryPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct ChatSettings {
    pub model: String,
    pub retry: RetryPolicy,
    /// Images allowed in one request, summed over all messages.
    pub max_images: usize,
}

impl ChatSettings {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            retry: RetryPolicy::default(),
            max_images: 20,
        }
    }
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::System => "system",
        Role::Assistant => "assistant",
        Role::User => "user",
    }
}

fn image_parts(images: &[Attachment]) -> Vec<Value> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut parts = Vec::new();
    for a in images {
        let png = a.image.encode_png().expect("in-memory PNG encoding");
        parts.push(json!({"type": "text", "text": format!("{}:", a.caption)}));
        parts.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:image/png;base64,{}", b64.encode(png))}
        }));
    }
    parts
}

/// The JSON body sent for one chat call.
///
/// Images ride along as base64 PNG data URLs. Images attached to the system
/// message are sent in a user message right after it.
pub fn request_body(model: &str, messages: &[Message], opts: &ChatOptions) -> Value {
    let mut out = Vec::new();
    for m in messages {
        if m.role == Role::System {
            out.push(json!({"role": "system", "content": m.text}));
            if !m.images.is_empty() {
                out.push(json!({"role": "user", "content": image_parts(&m.images)}));
            }
            continue;
        }
        if m.images.is_empty() {
            out.push(json!({"role": role_name(m.role), "content": m.text}));
            continue;
        }
        let mut content = vec![json!({"type": "text", "text": m.text})];
        content.extend(image_parts(&m.images));
        out.push(json!({"role": role_name(m.role), "content": content}));
    }
    let mut body = json!({
        "model": model,
        "temperature": opts.temperature,
        "messages": out,
    });
    if let Some(seed) = opts.seed {
        body["seed"] = json!(seed);
    }
    body
}

fn reply_text(v: &Value) -> Option<String> {
    let content = &v["choices"][0]["message"]["content"];
    if let Some(s) = content.as_str() {
        return Some(s.to_string());
    }
    let parts = content.as_array()?;
    let text: Vec<&str> = parts.iter().filter_map(|p| p["text"].as_str()).collect();
    (!text.is_empty()).then(|| text.join("\n"))
}

/// A chat-completion endpoint speaking the common OpenAI-style wire format.
#[derive(Debug, Clone)]
pub struct ChatCompletionClient {
    endpoint: Endpoint,
    settings: ChatSettings,
    limiter: Arc<RateLimiter>,
}

impl ChatCompletionClient {
    pub fn new(endpoint: Endpoint, settings: ChatSettings, limiter: Arc<RateLimiter>) -> Self {
        Self {
            endpoint,
            settings,
            limiter,
        }
    }
}

impl LmmClient for ChatCompletionClient {
    fn model_id(&self) -> String {
        self.settings.model.clone()
    }

    fn chat(&self, messages: &[Message], opts: &ChatOptions) -> Result<String, LlmError> {
        let images: usize = messages.iter().map(|m| m.images.len()).sum();
        if images > self.settings.max_images {
            return Err(LlmError::ContextTooLarge {
                images,
                limit: self.settings.max_images,
            });
        }
        let body = request_body(&self.settings.model, messages, opts);
        let agent = self.endpoint.agent();
        let resp = send_with_retry(&self.settings.retry, || {
            let _permit = self.limiter.acquire();
            self.endpoint
                .authorize(agent.post(&self.endpoint.url))
                .send_json(&body)
        })
        .map_err(|f| {
            if f.rejected {
                LlmError::InvalidResponse(f.message)
            } else {
                LlmError::Unavailable {
                    attempts: f.attempts,
                    message: f.message,
                }
            }
        })?;
        let v: Value = resp
            .into_json()
            .map_err(|e| LlmError::InvalidResponse(format!("body is not JSON: {e}")))?;
        reply_text(&v).ok_or_else(|| LlmError::InvalidResponse("no choices[0].message.content".into()))
    }

    fn health(&self) -> Result<(), LlmError> {
        probe(&self.endpoint).map_err(|message| LlmError::Unavailable { attempts: 1, message })
    }
}
