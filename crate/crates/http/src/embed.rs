use base64::Engine;
use serde_json::{json, Value};
use visagent_core::embedding::{EmbeddingProvider, EmbeddingVector, ProviderError};
use visagent_core::raster::Raster;

use crate::transport::{probe, send_with_retry, Endpoint, RetryPolicy};

/// Hosted embedding model. Requests are `{"image": <base64 PNG>}` or
/// `{"text": ...}`; responses are `{"vector": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: Endpoint,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            endpoint,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post(&self, body: Value) -> Result<EmbeddingVector, ProviderError> {
        let agent = self.endpoint.agent();
        let resp = send_with_retry(&self.retry, || {
            self.endpoint.authorize(agent.post(&self.endpoint.url)).send_json(&body)
        })
        .map_err(|f| {
            if f.rejected {
                ProviderError::InvalidResponse(f.message)
            } else {
                ProviderError::Unavailable(format!("{} after {} attempt(s)", f.message, f.attempts))
            }
        })?;
        let v: Value = resp
            .into_json()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let values: Option<Vec<f64>> = v["vector"].as_array().and_then(|a| a.iter().map(Value::as_f64).collect());
        let values = values.ok_or_else(|| ProviderError::InvalidResponse("missing numeric `vector`".into()))?;
        EmbeddingVector::new(values).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint.url)
    }

    fn embed_image(&self, image: &Raster) -> Result<EmbeddingVector, ProviderError> {
        let png = image
            .encode_png()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        self.post(json!({"image": base64::engine::general_purpose::STANDARD.encode(png)}))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.post(json!({"text": text}))
    }

    fn health(&self) -> Result<(), ProviderError> {
        probe(&self.endpoint).map_err(ProviderError::Unavailable)
    }
}
