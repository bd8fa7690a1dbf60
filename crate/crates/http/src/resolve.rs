//! Backend spec strings that may name either an offline fixture or a network
//! endpoint. API keys come from the environment.
//!
//! - embedder: any fixture spec, or an `http(s)://` URL (`VISAGENT_EMBED_API_KEY`)
//! - llm: any fixture spec, or `chat:<model>@<url>` (`VISAGENT_LMM_API_KEY`)
//! - tiles: any fixture spec, or an `http(s)://` URL (`VISAGENT_TILES_API_KEY`)

use std::sync::Arc;

use visagent_core::embedding::{BuildOptions, EmbeddingProvider};
use visagent_core::eval::{
    fixture_embedder, fixture_llm, fixture_tiles, system_clock, EvalError, ExperimentConfig, ExperimentDeps,
    LmmBackend, SharedClient,
};
use visagent_core::tools::TileProvider;

use crate::{ChatCompletionClient, ChatSettings, Endpoint, HttpEmbedder, HttpTileProvider, RateLimiter};

pub const EMBED_KEY_VAR: &str = "VISAGENT_EMBED_API_KEY";
pub const LMM_KEY_VAR: &str = "VISAGENT_LMM_API_KEY";
pub const TILES_KEY_VAR: &str = "VISAGENT_TILES_API_KEY";

/// Concurrent chat requests allowed across one process.
pub const DEFAULT_IN_FLIGHT: usize = 4;
pub const DEFAULT_PER_MINUTE: usize = 60;

fn is_url(spec: &str) -> bool {
    spec.starts_with("http://") || spec.starts_with("https://")
}

fn key(var: &str) -> Option<String> {
    std::env::var(var).ok()
}

pub fn embedder(spec: &str) -> Result<Arc<dyn EmbeddingProvider>, EvalError> {
    if is_url(spec) {
        return Ok(Arc::new(HttpEmbedder::new(Endpoint::new(spec).with_key(key(EMBED_KEY_VAR)))));
    }
    fixture_embedder(spec)
}

/// Splits `chat:<model>@<url>`.
pub fn parse_chat_spec(spec: &str) -> Option<(&str, &str)> {
    let rest = spec.strip_prefix("chat:")?;
    let (model, url) = rest.split_once('@')?;
    (!model.is_empty() && is_url(url)).then_some((model, url))
}

pub fn chat_client(spec: &str, limiter: Arc<RateLimiter>) -> Result<ChatCompletionClient, EvalError> {
    let (model, url) = parse_chat_spec(spec).ok_or_else(|| EvalError::UnknownBackend(spec.to_string()))?;
    Ok(ChatCompletionClient::new(
        Endpoint::new(url).with_key(key(LMM_KEY_VAR)),
        ChatSettings::new(model),
        limiter,
    ))
}

pub fn llm(spec: &str) -> Result<Arc<dyn LmmBackend>, EvalError> {
    if spec.starts_with("chat:") {
        let limiter = Arc::new(RateLimiter::new(DEFAULT_IN_FLIGHT).per_minute(DEFAULT_PER_MINUTE));
        return Ok(Arc::new(SharedClient(Arc::new(chat_client(spec, limiter)?))));
    }
    fixture_llm(spec)
}

pub fn tiles(spec: &str) -> Result<Arc<dyn TileProvider>, EvalError> {
    if is_url(spec) {
        return Ok(Arc::new(HttpTileProvider::new(Endpoint::new(spec).with_key(key(TILES_KEY_VAR)))));
    }
    fixture_tiles(spec)
}

/// Like [`ExperimentDeps::fixtures`], but network specs are allowed.
pub fn experiment_deps(config: &ExperimentConfig) -> Result<ExperimentDeps, EvalError> {
    let llm = if config.method.uses_llm() {
        Some(llm(&config.llm)?)
    } else {
        None
    };
    let tiles = if config.dataset_kind.is_geospatial() && config.method.uses_tools() {
        Some(tiles(&config.tiles)?)
    } else {
        None
    };
    Ok(ExperimentDeps {
        embedder: embedder(&config.embedder)?,
        llm,
        tiles,
        build: BuildOptions::default(),
        clock: Arc::new(system_clock),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_spec_parsing() {
        assert_eq!(
            parse_chat_spec("chat:gpt-4o@https://api.example.com/v1/chat/completions"),
            Some(("gpt-4o", "https://api.example.com/v1/chat/completions"))
        );
        assert_eq!(parse_chat_spec("chat:@https://x"), None);
        assert_eq!(parse_chat_spec("chat:m@ftp://x"), None);
        assert_eq!(parse_chat_spec("policy"), None);
    }

    #[test]
    fn fixtures_still_resolve() {
        assert!(embedder("hash:8").is_ok());
        assert!(llm("policy:2").is_ok());
        assert!(tiles("fixture:3").is_ok());
        assert!(matches!(llm("nonsense").err(), Some(EvalError::UnknownBackend(_))));
        assert_eq!(embedder("http://127.0.0.1:9/embed").unwrap().id(), "http:http://127.0.0.1:9/embed");
    }
}
