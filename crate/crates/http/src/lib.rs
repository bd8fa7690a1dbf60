//! Network backends for visagent: a hosted embedding endpoint, a static-maps
//! tile endpoint and a chat-completion endpoint for the language model.
//!
//! Everything here is blocking; callers run it on worker threads.

mod chat;
mod embed;
mod limiter;
pub mod resolve;
mod tiles;
mod transport;

pub use chat::{request_body, ChatCompletionClient, ChatSettings};
pub use embed::HttpEmbedder;
pub use limiter::{Permit, RateLimiter};
pub use tiles::HttpTileProvider;
pub use transport::{Endpoint, RetryPolicy};
