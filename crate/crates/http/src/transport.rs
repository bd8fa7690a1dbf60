use std::thread;
use std::time::Duration;

/// Where a backend lives and how to authenticate against it.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub url: String,
    /// Sent as a bearer token when present.
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    pub(crate) fn agent(&self) -> ureq::Agent {
        ureq::AgentBuilder::new().timeout(self.timeout).build()
    }

    pub(crate) fn authorize(&self, req: ureq::Request) -> ureq::Request {
        match &self.api_key {
            Some(k) => req.set("Authorization", &format!("Bearer {k}")),
            None => req,
        }
    }
}

/// Exponential backoff: attempt `i` (0-based) waits `base · 2^i`, capped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: usize) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(31) as u32).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Failure {
    pub attempts: usize,
    pub message: String,
    /// The server answered with a status that retrying will not fix.
    pub rejected: bool,
}

fn retryable_status(code: u16) -> bool {
    code == 408 || code == 429 || code >= 500
}

/// Sends until a success, a non-retryable status, or the attempts run out.
pub(crate) fn send_with_retry(
    policy: &RetryPolicy,
    mut send: impl FnMut() -> Result<ureq::Response, ureq::Error>,
) -> Result<ureq::Response, Failure> {
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for i in 0..attempts {
        match send() {
            Ok(r) => return Ok(r),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                last = format!("HTTP {code}: {}", body.chars().take(300).collect::<String>());
                if !retryable_status(code) {
                    return Err(Failure {
                        attempts: i + 1,
                        message: last,
                        rejected: true,
                    });
                }
            }
            Err(ureq::Error::Transport(t)) => last = t.to_string(),
        }
        if i + 1 < attempts {
            thread::sleep(policy.delay(i));
        }
    }
    Err(Failure {
        attempts,
        message: last,
        rejected: false,
    })
}

/// Any HTTP answer, even an error status, means the host is reachable.
pub(crate) fn probe(endpoint: &Endpoint) -> Result<(), String> {
    let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(5)).build();
    match endpoint.authorize(agent.get(&endpoint.url)).call() {
        Ok(_) | Err(ureq::Error::Status(..)) => Ok(()),
        Err(ureq::Error::Transport(t)) => Err(t.to_string()),
    }
}
