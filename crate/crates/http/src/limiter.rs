use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Caps concurrent requests and, optionally, requests per time window.
/// Share one limiter (behind an `Arc`) between clients to make the caps global.
#[derive(Debug)]
pub struct RateLimiter {
    max_in_flight: usize,
    window: Option<(usize, Duration)>,
    state: Mutex<State>,
    cv: Condvar,
}

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    started: VecDeque<Instant>,
}

/// Held for the duration of one request.
#[derive(Debug)]
pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.limiter.state.lock().unwrap();
        s.in_flight -= 1;
        self.limiter.cv.notify_all();
    }
}

impl RateLimiter {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            window: None,
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
        }
    }

    pub fn per_minute(self, n: usize) -> Self {
        self.per_window(n, Duration::from_secs(60))
    }

    pub fn per_window(mut self, n: usize, window: Duration) -> Self {
        self.window = Some((n.max(1), window));
        self
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap().in_flight
    }

    /// Blocks until both caps allow another request.
    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().unwrap();
        loop {
            let now = Instant::now();
            let mut wait = None;
            if let Some((n, window)) = self.window {
                while s.started.front().is_some_and(|&t| now.duration_since(t) >= window) {
                    s.started.pop_front();
                }
                if s.started.len() >= n {
                    wait = Some(window - now.duration_since(s.started[0]));
                }
            }
            if s.in_flight < self.max_in_flight && wait.is_none() {
                s.in_flight += 1;
                if self.window.is_some() {
                    s.started.push_back(now);
                }
                return Permit { limiter: self };
            }
            s = match wait {
                Some(d) => self.cv.wait_timeout(s, d).unwrap().0,
                None => self.cv.wait(s).unwrap(),
            };
        }
    }
}
