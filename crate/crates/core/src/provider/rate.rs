use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Sliding-window limiter shared by request workers.
///
/// With rate `r >= 1` at most `floor(r)` permits are granted in any half-open
/// one-second window. Below one request per second permits are spaced `1/r`
/// seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    granted: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        assert!(rate_per_sec > 0.0, "rate must be positive");
        let capacity = (rate_per_sec.floor() as usize).max(1);
        let window = Duration::from_secs_f64((capacity as f64 / rate_per_sec).max(1.0));
        Self {
            capacity,
            window,
            granted: Mutex::new(VecDeque::with_capacity(capacity)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window(&self) -> Duration {
        self.window
    }

    /// Blocks until a permit is available; returns the grant instant.
    pub fn acquire(&self) -> Instant {
        loop {
            let wait = {
                let mut q = self.granted.lock().expect("limiter lock");
                let now = Instant::now();
                while q.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    q.pop_front();
                }
                if q.len() < self.capacity {
                    q.push_back(now);
                    return now;
                }
                self.window - now.duration_since(*q.front().expect("full queue"))
            };
            std::thread::sleep(wait);
        }
    }
}
