use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source for rate limiting and backoff, swappable for a fake in tests.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Manually driven clock; `sleep` advances time instantly and is logged.
#[derive(Debug, Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
    sleeps: Mutex<Vec<Duration>>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.sleeps.lock().unwrap().push(d);
        self.advance(d);
    }
}

/// Spaces requests at least `1 / max_per_second` apart. Shared between
/// threads; each caller reserves the next free slot under the lock and then
/// sleeps until it.
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Duration>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(max_per_second: f64, clock: Arc<dyn Clock>) -> Self {
        assert!(
            max_per_second.is_finite() && max_per_second > 0.0,
            "request rate must be positive"
        );
        Self {
            interval: Duration::from_secs_f64(1.0 / max_per_second),
            next_slot: Mutex::new(None),
            clock,
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until a request may be sent; returns the granted slot time.
    pub fn acquire(&self) -> Duration {
        let (slot, now) = {
            let mut next = self.next_slot.lock().unwrap();
            let now = self.clock.now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            (slot, now)
        };
        if slot > now {
            self.clock.sleep(slot - now);
        }
        slot
    }
}
