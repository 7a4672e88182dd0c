use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::clock::Clock;

const WINDOW: Duration = Duration::from_secs(60);

/// Per-endpoint admission control: a sliding one-minute request window plus a
/// cap on requests in flight.
#[derive(Debug)]
pub struct EndpointLimiter {
    requests_per_minute: usize,
    max_concurrent: usize,
    issued: Mutex<VecDeque<Duration>>,
    in_flight: Mutex<usize>,
    released: Condvar,
    /// Every admission time, kept for auditing the window invariant.
    history: Mutex<Vec<Duration>>,
}

impl EndpointLimiter {
    pub fn new(requests_per_minute: u32, max_concurrent: u32) -> Self {
        Self {
            requests_per_minute: requests_per_minute.max(1) as usize,
            max_concurrent: max_concurrent.max(1) as usize,
            issued: Mutex::new(VecDeque::new()),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
            history: Mutex::new(Vec::new()),
        }
    }

    /// Blocks until a concurrency slot is free. The slot is released when the
    /// returned guard drops.
    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max_concurrent {
            n = self.released.wait(n).unwrap();
        }
        *n += 1;
        Permit { limiter: self }
    }

    /// Blocks (on `clock`) until issuing one more request keeps the last minute
    /// within `requests_per_minute`, then records the issue time.
    pub fn admit(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = clock.now();
                while let Some(&front) = issued.front() {
                    if now >= front + WINDOW {
                        issued.pop_front();
                    } else {
                        break;
                    }
                }
                if issued.len() < self.requests_per_minute {
                    issued.push_back(now);
                    self.history.lock().unwrap().push(now);
                    return;
                }
                (issued[0] + WINDOW).saturating_sub(now)
            };
            clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }

    pub fn admission_history(&self) -> Vec<Duration> {
        self.history.lock().unwrap().clone()
    }
}

pub struct Permit<'a> {
    limiter: &'a EndpointLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.in_flight.lock().unwrap() -= 1;
        self.limiter.released.notify_one();
    }
}

/// Largest number of admissions falling inside any half-open 60 s window.
pub fn max_in_any_window(times: &[Duration]) -> usize {
    let mut sorted = times.to_vec();
    sorted.sort();
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..sorted.len() {
        while sorted[hi] >= sorted[lo] + WINDOW {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}
