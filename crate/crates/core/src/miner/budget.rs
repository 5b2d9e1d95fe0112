//! Request budget: remaining-quota tracking, reset waits and an in-flight cap.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};

/// Time source; tests substitute a manual clock so waits are instantaneous.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// A clock that only moves when slept on.
#[derive(Debug)]
pub struct ManualClock {
    millis: AtomicI64,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            millis: AtomicI64::new(start.timestamp_millis()),
        }
    }

    pub fn advance(&self, duration: Duration) {
        self.millis.fetch_add(duration.as_millis() as i64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        DateTime::from_timestamp_millis(self.millis.load(Ordering::SeqCst)).expect("clock in range")
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }
}

/// Rate-limit headers reported with a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateInfo {
    pub remaining: u64,
    pub reset_at: DateTime<Utc>,
}

#[derive(Debug)]
struct BudgetState {
    remaining: Option<u64>,
    reset_at: Option<DateTime<Utc>>,
    in_flight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetSnapshot {
    pub remaining: Option<u64>,
    pub reset_at: Option<DateTime<Utc>>,
    pub in_flight: usize,
}

pub struct RateBudget {
    state: Mutex<BudgetState>,
    slot_freed: Condvar,
    max_in_flight: usize,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for RateBudget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateBudget")
            .field("max_in_flight", &self.max_in_flight)
            .field("state", &self.snapshot())
            .finish()
    }
}

impl RateBudget {
    pub fn new(max_in_flight: usize, clock: Arc<dyn Clock>) -> Self {
        Self {
            state: Mutex::new(BudgetState {
                remaining: None,
                reset_at: None,
                in_flight: 0,
            }),
            slot_freed: Condvar::new(),
            max_in_flight: max_in_flight.max(1),
            clock,
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn snapshot(&self) -> BudgetSnapshot {
        let s = self.state.lock().unwrap();
        BudgetSnapshot {
            remaining: s.remaining,
            reset_at: s.reset_at,
            in_flight: s.in_flight,
        }
    }

    /// Blocks until a request may be issued: an in-flight slot is free and
    /// the quota is either unknown, non-zero, or past its reset time.
    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().unwrap();
        loop {
            if state.in_flight >= self.max_in_flight {
                state = self.slot_freed.wait(state).unwrap();
                continue;
            }
            if state.remaining == Some(0) {
                let now = self.clock.now();
                match state.reset_at {
                    Some(reset) if reset > now => {
                        let wait = (reset - now).to_std().unwrap_or_default();
                        drop(state);
                        log::info!("rate limit exhausted, waiting {}s for reset", wait.as_secs());
                        self.clock.sleep(wait);
                        state = self.state.lock().unwrap();
                        continue;
                    }
                    _ => {
                        state.remaining = None;
                        state.reset_at = None;
                    }
                }
            }
            state.in_flight += 1;
            if let Some(r) = state.remaining.as_mut() {
                *r -= 1;
            }
            return Permit { budget: self };
        }
    }

    fn record(&self, info: RateInfo) {
        let mut state = self.state.lock().unwrap();
        // Within one window the smaller count is the fresher one.
        state.remaining = match (state.remaining, state.reset_at) {
            (Some(r), Some(reset)) if reset == info.reset_at => Some(r.min(info.remaining)),
            _ => Some(info.remaining),
        };
        state.reset_at = Some(info.reset_at);
    }

    /// Forbids further requests until `reset_at`.
    pub fn exhaust_until(&self, reset_at: DateTime<Utc>) {
        let mut state = self.state.lock().unwrap();
        state.remaining = Some(0);
        state.reset_at = Some(reset_at);
    }
}

/// An issued request slot; dropping it frees the slot.
pub struct Permit<'a> {
    budget: &'a RateBudget,
}

impl Permit<'_> {
    pub fn record(&self, info: Option<RateInfo>) {
        if let Some(info) = info {
            self.budget.record(info);
        }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.budget.state.lock().unwrap();
        state.in_flight -= 1;
        drop(state);
        self.budget.slot_freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::sync::atomic::AtomicUsize;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn waits_for_reset_when_exhausted() {
        let clock = Arc::new(ManualClock::new(t0()));
        let budget = RateBudget::new(2, clock.clone());
        let reset = t0() + chrono::Duration::seconds(90);
        {
            let p = budget.acquire();
            p.record(Some(RateInfo {
                remaining: 0,
                reset_at: reset,
            }));
        }
        assert_eq!(budget.snapshot().remaining, Some(0));
        let _p = budget.acquire();
        assert!(clock.now() >= reset);
        assert_eq!(budget.snapshot().remaining, None);
    }

    #[test]
    fn decrements_known_quota() {
        let budget = RateBudget::new(4, Arc::new(ManualClock::new(t0())));
        {
            let p = budget.acquire();
            p.record(Some(RateInfo {
                remaining: 3,
                reset_at: t0(),
            }));
        }
        let _a = budget.acquire();
        let _b = budget.acquire();
        assert_eq!(budget.snapshot().remaining, Some(1));
        assert_eq!(budget.snapshot().in_flight, 2);
    }

    #[test]
    fn in_flight_never_exceeds_cap() {
        let budget = Arc::new(RateBudget::new(3, Arc::new(SystemClock)));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..12 {
                let budget = budget.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = budget.acquire();
                    let now = budget.snapshot().in_flight;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(budget.snapshot().in_flight, 0);
    }
}
