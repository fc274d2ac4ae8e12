//! Session clocks.
//!
//! Every timestamp in a session comes from one injectable clock so that
//! simulated runs are reproducible. The real clock reads system time; the
//! simulated clock only moves when the session driver advances it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Source of session wall time in milliseconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Virtual clock. Cloning shares the underlying counter.
#[derive(Debug, Clone)]
pub struct SimClock {
    now: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new(start_ms: u64) -> Self {
        Self {
            now: Arc::new(AtomicU64::new(start_ms)),
        }
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::AcqRel);
    }

    /// Moves the clock forward to `ms`. Never moves it backwards.
    pub fn advance_to(&self, ms: u64) {
        self.now.fetch_max(ms, Ordering::AcqRel);
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Real,
    #[default]
    Simulated,
}

/// Formats a wall time as `H:MM AM/PM`, shifted by `utc_offset_minutes`.
pub fn time_label(wall_time_ms: u64, utc_offset_minutes: i32) -> String {
    let minutes_of_day = {
        let total = (wall_time_ms / 60_000) as i64 + utc_offset_minutes as i64;
        total.rem_euclid(24 * 60)
    };
    let hour24 = minutes_of_day / 60;
    let minute = minutes_of_day % 60;
    let (hour12, suffix) = match hour24 {
        0 => (12, "AM"),
        1..=11 => (hour24, "AM"),
        12 => (12, "PM"),
        _ => (hour24 - 12, "PM"),
    };
    format!("{hour12}:{minute:02} {suffix}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_only_moves_forward() {
        let clock = SimClock::new(1_000);
        clock.advance(500);
        assert_eq!(clock.now_ms(), 1_500);
        clock.advance_to(1_200);
        assert_eq!(clock.now_ms(), 1_500);
        clock.advance_to(9_000);
        assert_eq!(clock.now_ms(), 9_000);
    }

    #[test]
    fn clones_share_time() {
        let a = SimClock::new(0);
        let b = a.clone();
        a.advance(42);
        assert_eq!(b.now_ms(), 42);
    }

    #[test]
    fn time_labels() {
        let h = 3_600_000;
        assert_eq!(time_label(0, 0), "12:00 AM");
        assert_eq!(time_label(18 * h + 35 * 60_000, 0), "6:35 PM");
        assert_eq!(time_label(12 * h + 5 * 60_000, 0), "12:05 PM");
        assert_eq!(time_label(9 * h, 0), "9:00 AM");
        assert_eq!(time_label(0, -60), "11:00 PM");
        assert_eq!(time_label(23 * h + 59 * 60_000 + 59_999, 0), "11:59 PM");
    }
}
