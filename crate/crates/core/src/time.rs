//! Timestamps, half-open time windows and day arithmetic.
//!
//! All times are UTC with second resolution. Days are the UTC calendar days
//! `[midnight, next midnight)`; a day index counts whole days from some
//! day-aligned anchor (usually the start of a trace's time span).

use crate::error::{Error, Result};
use chrono::{DateTime, NaiveDate, NaiveDateTime};
use std::fmt;

pub const SECS_PER_DAY: i64 = 86_400;

const TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// A UTC instant with second resolution (unix seconds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_unix(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub fn unix(self) -> i64 {
        self.0
    }

    /// Parses the strict `YYYY-MM-DDTHH:MM:SSZ` form and nothing else.
    pub fn parse(s: &str) -> Result<Self> {
        // chrono alone is lenient about digit counts, so check the shape first.
        let b = s.as_bytes();
        let shape_ok = b.len() == 20
            && b[4] == b'-'
            && b[7] == b'-'
            && b[10] == b'T'
            && b[13] == b':'
            && b[16] == b':'
            && b[19] == b'Z'
            && b.iter()
                .enumerate()
                .all(|(i, &c)| matches!(i, 4 | 7 | 10 | 13 | 16 | 19) || c.is_ascii_digit());
        if !shape_ok {
            return Err(Error::InvalidTimestamp(s.to_string()));
        }
        let dt = NaiveDateTime::parse_from_str(s, TIMESTAMP_FMT)
            .map_err(|_| Error::InvalidTimestamp(s.to_string()))?;
        Ok(Timestamp(dt.and_utc().timestamp()))
    }

    /// Parses a bare `YYYY-MM-DD` date as midnight UTC.
    pub fn parse_date(s: &str) -> Result<Self> {
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|_| Error::InvalidTimestamp(s.to_string()))?;
        Ok(Timestamp(
            d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp(),
        ))
    }

    /// Start of the UTC day containing this instant.
    pub fn floor_day(self) -> Self {
        Timestamp(self.0 - self.0.rem_euclid(SECS_PER_DAY))
    }

    pub fn is_day_aligned(self) -> bool {
        self.0.rem_euclid(SECS_PER_DAY) == 0
    }

    pub fn add_secs(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }

    pub fn add_days(self, days: i64) -> Self {
        Timestamp(self.0 + days * SECS_PER_DAY)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0, 0) {
            Some(dt) => write!(f, "{}", dt.format(TIMESTAMP_FMT)),
            None => write!(f, "@{}", self.0),
        }
    }
}

/// Half-open interval `[start, end)` with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    start: Timestamp,
    end: Timestamp,
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidWindow {
                start: start.to_string(),
                end: end.to_string(),
            });
        }
        Ok(TimeWindow { start, end })
    }

    pub fn start(self) -> Timestamp {
        self.start
    }

    pub fn end(self) -> Timestamp {
        self.end
    }

    pub fn len_secs(self) -> i64 {
        self.end.unix() - self.start.unix()
    }

    pub fn contains(self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    pub fn contains_window(self, other: TimeWindow) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// The `day`-th UTC day counted from a day-aligned anchor.
    pub fn day(anchor: Timestamp, day: u32) -> Self {
        debug_assert!(anchor.is_day_aligned());
        let start = anchor.add_days(day as i64);
        TimeWindow {
            start,
            end: start.add_days(1),
        }
    }

    /// `days` consecutive UTC days starting at `anchor + first_day`.
    pub fn days(anchor: Timestamp, first_day: u32, days: u32) -> Result<Self> {
        let start = anchor.add_days(first_day as i64);
        TimeWindow::new(start, start.add_days(days as i64))
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}
