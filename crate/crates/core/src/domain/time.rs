//! Clock times and the aggregated time-space grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A clock time as seconds since midnight. Values past 24h are allowed so a
/// cool-down window can run over midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClockTime(pub u32);

impl ClockTime {
    pub fn from_hms(h: u32, m: u32, s: u32) -> Self {
        ClockTime(h * 3600 + m * 60 + s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let bad = || Error::Parse {
            file: String::new(),
            message: format!("invalid clock time {text:?}, expected HH:MM:SS or HH:MM"),
        };
        if parts.len() != 2 && parts.len() != 3 {
            return Err(bad());
        }
        let mut nums = Vec::with_capacity(3);
        for p in &parts {
            nums.push(p.parse::<u32>().map_err(|_| bad())?);
        }
        let (h, m, s) = (nums[0], nums[1], *nums.get(2).unwrap_or(&0));
        if m >= 60 || s >= 60 {
            return Err(bad());
        }
        Ok(Self::from_hms(h, m, s))
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    pub fn plus(self, seconds: u32) -> Self {
        ClockTime(self.0 + seconds)
    }

    pub fn minus(self, seconds: u32) -> Self {
        ClockTime(self.0.saturating_sub(seconds))
    }
}

impl std::fmt::Display for ClockTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:02}:{:02}:{:02}",
            self.0 / 3600,
            (self.0 % 3600) / 60,
            self.0 % 60
        )
    }
}

impl TryFrom<String> for ClockTime {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ClockTime::parse(&s)
    }
}

impl From<ClockTime> for String {
    fn from(t: ClockTime) -> String {
        t.to_string()
    }
}

/// The study period divided into `n` elementary intervals of length `tau`.
/// Intervals are numbered from 1, matching the usual i_m / j_n notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: ClockTime,
    pub end: ClockTime,
    pub tau_s: u32,
    pub n: u32,
}

/// Build the aggregation grid. The period length must be an exact multiple of
/// `tau_s`.
pub fn build_time_grid(start: ClockTime, end: ClockTime, tau_s: u32) -> Result<TimeGrid> {
    if tau_s == 0 {
        return Err(Error::Config("interval length tau must be positive".into()));
    }
    if end <= start {
        return Err(Error::Config(format!(
            "study period end {end} must be after start {start}"
        )));
    }
    let len = end.0 - start.0;
    if len % tau_s != 0 {
        return Err(Error::Config(format!(
            "period length {len}s is not divisible by tau {tau_s}s"
        )));
    }
    Ok(TimeGrid {
        start,
        end,
        tau_s,
        n: len / tau_s,
    })
}

impl TimeGrid {
    /// 1-based interval containing `t`, or None outside [start, end).
    pub fn interval_of(&self, t: ClockTime) -> Option<u32> {
        if t < self.start || t >= self.end {
            None
        } else {
            Some(1 + (t.0 - self.start.0) / self.tau_s)
        }
    }

    /// Interval of `t` with times at or past the horizon clamped to the last
    /// interval. Returns `(interval, clamped)`; `t` must not precede the
    /// period start.
    pub fn interval_clamped(&self, t: ClockTime) -> (u32, bool) {
        match self.interval_of(t) {
            Some(m) => (m, false),
            None => (self.n, true),
        }
    }

    /// Half-open bounds [lo, hi) of a 1-based interval.
    pub fn bounds(&self, m: u32) -> (ClockTime, ClockTime) {
        debug_assert!(m >= 1 && m <= self.n);
        let lo = self.start.plus((m - 1) * self.tau_s);
        (lo, lo.plus(self.tau_s))
    }

    pub fn intervals(&self) -> impl Iterator<Item = u32> {
        1..=self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: u32, m: u32) -> ClockTime {
        ClockTime::from_hms(h, m, 0)
    }

    #[test]
    fn one_hour_quarters() {
        let g = build_time_grid(t(18, 0), t(19, 0), 900).unwrap();
        assert_eq!(g.n, 4);
    }

    #[test]
    fn half_hour_two_intervals() {
        // 7:00-7:30 with tau = 15 min splits into {1: 7:00-7:15, 2: 7:15-7:30}.
        let g = build_time_grid(t(7, 0), t(7, 30), 900).unwrap();
        assert_eq!(g.n, 2);
        assert_eq!(g.bounds(1), (t(7, 0), t(7, 15)));
        assert_eq!(g.bounds(2), (t(7, 15), t(7, 30)));
        assert_eq!(g.interval_of(ClockTime::from_hms(7, 14, 59)), Some(1));
        assert_eq!(g.interval_of(t(7, 15)), Some(2));
        assert_eq!(g.interval_of(t(7, 30)), None);
    }

    #[test]
    fn non_divisible_period_rejected() {
        let err = build_time_grid(t(18, 0), t(19, 0), 7 * 60).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn clamping_past_horizon() {
        let g = build_time_grid(t(7, 0), t(7, 30), 900).unwrap();
        assert_eq!(g.interval_clamped(t(7, 45)), (2, true));
        assert_eq!(g.interval_clamped(t(7, 10)), (1, false));
    }

    #[test]
    fn clock_time_round_trip() {
        let t = ClockTime::parse("18:05:09").unwrap();
        assert_eq!(t.to_string(), "18:05:09");
        assert!(ClockTime::parse("25:00:00").is_ok());
        assert!(ClockTime::parse("18:61:00").is_err());
        assert!(ClockTime::parse("garbage").is_err());
    }
}
