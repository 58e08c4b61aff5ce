//! Flow, share and delay-rate tables over the aggregated time-space grid.
//!
//! All tables key rows by station indices and 1-based grid intervals and
//! iterate in deterministic (BTreeMap) order.

use crate::domain::{StationIdx, TimeGrid};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// OD entry flow q^{i_m,j}: passengers entering origin `i` during interval
/// `m` bound for destination `j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryFlowTable {
    map: BTreeMap<(StationIdx, u32, StationIdx), f64>,
}

impl EntryFlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, origin: StationIdx, m: u32, dest: StationIdx, count: f64) {
        debug_assert!(count >= 0.0);
        *self.map.entry((origin, m, dest)).or_insert(0.0) += count;
    }

    pub fn set(&mut self, origin: StationIdx, m: u32, dest: StationIdx, count: f64) {
        self.map.insert((origin, m, dest), count);
    }

    pub fn get(&self, origin: StationIdx, m: u32, dest: StationIdx) -> f64 {
        self.map.get(&(origin, m, dest)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (StationIdx, u32, StationIdx, f64)> + '_ {
        self.map.iter().map(|(&(i, m, j), &q)| (i, m, j, q))
    }

    pub fn total(&self) -> f64 {
        self.map.values().sum()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (&(_, m, _), &q) in &self.map {
            if q < 0.0 || !q.is_finite() {
                return Err(Error::Validation(format!("negative entry flow {q}")));
            }
            if m == 0 {
                return Err(Error::Validation("interval indices are 1-based".into()));
            }
        }
        Ok(())
    }
}

/// OD entry-exit flow q^{i_m,j_n}: entry flow further split by exit interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryExitFlowTable {
    map: BTreeMap<(StationIdx, u32, StationIdx, u32), f64>,
}

impl EntryExitFlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, origin: StationIdx, m: u32, dest: StationIdx, n: u32, count: f64) {
        debug_assert!(n >= m, "exit interval precedes entry interval");
        *self.map.entry((origin, m, dest, n)).or_insert(0.0) += count;
    }

    pub fn get(&self, origin: StationIdx, m: u32, dest: StationIdx, n: u32) -> f64 {
        self.map.get(&(origin, m, dest, n)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (StationIdx, u32, StationIdx, u32, f64)> + '_ {
        self.map.iter().map(|(&(i, m, j, n), &q)| (i, m, j, n, q))
    }

    /// Sum over exit intervals, giving back the entry flow.
    pub fn roll_up(&self) -> EntryFlowTable {
        let mut t = EntryFlowTable::new();
        for (i, m, j, _, q) in self.iter() {
            t.add(i, m, j, q);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sum of squared differences against another table over the union of
    /// cells; missing cells count as zero on either side.
    pub fn squared_error(&self, other: &EntryExitFlowTable) -> f64 {
        let mut sum = 0.0;
        for (&k, &a) in &self.map {
            let b = other.map.get(&k).copied().unwrap_or(0.0);
            sum += (a - b) * (a - b);
        }
        for (&k, &b) in &other.map {
            if !self.map.contains_key(&k) {
                sum += b * b;
            }
        }
        sum
    }
}

/// Path shares p_r^{i_m,j}, stored per (origin, interval, destination) row as
/// a dense vector over the OD's path indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShareTable {
    map: BTreeMap<(StationIdx, u32, StationIdx), Vec<f64>>,
}

impl ShareTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_row(&mut self, origin: StationIdx, m: u32, dest: StationIdx, shares: Vec<f64>) {
        self.map.insert((origin, m, dest), shares);
    }

    pub fn row(&self, origin: StationIdx, m: u32, dest: StationIdx) -> Option<&[f64]> {
        self.map.get(&(origin, m, dest)).map(|v| v.as_slice())
    }

    pub fn get(&self, origin: StationIdx, m: u32, dest: StationIdx, r: usize) -> Option<f64> {
        self.map
            .get(&(origin, m, dest))
            .and_then(|v| v.get(r))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StationIdx, u32, StationIdx, &[f64])> + '_ {
        self.map
            .iter()
            .map(|(&(i, m, j), v)| (i, m, j, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Rows must sum to 1 within 1e-9 with every share in [0, 1].
    pub fn validate(&self) -> Result<()> {
        for (&(i, m, j), row) in &self.map {
            if row.is_empty() {
                return Err(Error::Validation(format!(
                    "empty share row for ({:?},{m},{:?})",
                    i, j
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "share row for ({i:?},{m},{j:?}) sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
                return Err(Error::Validation(format!(
                    "share out of [0,1] in row ({i:?},{m},{j:?})"
                )));
            }
        }
        Ok(())
    }
}

/// Delay rates mu_r^{i_m,j_n}: per (origin, entry interval, destination,
/// path) the distribution of exit intervals, stored dense over n = 1..=N.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DelayRateTable {
    map: BTreeMap<(StationIdx, u32, StationIdx, usize), Vec<f64>>,
    n: u32,
}

impl DelayRateTable {
    pub fn new(grid: &TimeGrid) -> Self {
        DelayRateTable {
            map: BTreeMap::new(),
            n: grid.n,
        }
    }

    pub fn horizon(&self) -> u32 {
        self.n
    }

    pub fn set_row(
        &mut self,
        origin: StationIdx,
        m: u32,
        dest: StationIdx,
        r: usize,
        rates: Vec<f64>,
    ) {
        debug_assert_eq!(rates.len(), self.n as usize);
        self.map.insert((origin, m, dest, r), rates);
    }

    pub fn row(&self, origin: StationIdx, m: u32, dest: StationIdx, r: usize) -> Option<&[f64]> {
        self.map.get(&(origin, m, dest, r)).map(|v| v.as_slice())
    }

    pub fn iter(
        &self,
    ) -> impl Iterator<Item = (StationIdx, u32, StationIdx, usize, &[f64])> + '_ {
        self.map
            .iter()
            .map(|(&(i, m, j, r), v)| (i, m, j, r, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Every stored row must be a probability distribution over exit
    /// intervals n >= m.
    pub fn validate(&self) -> Result<()> {
        for (&(i, m, j, r), row) in &self.map {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "delay rates for ({i:?},{m},{j:?},path {r}) sum to {sum}"
                )));
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Validation(format!(
                    "delay rate out of [0,1] for ({i:?},{m},{j:?},path {r})"
                )));
            }
            if row[..(m - 1) as usize].iter().any(|&v| v != 0.0) {
                return Err(Error::Validation(format!(
                    "delay rate mass before entry interval for ({i:?},{m},{j:?},path {r})"
                )));
            }
        }
        Ok(())
    }
}
