//! Enumerated path sets and path attributes.
//!
//! A path is an ordered list of legs (board platform -> alight platform on one
//! line). Attributes entering the choice utility are total in-vehicle time,
//! number of transfers, relative walking time (total walk divided by route
//! distance) and the commonality factor measuring overlap with the other
//! paths of the same OD pair.

use crate::domain::{NetworkModel, PlatformIdx, StationIdx};
use crate::error::{Error, Result};
use crate::sim::Timetable;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path as FsPath;

pub const BETA_DIM: usize = 4;

/// Choice coefficients of the C-logit utility, one per path attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaVector {
    pub in_vehicle: f64,
    pub transfers: f64,
    pub rel_walk: f64,
    pub commonality: f64,
}

impl BetaVector {
    pub const ZERO: BetaVector = BetaVector {
        in_vehicle: 0.0,
        transfers: 0.0,
        rel_walk: 0.0,
        commonality: 0.0,
    };

    pub fn new(in_vehicle: f64, transfers: f64, rel_walk: f64, commonality: f64) -> Self {
        BetaVector {
            in_vehicle,
            transfers,
            rel_walk,
            commonality,
        }
    }

    pub fn from_array(a: [f64; BETA_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn as_array(&self) -> [f64; BETA_DIM] {
        [self.in_vehicle, self.transfers, self.rel_walk, self.commonality]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Utility contribution beta . Y.
    pub fn utility(&self, y: &AttrVector) -> f64 {
        let b = self.as_array();
        let y = y.as_array();
        b[0] * y[0] + b[1] * y[1] + b[2] * y[2] + b[3] * y[3]
    }
}

impl std::fmt::Display for BetaVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(in_vehicle={:.4}, transfers={:.4}, rel_walk={:.4}, commonality={:.4})",
            self.in_vehicle, self.transfers, self.rel_walk, self.commonality
        )
    }
}

/// Path attribute vector Y aligned with [`BetaVector`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttrVector {
    /// Scheduled in-vehicle time over all legs, minutes.
    pub in_vehicle: f64,
    /// Number of transfers (legs - 1).
    pub transfers: f64,
    /// Total walking time divided by route distance, minutes per distance unit.
    pub rel_walk: f64,
    /// Commonality factor, dimensionless.
    pub commonality: f64,
}

impl AttrVector {
    pub fn as_array(&self) -> [f64; BETA_DIM] {
        [self.in_vehicle, self.transfers, self.rel_walk, self.commonality]
    }
}

/// How route distance is measured for the relative-walking-time attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Station count minus one.
    #[default]
    StationCount,
    /// Sum of per-link distances from the network file.
    LinkDistance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathLeg {
    pub board: PlatformIdx,
    pub alight: PlatformIdx,
    pub line: String,
    pub direction: String,
}

/// A compiled path: legs plus derived station sequence and attributes.
#[derive(Debug, Clone)]
pub struct Path {
    pub origin: StationIdx,
    pub dest: StationIdx,
    pub legs: Vec<PathLeg>,
    /// Stations visited in order, from origin to destination.
    pub stations: Vec<StationIdx>,
    /// Total walking time (access + transfers + egress), minutes.
    pub walk_min: f64,
    /// Route distance in the configured unit.
    pub distance: f64,
    pub attrs: AttrVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OdIdx(pub u32);

#[derive(Debug, Clone)]
pub struct OdPaths {
    pub origin: StationIdx,
    pub dest: StationIdx,
    pub paths: Vec<Path>,
}

/// All enumerated paths, grouped by OD pair and indexed deterministically.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub ods: Vec<OdPaths>,
    od_index: BTreeMap<(StationIdx, StationIdx), OdIdx>,
}

/// Path-set file schema: "origin-destination" -> list of paths given as leg
/// lists (see docs/paths.schema.json).
pub type PathSetFile = BTreeMap<String, Vec<RawPath>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPath {
    pub legs: Vec<RawPathLeg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawPathLeg {
    pub board: String,
    pub alight: String,
    pub line: String,
    pub direction: String,
}

/// Commonality factor of path `r` within its OD path set:
/// `CF_r = ln sum_{r'} (L_{r,r'} / (L_r L_{r'}))^gamma`
/// where `L_{r,r'}` counts stations shared by the two paths.
pub fn commonality_factor(sequences: &[Vec<StationIdx>], r: usize, gamma: f64) -> Result<f64> {
    if sequences.iter().any(|s| s.is_empty()) {
        return Err(Error::Validation(
            "commonality factor of a path with empty station sequence".into(),
        ));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config("gamma must be positive".into()));
    }
    let own: BTreeSet<StationIdx> = sequences[r].iter().copied().collect();
    let l_r = sequences[r].len() as f64;
    let mut sum = 0.0;
    for other in sequences {
        let shared = other.iter().filter(|s| own.contains(s)).count() as f64;
        let l_other = other.len() as f64;
        sum += (shared / (l_r * l_other)).powf(gamma);
    }
    Ok(sum.ln())
}

/// Walk through a leg's covering run and return (stations ridden, scheduled
/// minutes on board).
fn leg_schedule(
    leg: &PathLeg,
    network: &NetworkModel,
    timetable: &Timetable,
) -> Result<(Vec<StationIdx>, f64)> {
    let board = network.platform(leg.board);
    let alight = network.platform(leg.alight);
    let (run, i, j) = timetable
        .covering_run(&leg.line, &leg.direction, board.station, alight.station)
        .ok_or_else(|| {
            Error::Unservable(format!(
                "no scheduled service on line {} ({}) from {} to {}",
                leg.line,
                leg.direction,
                network.station_id(board.station),
                network.station_id(alight.station)
            ))
        })?;
    let stations = run.stops[i..=j].iter().map(|s| s.station).collect();
    let minutes =
        (run.stops[j].arrival.seconds() as f64 - run.stops[i].departure.seconds() as f64) / 60.0;
    Ok((stations, minutes))
}

fn leg_distance(
    stations: &[StationIdx],
    leg: &PathLeg,
    network: &NetworkModel,
    mode: DistanceMode,
) -> f64 {
    match mode {
        DistanceMode::StationCount => (stations.len() - 1) as f64,
        DistanceMode::LinkDistance => stations
            .windows(2)
            .map(|w| {
                network
                    .link_distance(&leg.line, &leg.direction, w[0], w[1])
                    .unwrap_or(1.0)
            })
            .sum(),
    }
}

struct CompiledLegs {
    legs: Vec<PathLeg>,
    stations: Vec<StationIdx>,
    in_vehicle: f64,
    walk_min: f64,
    distance: f64,
}

fn compile_legs(
    raw: &RawPath,
    origin: StationIdx,
    dest: StationIdx,
    network: &NetworkModel,
    timetable: &Timetable,
    mode: DistanceMode,
) -> Result<CompiledLegs> {
    if raw.legs.is_empty() {
        return Err(Error::Validation("path with no legs".into()));
    }
    let mut legs = Vec::with_capacity(raw.legs.len());
    for l in &raw.legs {
        let board = network
            .platform_idx(&l.board)
            .ok_or_else(|| Error::Validation(format!("unknown platform {:?}", l.board)))?;
        let alight = network
            .platform_idx(&l.alight)
            .ok_or_else(|| Error::Validation(format!("unknown platform {:?}", l.alight)))?;
        for (p, role) in [(board, "board"), (alight, "alight")] {
            let pf = network.platform(p);
            if pf.line != l.line || pf.direction != l.direction {
                return Err(Error::Validation(format!(
                    "{role} platform {:?} does not serve line {} ({})",
                    network.platform(p).id,
                    l.line,
                    l.direction
                )));
            }
        }
        legs.push(PathLeg {
            board,
            alight,
            line: l.line.clone(),
            direction: l.direction.clone(),
        });
    }

    let first = network.platform(legs[0].board);
    let last = network.platform(legs.last().unwrap().alight);
    if first.station != origin || last.station != dest {
        return Err(Error::Validation(format!(
            "path endpoints {}..{} do not match OD {}-{}",
            network.station_id(first.station),
            network.station_id(last.station),
            network.station_id(origin),
            network.station_id(dest)
        )));
    }

    let mut stations: Vec<StationIdx> = Vec::new();
    let mut in_vehicle = 0.0;
    let mut distance = 0.0;
    let mut walk_s = first.access_walk_s as f64 + last.egress_walk_s as f64;
    for (k, leg) in legs.iter().enumerate() {
        if k > 0 {
            let prev_alight = legs[k - 1].alight;
            let board_station = network.platform(leg.board).station;
            if network.platform(prev_alight).station != board_station {
                return Err(Error::Validation(
                    "consecutive legs do not chain at a common station".into(),
                ));
            }
            let walk = network
                .platform(prev_alight)
                .transfer_walk_s
                .get(&leg.board)
                .copied()
                .ok_or_else(|| {
                    Error::Unservable(format!(
                        "no transfer walk time from platform {:?} to {:?}",
                        network.platform(prev_alight).id,
                        network.platform(leg.board).id
                    ))
                })?;
            walk_s += walk as f64;
        }
        let (leg_stations, minutes) = leg_schedule(leg, network, timetable)?;
        distance += leg_distance(&leg_stations, leg, network, mode);
        in_vehicle += minutes;
        let skip = if k > 0 { 1 } else { 0 };
        stations.extend_from_slice(&leg_stations[skip..]);
    }

    Ok(CompiledLegs {
        legs,
        stations,
        in_vehicle,
        walk_min: walk_s / 60.0,
        distance,
    })
}

impl PathSet {
    /// Compile a raw path-set file against the network and timetable; derives
    /// station sequences, schedule attributes and commonality factors.
    pub fn compile(
        file: &PathSetFile,
        network: &NetworkModel,
        timetable: &Timetable,
        mode: DistanceMode,
        gamma: f64,
    ) -> Result<Self> {
        let mut ods = Vec::new();
        let mut od_index = BTreeMap::new();
        for (od_key, raw_paths) in file {
            let (o_id, d_id) = od_key.split_once('-').ok_or_else(|| {
                Error::Validation(format!("bad OD key {od_key:?}, expected \"origin-dest\""))
            })?;
            let origin = network
                .station_idx(o_id)
                .ok_or_else(|| Error::Validation(format!("unknown origin station {o_id:?}")))?;
            let dest = network
                .station_idx(d_id)
                .ok_or_else(|| Error::Validation(format!("unknown destination station {d_id:?}")))?;
            if raw_paths.is_empty() {
                return Err(Error::Validation(format!("OD {od_key} has an empty path set")));
            }

            let compiled: Vec<CompiledLegs> = raw_paths
                .iter()
                .map(|raw| compile_legs(raw, origin, dest, network, timetable, mode))
                .collect::<Result<_>>()?;
            let sequences: Vec<Vec<StationIdx>> =
                compiled.iter().map(|c| c.stations.clone()).collect();

            let mut paths = Vec::with_capacity(compiled.len());
            for (r, c) in compiled.into_iter().enumerate() {
                let cf = commonality_factor(&sequences, r, gamma)?;
                paths.push(Path {
                    origin,
                    dest,
                    attrs: AttrVector {
                        in_vehicle: c.in_vehicle,
                        transfers: (c.legs.len() - 1) as f64,
                        rel_walk: c.walk_min / c.distance,
                        commonality: cf,
                    },
                    legs: c.legs,
                    stations: c.stations,
                    walk_min: c.walk_min,
                    distance: c.distance,
                });
            }
            od_index.insert((origin, dest), OdIdx(ods.len() as u32));
            ods.push(OdPaths {
                origin,
                dest,
                paths,
            });
        }
        Ok(PathSet { ods, od_index })
    }

    pub fn load(
        path: &FsPath,
        network: &NetworkModel,
        timetable: &Timetable,
        mode: DistanceMode,
        gamma: f64,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(crate::error::io_err(path.display().to_string()))?;
        let file: PathSetFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::compile(&file, network, timetable, mode, gamma)
    }

    pub fn od_idx(&self, origin: StationIdx, dest: StationIdx) -> Option<OdIdx> {
        self.od_index.get(&(origin, dest)).copied()
    }

    pub fn od(&self, i: OdIdx) -> &OdPaths {
        &self.ods[i.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.ods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ods.is_empty()
    }

    /// Total number of paths over all OD pairs (the RMSE denominator).
    pub fn total_paths(&self) -> usize {
        self.ods.iter().map(|od| od.paths.len()).sum()
    }
}

/// Network/path-set consistency diagnostics. Unlike compilation errors these
/// are collected rather than failing fast, so a data file can be fixed in one
/// pass.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub messages: Vec<String>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.messages.is_empty()
    }
}

/// Check a raw path-set file against the network and timetable: dangling
/// platform references, unservable paths, OD pairs with empty path sets.
pub fn validate_network(
    network: &NetworkModel,
    paths: &PathSetFile,
    timetable: &Timetable,
) -> Diagnostics {
    let mut diag = Diagnostics::default();
    for (od_key, raw_paths) in paths {
        if raw_paths.is_empty() {
            diag.messages.push(format!("OD {od_key}: empty path set"));
            continue;
        }
        let od = match od_key
            .split_once('-')
            .and_then(|(o, d)| Some((network.station_idx(o)?, network.station_idx(d)?)))
        {
            Some(od) => od,
            None => {
                diag.messages
                    .push(format!("OD {od_key}: unknown stations or bad key"));
                continue;
            }
        };
        for (r, raw) in raw_paths.iter().enumerate() {
            for leg in &raw.legs {
                for pid in [&leg.board, &leg.alight] {
                    if network.platform_idx(pid).is_none() {
                        diag.messages.push(format!(
                            "OD {od_key} path {}: unknown platform {pid:?}",
                            r + 1
                        ));
                    }
                }
            }
            if raw.legs.iter().all(|leg| {
                network.platform_idx(&leg.board).is_some()
                    && network.platform_idx(&leg.alight).is_some()
            }) {
                if let Err(e) = compile_legs(
                    raw,
                    od.0,
                    od.1,
                    network,
                    timetable,
                    DistanceMode::StationCount,
                ) {
                    diag.messages
                        .push(format!("OD {od_key} path {}: {e}", r + 1));
                }
            }
        }
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn s(i: u32) -> StationIdx {
        StationIdx(i)
    }

    #[test]
    fn single_path_cf_is_closed_form() {
        // One path of 4 stations: CF = ln(L^-gamma) = -gamma ln L.
        let seqs = vec![vec![s(0), s(1), s(2), s(3)]];
        let cf = commonality_factor(&seqs, 0, 5.0).unwrap();
        assert_relative_eq!(cf, -5.0 * 4.0_f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn identical_paths_share_cf() {
        let seq = vec![s(0), s(1), s(2), s(3)];
        let seqs = vec![seq.clone(), seq];
        let cf0 = commonality_factor(&seqs, 0, 5.0).unwrap();
        let cf1 = commonality_factor(&seqs, 1, 5.0).unwrap();
        assert_relative_eq!(cf0, (2.0 * 4.0_f64.powi(-5)).ln(), max_relative = 1e-12);
        assert_eq!(cf0, cf1);
    }

    #[test]
    fn cf_invariant_under_path_set_permutation() {
        let a = vec![s(0), s(1), s(2), s(4)];
        let b = vec![s(0), s(3), s(4)];
        let c = vec![s(0), s(1), s(3), s(4)];
        let orig = vec![a.clone(), b.clone(), c.clone()];
        let perm = vec![c, a.clone(), b];
        let cf_orig = commonality_factor(&orig, 0, 5.0).unwrap();
        let cf_perm = commonality_factor(&perm, 1, 5.0).unwrap();
        assert_eq!(cf_orig, cf_perm);
    }

    #[test]
    fn empty_sequence_rejected() {
        let seqs = vec![vec![]];
        assert!(commonality_factor(&seqs, 0, 5.0).is_err());
    }
}
