//! Stations, platforms and the walk-time model.
//!
//! Station and platform identifiers are opaque strings in the JSON input
//! and are interned to dense indices on load.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path as FsPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StationIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlatformIdx(pub u32);

#[derive(Debug, Clone)]
pub struct Station {
    pub id: String,
    pub name: String,
    pub platforms: Vec<PlatformIdx>,
}

#[derive(Debug, Clone)]
pub struct Platform {
    pub id: String,
    pub station: StationIdx,
    pub line: String,
    pub direction: String,
    /// Gate-to-platform walk, seconds.
    pub access_walk_s: u32,
    /// Platform-to-gate walk, seconds.
    pub egress_walk_s: u32,
    /// Walk to other platforms of the same station, seconds.
    pub transfer_walk_s: BTreeMap<PlatformIdx, u32>,
}

/// Network file schema (see docs/network.schema.json).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub stations: Vec<StationEntry>,
    pub platforms: Vec<PlatformEntry>,
    /// Optional per-link distances used for the relative-walking-time
    /// attribute; keyed by line/direction and adjacent station pair.
    #[serde(default)]
    pub links: Vec<LinkEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationEntry {
    pub id: String,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlatformEntry {
    pub id: String,
    pub station: String,
    pub line: String,
    pub direction: String,
    pub access_walk_s: u32,
    pub egress_walk_s: u32,
    #[serde(default)]
    pub transfer_walk_s: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkEntry {
    pub line: String,
    pub direction: String,
    pub from: String,
    pub to: String,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub stations: Vec<Station>,
    pub platforms: Vec<Platform>,
    station_ids: BTreeMap<String, StationIdx>,
    platform_ids: BTreeMap<String, PlatformIdx>,
    /// (line, direction, from, to) -> distance override.
    link_distance: BTreeMap<(String, String, StationIdx, StationIdx), f64>,
    /// (station, line, direction) -> platform serving it.
    boarding_platform: BTreeMap<(StationIdx, String, String), PlatformIdx>,
}

impl NetworkModel {
    pub fn from_file(file: NetworkFile) -> Result<Self> {
        let mut station_ids = BTreeMap::new();
        let mut stations = Vec::with_capacity(file.stations.len());
        for (i, s) in file.stations.iter().enumerate() {
            if station_ids
                .insert(s.id.clone(), StationIdx(i as u32))
                .is_some()
            {
                return Err(Error::Validation(format!("duplicate station id {:?}", s.id)));
            }
            stations.push(Station {
                id: s.id.clone(),
                name: if s.name.is_empty() {
                    s.id.clone()
                } else {
                    s.name.clone()
                },
                platforms: Vec::new(),
            });
        }

        let mut platform_ids = BTreeMap::new();
        for (i, p) in file.platforms.iter().enumerate() {
            if platform_ids
                .insert(p.id.clone(), PlatformIdx(i as u32))
                .is_some()
            {
                return Err(Error::Validation(format!("duplicate platform id {:?}", p.id)));
            }
        }

        let mut platforms = Vec::with_capacity(file.platforms.len());
        let mut boarding_platform = BTreeMap::new();
        for (i, p) in file.platforms.iter().enumerate() {
            let station = *station_ids.get(&p.station).ok_or_else(|| {
                Error::Validation(format!(
                    "platform {:?} references unknown station {:?}",
                    p.id, p.station
                ))
            })?;
            let mut transfer_walk_s = BTreeMap::new();
            for (other_id, walk) in &p.transfer_walk_s {
                let other = *platform_ids.get(other_id).ok_or_else(|| {
                    Error::Validation(format!(
                        "platform {:?} transfer map references unknown platform {:?}",
                        p.id, other_id
                    ))
                })?;
                let other_station = &file.platforms[other.0 as usize].station;
                if *station_ids.get(other_station).unwrap() != station {
                    return Err(Error::Validation(format!(
                        "platform {:?} transfer map references platform {:?} of another station",
                        p.id, other_id
                    )));
                }
                transfer_walk_s.insert(other, *walk);
            }
            stations[station.0 as usize].platforms.push(PlatformIdx(i as u32));
            boarding_platform.insert(
                (station, p.line.clone(), p.direction.clone()),
                PlatformIdx(i as u32),
            );
            platforms.push(Platform {
                id: p.id.clone(),
                station,
                line: p.line.clone(),
                direction: p.direction.clone(),
                access_walk_s: p.access_walk_s,
                egress_walk_s: p.egress_walk_s,
                transfer_walk_s,
            });
        }

        for s in &stations {
            if s.platforms.is_empty() {
                return Err(Error::Validation(format!(
                    "station {:?} has no platforms",
                    s.id
                )));
            }
        }

        let mut link_distance = BTreeMap::new();
        for l in &file.links {
            let from = *station_ids.get(&l.from).ok_or_else(|| {
                Error::Validation(format!("link references unknown station {:?}", l.from))
            })?;
            let to = *station_ids.get(&l.to).ok_or_else(|| {
                Error::Validation(format!("link references unknown station {:?}", l.to))
            })?;
            if !(l.distance > 0.0) {
                return Err(Error::Validation(format!(
                    "link {}->{} distance must be positive",
                    l.from, l.to
                )));
            }
            link_distance.insert((l.line.clone(), l.direction.clone(), from, to), l.distance);
        }

        Ok(NetworkModel {
            stations,
            platforms,
            station_ids,
            platform_ids,
            link_distance,
            boarding_platform,
        })
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            file: origin.into(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(crate::error::io_err(path.display().to_string()))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn station_idx(&self, id: &str) -> Option<StationIdx> {
        self.station_ids.get(id).copied()
    }

    pub fn platform_idx(&self, id: &str) -> Option<PlatformIdx> {
        self.platform_ids.get(id).copied()
    }

    pub fn station(&self, i: StationIdx) -> &Station {
        &self.stations[i.0 as usize]
    }

    pub fn platform(&self, i: PlatformIdx) -> &Platform {
        &self.platforms[i.0 as usize]
    }

    pub fn station_id(&self, i: StationIdx) -> &str {
        &self.stations[i.0 as usize].id
    }

    /// Platform of `station` served by (line, direction), if any.
    pub fn boarding_platform(
        &self,
        station: StationIdx,
        line: &str,
        direction: &str,
    ) -> Option<PlatformIdx> {
        self.boarding_platform
            .get(&(station, line.to_string(), direction.to_string()))
            .copied()
    }

    /// Distance override for a line link, if the network file provides one.
    pub fn link_distance(
        &self,
        line: &str,
        direction: &str,
        from: StationIdx,
        to: StationIdx,
    ) -> Option<f64> {
        self.link_distance
            .get(&(line.to_string(), direction.to_string(), from, to))
            .copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_file() -> NetworkFile {
        serde_json::from_str(
            r#"{
              "stations": [{"id": "a"}, {"id": "b"}],
              "platforms": [
                {"id": "a_L_out", "station": "a", "line": "L", "direction": "out",
                 "access_walk_s": 60, "egress_walk_s": 30, "transfer_walk_s": {}},
                {"id": "b_L_out", "station": "b", "line": "L", "direction": "out",
                 "access_walk_s": 45, "egress_walk_s": 30, "transfer_walk_s": {}}
              ],
              "links": [{"line": "L", "direction": "out", "from": "a", "to": "b", "distance": 2.0}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn builds_and_indexes() {
        let net = NetworkModel::from_file(toy_file()).unwrap();
        let a = net.station_idx("a").unwrap();
        assert_eq!(net.station(a).platforms.len(), 1);
        let p = net.boarding_platform(a, "L", "out").unwrap();
        assert_eq!(net.platform(p).access_walk_s, 60);
        let b = net.station_idx("b").unwrap();
        assert_eq!(net.link_distance("L", "out", a, b), Some(2.0));
    }

    #[test]
    fn rejects_cross_station_transfer() {
        let mut f = toy_file();
        f.platforms[0]
            .transfer_walk_s
            .insert("b_L_out".into(), 60);
        let err = NetworkModel::from_file(f).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_duplicate_station() {
        let mut f = toy_file();
        f.stations.push(StationEntry {
            id: "a".into(),
            name: String::new(),
        });
        assert!(NetworkModel::from_file(f).is_err());
    }
}
