//! Deterministic train timetable.

use crate::domain::{ClockTime, NetworkModel, StationIdx};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path as FsPath;

#[derive(Debug, Clone)]
pub struct TrainStop {
    pub station: StationIdx,
    pub arrival: ClockTime,
    pub departure: ClockTime,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub train_id: String,
    pub line: String,
    pub direction: String,
    pub cars: u32,
    pub stops: Vec<TrainStop>,
}

impl TrainRun {
    /// Position of `station` in the stop list at or after `from`.
    pub fn stop_after(&self, from: usize, station: StationIdx) -> Option<usize> {
        self.stops[from..]
            .iter()
            .position(|s| s.station == station)
            .map(|k| from + k)
    }
}

/// All train runs of the service day, sorted deterministically by
/// (line, direction, first departure, train id).
#[derive(Debug, Clone, Default)]
pub struct Timetable {
    pub runs: Vec<TrainRun>,
}

/// One row of the timetable CSV: a single stop of a train run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimetableRow {
    pub train_id: String,
    pub line: String,
    pub direction: String,
    pub cars: u32,
    pub station: String,
    pub arrival: String,
    pub departure: String,
}

impl Timetable {
    pub fn from_rows(rows: &[TimetableRow], network: &NetworkModel) -> Result<Self> {
        let mut runs: Vec<TrainRun> = Vec::new();
        for row in rows {
            let station = network.station_idx(&row.station).ok_or_else(|| {
                Error::Validation(format!(
                    "timetable references unknown station {:?}",
                    row.station
                ))
            })?;
            let arrival = ClockTime::parse(&row.arrival)?;
            let departure = ClockTime::parse(&row.departure)?;
            let stop = TrainStop {
                station,
                arrival,
                departure,
            };
            match runs.last_mut() {
                Some(run) if run.train_id == row.train_id => {
                    if run.line != row.line || run.direction != row.direction {
                        return Err(Error::Validation(format!(
                            "train {:?} changes line or direction mid-run",
                            row.train_id
                        )));
                    }
                    run.stops.push(stop);
                }
                _ => runs.push(TrainRun {
                    train_id: row.train_id.clone(),
                    line: row.line.clone(),
                    direction: row.direction.clone(),
                    cars: row.cars,
                    stops: vec![stop],
                }),
            }
        }
        let mut tt = Timetable { runs };
        tt.validate()?;
        tt.runs.sort_by(|a, b| {
            (&a.line, &a.direction, a.stops[0].departure, &a.train_id).cmp(&(
                &b.line,
                &b.direction,
                b.stops[0].departure,
                &b.train_id,
            ))
        });
        Ok(tt)
    }

    fn validate(&self) -> Result<()> {
        for run in &self.runs {
            if run.cars == 0 {
                return Err(Error::Validation(format!(
                    "train {:?} must have at least 1 car",
                    run.train_id
                )));
            }
            for (k, stop) in run.stops.iter().enumerate() {
                if stop.departure < stop.arrival {
                    return Err(Error::Validation(format!(
                        "train {:?} departs stop {k} before arriving",
                        run.train_id
                    )));
                }
                if k + 1 < run.stops.len() && run.stops[k + 1].arrival <= stop.departure {
                    return Err(Error::Validation(format!(
                        "train {:?} stop times not strictly increasing at stop {k}",
                        run.train_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_csv_reader<R: std::io::Read>(rdr: R, origin: &str, network: &NetworkModel) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(rdr);
        let mut rows = Vec::new();
        for rec in reader.deserialize::<TimetableRow>() {
            rows.push(rec.map_err(|e| Error::Parse {
                file: origin.into(),
                message: e.to_string(),
            })?);
        }
        Self::from_rows(&rows, network)
    }

    pub fn load(path: &FsPath, network: &NetworkModel) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(crate::error::io_err(path.display().to_string()))?;
        Self::from_csv_reader(file, &path.display().to_string(), network)
    }

    pub fn to_rows(&self, network: &NetworkModel) -> Vec<TimetableRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            for stop in &run.stops {
                rows.push(TimetableRow {
                    train_id: run.train_id.clone(),
                    line: run.line.clone(),
                    direction: run.direction.clone(),
                    cars: run.cars,
                    station: network.station_id(stop.station).to_string(),
                    arrival: stop.arrival.to_string(),
                    departure: stop.departure.to_string(),
                });
            }
        }
        rows
    }

    pub fn save(&self, path: &FsPath, network: &NetworkModel) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)
            .map_err(|e| Error::Internal(format!("csv writer {}: {e}", path.display())))?;
        for row in self.to_rows(network) {
            wtr.serialize(row)
                .map_err(|e| Error::Internal(format!("csv write: {e}")))?;
        }
        wtr.flush()
            .map_err(crate::error::io_err(path.display().to_string()))?;
        Ok(())
    }

    /// First run of (line, direction) whose stop list visits `from` and then
    /// `to`. Used for schedule-derived path attributes.
    pub fn covering_run(
        &self,
        line: &str,
        direction: &str,
        from: StationIdx,
        to: StationIdx,
    ) -> Option<(&TrainRun, usize, usize)> {
        self.runs
            .iter()
            .filter(|r| r.line == line && r.direction == direction)
            .find_map(|r| {
                let i = r.stop_after(0, from)?;
                let j = r.stop_after(i + 1, to)?;
                Some((r, i, j))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::NetworkModel;

    fn net() -> NetworkModel {
        NetworkModel::from_json(
            r#"{
              "stations": [{"id": "a"}, {"id": "b"}, {"id": "c"}],
              "platforms": [
                {"id": "pa", "station": "a", "line": "L", "direction": "out", "access_walk_s": 0, "egress_walk_s": 0},
                {"id": "pb", "station": "b", "line": "L", "direction": "out", "access_walk_s": 0, "egress_walk_s": 0},
                {"id": "pc", "station": "c", "line": "L", "direction": "out", "access_walk_s": 0, "egress_walk_s": 0}
              ]
            }"#,
            "test",
        )
        .unwrap()
    }

    fn row(train: &str, station: &str, arr: &str, dep: &str) -> TimetableRow {
        TimetableRow {
            train_id: train.into(),
            line: "L".into(),
            direction: "out".into(),
            cars: 4,
            station: station.into(),
            arrival: arr.into(),
            departure: dep.into(),
        }
    }

    #[test]
    fn parses_and_finds_covering_run() {
        let net = net();
        let rows = vec![
            row("t1", "a", "08:00:00", "08:00:30"),
            row("t1", "b", "08:05:00", "08:05:30"),
            row("t1", "c", "08:10:00", "08:10:00"),
        ];
        let tt = Timetable::from_rows(&rows, &net).unwrap();
        let a = net.station_idx("a").unwrap();
        let c = net.station_idx("c").unwrap();
        let (run, i, j) = tt.covering_run("L", "out", a, c).unwrap();
        assert_eq!(run.train_id, "t1");
        assert_eq!((i, j), (0, 2));
        assert!(tt.covering_run("L", "out", c, a).is_none());
    }

    #[test]
    fn rejects_decreasing_times() {
        let net = net();
        let rows = vec![
            row("t1", "a", "08:00:00", "08:00:30"),
            row("t1", "b", "08:00:30", "08:01:00"),
        ];
        assert!(Timetable::from_rows(&rows, &net).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let net = net();
        let rows = vec![
            row("t1", "a", "08:00:00", "08:00:30"),
            row("t1", "b", "08:05:00", "08:05:00"),
        ];
        let tt = Timetable::from_rows(&rows, &net).unwrap();
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in tt.to_rows(&net) {
                w.serialize(r).unwrap();
            }
            w.flush().unwrap();
        }
        let tt2 = Timetable::from_csv_reader(&buf[..], "mem", &net).unwrap();
        assert_eq!(tt2.runs.len(), 1);
        assert_eq!(tt2.runs[0].stops.len(), 2);
    }
}
