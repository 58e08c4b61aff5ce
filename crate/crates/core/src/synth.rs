//! Synthetic AFC data generation and the built-in toy networks used for
//! closed-loop validation: shares are computed from a known coefficient
//! vector, the loading model simulates every passenger, and the recorded
//! tap-in/tap-out pairs become the synthetic AFC dataset.

use crate::clogit::shares_from_beta;
use crate::domain::{
    build_time_grid, BetaVector, ClockTime, DelayRateTable, EntryFlowTable, NetworkModel,
    PathSet, PathSetFile, RawPath, RawPathLeg, ShareTable, TimeGrid,
};
use crate::error::{Error, Result};
use crate::estimator::AfcRecord;
use crate::sim::{run_loading, LoadingOutputs, SimConfig, Timetable, TimetableRow};

/// A fully specified toy instance: network, compiled paths, timetable, grid
/// and entry demand.
pub struct ToyInstance {
    pub name: String,
    pub network: NetworkModel,
    pub network_json: serde_json::Value,
    pub path_file: PathSetFile,
    pub paths: PathSet,
    pub timetable: Timetable,
    pub grid: TimeGrid,
    pub entry_flows: EntryFlowTable,
}

/// Synthetic dataset produced from a known coefficient vector.
pub struct SyntheticData {
    pub records: Vec<AfcRecord>,
    pub reference_shares: ShareTable,
    pub reference_mu: DelayRateTable,
    pub beta_true: BetaVector,
    pub outputs: LoadingOutputs,
}

/// Run the loading model under `beta_true` and emit one AFC record per real
/// simulated passenger. Passengers still in the system at the end of the
/// horizon get a tap-out at the horizon end so aggregation stays conserved.
pub fn generate_synthetic_afc(
    instance: &ToyInstance,
    beta_true: &BetaVector,
    sim: &SimConfig,
) -> Result<SyntheticData> {
    let shares = shares_from_beta(beta_true, &instance.paths, &instance.grid);
    let outputs = run_loading(
        &shares,
        &instance.entry_flows,
        &instance.network,
        &instance.paths,
        &instance.timetable,
        &instance.grid,
        sim,
    )?;
    let horizon_end = instance.grid.end.plus(sim.cooldown_s);
    let mut records = Vec::new();
    let mut card = 0u64;
    for p in &outputs.trace.passengers {
        if p.weight == 0 {
            continue;
        }
        let tap_out = p.tap_out.unwrap_or(horizon_end);
        records.push(AfcRecord {
            card_id: card,
            origin_station: p.origin.clone(),
            tap_in_time: p.tap_in.to_string(),
            destination_station: p.dest.clone(),
            tap_out_time: tap_out.to_string(),
        });
        card += 1;
    }
    Ok(SyntheticData {
        records,
        reference_shares: shares,
        reference_mu: outputs.delay_rates.clone(),
        beta_true: *beta_true,
        outputs,
    })
}

/// Build one of the built-in toy instances. `demand_scale` multiplies every
/// entry flow (rounded to whole passengers).
pub fn build_toy_network(name: &str, demand_scale: f64) -> Result<ToyInstance> {
    match name {
        "figure2_two_path" => figure2_two_path(demand_scale),
        "figure3_five_station" => figure3_five_station(demand_scale),
        "grid_small" => grid_small(demand_scale),
        other => Err(Error::Config(format!(
            "unknown toy network {other:?}; expected figure2_two_path, figure3_five_station or grid_small"
        ))),
    }
}

fn leg(board: &str, alight: &str, line: &str, direction: &str) -> RawPathLeg {
    RawPathLeg {
        board: board.into(),
        alight: alight.into(),
        line: line.into(),
        direction: direction.into(),
    }
}

fn path(legs: Vec<RawPathLeg>) -> RawPath {
    RawPath { legs }
}

/// Emit timetable rows for one line direction: trains every `headway_s`
/// with first origin departure at `first_dep`, last no later than
/// `last_dep`. `run_times_s[k]` is the scheduled time from station k to
/// station k+1; intermediate stops dwell for `dwell_s`.
#[allow(clippy::too_many_arguments)]
fn line_service(
    rows: &mut Vec<TimetableRow>,
    line: &str,
    direction: &str,
    stations: &[&str],
    run_times_s: &[u32],
    dwell_s: u32,
    first_dep: ClockTime,
    last_dep: ClockTime,
    headway_s: u32,
    cars: u32,
) {
    assert_eq!(stations.len(), run_times_s.len() + 1);
    let mut dep = first_dep;
    let mut k = 0;
    while dep <= last_dep {
        let train_id = format!("{line}{direction}-{k:03}");
        let mut t = dep;
        for (s, station) in stations.iter().enumerate() {
            let arrival = t;
            let departure = if s + 1 < stations.len() {
                if s == 0 {
                    arrival
                } else {
                    arrival.plus(dwell_s)
                }
            } else {
                arrival
            };
            rows.push(TimetableRow {
                train_id: train_id.clone(),
                line: line.into(),
                direction: direction.into(),
                cars,
                station: (*station).into(),
                arrival: arrival.to_string(),
                departure: departure.to_string(),
            });
            if s + 1 < stations.len() {
                t = departure.plus(run_times_s[s]);
            }
        }
        dep = dep.plus(headway_s);
        k += 1;
    }
}

struct NetBuilder {
    stations: Vec<serde_json::Value>,
    platforms: Vec<serde_json::Value>,
}

impl NetBuilder {
    fn new(station_ids: &[&str]) -> Self {
        NetBuilder {
            stations: station_ids
                .iter()
                .map(|id| serde_json::json!({ "id": id }))
                .collect(),
            platforms: Vec::new(),
        }
    }

    fn platform(
        &mut self,
        id: &str,
        station: &str,
        line: &str,
        direction: &str,
        access_s: u32,
        egress_s: u32,
        transfers: &[(&str, u32)],
    ) {
        let map: serde_json::Map<String, serde_json::Value> = transfers
            .iter()
            .map(|&(other, w)| (other.to_string(), serde_json::json!(w)))
            .collect();
        self.platforms.push(serde_json::json!({
            "id": id,
            "station": station,
            "line": line,
            "direction": direction,
            "access_walk_s": access_s,
            "egress_walk_s": egress_s,
            "transfer_walk_s": map,
        }));
    }

    fn finish(self) -> serde_json::Value {
        serde_json::json!({
            "stations": self.stations,
            "platforms": self.platforms,
            "links": [],
        })
    }
}

fn assemble(
    name: &str,
    network_json: serde_json::Value,
    path_file: PathSetFile,
    rows: Vec<TimetableRow>,
    grid: TimeGrid,
    demand: &[(&str, &str, Vec<f64>)],
    demand_scale: f64,
) -> Result<ToyInstance> {
    let network = NetworkModel::from_json(&network_json.to_string(), name)?;
    let timetable = Timetable::from_rows(&rows, &network)?;
    let paths = PathSet::compile(
        &path_file,
        &network,
        &timetable,
        crate::domain::DistanceMode::StationCount,
        5.0,
    )?;
    let mut entry_flows = EntryFlowTable::new();
    for (o, d, per_interval) in demand {
        let oi = network.station_idx(o).unwrap();
        let di = network.station_idx(d).unwrap();
        for (m0, &q) in per_interval.iter().enumerate() {
            let scaled = (q * demand_scale).round();
            if scaled > 0.0 {
                entry_flows.set(oi, m0 as u32 + 1, di, scaled);
            }
        }
    }
    Ok(ToyInstance {
        name: name.into(),
        network,
        network_json,
        path_file,
        paths,
        timetable,
        grid,
        entry_flows,
    })
}

/// Two stations joined by a fast and a slow line; the worked two-path OD.
fn figure2_two_path(demand_scale: f64) -> Result<ToyInstance> {
    let grid = build_time_grid(
        ClockTime::from_hms(7, 0, 0),
        ClockTime::from_hms(7, 30, 0),
        900,
    )?;
    let mut nb = NetBuilder::new(&["1", "2"]);
    nb.platform("1_F", "1", "F", "out", 60, 60, &[]);
    nb.platform("1_S", "1", "S", "out", 60, 60, &[]);
    nb.platform("2_F", "2", "F", "out", 60, 30, &[]);
    nb.platform("2_S", "2", "S", "out", 60, 30, &[]);

    let mut file = PathSetFile::new();
    file.insert(
        "1-2".into(),
        vec![
            path(vec![leg("1_F", "2_F", "F", "out")]),
            path(vec![leg("1_S", "2_S", "S", "out")]),
        ],
    );

    let mut rows = Vec::new();
    let first = ClockTime::from_hms(6, 0, 0);
    let last = ClockTime::from_hms(8, 30, 0);
    line_service(&mut rows, "F", "out", &["1", "2"], &[8 * 60], 30, first, last, 600, 4);
    line_service(&mut rows, "S", "out", &["1", "2"], &[18 * 60], 30, first, last, 600, 4);

    let demand = vec![("1", "2", vec![10.0, 0.0])];
    assemble(
        "figure2_two_path",
        nb.finish(),
        file,
        rows,
        grid,
        &demand,
        demand_scale,
    )
}

/// Five stations with two OD pairs (1-5 and 2-5) whose paths share the 1-2
/// trunk: path 1 transfers at station 4, path 2 at station 3. The two ODs'
/// matching paths have identical within-OD utility differences, so their
/// shares coincide for every coefficient vector.
fn figure3_five_station(demand_scale: f64) -> Result<ToyInstance> {
    let grid = build_time_grid(
        ClockTime::from_hms(7, 0, 0),
        ClockTime::from_hms(7, 30, 0),
        900,
    )?;
    let mut nb = NetBuilder::new(&["1", "2", "3", "4", "5"]);
    // Line A: 1-2-4, line B: 4-5, line C: 1-2-3, line D: 3-5.
    nb.platform("1_A", "1", "A", "out", 150, 60, &[]);
    nb.platform("1_C", "1", "C", "out", 150, 60, &[]);
    nb.platform("2_A", "2", "A", "out", 60, 60, &[]);
    nb.platform("2_C", "2", "C", "out", 60, 60, &[]);
    nb.platform("3_C", "3", "C", "out", 60, 60, &[("3_D", 60)]);
    nb.platform("3_D", "3", "D", "out", 60, 60, &[("3_C", 60)]);
    nb.platform("4_A", "4", "A", "out", 60, 60, &[("4_B", 60)]);
    nb.platform("4_B", "4", "B", "out", 60, 60, &[("4_A", 60)]);
    nb.platform("5_B", "5", "B", "out", 60, 60, &[]);
    nb.platform("5_D", "5", "D", "out", 60, 60, &[]);

    let mut file = PathSetFile::new();
    file.insert(
        "1-5".into(),
        vec![
            path(vec![leg("1_A", "4_A", "A", "out"), leg("4_B", "5_B", "B", "out")]),
            path(vec![leg("1_C", "3_C", "C", "out"), leg("3_D", "5_D", "D", "out")]),
        ],
    );
    file.insert(
        "2-5".into(),
        vec![
            path(vec![leg("2_A", "4_A", "A", "out"), leg("4_B", "5_B", "B", "out")]),
            path(vec![leg("2_C", "3_C", "C", "out"), leg("3_D", "5_D", "D", "out")]),
        ],
    );

    let mut rows = Vec::new();
    let first = ClockTime::from_hms(6, 0, 0);
    let last = ClockTime::from_hms(8, 30, 0);
    line_service(&mut rows, "A", "out", &["1", "2", "4"], &[180, 240], 30, first, last, 300, 4);
    line_service(&mut rows, "B", "out", &["4", "5"], &[180], 30, first, last, 300, 4);
    line_service(&mut rows, "C", "out", &["1", "2", "3"], &[180, 180], 30, first, last, 300, 4);
    line_service(&mut rows, "D", "out", &["3", "5"], &[300], 30, first, last, 300, 4);

    let demand = vec![
        ("1", "5", vec![30.0, 30.0]),
        ("2", "5", vec![40.0, 40.0]),
    ];
    assemble(
        "figure3_five_station",
        nb.finish(),
        file,
        rows,
        grid,
        &demand,
        demand_scale,
    )
}

/// Eight stations, two crossing lines sharing the 2-8-5 corridor hub, built
/// by a fixed rule. Carries multi-path ODs whose attribute trade-offs span
/// all four coefficients, plus background single-path demand to congest the
/// corridor.
fn grid_small(demand_scale: f64) -> Result<ToyInstance> {
    let grid = build_time_grid(
        ClockTime::from_hms(18, 0, 0),
        ClockTime::from_hms(19, 0, 0),
        900,
    )?;
    let stations = ["1", "2", "3", "4", "5", "6", "7", "8"];
    let mut nb = NetBuilder::new(&stations);

    // Line A: 1-2-3-4-5-6 both ways; line B: 7-2-8-5 both ways. Stations 2
    // and 5 are the interchange; every platform pair there gets a 90 s walk.
    let a_stations = ["1", "2", "3", "4", "5", "6"];
    let b_stations = ["7", "2", "8", "5"];
    let access = |s: &str| 50 + 10 * s.parse::<u32>().unwrap();
    let egress = |s: &str| 40 + 10 * s.parse::<u32>().unwrap();
    let hub_transfers = |station: &str, own: &str| -> Vec<(String, u32)> {
        let mut v = Vec::new();
        for line_dir in ["Ae", "Aw", "Be", "Bw"] {
            let other = format!("{station}_{line_dir}");
            if other != own {
                v.push((other, 90));
            }
        }
        v
    };
    for s in a_stations {
        for dir in ["e", "w"] {
            let id = format!("{s}_A{dir}");
            let transfers: Vec<(String, u32)> = if s == "2" || s == "5" {
                hub_transfers(s, &id)
            } else {
                Vec::new()
            };
            let tr: Vec<(&str, u32)> = transfers.iter().map(|(o, w)| (o.as_str(), *w)).collect();
            nb.platform(&id, s, "A", if dir == "e" { "east" } else { "west" }, access(s), egress(s), &tr);
        }
    }
    for s in b_stations {
        for dir in ["e", "w"] {
            let id = format!("{s}_B{dir}");
            let transfers: Vec<(String, u32)> = if s == "2" || s == "5" {
                hub_transfers(s, &id)
            } else {
                Vec::new()
            };
            let tr: Vec<(&str, u32)> = transfers.iter().map(|(o, w)| (o.as_str(), *w)).collect();
            nb.platform(&id, s, "B", if dir == "e" { "east" } else { "west" }, access(s), egress(s), &tr);
        }
    }

    let mut file = PathSetFile::new();
    let ae = |from: &str, to: &str| leg(&format!("{from}_Ae"), &format!("{to}_Ae"), "A", "east");
    let aw = |from: &str, to: &str| leg(&format!("{from}_Aw"), &format!("{to}_Aw"), "A", "west");
    let be = |from: &str, to: &str| leg(&format!("{from}_Be"), &format!("{to}_Be"), "B", "east");
    let bw = |from: &str, to: &str| leg(&format!("{from}_Bw"), &format!("{to}_Bw"), "B", "west");

    file.insert(
        "1-6".into(),
        vec![
            path(vec![ae("1", "6")]),
            path(vec![ae("1", "2"), be("2", "5"), ae("5", "6")]),
        ],
    );
    file.insert(
        "1-5".into(),
        vec![path(vec![ae("1", "5")]), path(vec![ae("1", "2"), be("2", "5")])],
    );
    file.insert(
        "2-5".into(),
        vec![path(vec![ae("2", "5")]), path(vec![be("2", "5")])],
    );
    file.insert(
        "1-8".into(),
        vec![
            path(vec![ae("1", "2"), be("2", "8")]),
            path(vec![ae("1", "5"), bw("5", "8")]),
        ],
    );
    file.insert(
        "7-6".into(),
        vec![
            path(vec![be("7", "2"), ae("2", "6")]),
            path(vec![be("7", "5"), ae("5", "6")]),
        ],
    );
    file.insert(
        "7-5".into(),
        vec![path(vec![be("7", "5")]), path(vec![be("7", "2"), ae("2", "5")])],
    );
    file.insert(
        "3-8".into(),
        vec![
            path(vec![aw("3", "2"), be("2", "8")]),
            path(vec![ae("3", "5"), bw("5", "8")]),
        ],
    );
    for (key, legs) in [
        ("2-8", vec![be("2", "8")]),
        ("8-5", vec![be("8", "5")]),
        ("7-8", vec![be("7", "8")]),
        ("2-4", vec![ae("2", "4")]),
        ("4-6", vec![ae("4", "6")]),
        ("6-1", vec![aw("6", "1")]),
        ("5-7", vec![bw("5", "7")]),
        ("3-6", vec![ae("3", "6")]),
    ] {
        file.insert(key.into(), vec![path(legs)]);
    }

    let mut rows = Vec::new();
    let first = ClockTime::from_hms(17, 0, 0);
    let last = ClockTime::from_hms(20, 0, 0);
    let a_times = &[180, 240, 180, 240, 180];
    let b_times = &[240, 300, 300];
    let a_rev: Vec<&str> = a_stations.iter().rev().copied().collect();
    let b_rev: Vec<&str> = b_stations.iter().rev().copied().collect();
    let a_times_rev: Vec<u32> = a_times.iter().rev().copied().collect();
    let b_times_rev: Vec<u32> = b_times.iter().rev().copied().collect();
    line_service(&mut rows, "A", "east", &a_stations, a_times, 30, first, last, 300, 8);
    line_service(&mut rows, "A", "west", &a_rev, &a_times_rev, 30, first, last, 300, 8);
    line_service(&mut rows, "B", "east", &b_stations, b_times, 30, first, last, 360, 4);
    line_service(&mut rows, "B", "west", &b_rev, &b_times_rev, 30, first.plus(90), last, 360, 4);

    let q4 = |q: f64| vec![q, q, q, q];
    let demand: Vec<(&str, &str, Vec<f64>)> = vec![
        ("1", "6", q4(60.0)),
        ("1", "5", q4(50.0)),
        ("2", "5", q4(80.0)),
        ("1", "8", q4(40.0)),
        ("7", "6", q4(50.0)),
        ("7", "5", q4(60.0)),
        ("3", "8", q4(40.0)),
        ("2", "8", q4(90.0)),
        ("8", "5", q4(60.0)),
        ("7", "8", q4(50.0)),
        ("2", "4", q4(40.0)),
        ("4", "6", q4(30.0)),
        ("6", "1", q4(40.0)),
        ("5", "7", q4(30.0)),
        ("3", "6", q4(30.0)),
    ];
    assemble(
        "grid_small",
        nb.finish(),
        file,
        rows,
        grid,
        &demand,
        demand_scale,
    )
}
