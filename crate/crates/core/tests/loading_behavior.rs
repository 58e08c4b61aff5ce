//! Behavioral tests of the loading engine against hand-simulated scenarios.

use pathchoice::domain::{
    build_time_grid, ClockTime, DistanceMode, EntryFlowTable, NetworkModel, PathSet, ShareTable,
    TimeGrid,
};
use pathchoice::sim::{
    assign_paths, expand_path_flows, run_loading, SimConfig, Timetable, TimetableRow,
};

fn two_station_net(access_s: u32) -> NetworkModel {
    NetworkModel::from_json(
        &format!(
            r#"{{
              "stations": [{{"id": "a"}}, {{"id": "b"}}],
              "platforms": [
                {{"id": "pa", "station": "a", "line": "L", "direction": "out",
                  "access_walk_s": {access_s}, "egress_walk_s": 0}},
                {{"id": "pb", "station": "b", "line": "L", "direction": "out",
                  "access_walk_s": 0, "egress_walk_s": 0}}
              ]
            }}"#
        ),
        "test",
    )
    .unwrap()
}

fn shuttle_timetable(net: &NetworkModel, departures: &[(u32, u32)], run_s: u32, cars: u32) -> Timetable {
    let mut rows = Vec::new();
    for (k, &(h, m)) in departures.iter().enumerate() {
        let dep = ClockTime::from_hms(h, m, 0);
        let arr = dep.plus(run_s);
        rows.push(TimetableRow {
            train_id: format!("t{k}"),
            line: "L".into(),
            direction: "out".into(),
            cars,
            station: "a".into(),
            arrival: dep.to_string(),
            departure: dep.to_string(),
        });
        rows.push(TimetableRow {
            train_id: format!("t{k}"),
            line: "L".into(),
            direction: "out".into(),
            cars,
            station: "b".into(),
            arrival: arr.to_string(),
            departure: arr.to_string(),
        });
    }
    Timetable::from_rows(&rows, net).unwrap()
}

fn single_path_set(net: &NetworkModel, tt: &Timetable) -> PathSet {
    let file: pathchoice::domain::PathSetFile = serde_json::from_str(
        r#"{"a-b": [{"legs": [{"board": "pa", "alight": "pb", "line": "L", "direction": "out"}]}]}"#,
    )
    .unwrap();
    PathSet::compile(&file, net, tt, DistanceMode::StationCount, 5.0).unwrap()
}

fn demand(net: &NetworkModel, q: f64, grid: &TimeGrid) -> (EntryFlowTable, ShareTable) {
    let a = net.station_idx("a").unwrap();
    let b = net.station_idx("b").unwrap();
    let mut flows = EntryFlowTable::new();
    flows.set(a, 1, b, q);
    let mut shares = ShareTable::new();
    for m in grid.intervals() {
        shares.set_row(a, m, b, vec![1.0]);
    }
    (flows, shares)
}

fn cfg(seed: u64, cap: u32) -> SimConfig {
    SimConfig {
        capacity_per_car: cap,
        warmup_s: 0,
        cooldown_s: 3600,
        seed,
        probes: true,
        probe_count: 1,
    }
}

/// Capacity 1 per train, three passengers at the platform before the first
/// train: exits spread over three consecutive trains in platform-arrival
/// order.
#[test]
fn fifb_spreads_over_consecutive_trains() {
    let net = two_station_net(0);
    // Trains depart 8:16, 8:31, 8:46, 9:01 and run 5 minutes.
    let tt = shuttle_timetable(&net, &[(8, 16), (8, 31), (8, 46), (9, 1)], 300, 1);
    let grid = build_time_grid(ClockTime::from_hms(8, 0, 0), ClockTime::from_hms(9, 0, 0), 900)
        .unwrap();
    let paths = single_path_set(&net, &tt);
    let (flows, shares) = demand(&net, 3.0, &grid);

    let out = run_loading(&shares, &flows, &net, &paths, &tt, &grid, &cfg(7, 1)).unwrap();

    let mut real: Vec<_> = out
        .trace
        .passengers
        .iter()
        .filter(|p| p.weight == 1)
        .collect();
    assert_eq!(real.len(), 3);
    real.sort_by_key(|p| p.tap_in);
    // tap-ins are uniform in [8:00, 8:15), all before the first departure
    for p in &real {
        assert!(p.tap_in < ClockTime::from_hms(8, 15, 0));
        assert!(!p.stranded);
    }
    // FIFB: earlier platform arrival, earlier train
    assert_eq!(real[0].legs[0].train, "t0");
    assert_eq!(real[1].legs[0].train, "t1");
    assert_eq!(real[2].legs[0].train, "t2");
    assert_eq!(real[0].exit_interval, 2); // 8:21
    assert_eq!(real[1].exit_interval, 3); // 8:36
    assert_eq!(real[2].exit_interval, 4); // 8:51

    let a = net.station_idx("a").unwrap();
    let b = net.station_idx("b").unwrap();
    let mu = out.delay_rates.row(a, 1, b, 0).unwrap();
    assert_eq!(mu, &[0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);

    // Left-behind accounting: first departure denies 2 of 3 waiting.
    let pa = net.platform_idx("pa").unwrap();
    let cell = out.indicators.cells.get(&(pa, 2)).unwrap();
    assert_eq!(cell.waiting, 3);
    assert_eq!(cell.boardings, 1);
    assert_eq!(cell.denied, 2);
    assert!((cell.left_behind_rate() - 2.0 / 3.0).abs() < 1e-12);
}

/// Adding demand never lets an existing passenger exit earlier.
#[test]
fn added_demand_is_congestion_monotone() {
    let net = two_station_net(0);
    let tt = shuttle_timetable(&net, &[(8, 16), (8, 31), (8, 46), (9, 1), (9, 16)], 300, 1);
    let grid = build_time_grid(ClockTime::from_hms(8, 0, 0), ClockTime::from_hms(9, 0, 0), 900)
        .unwrap();
    let paths = single_path_set(&net, &tt);

    let run = |q: f64| {
        let (flows, shares) = demand(&net, q, &grid);
        run_loading(&shares, &flows, &net, &paths, &tt, &grid, &cfg(7, 1)).unwrap()
    };
    let before = run(3.0);
    let after = run(4.0);

    // The tap-in stream per OD row is a prefix: the original three
    // passengers keep their tap-ins.
    let key = |p: &pathchoice::sim::PassengerRecord| p.tap_in;
    let mut olds: Vec<_> = before.trace.passengers.iter().filter(|p| p.weight == 1).collect();
    olds.sort_by_key(|p| key(p));
    let news: Vec<_> = after.trace.passengers.iter().filter(|p| p.weight == 1).collect();
    for old in olds {
        let matched = news
            .iter()
            .find(|p| p.tap_in == old.tap_in)
            .expect("tap-in stream should be a prefix");
        assert!(
            matched.exit_interval >= old.exit_interval,
            "passenger exits earlier after demand increase"
        );
    }
}

/// A probe-only row splits its exit mass across intervals in proportion to
/// the uniform tap-in window. With the 8:00-9:00 grid, a train at 8:05
/// (arriving 8:10) catches the first third of the 8:00-8:15 window and the
/// 8:20 train (arriving 8:25) the rest.
#[test]
fn probe_only_delay_rates_follow_uniform_window() {
    let net = two_station_net(0);
    let tt = shuttle_timetable(&net, &[(8, 5), (8, 20), (8, 35), (8, 50), (9, 5)], 300, 4);
    let grid = build_time_grid(ClockTime::from_hms(8, 0, 0), ClockTime::from_hms(9, 0, 0), 900)
        .unwrap();
    let paths = single_path_set(&net, &tt);
    let a = net.station_idx("a").unwrap();
    let b = net.station_idx("b").unwrap();

    let flows = EntryFlowTable::new(); // no real passengers at all
    let mut shares = ShareTable::new();
    for m in grid.intervals() {
        shares.set_row(a, m, b, vec![1.0]);
    }
    let mut config = cfg(1, 100);
    config.probe_count = 300;
    let out = run_loading(&shares, &flows, &net, &paths, &tt, &grid, &config).unwrap();

    let mu = out.delay_rates.row(a, 1, b, 0).unwrap();
    // Uniform integral oracle: P(tap-in <= 8:05) = 5/15.
    assert!((mu[0] - 1.0 / 3.0).abs() <= 1.0 / 300.0 + 1e-12, "mu = {mu:?}");
    assert!((mu[1] - 2.0 / 3.0).abs() <= 1.0 / 300.0 + 1e-12);
    assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

/// Identical inputs and seed reproduce the trace bit-for-bit; a different
/// seed draws different tap-ins.
#[test]
fn loading_is_deterministic_under_seed() {
    let net = two_station_net(30);
    let tt = shuttle_timetable(&net, &[(8, 5), (8, 20), (8, 35), (8, 50), (9, 5)], 300, 2);
    let grid = build_time_grid(ClockTime::from_hms(8, 0, 0), ClockTime::from_hms(9, 0, 0), 900)
        .unwrap();
    let paths = single_path_set(&net, &tt);
    let (flows, shares) = demand(&net, 25.0, &grid);

    let a = run_loading(&shares, &flows, &net, &paths, &tt, &grid, &cfg(11, 3)).unwrap();
    let b = run_loading(&shares, &flows, &net, &paths, &tt, &grid, &cfg(11, 3)).unwrap();
    let dump = |o: &pathchoice::sim::LoadingOutputs| serde_json::to_string(&o.trace.passengers).unwrap();
    assert_eq!(dump(&a), dump(&b));

    let c = run_loading(&shares, &flows, &net, &paths, &tt, &grid, &cfg(12, 3)).unwrap();
    assert_ne!(dump(&a), dump(&c));
}

/// The worked two-path numbers: counts (3,7) under shares (0.3, 0.7), path
/// flows (2,1,4,3) under the given delay rates, and entry-exit flows (6,4).
#[test]
fn worked_example_flows_are_exact() {
    let inst = pathchoice::synth::build_toy_network("figure2_two_path", 1.0).unwrap();
    let i = inst.network.station_idx("1").unwrap();
    let j = inst.network.station_idx("2").unwrap();

    let mut shares = ShareTable::new();
    for m in inst.grid.intervals() {
        shares.set_row(i, m, j, vec![0.3, 0.7]);
    }
    let assignment = assign_paths(&inst.entry_flows, &shares, &inst.network, 5).unwrap();
    assert_eq!(assignment.counts.get(&(i, 1, j, 0)), Some(&3));
    assert_eq!(assignment.counts.get(&(i, 1, j, 1)), Some(&7));

    let mut mu = pathchoice::domain::DelayRateTable::new(&inst.grid);
    mu.set_row(i, 1, j, 0, vec![2.0 / 3.0, 1.0 / 3.0]);
    mu.set_row(i, 1, j, 1, vec![4.0 / 7.0, 3.0 / 7.0]);

    let (path_flows, entry_exit) = expand_path_flows(&assignment, &mu, 5).unwrap();
    assert_eq!(path_flows.get(&(i, 1, j, 0, 1)), Some(&2));
    assert_eq!(path_flows.get(&(i, 1, j, 0, 2)), Some(&1));
    assert_eq!(path_flows.get(&(i, 1, j, 1, 1)), Some(&4));
    assert_eq!(path_flows.get(&(i, 1, j, 1, 2)), Some(&3));
    assert_eq!(entry_exit.get(i, 1, j, 1), 6.0);
    assert_eq!(entry_exit.get(i, 1, j, 2), 4.0);
}

/// Conservation and the flow identity: per OD row, the entry-exit flows from
/// the trace match the integer exit histograms and roll up to the entry flow.
#[test]
fn conservation_and_flow_identity() {
    let inst = pathchoice::synth::build_toy_network("figure3_five_station", 1.0).unwrap();
    let beta = pathchoice::domain::BetaVector::new(-0.147, -0.573, -1.271, -3.679);
    let shares = pathchoice::clogit::shares_from_beta(&beta, &inst.paths, &inst.grid);
    let out = run_loading(
        &shares,
        &inst.entry_flows,
        &inst.network,
        &inst.paths,
        &inst.timetable,
        &inst.grid,
        &SimConfig { seed: 3, ..SimConfig::default() },
    )
    .unwrap();
    assert_eq!(out.trace.stranded, 0);

    // Sum of real exit histograms equals the entry-exit table cell by cell.
    for (i, m, j, n, q) in out.entry_exit.iter() {
        let total: u64 = out
            .trace
            .real_exits
            .iter()
            .filter(|(&(pi, pm, pj, _), _)| (pi, pm, pj) == (i, m, j))
            .map(|(_, hist)| hist[(n - 1) as usize])
            .sum();
        assert_eq!(q, total as f64);
    }
    // Row sums reproduce entry flows exactly.
    let rolled = out.entry_exit.roll_up();
    for (i, m, j, q) in inst.entry_flows.iter() {
        assert_eq!(rolled.get(i, m, j), q);
    }
    // And counts times empirical delay rates reproduce the histograms.
    for (&(i, m, j, r), &count) in &out.trace.assignment.counts {
        let mu = out.delay_rates.row(i, m, j, r).unwrap();
        let hist = &out.trace.real_exits[&(i, m, j, r)];
        for (n0, &h) in hist.iter().enumerate() {
            assert!((count as f64 * mu[n0] - h as f64).abs() < 1e-9);
        }
    }
}
