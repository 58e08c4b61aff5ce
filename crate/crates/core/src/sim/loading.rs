//! The discrete-event loading engine.

use crate::clogit::shares_from_beta;
use crate::domain::{
    BetaVector, ClockTime, DelayRateTable, EntryExitFlowTable, EntryFlowTable, NetworkModel,
    PathSet, PlatformIdx, ShareTable, StationIdx, TimeGrid,
};
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::sim::{apportion, SimConfig, Timetable};
use serde::Serialize;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

/// Integer passenger counts per (origin, entry interval, destination, path),
/// produced by largest-remainder apportionment of q * p.
#[derive(Debug, Clone, Default)]
pub struct PathAssignment {
    pub counts: BTreeMap<(StationIdx, u32, StationIdx, usize), u64>,
}

impl PathAssignment {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Apportion every OD entry flow over its path shares. The per-OD counts sum
/// to the (rounded) entry flow exactly.
pub fn assign_paths(
    flows: &EntryFlowTable,
    shares: &ShareTable,
    network: &NetworkModel,
    seed: u64,
) -> Result<PathAssignment> {
    shares.validate()?;
    let mut out = PathAssignment::default();
    for (i, m, j, q) in flows.iter() {
        let row = shares.row(i, m, j).ok_or_else(|| Error::MissingShare {
            origin: network.station_id(i).to_string(),
            dest: network.station_id(j).to_string(),
            interval: m,
        })?;
        let total = q.round() as u64;
        let mut rng = DetRng::derived(seed, "assign", &[i.0 as u64, m as u64, j.0 as u64]);
        let counts = apportion(total, row, &mut rng);
        for (r, &c) in counts.iter().enumerate() {
            if c > 0 {
                out.counts.insert((i, m, j, r), c);
            }
        }
    }
    Ok(out)
}

/// Expand integer path counts over fixed delay rates into integer path flows
/// per exit interval (largest-remainder per row), plus the implied entry-exit
/// flow table.
pub fn expand_path_flows(
    assignment: &PathAssignment,
    delay_rates: &DelayRateTable,
    seed: u64,
) -> Result<(
    BTreeMap<(StationIdx, u32, StationIdx, usize, u32), u64>,
    EntryExitFlowTable,
)> {
    let mut path_flows = BTreeMap::new();
    let mut entry_exit = EntryExitFlowTable::new();
    for (&(i, m, j, r), &count) in &assignment.counts {
        let row = delay_rates.row(i, m, j, r).ok_or_else(|| {
            Error::MissingDelayRate(format!("({i:?},{m},{j:?},path {})", r + 1))
        })?;
        let mut rng = DetRng::derived(
            seed,
            "expand",
            &[i.0 as u64, m as u64, j.0 as u64, r as u64],
        );
        let split = apportion(count, row, &mut rng);
        for (n0, &c) in split.iter().enumerate() {
            if c > 0 {
                let n = n0 as u32 + 1;
                path_flows.insert((i, m, j, r, n), c);
                entry_exit.add(i, m, j, n, c as f64);
            }
        }
    }
    Ok((path_flows, entry_exit))
}

/// Per-leg boarding trace of one simulated passenger.
#[derive(Debug, Clone, Serialize)]
pub struct LegTrace {
    pub platform: String,
    pub platform_arrival: ClockTime,
    pub train: String,
    pub board: ClockTime,
    pub alight: ClockTime,
}

/// Full journey record of one simulated passenger.
#[derive(Debug, Clone, Serialize)]
pub struct PassengerRecord {
    pub id: u64,
    pub origin: String,
    pub dest: String,
    pub entry_interval: u32,
    pub path: usize,
    pub tap_in: ClockTime,
    pub tap_out: Option<ClockTime>,
    pub exit_interval: u32,
    /// 1 for real passengers, 0 for capacity-exempt probes.
    pub weight: u32,
    pub stranded: bool,
    pub legs: Vec<LegTrace>,
}

/// Everything the loading run observed, at passenger granularity.
#[derive(Debug, Clone, Default)]
pub struct SimTrace {
    pub passengers: Vec<PassengerRecord>,
    pub assignment: PathAssignment,
    /// Integer exit-interval histograms of real passengers per variable.
    pub real_exits: BTreeMap<(StationIdx, u32, StationIdx, usize), Vec<u64>>,
    /// Same for probe passengers (unit weights among probes).
    pub probe_exits: BTreeMap<(StationIdx, u32, StationIdx, usize), Vec<u64>>,
    pub stranded: u64,
    pub late_exits: u64,
}

/// Boarding statistics per (platform, study-grid interval).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IndicatorCell {
    /// Real passengers whose platform arrival (tap-in or transfer) fell in
    /// the window.
    pub arrivals: u64,
    /// Real passengers boarded during the window.
    pub boardings: u64,
    /// Boarding denials among eligible waiting real passengers.
    pub denied: u64,
    /// Eligible waiting real passengers summed over departures.
    pub waiting: u64,
}

impl IndicatorCell {
    /// Waiting-weighted mean left-behind rate over the window's departures.
    pub fn left_behind_rate(&self) -> f64 {
        if self.waiting == 0 {
            0.0
        } else {
            self.denied as f64 / self.waiting as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlatformIndicators {
    pub cells: BTreeMap<(PlatformIdx, u32), IndicatorCell>,
}

#[derive(Debug, Clone)]
pub struct LoadingOutputs {
    pub delay_rates: DelayRateTable,
    pub entry_exit: EntryExitFlowTable,
    pub indicators: PlatformIndicators,
    pub trace: SimTrace,
}

struct SimLeg {
    board: PlatformIdx,
    alight: PlatformIdx,
    alight_station: StationIdx,
}

struct SimPassenger {
    origin: StationIdx,
    dest: StationIdx,
    m: u32,
    r: usize,
    tap_in: ClockTime,
    weight: u32,
    legs: Vec<SimLeg>,
    current_leg: usize,
    tap_out: Option<ClockTime>,
    exit_interval: u32,
    stranded: bool,
    trace: Vec<LegTrace>,
    pending_arrival: ClockTime,
}

type QueueKey = (u32, u32, u64); // (platform arrival, tap-in, passenger id)

#[derive(Default)]
struct PlatformState {
    pending: BinaryHeap<std::cmp::Reverse<QueueKey>>,
    queue: VecDeque<u64>,
    probe_pending: BinaryHeap<std::cmp::Reverse<QueueKey>>,
    probe_queue: VecDeque<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Arrival,
    Departure,
}

/// Run the loading model with shares derived from choice coefficients.
pub fn run_loading_beta(
    beta: &BetaVector,
    flows: &EntryFlowTable,
    network: &NetworkModel,
    paths: &PathSet,
    timetable: &Timetable,
    grid: &TimeGrid,
    config: &SimConfig,
) -> Result<LoadingOutputs> {
    let shares = shares_from_beta(beta, paths, grid);
    run_loading(&shares, flows, network, paths, timetable, grid, config)
}

/// Run the event-based loading model.
///
/// Tap-in times are drawn uniformly (1-second resolution) within each
/// passenger's entry interval under the given seed. Probe passengers take
/// stratified midpoints of the interval instead, so a probe-only delay-rate
/// row approximates the uniform-entry exit profile at resolution
/// 1/probe_count.
pub fn run_loading(
    shares: &ShareTable,
    flows: &EntryFlowTable,
    network: &NetworkModel,
    paths: &PathSet,
    timetable: &Timetable,
    grid: &TimeGrid,
    config: &SimConfig,
) -> Result<LoadingOutputs> {
    flows.validate()?;
    let assignment = assign_paths(flows, shares, network, config.seed)?;

    let mut passengers: Vec<SimPassenger> = Vec::new();
    for (&(i, m, j, r), &count) in &assignment.counts {
        let od = paths.od_idx(i, j).ok_or_else(|| Error::MissingShare {
            origin: network.station_id(i).to_string(),
            dest: network.station_id(j).to_string(),
            interval: m,
        })?;
        let path = paths.od(od).paths.get(r).ok_or_else(|| {
            Error::Internal(format!("assignment references unknown path index {r}"))
        })?;
        let (lo, _) = grid.bounds(m);
        let mut rng = DetRng::derived(
            config.seed,
            "tapin",
            &[i.0 as u64, m as u64, j.0 as u64, r as u64],
        );
        for _ in 0..count {
            let offset = (rng.uniform() * grid.tau_s as f64) as u32;
            passengers.push(make_passenger(path, network, m, r, lo.plus(offset.min(grid.tau_s - 1)), 1));
        }
    }
    if config.probes {
        let k_total = config.probe_count.max(1);
        for od in &paths.ods {
            for m in grid.intervals() {
                let (lo, _) = grid.bounds(m);
                for (r, path) in od.paths.iter().enumerate() {
                    for k in 0..k_total {
                        let offset = ((2 * k + 1) as u64 * grid.tau_s as u64 / (2 * k_total as u64))
                            as u32;
                        passengers.push(make_passenger(path, network, m, r, lo.plus(offset), 0));
                    }
                }
            }
        }
    }

    let mut platform_states: Vec<PlatformState> = (0..network.platforms.len())
        .map(|_| PlatformState::default())
        .collect();
    let mut indicators = PlatformIndicators::default();

    // Entrants walk from the gate to their first boarding platform.
    for (id, p) in passengers.iter_mut().enumerate() {
        let platform = p.legs[0].board;
        let arrival = p.tap_in.plus(network.platform(platform).access_walk_s);
        p.pending_arrival = arrival;
        enqueue(
            &mut platform_states[platform.0 as usize],
            &mut indicators,
            grid,
            platform,
            arrival,
            p.tap_in,
            id as u64,
            p.weight,
        );
    }

    // Global chronological event list; arrivals precede departures at equal
    // timestamps.
    let mut events: Vec<(ClockTime, EventKind, usize, usize)> = Vec::new();
    for (run_idx, run) in timetable.runs.iter().enumerate() {
        for (stop_idx, stop) in run.stops.iter().enumerate() {
            events.push((stop.arrival, EventKind::Arrival, run_idx, stop_idx));
            if stop_idx + 1 < run.stops.len() {
                events.push((stop.departure, EventKind::Departure, run_idx, stop_idx));
            }
        }
    }
    events.sort_by_key(|&(t, kind, run_idx, stop_idx)| (t, kind, run_idx, stop_idx));

    let mut onboard: Vec<Vec<u64>> = vec![Vec::new(); timetable.runs.len()];
    let mut probes_onboard: Vec<Vec<u64>> = vec![Vec::new(); timetable.runs.len()];
    let mut trace = SimTrace {
        assignment,
        ..SimTrace::default()
    };

    for (t, kind, run_idx, stop_idx) in events {
        let run = &timetable.runs[run_idx];
        let stop = &run.stops[stop_idx];
        match kind {
            EventKind::Arrival => {
                for aboard in [&mut onboard[run_idx], &mut probes_onboard[run_idx]] {
                    let staying = std::mem::take(aboard);
                    for id in staying {
                        let p = &mut passengers[id as usize];
                        if p.legs[p.current_leg].alight_station != stop.station {
                            aboard.push(id);
                            continue;
                        }
                        if let Some(leg) = p.trace.last_mut() {
                            leg.alight = t;
                        }
                        let alight_platform = p.legs[p.current_leg].alight;
                        if p.current_leg + 1 == p.legs.len() {
                            let tap_out =
                                t.plus(network.platform(alight_platform).egress_walk_s);
                            let (n, late) = grid.interval_clamped(tap_out);
                            p.tap_out = Some(tap_out);
                            p.exit_interval = n;
                            if late && p.weight > 0 {
                                trace.late_exits += 1;
                            }
                        } else {
                            p.current_leg += 1;
                            let next_board = p.legs[p.current_leg].board;
                            let walk = network
                                .platform(alight_platform)
                                .transfer_walk_s
                                .get(&next_board)
                                .copied()
                                .ok_or_else(|| {
                                    Error::Unservable(format!(
                                        "no transfer walk from {:?} to {:?}",
                                        network.platform(alight_platform).id,
                                        network.platform(next_board).id
                                    ))
                                })?;
                            let arrival = t.plus(walk);
                            p.pending_arrival = arrival;
                            let (tap_in, weight) = (p.tap_in, p.weight);
                            enqueue(
                                &mut platform_states[next_board.0 as usize],
                                &mut indicators,
                                grid,
                                next_board,
                                arrival,
                                tap_in,
                                id,
                                weight,
                            );
                        }
                    }
                }
            }
            EventKind::Departure => {
                let platform = match network.boarding_platform(stop.station, &run.line, &run.direction)
                {
                    Some(p) => p,
                    None => continue,
                };
                let state = &mut platform_states[platform.0 as usize];
                while let Some(&std::cmp::Reverse((arr, _, _))) = state.pending.peek() {
                    if ClockTime(arr) > t {
                        break;
                    }
                    let std::cmp::Reverse((_, _, id)) = state.pending.pop().unwrap();
                    state.queue.push_back(id);
                }
                while let Some(&std::cmp::Reverse((arr, _, _))) = state.probe_pending.peek() {
                    if ClockTime(arr) > t {
                        break;
                    }
                    let std::cmp::Reverse((_, _, id)) = state.probe_pending.pop().unwrap();
                    state.probe_queue.push_back(id);
                }

                let capacity = (run.cars as u64) * (config.capacity_per_car as u64);
                let mut free = capacity - onboard[run_idx].len() as u64;
                let mut boarded = 0u64;
                let mut denied = 0u64;
                let kept: VecDeque<u64> = state
                    .queue
                    .drain(..)
                    .filter(|&id| {
                        let p = &mut passengers[id as usize];
                        let eligible = run
                            .stop_after(stop_idx + 1, p.legs[p.current_leg].alight_station)
                            .is_some();
                        if !eligible {
                            return true;
                        }
                        if free == 0 {
                            denied += 1;
                            return true;
                        }
                        free -= 1;
                        boarded += 1;
                        p.trace.push(LegTrace {
                            platform: network.platform(platform).id.clone(),
                            platform_arrival: p.pending_arrival,
                            train: run.train_id.clone(),
                            board: t,
                            alight: t,
                        });
                        onboard[run_idx].push(id);
                        false
                    })
                    .collect();
                state.queue = kept;
                assert!(
                    onboard[run_idx].len() as u64 <= capacity,
                    "onboard exceeds train capacity"
                );

                let kept_probes: VecDeque<u64> = state
                    .probe_queue
                    .drain(..)
                    .filter(|&id| {
                        let p = &mut passengers[id as usize];
                        let eligible = run
                            .stop_after(stop_idx + 1, p.legs[p.current_leg].alight_station)
                            .is_some();
                        if !eligible {
                            return true;
                        }
                        p.trace.push(LegTrace {
                            platform: network.platform(platform).id.clone(),
                            platform_arrival: p.pending_arrival,
                            train: run.train_id.clone(),
                            board: t,
                            alight: t,
                        });
                        probes_onboard[run_idx].push(id);
                        false
                    })
                    .collect();
                state.probe_queue = kept_probes;

                if let Some(window) = grid.interval_of(t) {
                    let cell = indicators
                        .cells
                        .entry((platform, window))
                        .or_default();
                    cell.boardings += boarded;
                    cell.denied += denied;
                    cell.waiting += boarded + denied;
                }
            }
        }
    }

    // Whoever is still in the system at the end of the horizon is stranded;
    // their exit mass is carried by the last interval so delay-rate rows stay
    // normalized.
    let n_intervals = grid.n as usize;
    for p in passengers.iter_mut() {
        if p.tap_out.is_none() {
            p.stranded = true;
            p.exit_interval = grid.n;
            if p.weight > 0 {
                trace.stranded += 1;
            }
        }
    }

    let mut entry_exit = EntryExitFlowTable::new();
    for p in &passengers {
        let key = (p.origin, p.m, p.dest, p.r);
        let hist = if p.weight > 0 {
            trace.real_exits.entry(key).or_insert_with(|| vec![0; n_intervals])
        } else {
            trace.probe_exits.entry(key).or_insert_with(|| vec![0; n_intervals])
        };
        hist[(p.exit_interval - 1) as usize] += 1;
        if p.weight > 0 {
            entry_exit.add(p.origin, p.m, p.dest, p.exit_interval, 1.0);
        }
    }

    trace.passengers = passengers
        .iter()
        .enumerate()
        .map(|(id, p)| PassengerRecord {
            id: id as u64,
            origin: network.station_id(p.origin).to_string(),
            dest: network.station_id(p.dest).to_string(),
            entry_interval: p.m,
            path: p.r + 1,
            tap_in: p.tap_in,
            tap_out: p.tap_out,
            exit_interval: p.exit_interval,
            weight: p.weight,
            stranded: p.stranded,
            legs: p.trace.clone(),
        })
        .collect();

    let delay_rates = delay_rates_from_trace(&trace, grid)?;
    Ok(LoadingOutputs {
        delay_rates,
        entry_exit,
        indicators,
        trace,
    })
}

/// Normalize the trace's exit histograms into delay rates. Rows observed by
/// real passengers use their exit counts; rows seen only by probes fall back
/// to equal unit weights among probes.
pub fn delay_rates_from_trace(trace: &SimTrace, grid: &TimeGrid) -> Result<DelayRateTable> {
    let mut table = DelayRateTable::new(grid);
    for (&key, &count) in &trace.assignment.counts {
        if count == 0 {
            continue;
        }
        if !trace.real_exits.contains_key(&key) {
            return Err(Error::Internal(format!(
                "no traversal recorded for demanded variable {key:?}"
            )));
        }
    }
    let keys: std::collections::BTreeSet<_> = trace
        .real_exits
        .keys()
        .chain(trace.probe_exits.keys())
        .copied()
        .collect();
    for key in keys {
        let (i, m, j, r) = key;
        let hist = match trace.real_exits.get(&key) {
            Some(h) if h.iter().sum::<u64>() > 0 => h,
            _ => match trace.probe_exits.get(&key) {
                Some(h) if h.iter().sum::<u64>() > 0 => h,
                _ => {
                    return Err(Error::Internal(format!(
                        "empty exit histogram for {key:?}"
                    )))
                }
            },
        };
        let total: u64 = hist.iter().sum();
        table.set_row(
            i,
            m,
            j,
            r,
            hist.iter().map(|&c| c as f64 / total as f64).collect(),
        );
    }
    Ok(table)
}

fn make_passenger(
    path: &crate::domain::Path,
    network: &NetworkModel,
    m: u32,
    r: usize,
    tap_in: ClockTime,
    weight: u32,
) -> SimPassenger {
    SimPassenger {
        origin: path.origin,
        dest: path.dest,
        m,
        r,
        tap_in,
        weight,
        legs: path
            .legs
            .iter()
            .map(|l| SimLeg {
                board: l.board,
                alight: l.alight,
                alight_station: network.platform(l.alight).station,
            })
            .collect(),
        current_leg: 0,
        tap_out: None,
        exit_interval: 0,
        stranded: false,
        trace: Vec::new(),
        pending_arrival: tap_in,
    }
}

#[allow(clippy::too_many_arguments)]
fn enqueue(
    state: &mut PlatformState,
    indicators: &mut PlatformIndicators,
    grid: &TimeGrid,
    platform: PlatformIdx,
    arrival: ClockTime,
    tap_in: ClockTime,
    id: u64,
    weight: u32,
) {
    let key = std::cmp::Reverse((arrival.0, tap_in.0, id));
    if weight > 0 {
        state.pending.push(key);
        if let Some(window) = grid.interval_of(arrival) {
            indicators.cells.entry((platform, window)).or_default().arrivals += 1;
        }
    } else {
        state.probe_pending.push(key);
    }
}
