//! The fixed-point driver: iterate loading -> share QP -> fractional logit,
//! then average the coefficient iterates over the post-burn-in window.

use crate::alc::{construct_alc, dof_report, AlcConfig, ConstraintSet, DofReport, ShareVarIndex};
use crate::clogit::{fit_fractional_logit, shares_from_beta, FitOptions, FitRow};
use crate::domain::{
    BetaVector, ClockTime, EntryExitFlowTable, EntryFlowTable, NetworkModel, PathSet, ShareTable,
    TimeGrid,
};
use crate::error::{Error, Result};
use crate::qp::{assemble_qp, solve_qp, QpOptions, QpWeights};
use crate::sim::{run_loading, LoadingOutputs, SimConfig};
use serde::{Deserialize, Serialize};
use std::path::Path as FsPath;

/// One AFC transaction: tap-in and tap-out with stations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AfcRecord {
    pub card_id: u64,
    pub origin_station: String,
    pub tap_in_time: String,
    pub destination_station: String,
    pub tap_out_time: String,
}

/// Counters from AFC ingestion.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IngestReport {
    /// Records with tap-out before tap-in, dropped.
    pub rejected: u64,
    /// Records tapping in outside the study period, dropped.
    pub out_of_window: u64,
    /// Records tapping out past the horizon, binned to the last interval.
    pub late_exits: u64,
    pub accepted: u64,
}

/// Aggregate AFC records to OD entry flows and observed entry-exit flows on
/// the study grid. Unknown stations fail; malformed rows are counted.
pub fn observed_flows_from_afc(
    records: &[AfcRecord],
    grid: &TimeGrid,
    network: &NetworkModel,
) -> Result<(EntryFlowTable, EntryExitFlowTable, IngestReport)> {
    let mut entry = EntryFlowTable::new();
    let mut entry_exit = EntryExitFlowTable::new();
    let mut report = IngestReport::default();
    for rec in records {
        let origin = network.station_idx(&rec.origin_station).ok_or_else(|| {
            Error::Validation(format!("AFC record with unknown station {:?}", rec.origin_station))
        })?;
        let dest = network.station_idx(&rec.destination_station).ok_or_else(|| {
            Error::Validation(format!(
                "AFC record with unknown station {:?}",
                rec.destination_station
            ))
        })?;
        let tap_in = ClockTime::parse(&rec.tap_in_time)?;
        let tap_out = ClockTime::parse(&rec.tap_out_time)?;
        if tap_out < tap_in {
            report.rejected += 1;
            continue;
        }
        let m = match grid.interval_of(tap_in) {
            Some(m) => m,
            None => {
                report.out_of_window += 1;
                continue;
            }
        };
        let (n, late) = grid.interval_clamped(tap_out);
        if late {
            report.late_exits += 1;
        }
        report.accepted += 1;
        entry.add(origin, m, dest, 1.0);
        entry_exit.add(origin, m, dest, n.max(m), 1.0);
    }
    Ok((entry, entry_exit, report))
}

pub fn read_afc_csv(path: &FsPath) -> Result<Vec<AfcRecord>> {
    let file =
        std::fs::File::open(path).map_err(crate::error::io_err(path.display().to_string()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut records = Vec::new();
    for rec in rdr.deserialize::<AfcRecord>() {
        records.push(rec.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

pub fn write_afc_csv(path: &FsPath, records: &[AfcRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Error::Internal(format!("csv writer {}: {e}", path.display())))?;
    for rec in records {
        wtr.serialize(rec)
            .map_err(|e| Error::Internal(format!("csv write: {e}")))?;
    }
    wtr.flush()
        .map_err(crate::error::io_err(path.display().to_string()))?;
    Ok(())
}

/// Eq. 6a-style objective: flow squared error plus coefficient prior term.
/// Cells missing on either side count as zero symmetrically.
pub fn objective(
    predicted: &EntryExitFlowTable,
    observed: &EntryExitFlowTable,
    beta: &BetaVector,
    beta_prior: &BetaVector,
    w1: f64,
    w2: f64,
) -> f64 {
    let mut obj = w1 * predicted.squared_error(observed);
    let b = beta.as_array();
    let p = beta_prior.as_array();
    for k in 0..b.len() {
        obj += w2 * (b[k] - p[k]) * (b[k] - p[k]);
    }
    obj
}

/// Share RMSE in percentage points: sqrt(sum (p - p_hat)^2 / total paths),
/// with shares expressed in percent and the denominator counting each path
/// once (not per interval).
pub fn rmse(estimated: &ShareTable, reference: &ShareTable, total_paths: usize) -> Result<f64> {
    if total_paths == 0 {
        return Err(Error::Validation("empty path universe".into()));
    }
    let mut sum = 0.0;
    let mut rows = 0usize;
    for (i, m, j, est) in estimated.iter() {
        let reference_row = reference.row(i, m, j).ok_or_else(|| {
            Error::Validation(format!("reference shares missing row ({i:?},{m},{j:?})"))
        })?;
        if reference_row.len() != est.len() {
            return Err(Error::Validation(format!(
                "share tables disagree on path count for ({i:?},{m},{j:?})"
            )));
        }
        for (a, b) in est.iter().zip(reference_row) {
            let d = (a - b) * 100.0;
            sum += d * d;
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Validation("empty share table".into()));
    }
    Ok((sum / total_paths as f64).sqrt())
}

/// Driver configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    /// Maximum fixed-point iterations K_t.
    pub k_total: u32,
    /// Burn-in start K_b; coefficients are averaged over [K_b, K_t].
    pub k_burnin: u32,
    pub beta_init: BetaVector,
    pub beta_prior: BetaVector,
    pub weights: QpWeights,
    pub alc: AlcCfg,
    pub sim: SimConfig,
    #[serde(skip)]
    pub qp: QpOptions,
    pub fit_grad_tolerance: f64,
    pub fit_max_iterations: usize,
}

/// ALC knobs that live in run configuration (seed comes from the master
/// seed).
#[derive(Debug, Clone, Serialize)]
pub struct AlcCfg {
    pub samples: usize,
    pub tolerance: f64,
    pub lower: BetaVector,
    pub upper: BetaVector,
    pub cross_interval: bool,
    pub signature_prefilter: bool,
}

impl Default for AlcCfg {
    fn default() -> Self {
        let d = AlcConfig::default();
        AlcCfg {
            samples: d.samples,
            tolerance: d.tolerance,
            lower: d.lower,
            upper: d.upper,
            cross_interval: d.cross_interval,
            signature_prefilter: d.signature_prefilter,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k_total: 15,
            k_burnin: 13,
            beta_init: BetaVector::ZERO,
            beta_prior: BetaVector::ZERO,
            weights: QpWeights::default(),
            alc: AlcCfg::default(),
            sim: SimConfig::default(),
            qp: QpOptions::default(),
            fit_grad_tolerance: 1e-8,
            fit_max_iterations: 500,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_burnin < 1 || self.k_burnin > self.k_total {
            return Err(Error::Config(format!(
                "burn-in {} must satisfy 1 <= K_b <= K_t = {}",
                self.k_burnin, self.k_total
            )));
        }
        if !self.beta_init.is_finite() {
            return Err(Error::Config("initial beta must be finite".into()));
        }
        Ok(())
    }

    fn alc_config(&self) -> AlcConfig {
        AlcConfig {
            samples: self.alc.samples,
            tolerance: self.alc.tolerance,
            seed: crate::rng::derive_seed(self.sim.seed, &[crate::rng::tag("alc")]),
            lower: self.alc.lower,
            upper: self.alc.upper,
            cross_interval: self.alc.cross_interval,
            signature_prefilter: self.alc.signature_prefilter,
        }
    }
}

/// Log entry of one fixed-point iteration (k = 0 records the initial point).
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: u32,
    pub beta: BetaVector,
    /// Flow squared error at this iteration's loading run (plus prior term).
    pub objective: f64,
    /// Share RMSE against the reference table, when one is supplied.
    pub rmse: Option<f64>,
    pub qp_objective: Option<f64>,
    pub qp_kkt_stationarity: Option<f64>,
    pub qp_kkt_feasibility: Option<f64>,
    pub qp_iterations: Option<usize>,
    pub fit_iterations: Option<usize>,
    pub fit_grad_norm: Option<f64>,
    pub fit_identifiable: Option<bool>,
    pub stranded: u64,
    pub late_exits: u64,
}

#[derive(Debug)]
pub struct EstimationResult {
    pub beta: BetaVector,
    pub shares: ShareTable,
    pub iterations: Vec<IterationRecord>,
    /// Objective of one extra loading run at the averaged beta.
    pub final_objective: f64,
    pub final_outputs: LoadingOutputs,
    pub alc_dof: DofReport,
    pub constraints: ConstraintSet,
}

/// Pairwise constraints supplied from outside, indexed over the
/// [`ShareVarIndex`] built from the same paths and grid. Merged into the
/// constructed ALC before solving.
#[derive(Debug, Clone, Default)]
pub struct ExtraConstraints {
    pub equalities: Vec<(usize, usize)>,
    pub inequalities: Vec<(usize, usize)>,
}

/// Inputs shared by estimation and standalone simulation.
pub struct EstimationInputs<'a> {
    pub network: &'a NetworkModel,
    pub paths: &'a PathSet,
    pub timetable: &'a crate::sim::Timetable,
    pub grid: &'a TimeGrid,
    pub entry_flows: &'a EntryFlowTable,
    pub observed: &'a EntryExitFlowTable,
    /// Synthetic-mode reference shares for RMSE reporting.
    pub reference_shares: Option<&'a ShareTable>,
    pub extra_constraints: Option<&'a ExtraConstraints>,
}

fn fit_rows_from_shares(
    paths: &PathSet,
    grid: &TimeGrid,
    entry_flows: &EntryFlowTable,
    shares: &ShareTable,
) -> Result<Vec<FitRow>> {
    let mut rows = Vec::new();
    for od in &paths.ods {
        let attrs: Vec<_> = od.paths.iter().map(|p| p.attrs).collect();
        for m in grid.intervals() {
            let row = shares.row(od.origin, m, od.dest).ok_or_else(|| {
                Error::Internal("share table missing a row for the fit".into())
            })?;
            rows.push(FitRow {
                weight: entry_flows.get(od.origin, m, od.dest),
                attrs: attrs.clone(),
                shares: row.to_vec(),
            });
        }
    }
    Ok(rows)
}

fn check_flows_covered(
    flows: &EntryFlowTable,
    paths: &PathSet,
    network: &NetworkModel,
) -> Result<()> {
    for (i, _, j, q) in flows.iter() {
        if q > 0.0 && paths.od_idx(i, j).is_none() {
            return Err(Error::Validation(format!(
                "OD {}-{} appears in the demand but has no path set",
                network.station_id(i),
                network.station_id(j)
            )));
        }
    }
    Ok(())
}

/// Run the full fixed-point estimation.
///
/// Loading runs reuse the same seed every iteration so the only thing moving
/// between iterations is the coefficient vector itself.
pub fn run_estimation(inputs: &EstimationInputs, config: &RunConfig) -> Result<EstimationResult> {
    config.validate()?;
    check_flows_covered(inputs.entry_flows, inputs.paths, inputs.network)?;

    let mut constraints = construct_alc(inputs.paths, inputs.grid, &config.alc_config())?;
    let var_count = ShareVarIndex::build(inputs.paths, inputs.grid).len();
    if let Some(extra) = inputs.extra_constraints {
        constraints.equalities.extend_from_slice(&extra.equalities);
        constraints
            .inequalities
            .extend_from_slice(&extra.inequalities);
    }
    let alc_dof = dof_report(&constraints, var_count);

    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut beta = config.beta_init;

    let load = |beta: &BetaVector| -> Result<LoadingOutputs> {
        crate::sim::run_loading_beta(
            beta,
            inputs.entry_flows,
            inputs.network,
            inputs.paths,
            inputs.timetable,
            inputs.grid,
            &config.sim,
        )
    };
    let score = |outputs: &LoadingOutputs, beta: &BetaVector| -> f64 {
        objective(
            &outputs.entry_exit,
            inputs.observed,
            beta,
            &config.beta_prior,
            config.weights.w1,
            config.weights.w2,
        )
    };
    let share_rmse = |beta: &BetaVector| -> Result<Option<f64>> {
        match inputs.reference_shares {
            None => Ok(None),
            Some(reference) => {
                let est = shares_from_beta(beta, inputs.paths, inputs.grid);
                Ok(Some(rmse(&est, reference, inputs.paths.total_paths())?))
            }
        }
    };

    let mut outputs = load(&beta)?;
    iterations.push(IterationRecord {
        k: 0,
        beta,
        objective: score(&outputs, &beta),
        rmse: share_rmse(&beta)?,
        qp_objective: None,
        qp_kkt_stationarity: None,
        qp_kkt_feasibility: None,
        qp_iterations: None,
        fit_iterations: None,
        fit_grad_norm: None,
        fit_identifiable: None,
        stranded: outputs.trace.stranded,
        late_exits: outputs.trace.late_exits,
    });

    for k in 1..=config.k_total {
        let problem = assemble_qp(
            inputs.entry_flows,
            &outputs.delay_rates,
            inputs.observed,
            inputs.paths,
            inputs.grid,
            inputs.network,
            &constraints,
            config.weights,
            None,
        )?;
        let qp_solution = solve_qp(&problem, inputs.network, &config.qp)?;
        let rough = crate::qp::solution_to_share_table(&problem, &qp_solution.shares)?;

        let fit_rows =
            fit_rows_from_shares(inputs.paths, inputs.grid, inputs.entry_flows, &rough)?;
        let fit = fit_fractional_logit(
            &fit_rows,
            &beta,
            &FitOptions {
                grad_tolerance: config.fit_grad_tolerance,
                max_iterations: config.fit_max_iterations,
                ..FitOptions::default()
            },
        )?;
        beta = fit.beta;

        outputs = load(&beta)?;
        iterations.push(IterationRecord {
            k,
            beta,
            objective: score(&outputs, &beta),
            rmse: share_rmse(&beta)?,
            qp_objective: Some(qp_solution.objective),
            qp_kkt_stationarity: Some(qp_solution.kkt_stationarity),
            qp_kkt_feasibility: Some(qp_solution.kkt_feasibility),
            qp_iterations: Some(qp_solution.iterations),
            fit_iterations: Some(fit.iterations),
            fit_grad_norm: Some(fit.grad_norm),
            fit_identifiable: Some(fit.identifiable),
            stranded: outputs.trace.stranded,
            late_exits: outputs.trace.late_exits,
        });
    }

    // Average the post-burn-in iterates.
    let window: Vec<[f64; 4]> = iterations
        .iter()
        .filter(|rec| rec.k >= config.k_burnin)
        .map(|rec| rec.beta.as_array())
        .collect();
    let mut mean = [0.0; 4];
    for b in &window {
        for k in 0..4 {
            mean[k] += b[k] / window.len() as f64;
        }
    }
    let beta_final = BetaVector::from_array(mean);

    let final_outputs = load(&beta_final)?;
    let final_objective = score(&final_outputs, &beta_final);
    let shares = shares_from_beta(&beta_final, inputs.paths, inputs.grid);

    Ok(EstimationResult {
        beta: beta_final,
        shares,
        iterations,
        final_objective,
        final_outputs,
        alc_dof,
        constraints,
    })
}

/// Standalone loading evaluation of a given share table (the simulate
/// command): runs the loader and scores the entry-exit fit when observations
/// are available.
pub fn evaluate_shares(
    inputs: &EstimationInputs,
    shares: &ShareTable,
    sim: &SimConfig,
) -> Result<(LoadingOutputs, f64)> {
    check_flows_covered(inputs.entry_flows, inputs.paths, inputs.network)?;
    let outputs = run_loading(
        shares,
        inputs.entry_flows,
        inputs.network,
        inputs.paths,
        inputs.timetable,
        inputs.grid,
        sim,
    )?;
    let obj = outputs.entry_exit.squared_error(inputs.observed);
    Ok((outputs, obj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_time_grid, StationIdx};

    fn grid() -> TimeGrid {
        build_time_grid(
            ClockTime::from_hms(7, 0, 0),
            ClockTime::from_hms(7, 30, 0),
            900,
        )
        .unwrap()
    }

    fn net() -> NetworkModel {
        NetworkModel::from_json(
            r#"{
              "stations": [{"id": "i"}, {"id": "j"}],
              "platforms": [
                {"id": "pi", "station": "i", "line": "L", "direction": "out", "access_walk_s": 0, "egress_walk_s": 0},
                {"id": "pj", "station": "j", "line": "L", "direction": "out", "access_walk_s": 0, "egress_walk_s": 0}
              ]
            }"#,
            "test",
        )
        .unwrap()
    }

    fn rec(card: u64, tap_in: &str, tap_out: &str) -> AfcRecord {
        AfcRecord {
            card_id: card,
            origin_station: "i".into(),
            tap_in_time: tap_in.into(),
            destination_station: "j".into(),
            tap_out_time: tap_out.into(),
        }
    }

    #[test]
    fn aggregates_the_worked_example() {
        // 10 records entering 7:03-7:10; 6 exit in interval 1, 4 in interval 2.
        let mut records = Vec::new();
        for c in 0..6 {
            records.push(rec(c, "07:03:00", "07:12:00"));
        }
        for c in 6..10 {
            records.push(rec(c, "07:10:00", "07:20:00"));
        }
        let (entry, entry_exit, report) =
            observed_flows_from_afc(&records, &grid(), &net()).unwrap();
        let i = net().station_idx("i").unwrap();
        let j = net().station_idx("j").unwrap();
        assert_eq!(entry.get(i, 1, j), 10.0);
        assert_eq!(entry_exit.get(i, 1, j, 1), 6.0);
        assert_eq!(entry_exit.get(i, 1, j, 2), 4.0);
        assert_eq!(report.accepted, 10);
        assert_eq!(report.rejected, 0);
    }

    #[test]
    fn empty_records_empty_tables() {
        let (entry, entry_exit, report) = observed_flows_from_afc(&[], &grid(), &net()).unwrap();
        assert!(entry.is_empty());
        assert!(entry_exit.is_empty());
        assert_eq!(report.accepted, 0);
    }

    #[test]
    fn malformed_row_counted_not_fatal() {
        let mut records = vec![
            rec(0, "07:05:00", "07:15:00"),
            rec(1, "07:05:00", "07:15:00"),
            rec(2, "07:05:00", "07:15:00"),
            rec(3, "07:05:00", "07:15:00"),
        ];
        records.push(rec(4, "07:20:00", "07:01:00")); // tap-out before tap-in
        let (entry, _, report) = observed_flows_from_afc(&records, &grid(), &net()).unwrap();
        let i = net().station_idx("i").unwrap();
        let j = net().station_idx("j").unwrap();
        assert_eq!(entry.get(i, 1, j), 4.0);
        assert_eq!(report.rejected, 1);
        assert_eq!(report.accepted, 4);
    }

    #[test]
    fn late_tap_out_clamped() {
        let records = vec![rec(0, "07:20:00", "08:10:00")];
        let (_, entry_exit, report) = observed_flows_from_afc(&records, &grid(), &net()).unwrap();
        let i = net().station_idx("i").unwrap();
        let j = net().station_idx("j").unwrap();
        assert_eq!(entry_exit.get(i, 2, j, 2), 1.0);
        assert_eq!(report.late_exits, 1);
    }

    #[test]
    fn objective_edge_cases() {
        let mut a = EntryExitFlowTable::new();
        a.add(StationIdx(0), 1, StationIdx(1), 1, 5.0);
        let b = a.clone();
        let zero = BetaVector::ZERO;
        assert_eq!(objective(&a, &b, &zero, &zero, 1.0, 0.0), 0.0);
        let mut c = EntryExitFlowTable::new();
        c.add(StationIdx(0), 1, StationIdx(1), 1, 8.0);
        assert_eq!(objective(&a, &c, &zero, &zero, 1.0, 0.0), 9.0);
        let beta = BetaVector::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(objective(&a, &a, &beta, &zero, 0.0, 1.0), 1.0);
    }

    #[test]
    fn rmse_examples() {
        let i = StationIdx(0);
        let j = StationIdx(1);
        let mut a = ShareTable::new();
        a.set_row(i, 1, j, vec![0.6, 0.4]);
        let mut b = ShareTable::new();
        b.set_row(i, 1, j, vec![0.5, 0.5]);
        assert!((rmse(&a, &b, 2).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(rmse(&a, &a, 2).unwrap(), 0.0);
        let mut c = ShareTable::new();
        c.set_row(i, 1, j, vec![1.0]);
        assert!(rmse(&a, &c, 2).is_err());
    }

    #[test]
    fn burnin_bounds_validated() {
        let mut cfg = RunConfig::default();
        cfg.k_burnin = 0;
        assert!(cfg.validate().is_err());
        cfg.k_burnin = 16;
        assert!(cfg.validate().is_err());
        cfg.k_burnin = 15;
        assert!(cfg.validate().is_ok());
    }
}
