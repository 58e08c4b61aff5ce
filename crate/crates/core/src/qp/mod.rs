//! Sub-problem 1(a): the convex quadratic program over path shares with
//! delay rates held fixed.
//!
//! The objective is
//! `w1 * sum_{i_m,j_n} (q^{i_m,j_n} - q~^{i_m,j_n})^2 + w2 * sum (p - p~)^2`
//! where the predicted entry-exit flow is the linear form
//! `q^{i_m,j_n} = q^{i_m,j} sum_r mu_r^{i_m,j_n} p_r^{i_m,j}`.
//! Constraints: per-(origin, interval, destination) simplexes, box bounds and
//! the ALC equalities/inequalities. Equalities are eliminated structurally by
//! union-find substitution before solving, which is what turns the ALC
//! degree-of-freedom reduction into a smaller problem.

mod solver;

pub use solver::{ActiveSetSolution, DualActiveSet, LinConstraint};

use crate::alc::{equality_classes, ConstraintSet, ShareVarIndex};
use crate::domain::{
    DelayRateTable, EntryExitFlowTable, EntryFlowTable, NetworkModel, PathSet, ShareTable,
    TimeGrid,
};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QpWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for QpWeights {
    fn default() -> Self {
        QpWeights { w1: 1.0, w2: 0.0 }
    }
}

/// One predicted entry-exit cell: observed value and the linear form over
/// share variables.
#[derive(Debug, Clone)]
pub struct PredictionRow {
    pub observed: f64,
    /// (share variable, coefficient q * mu).
    pub coeffs: Vec<(usize, f64)>,
    pub label: String,
}

/// Assembled QP over the full (un-eliminated) share variable index.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub index: ShareVarIndex,
    pub rows: Vec<PredictionRow>,
    pub prior: Vec<f64>,
    pub weights: QpWeights,
    pub alc: ConstraintSet,
    /// Share variables per (origin, interval, destination) simplex row.
    pub simplex: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    /// Raw solution per share variable (may sit 1e-9 outside [0,1]).
    pub shares: Vec<f64>,
    /// Objective of the assembled problem at the solution (without any
    /// solver regularization).
    pub objective: f64,
    pub kkt_stationarity: f64,
    pub kkt_feasibility: f64,
    pub kkt_complementarity: f64,
    pub iterations: usize,
    /// True when some variable is pinned by neither data nor prior; its
    /// value is then an arbitrary feasible choice awaiting the MNL
    /// correction.
    pub indeterminate: bool,
}

/// Options of [`solve_qp`]. The ridge is relative to the largest Hessian
/// diagonal and exists only to keep the reduced Hessian positive definite;
/// with the default it perturbs objectives by less than 1e-8 relative.
#[derive(Debug, Clone)]
pub struct QpOptions {
    pub feasibility_tolerance: f64,
    pub max_iterations: usize,
    pub ridge_rel: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            feasibility_tolerance: 1e-8,
            max_iterations: 100_000,
            ridge_rel: 1e-11,
        }
    }
}

/// Assemble the QP from flows, delay rates, observations and constraints.
/// Variables of OD rows with zero entry flow are retained; their values are
/// driven by ALC equalities or flagged indeterminate.
pub fn assemble_qp(
    flows: &EntryFlowTable,
    delay_rates: &DelayRateTable,
    observed: &EntryExitFlowTable,
    paths: &PathSet,
    grid: &TimeGrid,
    network: &NetworkModel,
    alc: &ConstraintSet,
    weights: QpWeights,
    prior: Option<&ShareTable>,
) -> Result<QpProblem> {
    let index = ShareVarIndex::build(paths, grid);

    let mut prior_vec = vec![0.0; index.len()];
    for (v, var) in index.iter() {
        let od = paths.od_idx(var.origin, var.dest).unwrap();
        let n_paths = paths.od(od).paths.len();
        prior_vec[v] = match prior.and_then(|p| p.get(var.origin, var.m, var.dest, var.r)) {
            Some(p) => p,
            None => 1.0 / n_paths as f64,
        };
    }

    let mut rows = Vec::new();
    for (i, m, j, q) in flows.iter() {
        if q <= 0.0 {
            continue;
        }
        let od = paths.od_idx(i, j).ok_or_else(|| {
            Error::Validation(format!(
                "entry flow for OD {}-{} has no path set",
                network.station_id(i),
                network.station_id(j)
            ))
        })?;
        let n_paths = paths.od(od).paths.len();
        let mu_rows: Vec<&[f64]> = (0..n_paths)
            .map(|r| {
                delay_rates.row(i, m, j, r).ok_or_else(|| {
                    Error::MissingDelayRate(format!(
                        "OD {}-{} interval {m} path {}",
                        network.station_id(i),
                        network.station_id(j),
                        r + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        for n in m..=grid.n {
            let mut coeffs = Vec::new();
            for (r, mu) in mu_rows.iter().enumerate() {
                let a = q * mu[(n - 1) as usize];
                if a != 0.0 {
                    let v = index.idx(i, m, j, r).unwrap();
                    coeffs.push((v, a));
                }
            }
            rows.push(PredictionRow {
                observed: observed.get(i, m, j, n),
                coeffs,
                label: format!(
                    "flow[{}@{m} -> {}@{n}]",
                    network.station_id(i),
                    network.station_id(j)
                ),
            });
        }
    }

    let mut simplex = Vec::new();
    for od in &paths.ods {
        for m in grid.intervals() {
            let vars: Vec<usize> = (0..od.paths.len())
                .map(|r| index.idx(od.origin, m, od.dest, r).unwrap())
                .collect();
            simplex.push((
                format!(
                    "simplex[{}@{m} -> {}]",
                    network.station_id(od.origin),
                    network.station_id(od.dest)
                ),
                vars,
            ));
        }
    }

    Ok(QpProblem {
        index,
        rows,
        prior: prior_vec,
        weights,
        alc: alc.clone(),
        simplex,
    })
}

/// Evaluate the assembled objective at a full share vector.
pub fn qp_objective(problem: &QpProblem, shares: &[f64]) -> f64 {
    let mut obj = 0.0;
    for row in &problem.rows {
        let pred: f64 = row.coeffs.iter().map(|&(v, a)| a * shares[v]).sum();
        let d = pred - row.observed;
        obj += problem.weights.w1 * d * d;
    }
    for (v, &p) in shares.iter().enumerate() {
        let d = p - problem.prior[v];
        obj += problem.weights.w2 * d * d;
    }
    obj
}

struct Reduced {
    class_of: Vec<usize>,
    class_vars: Vec<Vec<usize>>,
}

fn reduce_variables(problem: &QpProblem) -> Reduced {
    let n = problem.index.len();
    let roots = equality_classes(&problem.alc.equalities, n);
    let mut root_to_class: BTreeMap<usize, usize> = BTreeMap::new();
    let mut class_vars: Vec<Vec<usize>> = Vec::new();
    let mut class_of = vec![0usize; n];
    for v in 0..n {
        let class = *root_to_class.entry(roots[v]).or_insert_with(|| {
            class_vars.push(Vec::new());
            class_vars.len() - 1
        });
        class_of[v] = class;
        class_vars[class].push(v);
    }
    Reduced {
        class_of,
        class_vars,
    }
}

fn describe_var(problem: &QpProblem, network: &NetworkModel, v: usize) -> String {
    let var = problem.index.var(v);
    format!(
        "p[{}@{} -> {}, path {}]",
        network.station_id(var.origin),
        var.m,
        network.station_id(var.dest),
        var.r + 1
    )
}

/// Solve the assembled QP to the KKT certificate in the contract:
/// primal feasibility within `feasibility_tolerance`, stationarity residual
/// reported against the unregularized objective.
pub fn solve_qp(
    problem: &QpProblem,
    network: &NetworkModel,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let red = reduce_variables(problem);
    let k = red.class_vars.len();

    // Reduced quadratic form.
    let mut q = DMatrix::<f64>::zeros(k, k);
    let mut c = DVector::<f64>::zeros(k);
    for row in &problem.rows {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(v, a) in &row.coeffs {
            *acc.entry(red.class_of[v]).or_insert(0.0) += a;
        }
        let reduced: Vec<(usize, f64)> = acc.into_iter().collect();
        for &(ci, ai) in &reduced {
            for &(cj, aj) in &reduced {
                q[(ci, cj)] += 2.0 * problem.weights.w1 * ai * aj;
            }
            c[ci] -= 2.0 * problem.weights.w1 * row.observed * ai;
        }
    }
    for (v, &p) in problem.prior.iter().enumerate() {
        let ci = red.class_of[v];
        q[(ci, ci)] += 2.0 * problem.weights.w2;
        c[ci] -= 2.0 * problem.weights.w2 * p;
    }

    // A class untouched by data and prior has a flat objective; the solver
    // still returns a feasible value for it.
    let indeterminate = (0..k).any(|ci| q[(ci, ci)] == 0.0);

    // Tiny ridge toward the class-averaged prior keeps the Hessian positive
    // definite without moving the optimum beyond the reporting tolerances.
    let maxdiag = (0..k).map(|i| q[(i, i)]).fold(0.0, f64::max);
    let ridge = opts.ridge_rel * maxdiag.max(1.0);
    for (ci, vars) in red.class_vars.iter().enumerate() {
        let center: f64 =
            vars.iter().map(|&v| problem.prior[v]).sum::<f64>() / vars.len() as f64;
        q[(ci, ci)] += 2.0 * ridge;
        c[ci] -= 2.0 * ridge * center;
    }

    // Constraints: deduplicated simplex equalities, box bounds, ALC
    // inequalities mapped onto classes.
    let mut constraints: Vec<LinConstraint> = Vec::new();
    let mut seen_eq: BTreeMap<Vec<(usize, i64)>, usize> = BTreeMap::new();
    for (label, vars) in &problem.simplex {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &v in vars {
            *acc.entry(red.class_of[v]).or_insert(0.0) += 1.0;
        }
        let normal: Vec<(usize, f64)> = acc.into_iter().collect();
        let key: Vec<(usize, i64)> = normal.iter().map(|&(i, a)| (i, a as i64)).collect();
        if let Some(&prev) = seen_eq.get(&key) {
            let lbl = &mut constraints[prev].label;
            if lbl.len() < 200 {
                lbl.push_str(" & ");
                lbl.push_str(label);
            }
            continue;
        }
        seen_eq.insert(key, constraints.len());
        constraints.push(LinConstraint {
            normal,
            rhs: 1.0,
            is_equality: true,
            label: label.clone(),
        });
    }
    for ci in 0..k {
        let rep = red.class_vars[ci][0];
        constraints.push(LinConstraint {
            normal: vec![(ci, 1.0)],
            rhs: 0.0,
            is_equality: false,
            label: format!("0 <= {}", describe_var(problem, network, rep)),
        });
        constraints.push(LinConstraint {
            normal: vec![(ci, -1.0)],
            rhs: -1.0,
            is_equality: false,
            label: format!("{} <= 1", describe_var(problem, network, rep)),
        });
    }
    let mut seen_ineq: std::collections::BTreeSet<(usize, usize)> = std::collections::BTreeSet::new();
    for &(a, b) in &problem.alc.inequalities {
        let (ca, cb) = (red.class_of[a], red.class_of[b]);
        if ca == cb || !seen_ineq.insert((ca, cb)) {
            continue;
        }
        constraints.push(LinConstraint {
            normal: vec![(ca, 1.0), (cb, -1.0)],
            rhs: 0.0,
            is_equality: false,
            label: format!(
                "{} >= {}",
                describe_var(problem, network, a),
                describe_var(problem, network, b)
            ),
        });
    }

    let solver = DualActiveSet::new(&q, &constraints)?;
    let sol = solver.solve(&c, opts.max_iterations)?;

    // Expand back to the full variable space.
    let mut shares = vec![0.0; problem.index.len()];
    for (v, s) in shares.iter_mut().enumerate() {
        *s = sol.x[red.class_of[v]];
    }

    // KKT residuals against the unregularized objective.
    let mut grad = DVector::<f64>::zeros(k);
    for row in &problem.rows {
        let pred: f64 = row.coeffs.iter().map(|&(v, a)| a * shares[v]).sum();
        let d = pred - row.observed;
        for &(v, a) in &row.coeffs {
            grad[red.class_of[v]] += 2.0 * problem.weights.w1 * d * a;
        }
    }
    for (v, &p) in shares.iter().enumerate() {
        grad[red.class_of[v]] += 2.0 * problem.weights.w2 * (p - problem.prior[v]);
    }
    for &(ci, u) in &sol.active {
        for &(i, a) in &constraints[ci].normal {
            grad[i] -= u * a;
        }
    }
    let kkt_stationarity = grad.amax();

    let mut kkt_feasibility = 0.0f64;
    let mut kkt_complementarity = 0.0f64;
    for (ci, con) in constraints.iter().enumerate() {
        let value: f64 = con.normal.iter().map(|&(i, a)| a * sol.x[i]).sum();
        let violation = if con.is_equality {
            (value - con.rhs).abs()
        } else {
            (con.rhs - value).max(0.0)
        };
        kkt_feasibility = kkt_feasibility.max(violation);
        if let Some(&(_, u)) = sol.active.iter().find(|&&(a, _)| a == ci) {
            if !con.is_equality {
                kkt_complementarity = kkt_complementarity.max((u * (value - con.rhs)).abs());
            }
        }
    }

    if kkt_feasibility > opts.feasibility_tolerance {
        return Err(Error::Internal(format!(
            "QP feasibility residual {kkt_feasibility:.3e} exceeds tolerance"
        )));
    }

    Ok(QpSolution {
        objective: qp_objective(problem, &shares),
        shares,
        kkt_stationarity,
        kkt_feasibility,
        kkt_complementarity,
        iterations: sol.iterations,
        indeterminate,
    })
}

/// Turn a raw solution vector into a validated share table (rows clamped to
/// [0,1] and renormalized within the solver feasibility tolerance).
pub fn solution_to_share_table(problem: &QpProblem, shares: &[f64]) -> Result<ShareTable> {
    let mut table = ShareTable::new();
    let mut by_row: BTreeMap<(crate::domain::StationIdx, u32, crate::domain::StationIdx), Vec<(usize, f64)>> =
        BTreeMap::new();
    for (v, var) in problem.index.iter() {
        by_row
            .entry((var.origin, var.m, var.dest))
            .or_default()
            .push((var.r, shares[v]));
    }
    for ((i, m, j), mut row) in by_row {
        row.sort_by_key(|&(r, _)| r);
        let mut vals: Vec<f64> = row.into_iter().map(|(_, p)| p.clamp(0.0, 1.0)).collect();
        let sum: f64 = vals.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Internal("share row sums to zero".into()));
        }
        for v in vals.iter_mut() {
            *v /= sum;
        }
        table.set_row(i, m, j, vals);
    }
    table.validate()?;
    Ok(table)
}

/// JSON bundle of a problem and its solution for offline inspection.
pub fn qp_to_json(problem: &QpProblem, solution: &QpSolution) -> serde_json::Value {
    serde_json::json!({
        "weights": problem.weights,
        "variables": problem.index.len(),
        "rows": problem.rows.iter().map(|r| serde_json::json!({
            "label": r.label,
            "observed": r.observed,
            "coeffs": r.coeffs,
        })).collect::<Vec<_>>(),
        "alc_equalities": problem.alc.equalities.len(),
        "alc_inequalities": problem.alc.inequalities.len(),
        "solution": solution,
    })
}
