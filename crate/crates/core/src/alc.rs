//! Monte-Carlo construction of approximate linear constraints (ALC) over
//! path-share variables.
//!
//! Coefficients are drawn uniformly from a box of plausible (negative) cost
//! coefficients; a pairwise share relationship that holds at every sample is
//! saved as a linear constraint. Equalities (`p_a = p_b`) may relate any two
//! variables; inequalities (`p_a >= p_b`) are restricted to paths of the same
//! OD row. Because path attributes are time-invariant, equal shares across
//! intervals of the same variable are provable rather than sampled and are
//! emitted directly when enabled.

use crate::domain::{AttrVector, BetaVector, OdIdx, PathSet, StationIdx, TimeGrid, BETA_DIM};
use crate::error::{Error, Result};
use crate::rng::DetRng;
use serde::Serialize;
use std::collections::BTreeMap;

/// Dense index over all (origin, interval, destination, path) share
/// variables in scope.
#[derive(Debug, Clone)]
pub struct ShareVarIndex {
    vars: Vec<ShareVar>,
    lookup: BTreeMap<(StationIdx, u32, StationIdx, usize), usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShareVar {
    pub origin: StationIdx,
    pub m: u32,
    pub dest: StationIdx,
    pub r: usize,
    pub od: OdIdx,
}

impl ShareVarIndex {
    /// Index every path of every OD over every grid interval, in
    /// deterministic order.
    pub fn build(paths: &PathSet, grid: &TimeGrid) -> Self {
        let mut vars = Vec::new();
        let mut lookup = BTreeMap::new();
        for (od_idx, od) in paths.ods.iter().enumerate() {
            for m in grid.intervals() {
                for r in 0..od.paths.len() {
                    lookup.insert((od.origin, m, od.dest, r), vars.len());
                    vars.push(ShareVar {
                        origin: od.origin,
                        m,
                        dest: od.dest,
                        r,
                        od: OdIdx(od_idx as u32),
                    });
                }
            }
        }
        ShareVarIndex { vars, lookup }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn var(&self, idx: usize) -> ShareVar {
        self.vars[idx]
    }

    pub fn idx(&self, origin: StationIdx, m: u32, dest: StationIdx, r: usize) -> Option<usize> {
        self.lookup.get(&(origin, m, dest, r)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, ShareVar)> + '_ {
        self.vars.iter().enumerate().map(|(i, &v)| (i, v))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlcMeta {
    pub samples: usize,
    pub tolerance: f64,
    pub lower: [f64; BETA_DIM],
    pub upper: [f64; BETA_DIM],
}

/// Pairwise linear constraints over share-variable indices.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSet {
    /// p[a] = p[b]
    pub equalities: Vec<(usize, usize)>,
    /// p[a] >= p[b], same OD row only
    pub inequalities: Vec<(usize, usize)>,
    pub meta: AlcMeta,
}

#[derive(Debug, Clone)]
pub struct AlcConfig {
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub lower: BetaVector,
    pub upper: BetaVector,
    /// Emit equalities across intervals of the same (OD, path) variable.
    pub cross_interval: bool,
    /// Restrict sampled equality candidates to pairs whose within-OD
    /// utility-difference patterns match.
    pub signature_prefilter: bool,
}

impl Default for AlcConfig {
    fn default() -> Self {
        AlcConfig {
            samples: 50,
            tolerance: 1e-9,
            seed: 1,
            lower: BetaVector::new(-2.0, -4.0, -6.0, -10.0),
            upper: BetaVector::ZERO,
            cross_interval: true,
            signature_prefilter: true,
        }
    }
}

/// Within-OD attribute-difference multiset of one path, quantized. Two
/// variables can have identical shares for every beta exactly when these
/// multisets coincide, so the prefilter never drops a structurally valid
/// equality candidate.
fn difference_signature(attrs: &[AttrVector], r: usize) -> Vec<[i64; BETA_DIM]> {
    let quant = |x: f64| (x / 1e-9).round() as i64;
    let base = attrs[r].as_array();
    let mut sig: Vec<[i64; BETA_DIM]> = attrs
        .iter()
        .map(|a| {
            let v = a.as_array();
            [
                quant(v[0] - base[0]),
                quant(v[1] - base[1]),
                quant(v[2] - base[2]),
                quant(v[3] - base[3]),
            ]
        })
        .collect();
    sig.sort();
    sig
}

/// Sample coefficient vectors and extract every pairwise share relationship
/// that holds at all of them. Deterministic under a fixed seed; with a fixed
/// seed the sample stream for S2 > S1 extends the stream for S1, so the
/// constraint set shrinks monotonically in S.
pub fn construct_alc(paths: &PathSet, grid: &TimeGrid, cfg: &AlcConfig) -> Result<ConstraintSet> {
    if cfg.samples == 0 {
        return Err(Error::Config("ALC sample count must be at least 1".into()));
    }
    let lo = cfg.lower.as_array();
    let hi = cfg.upper.as_array();
    for k in 0..BETA_DIM {
        if lo[k] > hi[k] {
            return Err(Error::Config(format!(
                "beta bounds inverted in component {k}: [{}, {}]",
                lo[k], hi[k]
            )));
        }
        if hi[k] > 0.0 {
            return Err(Error::Config(format!(
                "cost coefficient upper bound must be <= 0, got {} in component {k}",
                hi[k]
            )));
        }
    }

    let index = ShareVarIndex::build(paths, grid);
    let mut rng = DetRng::derived(cfg.seed, "alc", &[]);

    // Shares per (od, sample, path); attributes are time-invariant so one
    // evaluation per OD covers every interval.
    let od_attrs: Vec<Vec<AttrVector>> = paths
        .ods
        .iter()
        .map(|od| od.paths.iter().map(|p| p.attrs).collect())
        .collect();
    let mut sampled: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(cfg.samples); paths.len()];
    for _ in 0..cfg.samples {
        let beta = BetaVector::from_array([
            rng.uniform_in(lo[0], hi[0]),
            rng.uniform_in(lo[1], hi[1]),
            rng.uniform_in(lo[2], hi[2]),
            rng.uniform_in(lo[3], hi[3]),
        ]);
        for (od_idx, attrs) in od_attrs.iter().enumerate() {
            sampled[od_idx].push(crate::clogit::shares_for_od(&beta, attrs));
        }
    }

    // Path-level candidates: (od, r) pairs, expanded per interval below.
    let mut path_vars: Vec<(usize, usize)> = Vec::new();
    for (od_idx, attrs) in od_attrs.iter().enumerate() {
        for r in 0..attrs.len() {
            path_vars.push((od_idx, r));
        }
    }
    let signatures: Vec<Vec<[i64; BETA_DIM]>> = path_vars
        .iter()
        .map(|&(od_idx, r)| difference_signature(&od_attrs[od_idx], r))
        .collect();

    let mut path_equalities: Vec<((usize, usize), (usize, usize))> = Vec::new();
    for a in 0..path_vars.len() {
        for b in (a + 1)..path_vars.len() {
            if cfg.signature_prefilter && signatures[a] != signatures[b] {
                continue;
            }
            let (od_a, r_a) = path_vars[a];
            let (od_b, r_b) = path_vars[b];
            let equal = (0..cfg.samples)
                .all(|s| (sampled[od_a][s][r_a] - sampled[od_b][s][r_b]).abs() <= cfg.tolerance);
            if equal {
                path_equalities.push((path_vars[a], path_vars[b]));
            }
        }
    }

    let mut path_inequalities: Vec<(usize, usize, usize)> = Vec::new(); // (od, a, b): p_a >= p_b
    for (od_idx, attrs) in od_attrs.iter().enumerate() {
        for a in 0..attrs.len() {
            for b in 0..attrs.len() {
                if a == b
                    || path_equalities.contains(&((od_idx, a.min(b)), (od_idx, a.max(b))))
                {
                    continue;
                }
                let dominates = (0..cfg.samples)
                    .all(|s| sampled[od_idx][s][a] >= sampled[od_idx][s][b] - cfg.tolerance);
                if dominates {
                    path_inequalities.push((od_idx, a, b));
                }
            }
        }
    }

    let mut equalities = Vec::new();
    let mut inequalities = Vec::new();
    let at = |od_idx: usize, m: u32, r: usize| {
        let od = &paths.ods[od_idx];
        index.idx(od.origin, m, od.dest, r).unwrap()
    };
    for ((od_a, r_a), (od_b, r_b)) in &path_equalities {
        for m in grid.intervals() {
            equalities.push((at(*od_a, m, *r_a), at(*od_b, m, *r_b)));
        }
    }
    if cfg.cross_interval {
        for &(od_idx, r) in &path_vars {
            for m in 1..grid.n {
                equalities.push((at(od_idx, m, r), at(od_idx, m + 1, r)));
            }
        }
    }
    for &(od_idx, a, b) in &path_inequalities {
        for m in grid.intervals() {
            inequalities.push((at(od_idx, m, a), at(od_idx, m, b)));
        }
    }

    Ok(ConstraintSet {
        equalities,
        inequalities,
        meta: AlcMeta {
            samples: cfg.samples,
            tolerance: cfg.tolerance,
            lower: lo,
            upper: hi,
        },
    })
}

/// Union-find equality classes: returns a root index per variable.
pub fn equality_classes(equalities: &[(usize, usize)], n: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in equalities {
        if a == b {
            continue;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            // smaller root wins, keeping class ids deterministic
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DofReport {
    pub variables: usize,
    pub equality_constraints: usize,
    pub independent_equalities: usize,
    pub equivalence_classes: usize,
    pub inequality_constraints: usize,
    pub reduction_pct: f64,
}

/// Degrees-of-freedom report: independent equality count via union-find and
/// the resulting reduction of the free dimension.
pub fn dof_report(cs: &ConstraintSet, variables: usize) -> DofReport {
    let roots = equality_classes(&cs.equalities, variables);
    let mut classes: Vec<usize> = roots.clone();
    classes.sort_unstable();
    classes.dedup();
    let n_classes = classes.len();
    DofReport {
        variables,
        equality_constraints: cs.equalities.len(),
        independent_equalities: variables - n_classes,
        equivalence_classes: n_classes,
        inequality_constraints: cs.inequalities.len(),
        reduction_pct: if variables == 0 {
            0.0
        } else {
            100.0 * (variables - n_classes) as f64 / variables as f64
        },
    }
}

/// JSON view of a constraint set with variables spelled out, for audit.
pub fn constraints_to_json(
    cs: &ConstraintSet,
    index: &ShareVarIndex,
    network: &crate::domain::NetworkModel,
) -> serde_json::Value {
    let var = |i: usize| {
        let v = index.var(i);
        serde_json::json!({
            "origin": network.station_id(v.origin),
            "interval": v.m,
            "destination": network.station_id(v.dest),
            "path": v.r + 1,
        })
    };
    serde_json::json!({
        "meta": cs.meta,
        "equalities": cs.equalities.iter().map(|&(a, b)| serde_json::json!([var(a), var(b)])).collect::<Vec<_>>(),
        "inequalities": cs.inequalities.iter().map(|&(a, b)| serde_json::json!([var(a), var(b)])).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_find_class_counting() {
        // 4 variables with equalities {(0,2),(1,3)}: 2 classes, 50% reduction.
        let cs = ConstraintSet {
            equalities: vec![(0, 2), (1, 3)],
            inequalities: vec![],
            meta: AlcMeta {
                samples: 1,
                tolerance: 1e-9,
                lower: [-1.0; 4],
                upper: [0.0; 4],
            },
        };
        let rep = dof_report(&cs, 4);
        assert_eq!(rep.equivalence_classes, 2);
        assert_eq!(rep.independent_equalities, 2);
        assert_eq!(rep.reduction_pct, 50.0);
    }

    #[test]
    fn no_constraints_no_reduction() {
        let cs = ConstraintSet {
            equalities: vec![],
            inequalities: vec![],
            meta: AlcMeta {
                samples: 1,
                tolerance: 1e-9,
                lower: [-1.0; 4],
                upper: [0.0; 4],
            },
        };
        assert_eq!(dof_report(&cs, 4).reduction_pct, 0.0);
    }

    #[test]
    fn transitive_merges_counted_once() {
        let cs = ConstraintSet {
            equalities: vec![(0, 1), (1, 2), (0, 2)],
            inequalities: vec![],
            meta: AlcMeta {
                samples: 1,
                tolerance: 1e-9,
                lower: [-1.0; 4],
                upper: [0.0; 4],
            },
        };
        let rep = dof_report(&cs, 4);
        assert_eq!(rep.equivalence_classes, 2);
        assert_eq!(rep.independent_equalities, 2);
    }
}
