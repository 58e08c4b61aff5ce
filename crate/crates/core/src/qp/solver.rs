//! Dense dual active-set solver for strictly convex quadratic programs
//! (Goldfarb-Idnani).
//!
//! Minimizes `1/2 x'Qx + c'x` subject to equality and `n.x >= b` inequality
//! constraints, Q positive definite. The method starts from the unconstrained
//! minimizer and adds violated constraints one at a time, taking dual steps
//! to drop blocking constraints; an infeasible system surfaces as an
//! unbounded dual step and yields the offending constraint subset.

use crate::error::{Error, InfeasibilityCertificate, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone)]
pub struct LinConstraint {
    /// Sparse normal vector.
    pub normal: Vec<(usize, f64)>,
    pub rhs: f64,
    pub is_equality: bool,
    pub label: String,
}

impl LinConstraint {
    fn dense(&self, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        for &(i, a) in &self.normal {
            v[i] += a;
        }
        v
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.normal.iter().map(|&(i, a)| a * x[i]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ActiveSetSolution {
    pub x: DVector<f64>,
    /// (constraint index, multiplier); multipliers of inequalities are >= 0.
    pub active: Vec<(usize, f64)>,
    pub iterations: usize,
}

pub struct DualActiveSet<'a> {
    q: &'a DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    constraints: &'a [LinConstraint],
    n: usize,
}

const DROP_EPS: f64 = 1e-13;

impl<'a> DualActiveSet<'a> {
    pub fn new(q: &'a DMatrix<f64>, constraints: &'a [LinConstraint]) -> Result<Self> {
        let chol = q
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Internal("QP Hessian is not positive definite".into()))?;
        Ok(DualActiveSet {
            q,
            chol,
            constraints,
            n: q.nrows(),
        })
    }

    pub fn solve(&self, c: &DVector<f64>, max_iterations: usize) -> Result<ActiveSetSolution> {
        let mut x = self.chol.solve(&(-c));
        let mut active: Vec<usize> = Vec::new();
        let mut multipliers: Vec<f64> = Vec::new();
        let mut iterations = 0;

        let scale = 1.0 + self
            .constraints
            .iter()
            .map(|con| con.rhs.abs())
            .fold(0.0, f64::max);
        let feas_tol = 1e-10 * scale;

        // Equalities are forced in first and never leave the active set;
        // afterwards the most violated inequality enters until none remains.
        let mut forced: Vec<usize> = (0..self.constraints.len())
            .filter(|&i| self.constraints[i].is_equality)
            .collect();
        forced.reverse();

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(Error::Internal(format!(
                    "active-set solver exceeded {max_iterations} iterations"
                )));
            }

            let entering = if let Some(i) = forced.pop() {
                i
            } else {
                let mut worst = None;
                let mut worst_violation = feas_tol;
                for (i, con) in self.constraints.iter().enumerate() {
                    if con.is_equality || active.contains(&i) {
                        continue;
                    }
                    let violation = con.rhs - con.value(&x);
                    if violation > worst_violation {
                        worst_violation = violation;
                        worst = Some(i);
                    }
                }
                match worst {
                    Some(i) => i,
                    None => break,
                }
            };

            let con = &self.constraints[entering];
            // Flip an equality so its violation is non-negative; once active
            // its multiplier sign is free. Satisfied equalities still enter
            // (with a zero-length step) so later steps preserve them; only
            // linearly dependent ones are skipped in the inner loop.
            let mut violation = con.rhs - con.value(&x);
            let flip = if con.is_equality && violation < 0.0 {
                -1.0
            } else {
                1.0
            };
            let normal = con.dense(self.n) * flip;
            violation *= flip;
            let mut entering_multiplier = 0.0;

            // Inner loop: take primal/dual steps until the entering
            // constraint becomes active.
            loop {
                iterations += 1;
                if iterations > max_iterations {
                    return Err(Error::Internal(format!(
                        "active-set solver exceeded {max_iterations} iterations"
                    )));
                }
                let qinv_np = self.chol.solve(&normal);
                let (z, r) = if active.is_empty() {
                    (qinv_np.clone(), DVector::zeros(0))
                } else {
                    let k = active.len();
                    let mut nmat = DMatrix::zeros(self.n, k);
                    for (col, &ai) in active.iter().enumerate() {
                        nmat.set_column(col, &self.constraints[ai].dense(self.n));
                    }
                    let qinv_n = self.chol.solve(&nmat);
                    let m = nmat.transpose() * &qinv_n;
                    let rhs = nmat.transpose() * &qinv_np;
                    let r = m.lu().solve(&rhs).ok_or_else(|| {
                        Error::Internal("singular active-set system".into())
                    })?;
                    let z = &qinv_np - &qinv_n * &r;
                    (z, r)
                };

                let z_scale = 1.0 + qinv_np.amax();
                let z_zero = z.amax() <= 1e-12 * z_scale;

                // Largest dual step before an active inequality multiplier
                // hits zero.
                let mut t1 = f64::INFINITY;
                let mut blocker = None;
                for (k, &ai) in active.iter().enumerate() {
                    if self.constraints[ai].is_equality {
                        continue;
                    }
                    if r[k] > DROP_EPS {
                        let step = multipliers[k] / r[k];
                        if step < t1 {
                            t1 = step;
                            blocker = Some(k);
                        }
                    }
                }

                if z_zero {
                    if violation <= feas_tol {
                        // Dependent and consistent: redundant constraint.
                        break;
                    }
                    match blocker {
                        None => {
                            let mut labels: Vec<String> = active
                                .iter()
                                .enumerate()
                                .filter(|&(k, _)| r.len() > k && r[k].abs() > 1e-9)
                                .map(|(_, &ai)| self.constraints[ai].label.clone())
                                .collect();
                            labels.push(con.label.clone());
                            return Err(Error::Infeasible {
                                certificate: InfeasibilityCertificate { constraints: labels },
                            });
                        }
                        Some(k) => {
                            for (j, m) in multipliers.iter_mut().enumerate() {
                                *m -= t1 * r[j];
                            }
                            entering_multiplier += t1;
                            active.remove(k);
                            multipliers.remove(k);
                            continue;
                        }
                    }
                }

                let denom = normal.dot(&z);
                if denom <= 0.0 {
                    return Err(Error::Internal(
                        "non-positive curvature along entering constraint".into(),
                    ));
                }
                let t2 = violation / denom;
                let t = t1.min(t2);
                x += &z * t;
                for (j, m) in multipliers.iter_mut().enumerate() {
                    *m -= t * r[j];
                }
                entering_multiplier += t;
                violation -= t * denom;

                if t2 <= t1 {
                    active.push(entering);
                    // store the multiplier in the original orientation
                    multipliers.push(entering_multiplier * flip);
                    break;
                }
                let k = blocker.expect("partial step without blocker");
                active.remove(k);
                multipliers.remove(k);
            }
        }

        // Polish: re-solve the KKT system of the final active set with one
        // round of iterative refinement so the stationarity identity holds to
        // machine precision even for ill-conditioned Hessians.
        let (x, multipliers) = self.polish(c, &active, &x, &multipliers);

        Ok(ActiveSetSolution {
            x,
            active: active.into_iter().zip(multipliers).collect(),
            iterations,
        })
    }

    fn polish(
        &self,
        c: &DVector<f64>,
        active: &[usize],
        x0: &DVector<f64>,
        u0: &[f64],
    ) -> (DVector<f64>, Vec<f64>) {
        let k = active.len();
        let dim = self.n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (self.n, self.n)).copy_from(self.q);
        for (col, &ai) in active.iter().enumerate() {
            let nv = self.constraints[ai].dense(self.n);
            for i in 0..self.n {
                kkt[(i, self.n + col)] = -nv[i];
                kkt[(self.n + col, i)] = nv[i];
            }
        }
        let mut rhs = DVector::zeros(dim);
        for i in 0..self.n {
            rhs[i] = -c[i];
        }
        for (col, &ai) in active.iter().enumerate() {
            rhs[self.n + col] = self.constraints[ai].rhs;
        }
        let lu = kkt.clone().lu();
        let mut sol = match lu.solve(&rhs) {
            Some(s) => s,
            None => {
                let mut v = DVector::zeros(dim);
                for i in 0..self.n {
                    v[i] = x0[i];
                }
                for (j, &u) in u0.iter().enumerate() {
                    v[self.n + j] = u;
                }
                v
            }
        };
        // one step of iterative refinement
        let resid = &rhs - &kkt * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }

        let x = DVector::from_iterator(self.n, (0..self.n).map(|i| sol[i]));
        let u: Vec<f64> = (0..k).map(|j| sol[self.n + j]).collect();
        // Keep the polished point only if it did not break anything: active
        // inequality multipliers must stay (numerically) non-negative and
        // inactive constraints satisfied.
        let clean = u
            .iter()
            .zip(active)
            .all(|(&uj, &ai)| self.constraints[ai].is_equality || uj >= -1e-9)
            && self
                .constraints
                .iter()
                .enumerate()
                .filter(|(i, con)| !con.is_equality && !active.contains(i))
                .all(|(_, con)| con.value(&x) >= con.rhs - 1e-9);
        if clean {
            (x, u)
        } else {
            (x0.clone(), u0.to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eq(normal: Vec<(usize, f64)>, rhs: f64) -> LinConstraint {
        LinConstraint {
            normal,
            rhs,
            is_equality: true,
            label: "eq".into(),
        }
    }

    fn ge(normal: Vec<(usize, f64)>, rhs: f64) -> LinConstraint {
        LinConstraint {
            normal,
            rhs,
            is_equality: false,
            label: "ge".into(),
        }
    }

    #[test]
    fn unconstrained_minimum() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let c = DVector::from_vec(vec![-2.0, -4.0]);
        let s = DualActiveSet::new(&q, &[]).unwrap().solve(&c, 100).unwrap();
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn active_inequality() {
        // min 1/2(x^2+y^2) + x  s.t. x + 2y >= 1
        let q = DMatrix::identity(2, 2);
        let c = DVector::from_vec(vec![1.0, 0.0]);
        let cons = vec![ge(vec![(0, 1.0), (1, 2.0)], 1.0)];
        let s = DualActiveSet::new(&q, &cons).unwrap().solve(&c, 100).unwrap();
        assert_relative_eq!(s.x[0], -0.6, epsilon = 1e-10);
        assert_relative_eq!(s.x[1], 0.8, epsilon = 1e-10);
        assert_eq!(s.active.len(), 1);
        assert!(s.active[0].1 > 0.0);
    }

    #[test]
    fn equality_center() {
        // min (p1-0.9)^2 over the 2-simplex with p1 = p2 forced.
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2e-11]));
        let c = DVector::from_vec(vec![-1.8, 0.0]);
        let cons = vec![
            eq(vec![(0, 1.0), (1, 1.0)], 1.0),
            eq(vec![(0, 1.0), (1, -1.0)], 0.0),
            ge(vec![(0, 1.0)], 0.0),
            ge(vec![(1, 1.0)], 0.0),
        ];
        let s = DualActiveSet::new(&q, &cons).unwrap().solve(&c, 100).unwrap();
        assert_relative_eq!(s.x[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(s.x[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn redundant_duplicate_equality_is_skipped() {
        let q = DMatrix::identity(2, 2);
        let c = DVector::zeros(2);
        let cons = vec![
            eq(vec![(0, 1.0), (1, 1.0)], 1.0),
            eq(vec![(0, 1.0), (1, 1.0)], 1.0),
        ];
        let s = DualActiveSet::new(&q, &cons).unwrap().solve(&c, 100).unwrap();
        assert_relative_eq!(s.x[0] + s.x[1], 1.0, epsilon = 1e-12);
        assert_eq!(s.active.len(), 1);
    }

    #[test]
    fn inconsistent_equalities_certify_infeasibility() {
        // 2x = 1 and 3x = 1 cannot both hold.
        let q = DMatrix::identity(1, 1);
        let c = DVector::zeros(1);
        let cons = vec![eq(vec![(0, 2.0)], 1.0), eq(vec![(0, 3.0)], 1.0)];
        let err = DualActiveSet::new(&q, &cons).unwrap().solve(&c, 100).unwrap_err();
        match err {
            Error::Infeasible { certificate } => {
                assert_eq!(certificate.constraints.len(), 2);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn contradictory_inequalities_certify_infeasibility() {
        // x >= 0.8 and -x >= -0.2
        let q = DMatrix::identity(1, 1);
        let c = DVector::zeros(1);
        let cons = vec![ge(vec![(0, 1.0)], 0.8), ge(vec![(0, -1.0)], -0.2)];
        let err = DualActiveSet::new(&q, &cons).unwrap().solve(&c, 100).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }
}
