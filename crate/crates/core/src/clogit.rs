//! C-logit share computation and the weighted fractional-logit estimator.
//!
//! Shares follow `p_r = exp(beta Y_r) / sum_r' exp(beta Y_r')` over the OD's
//! path set, where Y already includes the commonality factor. The estimator
//! maximizes the weighted fractional log-likelihood
//! `sum_{i_m,j} q^{i_m,j} sum_r p_r log softmax_r(beta Y)`,
//! a smooth concave function of beta, by damped Newton ascent.

use crate::domain::{AttrVector, BetaVector, PathSet, ShareTable, TimeGrid, BETA_DIM};
use crate::error::{Error, Result};
use nalgebra::{SMatrix, SVector};

type Vec4 = SVector<f64, BETA_DIM>;
type Mat4 = SMatrix<f64, BETA_DIM, BETA_DIM>;

/// Softmax shares for one OD path set, computed with max-subtraction.
pub fn shares_for_od(beta: &BetaVector, attrs: &[AttrVector]) -> Vec<f64> {
    debug_assert!(!attrs.is_empty());
    let utilities: Vec<f64> = attrs.iter().map(|y| beta.utility(y)).collect();
    let vmax = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|&v| (v - vmax).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

/// Shares for every (origin, interval, destination) row of the path set.
/// Attributes are time-invariant, so each OD's shares repeat across
/// intervals.
pub fn shares_from_beta(beta: &BetaVector, paths: &PathSet, grid: &TimeGrid) -> ShareTable {
    let mut table = ShareTable::new();
    for od in &paths.ods {
        let attrs: Vec<AttrVector> = od.paths.iter().map(|p| p.attrs).collect();
        let shares = shares_for_od(beta, &attrs);
        for m in grid.intervals() {
            table.set_row(od.origin, m, od.dest, shares.clone());
        }
    }
    table
}

/// One weighted observation of the fractional logit: a row of target shares
/// over an OD's paths with its OD entry flow as weight.
#[derive(Debug, Clone)]
pub struct FitRow {
    pub weight: f64,
    pub attrs: Vec<AttrVector>,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub grad_tolerance: f64,
    pub max_iterations: usize,
    /// Bail out and report a recession direction once |beta| exceeds this.
    pub beta_norm_limit: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grad_tolerance: 1e-8,
            max_iterations: 500,
            beta_norm_limit: 1e4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: BetaVector,
    pub iterations: usize,
    pub grad_norm: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    /// False when the design cannot pin down beta (for example, every
    /// weighted OD has a single path); the initial beta is returned then.
    pub identifiable: bool,
}

fn log_likelihood_and_derivs(rows: &[FitRow], beta: &BetaVector) -> (f64, Vec4, Mat4) {
    let mut ll = 0.0;
    let mut grad = Vec4::zeros();
    let mut hess = Mat4::zeros();
    for row in rows {
        if row.weight == 0.0 || row.attrs.len() < 2 {
            // Single-path rows contribute log 1 = 0 for any beta.
            continue;
        }
        let utilities: Vec<f64> = row.attrs.iter().map(|y| beta.utility(y)).collect();
        let vmax = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = utilities.iter().map(|&v| (v - vmax).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let log_denom = denom.ln() + vmax;

        let mut mean = Vec4::zeros();
        let mut second = Mat4::zeros();
        let mut target_mean = Vec4::zeros();
        for (r, y) in row.attrs.iter().enumerate() {
            let yv = Vec4::from_column_slice(&y.as_array());
            let s = exps[r] / denom;
            ll += row.weight * row.shares[r] * (utilities[r] - log_denom);
            mean += s * yv;
            second += s * yv * yv.transpose();
            target_mean += row.shares[r] * yv;
        }
        grad += row.weight * (target_mean - mean);
        hess += row.weight * (second - mean * mean.transpose());
    }
    (ll, grad, hess)
}

/// Rank of the within-OD attribute variation, weighted by flow. Directions
/// outside this span cannot be identified from share data.
fn design_rank(rows: &[FitRow]) -> usize {
    let mut gram = Mat4::zeros();
    for row in rows {
        if row.weight == 0.0 || row.attrs.len() < 2 {
            continue;
        }
        let n = row.attrs.len() as f64;
        let mut mean = Vec4::zeros();
        for y in &row.attrs {
            mean += Vec4::from_column_slice(&y.as_array()) / n;
        }
        for y in &row.attrs {
            let d = Vec4::from_column_slice(&y.as_array()) - mean;
            gram += d * d.transpose();
        }
    }
    let eig = gram.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    eig.iter().filter(|&&l| l > 1e-10 * max).count()
}

/// Maximize the weighted fractional log-likelihood starting from `init`.
///
/// The objective is concave; damped Newton with backtracking converges to the
/// stated gradient tolerance. A design with no within-OD variation leaves
/// the objective constant: the initial beta is returned with
/// `identifiable: false`. A separable design drives |beta| to infinity and is
/// reported as [`Error::Divergence`] with the recession direction.
pub fn fit_fractional_logit(
    rows: &[FitRow],
    init: &BetaVector,
    opts: &FitOptions,
) -> Result<FitResult> {
    for row in rows {
        if row.attrs.len() != row.shares.len() {
            return Err(Error::Internal(
                "fit row attrs and shares length mismatch".into(),
            ));
        }
        if row.weight < 0.0 {
            return Err(Error::Validation("negative fit weight".into()));
        }
    }
    let rank = design_rank(rows);
    if rank == 0 {
        let (ll, grad, _) = log_likelihood_and_derivs(rows, init);
        return Ok(FitResult {
            beta: *init,
            iterations: 0,
            grad_norm: grad.amax(),
            log_likelihood: ll,
            converged: true,
            identifiable: false,
        });
    }

    let mut beta = Vec4::from_column_slice(&init.as_array());
    let (mut ll, mut grad, mut hess) = {
        let b = BetaVector::from_array([beta[0], beta[1], beta[2], beta[3]]);
        log_likelihood_and_derivs(rows, &b)
    };
    let mut iterations = 0;
    while grad.amax() > opts.grad_tolerance && iterations < opts.max_iterations {
        iterations += 1;
        // Ascent on ll: Newton step solves H d = g for the concave objective
        // (H is the negated Hessian and is PSD); Levenberg damping keeps the
        // step defined when H is singular along unidentified directions.
        let scale = hess.trace().abs().max(1.0);
        let mut lambda = 1e-10 * scale;
        let step = loop {
            let damped = hess + Mat4::identity() * lambda;
            if let Some(chol) = damped.cholesky() {
                break chol.solve(&grad);
            }
            lambda *= 100.0;
            if lambda > 1e12 * scale {
                break grad / scale;
            }
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = beta + step * t;
            let b = BetaVector::from_array([trial[0], trial[1], trial[2], trial[3]]);
            let (ll_t, g_t, h_t) = log_likelihood_and_derivs(rows, &b);
            if ll_t >= ll - 1e-14 * ll.abs().max(1.0) {
                beta = trial;
                ll = ll_t;
                grad = g_t;
                hess = h_t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if beta.amax() > opts.beta_norm_limit {
            let dir = step / step.norm().max(1e-300);
            return Err(Error::Divergence {
                direction: [dir[0], dir[1], dir[2], dir[3]],
            });
        }
    }

    Ok(FitResult {
        beta: BetaVector::from_array([beta[0], beta[1], beta[2], beta[3]]),
        iterations,
        grad_norm: grad.amax(),
        log_likelihood: ll,
        converged: grad.amax() <= opts.grad_tolerance,
        identifiable: rank == BETA_DIM,
    })
}

/// Gradient of the fit objective, exposed for finite-difference checks.
pub fn fit_gradient(rows: &[FitRow], beta: &BetaVector) -> [f64; BETA_DIM] {
    let (_, g, _) = log_likelihood_and_derivs(rows, beta);
    [g[0], g[1], g[2], g[3]]
}

/// Fit objective value, exposed for finite-difference checks.
pub fn fit_objective(rows: &[FitRow], beta: &BetaVector) -> f64 {
    log_likelihood_and_derivs(rows, beta).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use approx::assert_relative_eq;

    fn attrs(v: [f64; 4]) -> AttrVector {
        AttrVector {
            in_vehicle: v[0],
            transfers: v[1],
            rel_walk: v[2],
            commonality: v[3],
        }
    }

    #[test]
    fn single_path_share_is_one() {
        let p = shares_for_od(&BetaVector::ZERO, &[attrs([10.0, 0.0, 0.5, -6.9])]);
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn zero_beta_gives_uniform_shares() {
        let p = shares_for_od(
            &BetaVector::ZERO,
            &[attrs([10.0, 0.0, 0.5, -6.9]), attrs([12.0, 1.0, 0.7, -5.2])],
        );
        assert_relative_eq!(p[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn shares_match_direct_softmax() {
        // Independent evaluation without max-subtraction.
        let beta = BetaVector::new(-0.147, -0.573, -1.271, -3.679);
        let y = [attrs([10.0, 0.0, 1.5, -6.238]), attrs([14.0, 1.0, 2.0, -6.931])];
        let p = shares_for_od(&beta, &y);
        let e0 = (beta.utility(&y[0])).exp();
        let e1 = (beta.utility(&y[1])).exp();
        assert_relative_eq!(p[0], e0 / (e0 + e1), max_relative = 1e-12);
        assert_relative_eq!(p[1], e1 / (e0 + e1), max_relative = 1e-12);
        assert_relative_eq!(p[0] + p[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn translation_invariance_of_shares() {
        // Adding a constant to every path utility of an OD (here via a shift
        // of one attribute common to all paths) leaves shares unchanged.
        let beta = BetaVector::new(-0.2, -0.6, -1.1, -3.0);
        let mut rng = DetRng::new(99);
        for _ in 0..20 {
            let base = [
                attrs([
                    rng.uniform_in(5.0, 30.0),
                    0.0,
                    rng.uniform_in(0.1, 3.0),
                    rng.uniform_in(-8.0, -4.0),
                ]),
                attrs([
                    rng.uniform_in(5.0, 30.0),
                    1.0,
                    rng.uniform_in(0.1, 3.0),
                    rng.uniform_in(-8.0, -4.0),
                ]),
            ];
            let offset = rng.uniform_in(-10.0, 10.0);
            let shifted: Vec<AttrVector> = base
                .iter()
                .map(|y| {
                    let mut a = *y;
                    a.in_vehicle += offset;
                    a
                })
                .collect();
            let p0 = shares_for_od(&beta, &base);
            let p1 = shares_for_od(&beta, &shifted);
            for (a, b) in p0.iter().zip(&p1) {
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
        }
    }

    fn two_od_rows(beta: &BetaVector) -> Vec<FitRow> {
        // Four ODs whose within-OD attribute differences span all four
        // coefficients.
        let designs = vec![
            vec![attrs([17.0, 0.0, 1.0, -8.7]), attrs([16.0, 2.0, 1.4, -8.0])],
            vec![attrs([11.0, 0.0, 1.2, -5.5]), attrs([10.0, 1.0, 2.0, -5.2])],
            vec![attrs([8.0, 1.0, 1.0, -6.6]), attrs([19.0, 1.0, 1.8, -6.6])],
            vec![attrs([14.0, 0.0, 0.8, -7.0]), attrs([15.0, 1.0, 0.8, -5.0])],
        ];
        designs
            .into_iter()
            .enumerate()
            .map(|(k, d)| FitRow {
                weight: 50.0 + 25.0 * k as f64,
                shares: shares_for_od(beta, &d),
                attrs: d,
            })
            .collect()
    }

    #[test]
    fn recovers_generating_beta() {
        // Shares produced exactly by beta* are a fixed point of the fit.
        let truth = BetaVector::new(-0.147, -0.573, -1.271, -3.679);
        let rows = two_od_rows(&truth);
        let fit = fit_fractional_logit(&rows, &BetaVector::ZERO, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.identifiable);
        for (a, b) in fit.beta.as_array().iter().zip(truth.as_array()) {
            assert!((a - b).abs() < 1e-4, "recovered {a} vs true {b}");
        }
    }

    #[test]
    fn single_path_design_returns_init_flagged() {
        let rows = vec![FitRow {
            weight: 10.0,
            attrs: vec![attrs([10.0, 0.0, 1.0, -6.9])],
            shares: vec![1.0],
        }];
        let init = BetaVector::new(-0.5, -0.5, -0.5, -0.5);
        let fit = fit_fractional_logit(&rows, &init, &FitOptions::default()).unwrap();
        assert!(!fit.identifiable);
        assert_eq!(fit.beta, init);
    }

    #[test]
    fn identical_attribute_od_is_decided_by_others() {
        // A two-path OD with identical attributes contributes a constant
        // term; the optimum is pinned by the remaining ODs.
        let truth = BetaVector::new(-0.3, -0.9, -1.1, -2.5);
        let mut rows = two_od_rows(&truth);
        rows.push(FitRow {
            weight: 500.0,
            attrs: vec![attrs([12.0, 1.0, 1.0, -6.0]), attrs([12.0, 1.0, 1.0, -6.0])],
            shares: vec![0.5, 0.5],
        });
        let fit = fit_fractional_logit(&rows, &BetaVector::ZERO, &FitOptions::default()).unwrap();
        for (a, b) in fit.beta.as_array().iter().zip(truth.as_array()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn doubling_weight_equals_duplicating_row() {
        let truth = BetaVector::new(-0.2, -0.4, -0.9, -3.0);
        let mut rows = two_od_rows(&truth);
        // Perturb the first row's target away from the logit manifold so the
        // optimum actually depends on weights.
        rows[0].shares = vec![0.55, 0.45];

        let mut doubled = rows.clone();
        doubled[0].weight *= 2.0;
        let mut duplicated = rows.clone();
        let mut copy = rows[0].clone();
        copy.weight = rows[0].weight;
        duplicated.push(copy);

        let fa = fit_fractional_logit(&doubled, &BetaVector::ZERO, &FitOptions::default()).unwrap();
        let fb =
            fit_fractional_logit(&duplicated, &BetaVector::ZERO, &FitOptions::default()).unwrap();
        for (a, b) in fa.beta.as_array().iter().zip(fb.beta.as_array()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = DetRng::new(4242);
        for case in 0..10 {
            let truth = BetaVector::new(
                rng.uniform_in(-1.0, -0.01),
                rng.uniform_in(-2.0, -0.01),
                rng.uniform_in(-3.0, -0.01),
                rng.uniform_in(-5.0, -0.01),
            );
            let mut rows = two_od_rows(&truth);
            for row in &mut rows {
                // random (non-logit) targets keep the gradient nonzero
                let u = rng.uniform_in(0.05, 0.95);
                row.shares = vec![u, 1.0 - u];
                row.weight = rng.uniform_in(1.0, 100.0);
            }
            let at = BetaVector::new(
                rng.uniform_in(-1.0, 0.0),
                rng.uniform_in(-1.0, 0.0),
                rng.uniform_in(-1.0, 0.0),
                rng.uniform_in(-1.0, 0.0),
            );
            let g = fit_gradient(&rows, &at);
            let h = 1e-5;
            for k in 0..BETA_DIM {
                let mut up = at.as_array();
                let mut dn = at.as_array();
                up[k] += h;
                dn[k] -= h;
                let fd = (fit_objective(&rows, &BetaVector::from_array(up))
                    - fit_objective(&rows, &BetaVector::from_array(dn)))
                    / (2.0 * h);
                let denom = g[k].abs().max(1.0);
                assert!(
                    (g[k] - fd).abs() / denom < 1e-6,
                    "case {case} coeff {k}: analytic {} vs fd {}",
                    g[k],
                    fd
                );
            }
        }
    }
}
