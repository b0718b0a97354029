//! Optimism-in-the-face-of-uncertainty decision rule: pick the allocation
//! and the reward matrix jointly, maximizing allocated reward over the
//! feasible set and the confidence set at once, then price the chosen
//! allocation and discount by exploration width.
//!
//! The joint maximization alternates two exact steps: for a fixed
//! allocation the best in-set reward matrix has a closed form (per user in
//! the contextual case, per factor block with a shared budget in the
//! low-rank case), and for a fixed matrix the best allocation is a flow
//! solve. Alternation from a single greedy start can stall at an empty
//! allocation when nothing has been explored, so two deterministic starts
//! are run and the better final objective wins:
//!
//! - start A solves at the entrywise upper-confidence matrix, which
//!   dominates every member of the confidence set and therefore seeds the
//!   alternation at an allocation worth exploring;
//! - start B solves at the all-ones matrix, seeding with a
//!   maximum-cardinality allocation.
//!
//! Posted prices subtract a width-scaled exploration discount from the
//! minimal market-clearing prices and clip at zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::{confidence_width, EstimatorState, Mode};
use crate::market::{Allocation, ConstraintProfile, PriceVector};
use crate::solver::solve_allocation;

/// Outer alternation cap for the joint maximization.
const OUTER_MAX_ITERS: usize = 20;
/// Relative objective tolerance for the outer alternation.
const OUTER_TOL: f64 = 1e-6;
/// Inner cap for the low-rank optimistic block alternation.
const INNER_MAX_ITERS: usize = 50;
/// Relative objective tolerance for the inner alternation.
const INNER_TOL: f64 = 1e-6;

/// Result of one round's decision.
#[derive(Clone, Debug)]
pub struct OfuDecision {
    /// Chosen allocation.
    pub allocation: Allocation,
    /// Optimistic reward matrix the allocation was solved against.
    pub optimistic: DMatrix<f64>,
    /// Allocated optimistic reward, the joint objective value.
    pub objective: f64,
    /// Minimal market-clearing prices under the optimistic matrix.
    pub dual_prices: PriceVector,
    /// Posted prices after the exploration discount and clipping.
    pub posted_prices: PriceVector,
    /// Exploration width of the chosen allocation.
    pub width: f64,
}

/// Default price-discount scale: fourth root of the final-round radius
/// normalized by problem size. The low-rank radius covers all users at
/// once, so its normalization carries an extra factor of the user count.
pub fn nu_default(mode: Mode, radius: f64, n: usize, m: usize) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::Invalid("dimensions must be positive".into()));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Invalid(format!(
            "radius {radius} must be nonnegative"
        )));
    }
    let (nf, mf) = (n as f64, m as f64);
    let denom = match mode {
        Mode::Contextual => nf * mf * mf,
        Mode::LowRank => nf * nf * mf * mf,
    };
    Ok((4.0 * radius / denom).powf(0.25))
}

/// Applies the exploration discount: every price drops by `nu * sqrt(width)`
/// and clips at zero.
pub fn discounted_prices(dual: &PriceVector, nu: f64, width: f64) -> Result<PriceVector> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::Invalid(format!("nu {nu} must be nonnegative")));
    }
    if !(width >= 0.0) || !width.is_finite() {
        return Err(Error::Invalid(format!("width {width} must be nonnegative")));
    }
    let cut = nu * width.sqrt();
    let posted: Vec<f64> = dual.as_slice().iter().map(|p| (p - cut).max(0.0)).collect();
    PriceVector::new(posted)
}

/// Entrywise upper-confidence matrix: the estimate plus the largest
/// single-entry deviation the confidence set allows.
pub fn ucb_matrix(est: &EstimatorState, radius: f64) -> Result<DMatrix<f64>> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Invalid(format!(
            "radius {radius} must be nonnegative"
        )));
    }
    let (n, m) = (est.n_users(), est.n_items());
    let mut ucb = est.theta_hat().clone();
    match est.mode() {
        Mode::Contextual => {
            let phi = est.factor_estimates().1.clone();
            for u in 0..n {
                let w = weighted_gram(&phi, est.counts(), u, est.gamma());
                for i in 0..m {
                    let phi_i = phi.row(i).transpose();
                    let x = solve_spd(&w, &phi_i)?;
                    let quad = phi_i.dot(&x).max(0.0);
                    ucb[(u, i)] += radius.sqrt() * quad.sqrt();
                }
            }
        }
        Mode::LowRank => {
            for u in 0..n {
                for i in 0..m {
                    let eff = est.counts()[(u, i)] + est.gamma();
                    ucb[(u, i)] += (radius / eff).sqrt();
                }
            }
        }
    }
    Ok(ucb)
}

/// Best contextual in-set matrix for a fixed allocation: each allocated
/// user's coefficient moves from the estimate along the direction that
/// grows its allocated-feature sum fastest, using the full per-row budget.
pub fn optimistic_contextual(
    est: &EstimatorState,
    pairs: &[(usize, usize)],
    radius: f64,
) -> Result<DMatrix<f64>> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Invalid(format!(
            "radius {radius} must be nonnegative"
        )));
    }
    let phi = est.factor_estimates().1.clone();
    let mut f = est.factor_estimates().0.clone();
    let per_user = group_by_user(pairs, est.n_users(), est.n_items())?;
    for (u, items) in per_user.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let mut a = DVector::zeros(phi.ncols());
        for &i in items {
            a += phi.row(i).transpose();
        }
        let w = weighted_gram(&phi, est.counts(), u, est.gamma());
        let x = solve_spd(&w, &a)?;
        let s = a.dot(&x);
        if s <= 1e-300 {
            continue;
        }
        let step = (radius / s).sqrt();
        for k in 0..f.ncols() {
            f[(u, k)] += step * x[k];
        }
    }
    Ok(&f * phi.transpose())
}

/// Best low-rank in-set factors for a fixed allocation, by alternating
/// exact block maximizations under the shared squared-norm budget.
///
/// For a fixed item block the user rows decompose: each row's in-set
/// freedom is its weighted distance from the projection of the current
/// estimate, the projections' irreducible residuals are charged against
/// the budget, and what remains is spent on the rows' allocated-feature
/// directions in closed form. The item block is symmetric. Starts from
/// `start` and returns the improved factors.
pub fn optimistic_lowrank(
    est: &EstimatorState,
    pairs: &[(usize, usize)],
    radius: f64,
    start: (DMatrix<f64>, DMatrix<f64>),
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::Invalid(format!(
            "radius {radius} must be nonnegative"
        )));
    }
    let (n, m) = (est.n_users(), est.n_items());
    let per_user = group_by_user(pairs, n, m)?;
    let mut per_item = vec![Vec::new(); m];
    for &(u, i) in pairs {
        per_item[i].push(u);
    }
    let (mut f, mut phi) = start;
    if f.shape() != (n, est.rank()) || phi.shape() != (m, est.rank()) {
        return Err(Error::Dim("start factor shapes".into()));
    }

    let objective = |f: &DMatrix<f64>, phi: &DMatrix<f64>| -> f64 {
        pairs.iter().map(|&(u, i)| f.row(u).dot(&phi.row(i))).sum()
    };
    let mut last = objective(&f, &phi);
    for _ in 0..INNER_MAX_ITERS {
        f = block_step(est, &per_user, &phi, radius, true)?;
        phi = block_step(est, &per_item, &f, radius, false)?;
        let obj = objective(&f, &phi);
        if (obj - last).abs() <= INNER_TOL * last.abs().max(1.0) {
            last = obj;
            break;
        }
        last = obj;
    }
    let _ = last;
    Ok((f, phi))
}

/// One exact block maximization for the low-rank optimistic step. Rows of
/// the free block are recomputed against the fixed block `basis`; `users`
/// selects orientation (true: user rows against item vectors).
fn block_step(
    est: &EstimatorState,
    groups: &[Vec<usize>],
    basis: &DMatrix<f64>,
    radius: f64,
    users: bool,
) -> Result<DMatrix<f64>> {
    let rows = groups.len();
    let r = basis.ncols();
    let theta_hat = est.theta_hat();
    let gamma = est.gamma();

    let eff = |row: usize, col: usize| -> f64 {
        let (u, i) = if users { (row, col) } else { (col, row) };
        est.counts()[(u, i)] + gamma
    };
    let target = |row: usize, col: usize| -> f64 {
        let (u, i) = if users { (row, col) } else { (col, row) };
        theta_hat[(u, i)]
    };

    let mut out = DMatrix::zeros(rows, r);
    let mut dirs = vec![None; rows];
    let mut budget = radius;
    let mut spend = 0.0;
    for row in 0..rows {
        let mut w = DMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        for col in 0..basis.nrows() {
            let weight = eff(row, col);
            let b = basis.row(col);
            for a in 0..r {
                rhs[a] += weight * target(row, col) * b[a];
                for c in 0..r {
                    w[(a, c)] += weight * b[a] * b[c];
                }
            }
        }
        let proj = solve_spd(&w, &rhs)?;
        // Irreducible residual of the projection, charged to the budget.
        for col in 0..basis.nrows() {
            let fitted = basis.row(col).transpose().dot(&proj);
            let dev = fitted - target(row, col);
            budget -= eff(row, col) * dev * dev;
        }
        out.set_row(row, &proj.transpose());
        if !groups[row].is_empty() {
            let mut a = DVector::zeros(r);
            for &col in &groups[row] {
                a += basis.row(col).transpose();
            }
            let x = solve_spd(&w, &a)?;
            let s = a.dot(&x);
            if s > 1e-300 {
                spend += s;
                dirs[row] = Some(x);
            }
        }
    }
    let budget = budget.max(0.0);
    if spend > 1e-300 {
        let step = (budget / spend).sqrt();
        for row in 0..rows {
            if let Some(x) = &dirs[row] {
                for k in 0..r {
                    out[(row, k)] += step * x[k];
                }
            }
        }
    }
    Ok(out)
}

/// Runs one round's joint decision: two-start alternation, minimal prices
/// at the winner, width-discounted posted prices.
pub fn decide(
    est: &EstimatorState,
    cons: &ConstraintProfile,
    radius: f64,
    nu: f64,
) -> Result<OfuDecision> {
    if cons.n_users() != est.n_users() || cons.n_items() != est.n_items() {
        return Err(Error::Dim("constraint shape".into()));
    }
    let start_a = ucb_matrix(est, radius)?;
    let ones = DMatrix::from_element(est.n_users(), est.n_items(), 1.0);
    let run_a = alternate(est, cons, radius, &start_a)?;
    let run_b = alternate(est, cons, radius, &ones)?;
    let best = if run_b.objective > run_a.objective {
        run_b
    } else {
        run_a
    };

    let width = confidence_width(best.allocation.pairs(), est.counts(), est.gamma())?;
    let posted = discounted_prices(&best.dual_prices, nu, width)?;
    Ok(OfuDecision {
        allocation: best.allocation,
        optimistic: best.optimistic,
        objective: best.objective,
        dual_prices: best.dual_prices,
        posted_prices: posted,
        width,
    })
}

struct AlternationResult {
    allocation: Allocation,
    optimistic: DMatrix<f64>,
    objective: f64,
    dual_prices: PriceVector,
}

/// Alternates in-set matrix steps with flow solves from one starting
/// matrix. Every iteration ends on a solve, so the returned allocation,
/// matrix, and prices are mutually consistent.
fn alternate(
    est: &EstimatorState,
    cons: &ConstraintProfile,
    radius: f64,
    start: &DMatrix<f64>,
) -> Result<AlternationResult> {
    let mut outcome = solve_allocation(start, cons)?;
    let mut optimistic = start.clone();
    let mut objective = outcome.welfare;
    let mut factors = match est.mode() {
        Mode::LowRank => {
            let (f, phi) = est.factor_estimates();
            Some((f.clone(), phi.clone()))
        }
        Mode::Contextual => None,
    };
    for iter in 0..OUTER_MAX_ITERS {
        let pairs = outcome.allocation.pairs();
        let candidate = match est.mode() {
            Mode::Contextual => optimistic_contextual(est, pairs, radius)?,
            Mode::LowRank => {
                let start = factors.take().unwrap();
                let (f, phi) = optimistic_lowrank(est, pairs, radius, start)?;
                let theta = &f * phi.transpose();
                factors = Some((f, phi));
                theta
            }
        };
        let next = solve_allocation(&candidate, cons)?;
        let obj = next.welfare;
        let prev = objective;
        optimistic = candidate;
        outcome = next;
        objective = obj;
        // The first pass replaces the start matrix (which may lie outside
        // the confidence set), so convergence is only judged afterwards.
        if iter > 0 && (obj - prev).abs() <= OUTER_TOL * prev.abs().max(1.0) {
            break;
        }
    }
    Ok(AlternationResult {
        allocation: outcome.allocation,
        optimistic,
        objective,
        dual_prices: outcome.prices,
    })
}

/// Effective-count weighted Gram matrix of `phi` for one user's row.
fn weighted_gram(phi: &DMatrix<f64>, counts: &DMatrix<f64>, u: usize, gamma: f64) -> DMatrix<f64> {
    let r = phi.ncols();
    let mut w = DMatrix::zeros(r, r);
    for i in 0..phi.nrows() {
        let weight = counts[(u, i)] + gamma;
        let row = phi.row(i);
        for a in 0..r {
            for b in 0..r {
                w[(a, b)] += weight * row[a] * row[b];
            }
        }
    }
    w
}

/// Solves `w x = b` for symmetric positive semidefinite `w`, falling back
/// to a least-norm solve when Cholesky fails.
fn solve_spd(w: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = w.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let scale = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Ok(DVector::zeros(b.len()));
    }
    let svd = w.clone().svd(true, true);
    svd.solve(b, 1e-12 * scale)
        .map_err(|e| Error::Numerical(format!("gram solve failed: {e}")))
}

fn group_by_user(pairs: &[(usize, usize)], n: usize, m: usize) -> Result<Vec<Vec<usize>>> {
    let mut per_user = vec![Vec::new(); n];
    for &(u, i) in pairs {
        if u >= n || i >= m {
            return Err(Error::Dim(format!("pair ({u}, {i}) out of range")));
        }
        per_user[u].push(i);
    }
    Ok(per_user)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{empirical_norm, NormKind};
    use crate::rng::Purpose;
    use approx::assert_abs_diff_eq;

    fn ridge_one_dim() -> EstimatorState {
        let phi = DMatrix::from_element(1, 1, 1.0);
        let mut est = EstimatorState::new_contextual(1, phi, 1.0, 1.0).unwrap();
        est.record(&[(0, 0)], &[0.5]).unwrap();
        est.fit(None).unwrap();
        est
    }

    #[test]
    fn nu_default_frozen_values() {
        let cx = nu_default(Mode::Contextual, 11.47, 10, 5).unwrap();
        assert_abs_diff_eq!(cx, 0.6545168779609043, epsilon = 1e-12);
        let lr = nu_default(Mode::LowRank, 4.0, 2, 2).unwrap();
        assert_abs_diff_eq!(lr, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn contextual_step_one_dimensional() {
        // Estimate 0.25 with one observation at gamma 1: the gram is 2, so
        // a radius of 0.5 lifts the entry by exactly 0.5.
        let est = ridge_one_dim();
        let theta = optimistic_contextual(&est, &[(0, 0)], 0.5).unwrap();
        assert_abs_diff_eq!(theta[(0, 0)], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn contextual_step_exhausts_row_budget() {
        let phi = DMatrix::from_row_slice(3, 2, &[0.8, 0.1, -0.3, 0.7, 0.5, -0.5]);
        let mut est = EstimatorState::new_contextual(2, phi, 1.0, 1.0).unwrap();
        est.record(&[(0, 0), (0, 1), (1, 2)], &[0.4, 0.1, -0.2])
            .unwrap();
        est.fit(None).unwrap();
        let radius = 0.9;
        let theta = optimistic_contextual(&est, &[(0, 0), (0, 2), (1, 1)], radius).unwrap();
        let delta = &theta - est.theta_hat();
        let norm = empirical_norm(&delta, est.counts(), est.gamma(), NormKind::L2Inf).unwrap();
        assert_abs_diff_eq!(norm, radius.sqrt(), epsilon = 1e-9);
        // Allocated reward strictly improves on the estimate.
        let base: f64 = [(0usize, 0usize), (0, 2), (1, 1)]
            .iter()
            .map(|&(u, i)| est.theta_hat()[(u, i)])
            .sum();
        let lifted: f64 = [(0usize, 0usize), (0, 2), (1, 1)]
            .iter()
            .map(|&(u, i)| theta[(u, i)])
            .sum();
        assert!(lifted > base);
    }

    #[test]
    fn contextual_step_matches_grid_search() {
        // One user, two items, one feature dimension: maximize the
        // allocated sum over a dense grid of coefficient deviations and
        // compare with the closed form.
        let phi = DMatrix::from_row_slice(2, 1, &[0.9, -0.4]);
        let mut est = EstimatorState::new_contextual(1, phi.clone(), 1.0, 1.0).unwrap();
        est.record(&[(0, 0), (0, 0), (0, 1)], &[0.6, 0.5, -0.1])
            .unwrap();
        est.fit(None).unwrap();
        let radius = 0.3;
        let pairs = [(0usize, 0usize)];
        let theta = optimistic_contextual(&est, &pairs, radius).unwrap();

        let w = weighted_gram(&phi, est.counts(), 0, est.gamma());
        let f_hat = est.factor_estimates().0[(0, 0)];
        let mut best = f64::NEG_INFINITY;
        let steps = 200_001;
        let span = (radius / w[(0, 0)]).sqrt();
        for k in 0..steps {
            let dev = -span + 2.0 * span * (k as f64) / ((steps - 1) as f64);
            if w[(0, 0)] * dev * dev > radius + 1e-15 {
                continue;
            }
            let val = (f_hat + dev) * phi[(0, 0)];
            best = best.max(val);
        }
        assert_abs_diff_eq!(theta[(0, 0)], best, epsilon = 1e-3);
    }

    #[test]
    fn lowrank_step_respects_budget() {
        let mut est = EstimatorState::new_lowrank(2, 2, 1, 1.0, 1.0).unwrap();
        est.record(&[(0, 0), (1, 1)], &[0.8, 0.6]).unwrap();
        let mut rng = crate::rng::stream(3, Purpose::AlsInit, &[1]);
        est.fit(Some(&mut rng)).unwrap();
        let radius = 0.7;
        let (f, phi) = est.factor_estimates();
        let (f2, phi2) =
            optimistic_lowrank(&est, &[(0, 0), (1, 1)], radius, (f.clone(), phi.clone())).unwrap();
        let theta = &f2 * phi2.transpose();
        let delta = &theta - est.theta_hat();
        let norm = empirical_norm(&delta, est.counts(), est.gamma(), NormKind::L2).unwrap();
        assert!(norm <= radius.sqrt() + 1e-6, "norm {norm} exceeds budget");
        let before: f64 = est.theta_hat()[(0, 0)] + est.theta_hat()[(1, 1)];
        let after = theta[(0, 0)] + theta[(1, 1)];
        assert!(after >= before - 1e-9);
    }

    #[test]
    fn decide_recovers_oracle_when_confident() {
        // Heavily observed 2 x 2 instance with a tiny radius: the decision
        // must match the exact solve of the underlying matrix.
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut est = EstimatorState::new_contextual(2, phi, 1.0, 1.0).unwrap();
        let truth = [[0.9, 0.3], [0.8, 0.1]];
        let mut pairs = Vec::new();
        let mut rewards = Vec::new();
        for u in 0..2 {
            for i in 0..2 {
                for _ in 0..200_000 {
                    pairs.push((u, i));
                    rewards.push(truth[u][i]);
                }
            }
        }
        est.record(&pairs, &rewards).unwrap();
        est.fit(None).unwrap();
        let cons = ConstraintProfile::new(vec![1, 1], vec![1, 2]).unwrap();
        let decision = decide(&est, &cons, 1e-10, 0.0).unwrap();
        assert_eq!(decision.allocation.pairs(), &[(0, 1), (1, 0)]);
        assert!((decision.objective - 1.1).abs() < 1e-2);
        let p = decision.dual_prices.as_slice();
        assert!((p[0] - 0.6).abs() < 1e-2 && p[1].abs() < 1e-2);
    }

    #[test]
    fn decide_explores_from_zero_data() {
        // With nothing observed the estimate is zero everywhere, yet the
        // upper-confidence start must still produce a full allocation.
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut est = EstimatorState::new_contextual(2, phi, 1.0, 1.0).unwrap();
        est.fit(None).unwrap();
        let cons = ConstraintProfile::new(vec![1, 1], vec![1, 1]).unwrap();
        let decision = decide(&est, &cons, 2.0, 0.0).unwrap();
        assert_eq!(decision.allocation.pairs().len(), 2);
        assert!(decision.objective > 0.0);
        assert_abs_diff_eq!(decision.width, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn decide_is_deterministic() {
        let phi = DMatrix::from_row_slice(3, 2, &[0.8, 0.1, -0.3, 0.7, 0.5, -0.5]);
        let mut est = EstimatorState::new_contextual(2, phi, 1.0, 1.0).unwrap();
        est.record(&[(0, 0), (1, 2)], &[0.4, 0.3]).unwrap();
        est.fit(None).unwrap();
        let cons = ConstraintProfile::new(vec![1, 1], vec![1, 1, 1]).unwrap();
        let d1 = decide(&est, &cons, 0.5, 0.1).unwrap();
        let d2 = decide(&est, &cons, 0.5, 0.1).unwrap();
        assert_eq!(d1.allocation.pairs(), d2.allocation.pairs());
        assert_eq!(d1.objective.to_bits(), d2.objective.to_bits());
        assert_eq!(d1.posted_prices.as_slice(), d2.posted_prices.as_slice());
    }

    #[test]
    fn discount_clips_at_zero() {
        let dual = PriceVector::new(vec![0.5, 0.05]).unwrap();
        let posted = discounted_prices(&dual, 0.2, 1.0).unwrap();
        assert_abs_diff_eq!(posted.as_slice()[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(posted.as_slice()[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_demand_round_is_empty() {
        let phi = DMatrix::from_element(2, 1, 1.0);
        let mut est = EstimatorState::new_contextual(2, phi, 1.0, 1.0).unwrap();
        est.fit(None).unwrap();
        let cons = ConstraintProfile::new(vec![0, 0], vec![1, 1]).unwrap();
        let decision = decide(&est, &cons, 1.0, 0.5).unwrap();
        assert!(decision.allocation.pairs().is_empty());
        assert_abs_diff_eq!(decision.width, 0.0, epsilon = 1e-15);
    }
}
