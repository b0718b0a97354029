//! Round-level performance accounting: realized welfare against the exact
//! per-round optimum, market instability at the offered prices, rejection
//! counts, and the closed-form theoretical ceilings used as report
//! overlays.

use crate::error::{Error, Result};
use crate::estimator::Mode;
use crate::market::{realized_welfare, Allocation, ConstraintProfile, PriceVector, RewardMatrix};
use crate::solver::{solve_allocation, verify_stability};

/// One round's scored outcome.
#[derive(Clone, Debug)]
pub struct RoundScore {
    /// Realized welfare at the offered prices.
    pub welfare: f64,
    /// Welfare of the exact optimum for this round's constraints.
    pub optimal_welfare: f64,
    /// `optimal_welfare - welfare`; nonnegative up to solver tolerance.
    pub regret: f64,
    /// Total instability of the offered outcome under the truth.
    pub instability: f64,
    /// Allocated pairs the user turned down (`truth < price`); always zero
    /// in the no-reject model.
    pub rejections: usize,
}

/// Exact optimal welfare for one round's constraints.
pub fn oracle_welfare(truth: &RewardMatrix, cons: &ConstraintProfile) -> Result<f64> {
    Ok(solve_allocation(truth.values(), cons)?.welfare)
}

/// Scores one offered round. `optimal_welfare` is passed in so static
/// settings can solve the benchmark once and reuse it.
pub fn score_round(
    truth: &RewardMatrix,
    cons: &ConstraintProfile,
    alloc: &Allocation,
    prices: &PriceVector,
    accept_reject: bool,
    optimal_welfare: f64,
) -> Result<RoundScore> {
    let welfare = realized_welfare(alloc, truth, prices, accept_reject)?;
    let regret = optimal_welfare - welfare;
    debug_assert!(regret >= -1e-8, "regret {regret} below solver tolerance");
    let (_, instability) = verify_stability(truth.values(), alloc, prices, cons, accept_reject)?;
    let rejections = if accept_reject {
        alloc
            .pairs()
            .iter()
            .filter(|&&(u, i)| truth.get(u, i) < prices.as_slice()[i])
            .count()
    } else {
        0
    };
    Ok(RoundScore {
        welfare,
        optimal_welfare,
        regret,
        instability,
        rejections,
    })
}

/// Closed-form regret and instability ceilings.
///
/// The exploration budget is `8 N radius log(1 + T / gamma)` in the
/// contextual mode and `8 radius log(1 + T / gamma)` in the low-rank mode
/// (whose radius already covers all users). Both ceilings are
/// `sqrt(budget * P * T) + budget^{1/4} (P T)^{3/4}` with `P = n M`
/// (contextual, `n` the per-round active-user bound) or `P = N M`
/// (low-rank); the 3/4-power term exists only in the accept/reject model.
/// Regret and instability share the same ceiling.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_bound(
    mode: Mode,
    radius_total: f64,
    n_users: usize,
    m: usize,
    n_active: usize,
    t: usize,
    gamma: f64,
    accept_reject: bool,
) -> Result<(f64, f64)> {
    if !(radius_total >= 0.0) || !radius_total.is_finite() {
        return Err(Error::Invalid(format!(
            "radius {radius_total} must be nonnegative"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Invalid(format!("gamma {gamma} must be positive")));
    }
    if n_users == 0 || m == 0 || n_active == 0 {
        return Err(Error::Invalid("dimensions must be positive".into()));
    }
    if t == 0 {
        return Ok((0.0, 0.0));
    }
    let log_term = (1.0 + t as f64 / gamma).ln();
    let budget = match mode {
        Mode::Contextual => 8.0 * n_users as f64 * radius_total * log_term,
        Mode::LowRank => 8.0 * radius_total * log_term,
    };
    let product = match mode {
        Mode::Contextual => n_active as f64 * m as f64 * t as f64,
        Mode::LowRank => n_users as f64 * m as f64 * t as f64,
    };
    let mut bound = (budget * product).sqrt();
    if accept_reject {
        bound += budget.powf(0.25) * product.powf(0.75);
    }
    Ok((bound, bound))
}

/// Per-round mean and population standard deviation of a metric across
/// runs. `series` holds one equal-length vector per run.
pub fn aggregate_mean_std(series: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = series.first() else {
        return Err(Error::Aggregate("no runs to aggregate".into()));
    };
    let t_max = first.len();
    if series.iter().any(|s| s.len() != t_max) {
        return Err(Error::Aggregate("runs have unequal lengths".into()));
    }
    let runs = series.len() as f64;
    let mut means = Vec::with_capacity(t_max);
    let mut stds = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let mean = series.iter().map(|s| s[t]).sum::<f64>() / runs;
        let var = series.iter().map(|s| (s[t] - mean).powi(2)).sum::<f64>() / runs;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok((means, stds))
}
