//! Reference policies the main algorithm is compared against.
//!
//! - **Certainty-equivalent pricing** solves and prices at the current
//!   estimate with no optimism and no exploration discount.
//! - **Independent rankers** run one mean-plus-bonus bandit per user and
//!   ignore capacities when ranking; items claimed beyond capacity are cut
//!   back uniformly at random and nothing is priced.
//! - **Capacity-aware confidence bounds** solve the allocation at a capped
//!   upper-confidence index matrix, so capacities are respected but prices
//!   come from the index rather than an optimistic in-set matrix.
//! - **Clairvoyant** solves and prices at the true matrix each round.
//!
//! All of them share the flow solver and price machinery, which isolates
//! the comparison to the decision rule itself.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::EstimatorState;
use crate::market::{Allocation, ConstraintProfile, PriceVector, RewardMatrix};
use crate::rng::{stream, Purpose};
use crate::solver::solve_allocation;

/// Per-pair running means for the index policies.
#[derive(Clone, Debug)]
pub struct MeanState {
    n: usize,
    m: usize,
    counts: DMatrix<f64>,
    sums: DMatrix<f64>,
}

impl MeanState {
    /// Fresh state for an `n x m` market.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Dim("mean state dimensions must be positive".into()));
        }
        Ok(Self {
            n,
            m,
            counts: DMatrix::zeros(n, m),
            sums: DMatrix::zeros(n, m),
        })
    }

    /// Records one observation per pair.
    pub fn record(&mut self, pairs: &[(usize, usize)], rewards: &[f64]) -> Result<()> {
        if pairs.len() != rewards.len() {
            return Err(Error::Dim("pairs and rewards lengths differ".into()));
        }
        for (&(u, i), &r) in pairs.iter().zip(rewards) {
            if u >= self.n || i >= self.m {
                return Err(Error::Dim(format!("pair ({u}, {i}) out of range")));
            }
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("reward at ({u}, {i})")));
            }
            self.counts[(u, i)] += 1.0;
            self.sums[(u, i)] += r;
        }
        Ok(())
    }

    /// Observation count for a pair.
    pub fn count(&self, u: usize, i: usize) -> f64 {
        self.counts[(u, i)]
    }

    /// Observed mean for a pair, `None` while unexplored.
    pub fn mean(&self, u: usize, i: usize) -> Option<f64> {
        let n = self.counts[(u, i)];
        if n > 0.0 {
            Some(self.sums[(u, i)] / n)
        } else {
            None
        }
    }
}

/// Mean-plus-bonus index `mean + sqrt(3 ln t / (2 n))` for an explored pair.
pub fn ucb_index(mean: f64, count: f64, t: usize) -> f64 {
    mean + (3.0 * (t as f64).ln() / (2.0 * count)).sqrt()
}

/// Certainty-equivalent decision: exact solve and minimal prices at the
/// current estimate, no optimism.
pub fn certainty_equivalent_decide(
    est: &EstimatorState,
    cons: &ConstraintProfile,
) -> Result<(Allocation, PriceVector)> {
    let outcome = solve_allocation(est.theta_hat(), cons)?;
    Ok((outcome.allocation, outcome.prices))
}

/// Result of one independent-rankers round.
#[derive(Clone, Debug)]
pub struct RankerRound {
    /// Pairs that survived capacity truncation.
    pub allocation: Allocation,
    /// Pairs cut by truncation; the rankers treat these as zero-reward
    /// observations since each learner is unaware of the contention.
    pub eliminated: Vec<(usize, usize)>,
}

/// Independent rankers: each active user ranks items by index (unexplored
/// items first, in item order) and claims their top `demand` picks with no
/// regard for capacity. Overfull items keep a uniform random subset of
/// claimants, drawn from the dedicated truncation stream for `(seed, t)`.
/// Prices are always zero.
pub fn rankers_decide(
    means: &MeanState,
    cons: &ConstraintProfile,
    t: usize,
    seed: u64,
) -> Result<RankerRound> {
    if cons.n_users() != means.n || cons.n_items() != means.m {
        return Err(Error::Dim("constraint shape".into()));
    }
    if t == 0 {
        return Err(Error::Invalid("rounds are 1-indexed".into()));
    }
    let mut claims: Vec<Vec<usize>> = vec![Vec::new(); means.m];
    for u in 0..means.n {
        let want = (cons.demands()[u] as usize).min(means.m);
        if want == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..means.m).collect();
        order.sort_by(|&a, &b| {
            let ia = means
                .mean(u, a)
                .map(|mu| ucb_index(mu, means.count(u, a), t));
            let ib = means
                .mean(u, b)
                .map(|mu| ucb_index(mu, means.count(u, b), t));
            match (ia, ib) {
                (None, None) => a.cmp(&b),
                (None, Some(_)) => std::cmp::Ordering::Less,
                (Some(_), None) => std::cmp::Ordering::Greater,
                (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.cmp(&b)),
            }
        });
        for &i in order.iter().take(want) {
            claims[i].push(u);
        }
    }

    let mut rng = stream(seed, Purpose::IrTruncation, &[t as u64]);
    let mut kept = Vec::new();
    let mut eliminated = Vec::new();
    for i in 0..means.m {
        let cap = cons.capacities()[i] as usize;
        let users = &mut claims[i];
        if users.len() <= cap {
            kept.extend(users.iter().map(|&u| (u, i)));
            continue;
        }
        // Partial Fisher-Yates: the first `cap` slots become the survivors.
        for k in 0..cap {
            let j = rng.random_range(k..users.len());
            users.swap(k, j);
        }
        let mut survivors: Vec<usize> = users[..cap].to_vec();
        survivors.sort_unstable();
        kept.extend(survivors.iter().map(|&u| (u, i)));
        let mut cut: Vec<usize> = users[cap..].to_vec();
        cut.sort_unstable();
        eliminated.extend(cut.iter().map(|&u| (u, i)));
    }
    eliminated.sort_unstable();
    let allocation = Allocation::new(means.n, means.m, kept)?;
    Ok(RankerRound {
        allocation,
        eliminated,
    })
}

/// Capacity-aware confidence-bound decision: solve and price at the index
/// matrix `min(1, mean + bonus)` with unexplored pairs pinned at 1.
pub fn capped_ucb_decide(
    means: &MeanState,
    cons: &ConstraintProfile,
    t: usize,
) -> Result<(Allocation, PriceVector)> {
    if cons.n_users() != means.n || cons.n_items() != means.m {
        return Err(Error::Dim("constraint shape".into()));
    }
    if t == 0 {
        return Err(Error::Invalid("rounds are 1-indexed".into()));
    }
    let index = DMatrix::from_fn(means.n, means.m, |u, i| match means.mean(u, i) {
        Some(mu) => ucb_index(mu, means.count(u, i), t).min(1.0),
        None => 1.0,
    });
    let outcome = solve_allocation(&index, cons)?;
    Ok((outcome.allocation, outcome.prices))
}

/// Clairvoyant decision: exact solve and minimal prices at the truth.
pub fn clairvoyant_decide(
    truth: &RewardMatrix,
    cons: &ConstraintProfile,
) -> Result<(Allocation, PriceVector)> {
    let outcome = solve_allocation(truth.values(), cons)?;
    Ok((outcome.allocation, outcome.prices))
}
