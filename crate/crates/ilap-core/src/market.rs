//! Market primitives: reward matrices, constraint profiles, allocations,
//! prices, and the accept/reject feedback model.
//!
//! A market instance is an `N x M` matrix of mean rewards, one row per user
//! and one column per item. Each round carries a constraint profile (per-user
//! demands, per-item capacities). An allocation assigns items to users, at
//! most one unit per pair. Offering a price vector turns an allocation into
//! realized welfare: under the accept/reject model a user keeps item `i`
//! only when their true mean reward is at least the offered price (ties
//! accept); under the no-reject model every assigned item is kept.
//!
//! Reward feedback is observed for every assigned pair whether or not the
//! user accepted; acceptance only gates welfare and surplus.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal;

/// Tolerance for the `[-1, 1]` entry check on ground-truth matrices.
const ENTRY_BOUND_TOL: f64 = 1e-9;

/// Mean-reward matrix, optionally with a low-rank factor form `F * Phi^T`
/// (user factors `N x R`, item factors `M x R`).
///
/// Entries must be finite and lie in `[-1, 1]`; instances produced by the
/// dataset module are scaled to satisfy this.
#[derive(Clone, Debug)]
pub struct RewardMatrix {
    values: DMatrix<f64>,
    factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl RewardMatrix {
    /// Wraps a dense matrix after validating shape and entry bounds.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dim("reward matrix must be non-empty".into()));
        }
        for v in values.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("reward matrix entry".into()));
            }
            if v.abs() > 1.0 + ENTRY_BOUND_TOL {
                return Err(Error::Invalid(format!(
                    "reward matrix entry {v} outside [-1, 1]"
                )));
            }
        }
        Ok(Self {
            values,
            factors: None,
        })
    }

    /// Builds the matrix from factors, keeping the factor form.
    pub fn from_factors(user_factors: DMatrix<f64>, item_factors: DMatrix<f64>) -> Result<Self> {
        if user_factors.ncols() != item_factors.ncols() {
            return Err(Error::Dim(format!(
                "factor ranks differ: {} vs {}",
                user_factors.ncols(),
                item_factors.ncols()
            )));
        }
        let values = &user_factors * item_factors.transpose();
        let mut out = Self::new(values)?;
        out.factors = Some((user_factors, item_factors));
        Ok(out)
    }

    /// Number of users (rows).
    pub fn n_users(&self) -> usize {
        self.values.nrows()
    }

    /// Number of items (columns).
    pub fn n_items(&self) -> usize {
        self.values.ncols()
    }

    /// Dense view of the mean rewards.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Factor form, when the matrix was built from one.
    pub fn factors(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.factors.as_ref().map(|(f, p)| (f, p))
    }

    /// Entry accessor.
    pub fn get(&self, u: usize, i: usize) -> f64 {
        self.values[(u, i)]
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Per-round constraints: integer demands (per user) and capacities
/// (per item). A user with zero demand is inactive for the round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintProfile {
    demands: Vec<u32>,
    capacities: Vec<u32>,
}

impl ConstraintProfile {
    /// Validates lengths and wraps the vectors.
    pub fn new(demands: Vec<u32>, capacities: Vec<u32>) -> Result<Self> {
        if demands.is_empty() || capacities.is_empty() {
            return Err(Error::Dim("constraint profile must be non-empty".into()));
        }
        Ok(Self {
            demands,
            capacities,
        })
    }

    /// Per-user demands.
    pub fn demands(&self) -> &[u32] {
        &self.demands
    }

    /// Per-item capacities.
    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    /// Number of users.
    pub fn n_users(&self) -> usize {
        self.demands.len()
    }

    /// Number of items.
    pub fn n_items(&self) -> usize {
        self.capacities.len()
    }

    /// Indices of users with positive demand this round.
    pub fn active_users(&self) -> Vec<usize> {
        (0..self.demands.len())
            .filter(|&u| self.demands[u] > 0)
            .collect()
    }
}

/// Binary allocation stored as a lexicographically sorted pair list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    n_users: usize,
    n_items: usize,
    pairs: Vec<(usize, usize)>,
}

impl Allocation {
    /// Builds an allocation from `(user, item)` pairs, validating ranges and
    /// rejecting duplicates. Pairs are stored sorted by `(user, item)`.
    pub fn new(n_users: usize, n_items: usize, mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Invalid(format!("duplicate pair {:?}", w[0])));
            }
        }
        for &(u, i) in &pairs {
            if u >= n_users || i >= n_items {
                return Err(Error::Dim(format!(
                    "pair ({u}, {i}) outside {n_users} x {n_items}"
                )));
            }
        }
        Ok(Self {
            n_users,
            n_items,
            pairs,
        })
    }

    /// Empty allocation on an `n_users x n_items` market.
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            pairs: Vec::new(),
        }
    }

    /// Number of users in the underlying market.
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Number of items in the underlying market.
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Sorted `(user, item)` pairs.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Items assigned to each user, ascending per user.
    pub fn per_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for &(u, i) in &self.pairs {
            out[u].push(i);
        }
        out
    }

    /// Units assigned to each item.
    pub fn per_item_load(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.n_items];
        for &(_, i) in &self.pairs {
            out[i] += 1;
        }
        out
    }

    /// Whether the allocation respects a constraint profile.
    pub fn is_feasible(&self, cons: &ConstraintProfile) -> bool {
        if cons.n_users() != self.n_users || cons.n_items() != self.n_items {
            return false;
        }
        let mut row = vec![0u32; self.n_users];
        let mut col = vec![0u32; self.n_items];
        for &(u, i) in &self.pairs {
            row[u] += 1;
            col[i] += 1;
        }
        row.iter().zip(cons.demands()).all(|(r, d)| r <= d)
            && col.iter().zip(cons.capacities()).all(|(c, cap)| c <= cap)
    }

    /// Total mean reward of the allocation under `theta`, summed in pair
    /// order for reproducibility.
    pub fn value_under(&self, theta: &DMatrix<f64>) -> f64 {
        self.pairs.iter().map(|&(u, i)| theta[(u, i)]).sum()
    }
}

/// Nonnegative per-item price vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    /// Validates nonnegativity and finiteness.
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        for &p in &prices {
            if !p.is_finite() {
                return Err(Error::NonFinite("price".into()));
            }
            if p < 0.0 {
                return Err(Error::Invalid(format!("negative price {p}")));
            }
        }
        Ok(Self(prices))
    }

    /// All-zero prices for `m` items.
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    /// Price slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of items priced.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True when no items are priced.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observed feedback for one round: a noisy reward per assigned pair plus
/// the acceptance flag. Keys are exactly the allocation's pairs, in the
/// same sorted order.
#[derive(Clone, Debug)]
pub struct RoundFeedback {
    /// `(user, item, reward)` per assigned pair, sorted by pair.
    pub rewards: Vec<(usize, usize, f64)>,
    /// `(user, item, accepted)` per assigned pair, sorted by pair.
    pub accepted: Vec<(usize, usize, bool)>,
}

/// Deterministic per-pair noise source for one `(seed, round)` slice.
///
/// Draws are keyed by `(seed, t, user, item)`, so the value for a pair does
/// not depend on what else was allocated. See the `rng` module.
#[derive(Clone, Copy, Debug)]
pub struct NoiseStream {
    seed: u64,
    t: usize,
}

impl NoiseStream {
    /// Noise stream for round `t` of run `seed`.
    pub fn new(seed: u64, t: usize) -> Self {
        Self { seed, t }
    }

    /// Standard-normal deviate for pair `(u, i)` this round.
    pub fn normal(&self, u: usize, i: usize) -> f64 {
        crate::rng::pair_noise(self.seed, self.t, u, i)
    }
}

/// Samples noisy rewards `theta*[u, i] + eta * z` for every assigned pair.
/// Acceptance flags are filled in as all-true; callers in the accept/reject
/// model overwrite them via [`acceptance_mask`].
pub fn sample_rewards(
    alloc: &Allocation,
    truth: &RewardMatrix,
    eta: f64,
    noise: &NoiseStream,
) -> Result<RoundFeedback> {
    if alloc.n_users() != truth.n_users() || alloc.n_items() != truth.n_items() {
        return Err(Error::Dim("allocation does not match reward matrix".into()));
    }
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Invalid(format!("noise level {eta}")));
    }
    let mut rewards = Vec::with_capacity(alloc.pairs().len());
    let mut accepted = Vec::with_capacity(alloc.pairs().len());
    for &(u, i) in alloc.pairs() {
        rewards.push((u, i, truth.get(u, i) + eta * noise.normal(u, i)));
        accepted.push((u, i, true));
    }
    Ok(RoundFeedback { rewards, accepted })
}

/// Acceptance decisions under the accept/reject model: user `u` keeps item
/// `i` iff `theta*[u, i] >= p[i]` (ties accept).
pub fn acceptance_mask(
    truth: &RewardMatrix,
    alloc: &Allocation,
    prices: &PriceVector,
) -> Result<Vec<(usize, usize, bool)>> {
    if prices.len() != truth.n_items() {
        return Err(Error::Dim("price vector length".into()));
    }
    Ok(alloc
        .pairs()
        .iter()
        .map(|&(u, i)| (u, i, truth.get(u, i) >= prices.as_slice()[i]))
        .collect())
}

/// Realized social welfare of an allocation: the sum of true mean rewards
/// over kept pairs. With `accept_reject`, a pair counts only when the user
/// accepts at the offered price; otherwise every assigned pair counts.
pub fn realized_welfare(
    alloc: &Allocation,
    truth: &RewardMatrix,
    prices: &PriceVector,
    accept_reject: bool,
) -> Result<f64> {
    if prices.len() != truth.n_items() {
        return Err(Error::Dim("price vector length".into()));
    }
    let mut total = 0.0;
    for &(u, i) in alloc.pairs() {
        let v = truth.get(u, i);
        if !accept_reject || v >= prices.as_slice()[i] {
            total += v;
        }
    }
    Ok(total)
}

/// A user's surplus from bundle `items` at the given prices. Under
/// `accept_reject` only accepted items (reward at least price) contribute;
/// otherwise every item contributes `reward - price`, possibly negative.
pub fn surplus(
    theta_row: &[f64],
    prices: &PriceVector,
    items: &[usize],
    accept_reject: bool,
) -> f64 {
    let p = prices.as_slice();
    items
        .iter()
        .map(|&i| {
            let gain = theta_row[i] - p[i];
            if accept_reject && theta_row[i] < p[i] {
                0.0
            } else {
                gain
            }
        })
        .sum()
}

/// Draws one standard normal from a caller-provided generator. Exposed so
/// other modules share the same pinned transform.
pub fn normal_from(rng: &mut ChaCha8Rng) -> f64 {
    standard_normal(rng)
}
