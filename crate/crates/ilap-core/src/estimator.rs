//! Reward estimation from bandit feedback and the confidence sets built
//! around the estimates.
//!
//! Two structural assumptions are supported:
//!
//! - **Contextual**: item features `Phi` (M x R) are known and each user has
//!   an unknown coefficient vector, so `Theta = F Phi^T` with only `F`
//!   estimated. The regularized least-squares fit has a per-user closed
//!   form.
//! - **Low-rank**: neither factor is known; `Theta = F Phi^T` with rank at
//!   most `R` is fit by alternating least squares from a random start, each
//!   block solved exactly so the objective trace never increases.
//!
//! Both fits minimize squared error over all recorded observations plus a
//! proximal term `gamma * ||F Phi^T - Theta0||_F^2` toward a prior guess
//! `Theta0` (zero by default). Confidence radii come in two flavors
//! matching the two structures (a per-user row bound and a global bound),
//! and both are evaluated in empirical norms weighted by effective counts
//! `n[u,i] + gamma`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::market::{Allocation, RewardMatrix, RoundFeedback};

/// Which structural assumption the estimator works under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Known item features, per-user coefficients.
    Contextual,
    /// Unknown factors on both sides, rank bounded by `R`.
    LowRank,
}

/// Which empirical norm bounds the confidence set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Frobenius-style norm over all entries.
    L2,
    /// Max over users of the per-row norm.
    L2Inf,
}

/// Snapshot of a confidence set for one round: the failure-probability
/// split, the squared radius, and the norm it is measured in.
#[derive(Clone, Copy, Debug)]
pub struct ConfidenceSpec {
    /// Failure probability delta in (0, 1).
    pub delta: f64,
    /// Discretization parameter alpha > 0.
    pub alpha: f64,
    /// Squared radius; the set is `{ norm(Theta - hat) <= sqrt(radius) }`.
    pub radius: f64,
    /// Norm the radius applies to.
    pub norm: NormKind,
}

impl ConfidenceSpec {
    /// Validates the fields.
    pub fn new(delta: f64, alpha: f64, radius: f64, norm: NormKind) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Invalid(format!("delta {delta} outside (0, 1)")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Invalid(format!("alpha {alpha} must be positive")));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Invalid(format!(
                "radius {radius} must be nonnegative"
            )));
        }
        Ok(Self {
            delta,
            alpha,
            radius,
            norm,
        })
    }
}

/// Report of one fit: objective value after each sweep (never increasing)
/// and the number of sweeps performed.
#[derive(Clone, Debug)]
pub struct FitReport {
    /// Objective after each alternation sweep (single entry for the
    /// contextual closed form).
    pub objective_trace: Vec<f64>,
    /// Sweeps performed.
    pub iterations: usize,
}

/// Relative objective-decrease tolerance for alternating sweeps.
const ALS_TOL: f64 = 1e-6;
/// Sweep cap for alternating least squares.
const ALS_MAX_ITERS: usize = 50;

/// Running estimation state: per-pair observation counts, reward sums, sum
/// of squares, the prior, and the current factor estimates.
#[derive(Clone, Debug)]
pub struct EstimatorState {
    mode: Mode,
    n: usize,
    m: usize,
    r: usize,
    gamma: f64,
    g_bound: f64,
    counts: DMatrix<f64>,
    sums: DMatrix<f64>,
    sumsq: DMatrix<f64>,
    theta_circ: DMatrix<f64>,
    user_factors: DMatrix<f64>,
    item_factors: DMatrix<f64>,
    theta_hat: DMatrix<f64>,
}

impl EstimatorState {
    /// Contextual estimator over `n` users with known `m x r` features.
    pub fn new_contextual(
        n: usize,
        features: DMatrix<f64>,
        gamma: f64,
        g_bound: f64,
    ) -> Result<Self> {
        let m = features.nrows();
        let r = features.ncols();
        if n == 0 || m == 0 || r == 0 {
            return Err(Error::Dim("estimator dimensions must be positive".into()));
        }
        validate_scalars(gamma, g_bound)?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature entry".into()));
        }
        Ok(Self {
            mode: Mode::Contextual,
            n,
            m,
            r,
            gamma,
            g_bound,
            counts: DMatrix::zeros(n, m),
            sums: DMatrix::zeros(n, m),
            sumsq: DMatrix::zeros(n, m),
            theta_circ: DMatrix::zeros(n, m),
            user_factors: DMatrix::zeros(n, r),
            item_factors: features,
            theta_hat: DMatrix::zeros(n, m),
        })
    }

    /// Low-rank estimator with rank bound `r`.
    pub fn new_lowrank(n: usize, m: usize, r: usize, gamma: f64, g_bound: f64) -> Result<Self> {
        if n == 0 || m == 0 || r == 0 {
            return Err(Error::Dim("estimator dimensions must be positive".into()));
        }
        validate_scalars(gamma, g_bound)?;
        Ok(Self {
            mode: Mode::LowRank,
            n,
            m,
            r,
            gamma,
            g_bound,
            counts: DMatrix::zeros(n, m),
            sums: DMatrix::zeros(n, m),
            sumsq: DMatrix::zeros(n, m),
            theta_circ: DMatrix::zeros(n, m),
            user_factors: DMatrix::zeros(n, r),
            item_factors: DMatrix::zeros(m, r),
            theta_hat: DMatrix::zeros(n, m),
        })
    }

    /// Replaces the prior matrix (zero by default).
    pub fn set_prior(&mut self, theta_circ: DMatrix<f64>) -> Result<()> {
        if theta_circ.shape() != (self.n, self.m) {
            return Err(Error::Dim("prior shape".into()));
        }
        if theta_circ.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior entry".into()));
        }
        self.theta_circ = theta_circ;
        Ok(())
    }

    /// Structural mode.
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of users.
    pub fn n_users(&self) -> usize {
        self.n
    }

    /// Number of items.
    pub fn n_items(&self) -> usize {
        self.m
    }

    /// Rank bound (feature dimension in contextual mode).
    pub fn rank(&self) -> usize {
        self.r
    }

    /// Proximal weight gamma.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Prior-distance bound `G` used by the radius formulas.
    pub fn g_bound(&self) -> f64 {
        self.g_bound
    }

    /// Per-pair observation counts.
    pub fn counts(&self) -> &DMatrix<f64> {
        &self.counts
    }

    /// Per-pair reward sums.
    pub fn sums(&self) -> &DMatrix<f64> {
        &self.sums
    }

    /// Current mean-reward estimate.
    pub fn theta_hat(&self) -> &DMatrix<f64> {
        &self.theta_hat
    }

    /// Current factor estimates `(user_factors, item_factors)`.
    pub fn factor_estimates(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.user_factors, &self.item_factors)
    }

    /// Records one observation per `(user, item)` pair.
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
            self.sumsq[(u, i)] += r * r;
        }
        Ok(())
    }

    /// Records a round of feedback after checking that the feedback keys
    /// are exactly the allocation's pairs.
    pub fn record_round(&mut self, alloc: &Allocation, feedback: &RoundFeedback) -> Result<()> {
        let keys: Vec<(usize, usize)> = feedback.rewards.iter().map(|&(u, i, _)| (u, i)).collect();
        if keys != alloc.pairs() {
            return Err(Error::FeedbackKeys(format!(
                "{} feedback keys vs {} allocation pairs",
                keys.len(),
                alloc.pairs().len()
            )));
        }
        let rewards: Vec<f64> = feedback.rewards.iter().map(|&(_, _, r)| r).collect();
        self.record(&keys, &rewards)
    }

    /// Refits the estimate from all recorded observations.
    ///
    /// Contextual mode solves the per-user ridge system in closed form and
    /// needs no randomness. Low-rank mode requires `rng` for the uniform
    /// `[-1/sqrt(R), 1/sqrt(R))` factor initialization and alternates exact
    /// block solves until the relative objective decrease falls under
    /// `1e-6` (capped at 50 sweeps).
    pub fn fit(&mut self, rng: Option<&mut ChaCha8Rng>) -> Result<FitReport> {
        match self.mode {
            Mode::Contextual => self.fit_contextual(),
            Mode::LowRank => {
                let rng = rng.ok_or_else(|| {
                    Error::Invalid("low-rank fit requires an RNG for initialization".into())
                })?;
                self.fit_lowrank(rng)
            }
        }
    }

    fn fit_contextual(&mut self) -> Result<FitReport> {
        let phi = self.item_factors.clone();
        for u in 0..self.n {
            let (w, rhs) = self.user_system(u, &phi);
            let f = solve_block(&w, &rhs, self.user_factors.row(u).transpose())?;
            self.user_factors.set_row(u, &f.transpose());
        }
        self.theta_hat = &self.user_factors * phi.transpose();
        let obj = self.objective();
        Ok(FitReport {
            objective_trace: vec![obj],
            iterations: 1,
        })
    }

    fn fit_lowrank(&mut self, rng: &mut ChaCha8Rng) -> Result<FitReport> {
        let bound = 1.0 / (self.r as f64).sqrt();
        let mut f = DMatrix::zeros(self.n, self.r);
        let mut phi = DMatrix::zeros(self.m, self.r);
        for u in 0..self.n {
            for k in 0..self.r {
                f[(u, k)] = rng.random_range(-bound..bound);
            }
        }
        for i in 0..self.m {
            for k in 0..self.r {
                phi[(i, k)] = rng.random_range(-bound..bound);
            }
        }
        self.user_factors = f;
        self.item_factors = phi;
        self.theta_hat = &self.user_factors * self.item_factors.transpose();

        let mut trace = vec![self.objective()];
        for sweep in 1..=ALS_MAX_ITERS {
            let phi = self.item_factors.clone();
            for u in 0..self.n {
                let (w, rhs) = self.user_system(u, &phi);
                let fu = solve_block(&w, &rhs, self.user_factors.row(u).transpose())?;
                self.user_factors.set_row(u, &fu.transpose());
            }
            let f = self.user_factors.clone();
            for i in 0..self.m {
                let (v, rhs) = self.item_system(i, &f);
                let pi = solve_block(&v, &rhs, self.item_factors.row(i).transpose())?;
                self.item_factors.set_row(i, &pi.transpose());
            }
            self.theta_hat = &self.user_factors * self.item_factors.transpose();
            let obj = self.objective();
            let prev = *trace.last().unwrap();
            trace.push(obj);
            if (prev - obj).abs() <= ALS_TOL * prev.abs().max(1.0) {
                return Ok(FitReport {
                    iterations: sweep,
                    objective_trace: trace,
                });
            }
        }
        Ok(FitReport {
            iterations: ALS_MAX_ITERS,
            objective_trace: trace,
        })
    }

    /// Normal system for user `u` against item vectors `phi`:
    /// `sum_i (n + gamma) phi_i phi_i^T` and
    /// `sum_i (s + gamma * prior) phi_i`.
    fn user_system(&self, u: usize, phi: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let r = phi.ncols();
        let mut w = DMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        for i in 0..self.m {
            let weight = self.counts[(u, i)] + self.gamma;
            let row = phi.row(i);
            for a in 0..r {
                rhs[a] += (self.sums[(u, i)] + self.gamma * self.theta_circ[(u, i)]) * row[a];
                for b in 0..r {
                    w[(a, b)] += weight * row[a] * row[b];
                }
            }
        }
        (w, rhs)
    }

    /// Mirror-image normal system for item `i` against user vectors `f`.
    fn item_system(&self, i: usize, f: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let r = f.ncols();
        let mut v = DMatrix::zeros(r, r);
        let mut rhs = DVector::zeros(r);
        for u in 0..self.n {
            let weight = self.counts[(u, i)] + self.gamma;
            let row = f.row(u);
            for a in 0..r {
                rhs[a] += (self.sums[(u, i)] + self.gamma * self.theta_circ[(u, i)]) * row[a];
                for b in 0..r {
                    v[(a, b)] += weight * row[a] * row[b];
                }
            }
        }
        (v, rhs)
    }

    /// Full fit objective: squared error over every recorded observation
    /// plus the proximal term toward the prior.
    pub fn objective(&self) -> f64 {
        let mut total = 0.0;
        for u in 0..self.n {
            for i in 0..self.m {
                let est = self.theta_hat[(u, i)];
                total += self.counts[(u, i)] * est * est - 2.0 * est * self.sums[(u, i)]
                    + self.sumsq[(u, i)];
                let dev = est - self.theta_circ[(u, i)];
                total += self.gamma * dev * dev;
            }
        }
        total
    }

    /// Whether the truth lies inside the confidence set described by `spec`.
    pub fn contains_truth(&self, truth: &RewardMatrix, spec: &ConfidenceSpec) -> Result<bool> {
        if truth.n_users() != self.n || truth.n_items() != self.m {
            return Err(Error::Dim("truth shape".into()));
        }
        let delta = truth.values() - &self.theta_hat;
        let norm = empirical_norm(&delta, &self.counts, self.gamma, spec.norm)?;
        Ok(norm <= spec.radius.sqrt())
    }
}

fn validate_scalars(gamma: f64, g_bound: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Invalid(format!("gamma {gamma} must be positive")));
    }
    if !(g_bound >= 0.0) || !g_bound.is_finite() {
        return Err(Error::Invalid(format!(
            "g bound {g_bound} must be nonnegative"
        )));
    }
    Ok(())
}

/// Solves a symmetric block system, falling back from Cholesky to an SVD
/// least-norm solve for rank-deficient systems. A fully degenerate block
/// (zero matrix, necessarily zero right-hand side) keeps `current`, which
/// is an exact minimizer there and preserves a usable factor basis.
fn solve_block(
    w: &DMatrix<f64>,
    rhs: &DVector<f64>,
    current: DVector<f64>,
) -> Result<DVector<f64>> {
    let scale = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Ok(current);
    }
    if let Some(chol) = w.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let svd = w.clone().svd(true, true);
    svd.solve(rhs, 1e-12 * scale)
        .map_err(|e| Error::Numerical(format!("block solve failed: {e}")))
}

/// Empirical norm of a deviation matrix under effective counts
/// `n[u,i] + gamma`: either the global norm or the worst per-user row norm.
pub fn empirical_norm(
    delta: &DMatrix<f64>,
    counts: &DMatrix<f64>,
    gamma: f64,
    kind: NormKind,
) -> Result<f64> {
    if delta.shape() != counts.shape() {
        return Err(Error::Dim("delta and counts shapes differ".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Invalid("gamma must be nonnegative".into()));
    }
    match kind {
        NormKind::L2 => {
            let mut total = 0.0;
            for (d, n) in delta.iter().zip(counts.iter()) {
                total += (n + gamma) * d * d;
            }
            Ok(total.sqrt())
        }
        NormKind::L2Inf => {
            let mut worst = 0.0f64;
            for u in 0..delta.nrows() {
                let mut row = 0.0;
                for i in 0..delta.ncols() {
                    let d = delta[(u, i)];
                    row += (counts[(u, i)] + gamma) * d * d;
                }
                worst = worst.max(row.sqrt());
            }
            Ok(worst)
        }
    }
}

/// Exploration width of a round's allocation: the sum of reciprocal
/// effective counts over its pairs.
pub fn confidence_width(
    pairs: &[(usize, usize)],
    counts: &DMatrix<f64>,
    gamma: f64,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Invalid("gamma must be positive".into()));
    }
    let mut total = 0.0;
    for &(u, i) in pairs {
        if u >= counts.nrows() || i >= counts.ncols() {
            return Err(Error::Dim(format!("pair ({u}, {i}) out of range")));
        }
        total += 1.0 / (counts[(u, i)] + gamma);
    }
    Ok(total)
}

/// Squared confidence radius for the contextual (per-user row) set at
/// round `t`.
///
/// Grows with the horizon, the noise level `eta`, and the prior-distance
/// bound `g`; shrinks as `delta` grows.
#[allow(clippy::too_many_arguments)]
pub fn rho_star(
    t: usize,
    delta: f64,
    alpha: f64,
    gamma: f64,
    n: usize,
    m: usize,
    r: usize,
    eta: f64,
    g: f64,
) -> Result<f64> {
    validate_radius_args(t, delta, alpha, gamma, n, m, r, eta, g)?;
    let (tf, nf, mf, rf) = (t as f64, n as f64, m as f64, r as f64);
    let lead = 8.0 * eta * eta * rf * (3.0 * nf / (alpha * delta)).ln();
    let prior = 4.0 * gamma * g * g;
    let drift = 2.0
        * alpha
        * tf
        * mf.sqrt()
        * (8.0 + (8.0 * eta * eta * (4.0 * mf * nf * tf * tf / delta).ln()).sqrt());
    Ok(lead + prior + drift)
}

/// Squared confidence radius for the low-rank (global) set at round `t`.
///
/// The leading term pays for a covering of rank-`r` matrices,
/// `(n + m + 1) r log(9 sqrt(nm) / alpha)`, so it requires
/// `alpha <= 9 sqrt(nm)`.
#[allow(clippy::too_many_arguments)]
pub fn beta_star(
    t: usize,
    delta: f64,
    alpha: f64,
    gamma: f64,
    n: usize,
    m: usize,
    r: usize,
    eta: f64,
    g: f64,
) -> Result<f64> {
    validate_radius_args(t, delta, alpha, gamma, n, m, r, eta, g)?;
    let (tf, nf, mf, rf) = (t as f64, n as f64, m as f64, r as f64);
    let nm = nf * mf;
    if alpha > 9.0 * nm.sqrt() {
        return Err(Error::Invalid(format!(
            "alpha {alpha} exceeds 9 * sqrt(NM) = {}",
            9.0 * nm.sqrt()
        )));
    }
    let covering = (nf + mf + 1.0) * rf * (9.0 * nm.sqrt() / alpha).ln();
    let lead = 8.0 * eta * eta * (covering + (1.0 / delta).ln());
    let prior = 4.0 * gamma * g * g;
    let drift = 2.0
        * alpha
        * tf
        * nm.sqrt()
        * (8.0 + (8.0 * eta * eta * (4.0 * nm * tf * tf / delta).ln()).sqrt());
    Ok(lead + prior + drift)
}

#[allow(clippy::too_many_arguments)]
fn validate_radius_args(
    t: usize,
    delta: f64,
    alpha: f64,
    gamma: f64,
    n: usize,
    m: usize,
    r: usize,
    eta: f64,
    g: f64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Invalid("t must be at least 1".into()));
    }
    if n == 0 || m == 0 || r == 0 {
        return Err(Error::Invalid("dimensions must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Invalid(format!("delta {delta} outside (0, 1)")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Invalid(format!("alpha {alpha} must be positive")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Invalid(format!("gamma {gamma} must be positive")));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Invalid(format!("eta {eta} must be nonnegative")));
    }
    if !(g >= 0.0) || !g.is_finite() {
        return Err(Error::Invalid(format!("g {g} must be nonnegative")));
    }
    Ok(())
}
