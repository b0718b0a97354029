//! Exact allocation solver and equilibrium prices.
//!
//! The per-round allocation problem is
//!
//! ```text
//! max <X, theta>   over X in {0,1}^{N x M}
//! s.t. sum_i X[u,i] <= demand[u],  sum_u X[u,i] <= capacity[i]
//! ```
//!
//! The constraint matrix is an interval/bipartite structure, so the LP
//! relaxation over `[0,1]` has integral optima; the solver works directly on
//! the equivalent transportation network (source -> user arcs with demand
//! capacity, unit user->item arcs carrying cost `-theta[u,i]` for positive
//! entries only, item -> sink arcs with item capacity) and runs successive
//! shortest augmenting paths with node potentials, stopping as soon as the
//! cheapest augmenting path stops being profitable. Entries with
//! `theta <= 0` get no arc, so they are never allocated. Ties inside the
//! shortest-path search resolve by node index, which makes the returned
//! allocation deterministic and lexicographically biased.
//!
//! Prices come from the dual side. Among all optimal duals the solver
//! returns the entrywise-minimal price vector: items with unused capacity
//! are pinned to zero and every other lower bound is propagated through the
//! swap/entry constraints of the assigned allocation until the least
//! fixpoint is reached (a Bellman-Ford style sweep over items). The result
//! clears the market exactly: the dual objective equals the primal welfare
//! up to floating-point tolerance, reported as `duality_gap`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::market::{Allocation, ConstraintProfile, PriceVector};

/// Numerical slack allowed when validating dual optimality.
const DUAL_TOL: f64 = 1e-8;

/// Result of one exact solve: allocation, its welfare under the input
/// matrix, minimal market-clearing prices, per-user demand duals, and the
/// achieved duality gap (dual objective minus welfare).
#[derive(Clone, Debug)]
pub struct AllocationOutcome {
    /// Optimal allocation (integral).
    pub allocation: Allocation,
    /// `<X, theta>` at the optimum, summed in pair order.
    pub welfare: f64,
    /// Entrywise-minimal optimal prices.
    pub prices: PriceVector,
    /// Per-user marginal value of one more demand unit (zero when the
    /// user's demand is not exhausted).
    pub demand_duals: Vec<f64>,
    /// Dual objective minus primal welfare; within `1e-8` of zero.
    pub duality_gap: f64,
}

#[derive(Clone, Debug)]
struct FlowArc {
    to: usize,
    rev: usize,
    cap: u32,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<FlowArc>>,
}

impl FlowGraph {
    fn new(n_nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n_nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: u32, cost: f64) -> usize {
        let fwd = self.adj[from].len();
        let rev = self.adj[to].len();
        self.adj[from].push(FlowArc { to, rev, cap, cost });
        self.adj[to].push(FlowArc {
            to: from,
            rev: fwd,
            cap: 0,
            cost: -cost,
        });
        fwd
    }
}

/// Min-heap entry ordered by distance, ties by node index so the search is
/// deterministic.
#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Solves the capacity-constrained allocation problem exactly and returns
/// the allocation together with minimal market-clearing prices.
///
/// `theta` may be any finite matrix (estimates and optimistic inflations
/// included); entries at or below zero are never allocated.
pub fn solve_allocation(
    theta: &DMatrix<f64>,
    cons: &ConstraintProfile,
) -> Result<AllocationOutcome> {
    let (n, m) = theta.shape();
    if n == 0 || m == 0 {
        return Err(Error::Dim("theta must be non-empty".into()));
    }
    if cons.n_users() != n || cons.n_items() != m {
        return Err(Error::Dim(format!(
            "constraints {}x{} do not match theta {}x{}",
            cons.n_users(),
            cons.n_items(),
            n,
            m
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta entry".into()));
    }

    // Node layout: source, users, items, sink.
    let src = 0;
    let user = |u: usize| 1 + u;
    let item = |i: usize| 1 + n + i;
    let snk = 1 + n + m;
    let n_nodes = n + m + 2;

    let mut g = FlowGraph::new(n_nodes);
    for u in 0..n {
        g.add(src, user(u), cons.demands()[u], 0.0);
    }
    // Remember each pair arc's slot to read the flow back out.
    let mut pair_arcs: Vec<(usize, usize, usize)> = Vec::new();
    for u in 0..n {
        for i in 0..m {
            if theta[(u, i)] > 0.0 {
                let idx = g.add(user(u), item(i), 1, -theta[(u, i)]);
                pair_arcs.push((u, i, idx));
            }
        }
    }
    for i in 0..m {
        g.add(item(i), snk, cons.capacities()[i], 0.0);
    }

    // Initial potentials from one topological relaxation pass over the
    // 3-layer DAG (all arcs leave a strictly earlier layer).
    let mut phi = vec![0.0f64; n_nodes];
    for i in 0..m {
        let mut best = 0.0f64;
        for u in 0..n {
            if theta[(u, i)] > 0.0 {
                best = best.min(-theta[(u, i)]);
            }
        }
        phi[item(i)] = best;
    }
    phi[snk] = (0..m)
        .filter(|&i| cons.capacities()[i] > 0)
        .map(|i| phi[item(i)])
        .fold(0.0f64, f64::min);

    // Successive shortest augmenting paths; each augmentation ships one
    // unit because every source-to-sink path crosses a unit pair arc.
    // Relaxations must beat the incumbent by a scale-aware margin: exact
    // ties are rampant here (equal rewards make zero-cost residual
    // cycles), and accepting ulp-size "improvements" lets rounding noise
    // close a parent cycle through the source.
    let eps = 1e-11 * theta.amax().max(1.0);
    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n_nodes];
    loop {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = None);
        dist[src] = 0.0;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            node: src,
        });
        while let Some(HeapEntry { dist: d, node: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for (k, arc) in g.adj[v].iter().enumerate() {
                if arc.cap == 0 || arc.to == src {
                    continue;
                }
                let nd = d + arc.cost + phi[v] - phi[arc.to];
                if nd < dist[arc.to] - eps {
                    dist[arc.to] = nd;
                    parent[arc.to] = Some((v, k));
                    heap.push(HeapEntry {
                        dist: nd,
                        node: arc.to,
                    });
                }
            }
        }
        if !dist[snk].is_finite() {
            break;
        }
        let true_cost = dist[snk] + phi[snk];
        if true_cost >= 0.0 {
            break;
        }
        let clamp = dist[snk];
        for v in 0..n_nodes {
            phi[v] += dist[v].min(clamp);
        }
        let mut v = snk;
        let mut steps = 0;
        while let Some((prev, k)) = parent[v] {
            let rev = g.adj[prev][k].rev;
            if g.adj[prev][k].cap == 0 {
                return Err(Error::Numerical(
                    "augmenting path reused a saturated arc".into(),
                ));
            }
            g.adj[prev][k].cap -= 1;
            g.adj[v][rev].cap += 1;
            v = prev;
            steps += 1;
            if steps > n_nodes {
                return Err(Error::Numerical(
                    "augmenting path failed to reach the source".into(),
                ));
            }
        }
    }

    let mut pairs = Vec::new();
    for &(u, i, idx) in &pair_arcs {
        if g.adj[user(u)][idx].cap == 0 {
            pairs.push((u, i));
        }
    }
    let allocation = Allocation::new(n, m, pairs)?;
    let welfare = allocation.value_under(theta);

    let prices = minimal_prices(theta, cons, &allocation)?;
    let per_user = allocation.per_user();
    let p = prices.as_slice();
    let demand_duals: Vec<f64> = (0..n)
        .map(|u| {
            let d = cons.demands()[u] as usize;
            if d == 0 || per_user[u].len() < d {
                0.0
            } else {
                per_user[u]
                    .iter()
                    .map(|&i| theta[(u, i)] - p[i])
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0)
            }
        })
        .collect();

    let dual_objective = dual_value(theta, cons, &prices);
    let duality_gap = dual_objective - welfare;
    if duality_gap.abs() > DUAL_TOL * welfare.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "duality gap {duality_gap} exceeds tolerance"
        )));
    }

    Ok(AllocationOutcome {
        allocation,
        welfare,
        prices,
        demand_duals,
        duality_gap,
    })
}

/// Entrywise-minimal optimal prices for a given optimal allocation.
///
/// The optimal price set is described by lower bounds: an item with spare
/// capacity must cost zero; an unassigned item wanted by a user with spare
/// demand must cost at least that user's reward; and a swap from an
/// assigned item to an unassigned one must not raise the user's surplus.
/// The least solution of this monotone system is reached by Bellman-Ford
/// style sweeps over items (at most `M` strict improvements are possible).
fn minimal_prices(
    theta: &DMatrix<f64>,
    cons: &ConstraintProfile,
    alloc: &Allocation,
) -> Result<PriceVector> {
    let (n, m) = theta.shape();
    let per_user = alloc.per_user();
    let load = alloc.per_item_load();
    let slack: Vec<bool> = (0..m).map(|i| load[i] < cons.capacities()[i]).collect();
    let mut assigned = vec![vec![false; m]; n];
    for &(u, i) in alloc.pairs() {
        assigned[u][i] = true;
    }

    // Raising only on improvements clearly above rounding noise keeps
    // ties between equal-value swaps from ratcheting prices one ulp per
    // sweep, which would never settle.
    let scale = theta.amax().max(1.0);
    let eps = 1e-9 * scale;
    let slack_tol = DUAL_TOL.max(eps);
    let mut p = vec![0.0f64; m];
    let raise = |p: &mut [f64], j: usize, lb: f64| -> Result<bool> {
        if lb <= p[j] + eps {
            return Ok(false);
        }
        if slack[j] {
            // Complementary slackness pins slack items at zero; a genuine
            // lower bound here contradicts optimality of the allocation.
            if lb > slack_tol {
                return Err(Error::Numerical(format!(
                    "slack item {j} requires positive price {lb}"
                )));
            }
            return Ok(false);
        }
        p[j] = lb;
        Ok(true)
    };

    for sweep in 0..(m + 2) {
        let mut changed = false;
        for u in 0..n {
            let d = cons.demands()[u] as usize;
            if d == 0 {
                continue;
            }
            let has_spare_demand = per_user[u].len() < d;
            for j in 0..m {
                if assigned[u][j] {
                    continue;
                }
                if has_spare_demand {
                    changed |= raise(&mut p, j, theta[(u, j)])?;
                }
                for &i in &per_user[u] {
                    let lb = p[i] + theta[(u, j)] - theta[(u, i)];
                    changed |= raise(&mut p, j, lb)?;
                }
            }
        }
        if !changed {
            break;
        }
        if sweep == m + 1 {
            return Err(Error::Numerical("price fixpoint did not converge".into()));
        }
    }

    // Sanity: assigned pairs must keep nonnegative surplus at these prices.
    for &(u, i) in alloc.pairs() {
        if p[i] > theta[(u, i)] + DUAL_TOL {
            return Err(Error::Numerical(format!(
                "price {} exceeds assigned reward {} at ({u}, {i})",
                p[i],
                theta[(u, i)]
            )));
        }
    }
    PriceVector::new(p)
}

/// Dual objective `sum_u max_surplus(u) + p . c` at prices `p`.
fn dual_value(theta: &DMatrix<f64>, cons: &ConstraintProfile, prices: &PriceVector) -> f64 {
    let (n, _) = theta.shape();
    let mut total = 0.0;
    for u in 0..n {
        let row: Vec<f64> = theta.row(u).iter().copied().collect();
        total += max_surplus(&row, prices, cons.demands()[u]);
    }
    total
        + prices
            .as_slice()
            .iter()
            .zip(cons.capacities())
            .map(|(p, &c)| p * c as f64)
            .sum::<f64>()
}

/// Best surplus a user can reach at the given prices: the sum of the top
/// `demand` strictly positive margins `theta[i] - p[i]`. Capacities do not
/// constrain the user's ideal bundle.
pub fn max_surplus(theta_row: &[f64], prices: &PriceVector, demand: u32) -> f64 {
    let mut gains: Vec<f64> = theta_row
        .iter()
        .zip(prices.as_slice())
        .map(|(t, p)| t - p)
        .filter(|g| *g > 0.0)
        .collect();
    gains.sort_unstable_by(|a, b| b.total_cmp(a));
    gains.iter().take(demand as usize).sum()
}

/// Per-user and total instability of `(alloc, prices)` against `theta`:
/// each user's best reachable surplus minus the surplus they actually
/// obtained. Every term is nonnegative; zero total means the outcome is a
/// market equilibrium for `theta`.
pub fn verify_stability(
    theta: &DMatrix<f64>,
    alloc: &Allocation,
    prices: &PriceVector,
    cons: &ConstraintProfile,
    accept_reject: bool,
) -> Result<(Vec<f64>, f64)> {
    let (n, m) = theta.shape();
    if alloc.n_users() != n || alloc.n_items() != m || prices.len() != m || cons.n_users() != n {
        return Err(Error::Dim("stability check shapes disagree".into()));
    }
    let per_user = alloc.per_user();
    let mut out = Vec::with_capacity(n);
    let mut total = 0.0;
    for u in 0..n {
        let row: Vec<f64> = theta.row(u).iter().copied().collect();
        let best = max_surplus(&row, prices, cons.demands()[u]);
        let got = crate::market::surplus(&row, prices, &per_user[u], accept_reject);
        let gap = best - got;
        total += gap;
        out.push(gap);
    }
    Ok((out, total))
}
