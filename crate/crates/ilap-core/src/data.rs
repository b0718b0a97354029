//! Instance generation and data ingestion: synthetic low-rank markets,
//! per-round constraint sampling, ratings-file parsing, and rank-bounded
//! completion of partially observed tables.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::market::{ConstraintProfile, RewardMatrix};
use crate::rng::standard_normal;

/// Probability that a user is active in a dynamic round.
const DYNAMIC_DEMAND_PROB: f64 = 0.2;
/// Default factor ridge for table completion.
pub const COMPLETION_GAMMA: f64 = 1e-2;
/// Default completion sweep cap.
pub const COMPLETION_MAX_ITERS: usize = 200;
/// Default relative objective tolerance for completion.
pub const COMPLETION_TOL: f64 = 1e-6;

/// Draws a synthetic rank-`r` market: every user and item factor is drawn
/// uniformly from the `r`-dimensional unit ball (Gaussian direction times a
/// `U^{1/r}` radius), so all entries of the product lie in `[-1, 1]`.
pub fn synth_instance(n: usize, m: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<RewardMatrix> {
    if n == 0 || m == 0 || r == 0 {
        return Err(Error::Dim("instance dimensions must be positive".into()));
    }
    let mut draw_rows = |rows: usize| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, r);
        for row in 0..rows {
            let mut norm_sq = 0.0;
            for k in 0..r {
                let z = standard_normal(rng);
                out[(row, k)] = z;
                norm_sq += z * z;
            }
            let radius: f64 = rng.random::<f64>().powf(1.0 / r as f64);
            if norm_sq > 0.0 {
                let scale = radius / norm_sq.sqrt();
                for k in 0..r {
                    out[(row, k)] *= scale;
                }
            }
        }
        out
    };
    let f = draw_rows(n);
    let phi = draw_rows(m);
    RewardMatrix::from_factors(f, phi)
}

/// Samples the static constraint profile: every user demands one item and
/// each capacity is uniform on `{1, ..., ceil(N / M)}`. Drawn once per run
/// and held fixed afterwards.
pub fn static_constraints(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<ConstraintProfile> {
    if n == 0 || m == 0 {
        return Err(Error::Dim("constraint dimensions must be positive".into()));
    }
    let demands = vec![1u32; n];
    let c_max = n.div_ceil(m) as u32;
    let capacities = (0..m).map(|_| rng.random_range(1..=c_max)).collect();
    ConstraintProfile::new(demands, capacities)
}

/// Samples one dynamic round's constraints: each user is active with
/// probability 0.2 and demands one item; capacities are uniform on
/// `{1, ..., ceil(sum demands / M)}`. A round with no active users gets all
/// capacities zero, so only the empty allocation is feasible.
pub fn dynamic_constraints(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<ConstraintProfile> {
    if n == 0 || m == 0 {
        return Err(Error::Dim("constraint dimensions must be positive".into()));
    }
    let demands: Vec<u32> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < DYNAMIC_DEMAND_PROB {
                1
            } else {
                0
            }
        })
        .collect();
    let total: u32 = demands.iter().sum();
    let capacities = if total == 0 {
        vec![0u32; m]
    } else {
        let c_max = (total as usize).div_ceil(m) as u32;
        (0..m).map(|_| rng.random_range(1..=c_max)).collect()
    };
    ConstraintProfile::new(demands, capacities)
}

/// Sparse ratings table with dense indices assigned by first appearance.
#[derive(Clone, Debug)]
pub struct RatingsTable {
    /// Users seen, in first-appearance order.
    pub user_ids: Vec<String>,
    /// Items seen, in first-appearance order.
    pub item_ids: Vec<String>,
    /// `(user index, item index, rating)`, deduplicated with last write
    /// winning.
    pub entries: Vec<(usize, usize, f64)>,
    /// Number of `(user, item)` pairs that appeared more than once.
    pub duplicates: usize,
}

impl RatingsTable {
    /// Number of distinct users.
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    /// Number of distinct items.
    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Fraction of the dense matrix covered by ratings.
    pub fn fill_rate(&self) -> f64 {
        self.entries.len() as f64 / (self.n_users() * self.n_items()) as f64
    }
}

/// Parses `user,item,rating` lines. A first line whose first field is not
/// numeric is treated as a header and skipped; blank lines are ignored;
/// any other malformed line is an error carrying its 1-based line number.
pub fn parse_ratings(text: &str) -> Result<RatingsTable> {
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_index = std::collections::HashMap::new();
    let mut item_index = std::collections::HashMap::new();
    let mut cell: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut duplicates = 0usize;
    let mut saw_data = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if line_no == 1 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Ratings {
                line: line_no,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let rating: f64 = fields[2].parse().map_err(|_| Error::Ratings {
            line: line_no,
            msg: format!("rating {:?} is not a number", fields[2]),
        })?;
        if !rating.is_finite() {
            return Err(Error::Ratings {
                line: line_no,
                msg: format!("rating {rating} not finite"),
            });
        }
        let u = *user_index.entry(fields[0].to_string()).or_insert_with(|| {
            user_ids.push(fields[0].to_string());
            user_ids.len() - 1
        });
        let i = *item_index.entry(fields[1].to_string()).or_insert_with(|| {
            item_ids.push(fields[1].to_string());
            item_ids.len() - 1
        });
        match cell.get(&(u, i)) {
            Some(&slot) => {
                duplicates += 1;
                entries[slot].2 = rating;
            }
            None => {
                cell.insert((u, i), entries.len());
                entries.push((u, i, rating));
            }
        }
        saw_data = true;
    }
    if !saw_data {
        return Err(Error::Ratings {
            line: 0,
            msg: "no ratings found".into(),
        });
    }
    Ok(RatingsTable {
        user_ids,
        item_ids,
        entries,
        duplicates,
    })
}

/// Reads and parses a ratings file.
pub fn ingest_ratings(path: &Path) -> Result<RatingsTable> {
    let text = std::fs::read_to_string(path)?;
    parse_ratings(&text)
}

/// Completes a partially observed table with a rank-`r` factor model and
/// scales the result so the largest absolute entry is exactly 1.
///
/// Alternating least squares minimizes the squared error on observed cells
/// plus `gamma_c` times the squared factor norms; each block solve is exact
/// so the objective never increases. Factors start uniform in
/// `[-1/sqrt(r), 1/sqrt(r))` from `rng`.
pub fn complete_and_scale(
    table: &RatingsTable,
    r: usize,
    gamma_c: f64,
    tol: f64,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RewardMatrix> {
    if r == 0 {
        return Err(Error::Invalid("completion rank must be positive".into()));
    }
    if !(gamma_c > 0.0) || !gamma_c.is_finite() {
        return Err(Error::Invalid(format!(
            "completion ridge {gamma_c} must be positive"
        )));
    }
    if table.entries.is_empty() {
        return Err(Error::Invalid("cannot complete an empty table".into()));
    }
    let (n, m) = (table.n_users(), table.n_items());
    let mut by_user: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut by_item: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for &(u, i, v) in &table.entries {
        by_user[u].push((i, v));
        by_item[i].push((u, v));
    }

    let bound = 1.0 / (r as f64).sqrt();
    let mut f = DMatrix::from_fn(n, r, |_, _| rng.random_range(-bound..bound));
    let mut phi = DMatrix::from_fn(m, r, |_, _| rng.random_range(-bound..bound));

    let objective = |f: &DMatrix<f64>, phi: &DMatrix<f64>| -> f64 {
        let mut total = 0.0;
        for &(u, i, v) in &table.entries {
            let e = f.row(u).dot(&phi.row(i)) - v;
            total += e * e;
        }
        total + gamma_c * (f.norm_squared() + phi.norm_squared())
    };

    let mut last = objective(&f, &phi);
    for _ in 0..max_iters {
        for u in 0..n {
            ridge_row(&mut f, u, &by_user[u], &phi, gamma_c)?;
        }
        for i in 0..m {
            ridge_row(&mut phi, i, &by_item[i], &f, gamma_c)?;
        }
        let obj = objective(&f, &phi);
        let done = (last - obj).abs() <= tol * last.abs().max(1.0);
        last = obj;
        if done {
            break;
        }
    }

    let theta = &f * phi.transpose();
    let max_abs = theta.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max_abs > 0.0 {
        f /= max_abs;
    }
    RewardMatrix::from_factors(f, phi)
}

/// Exact ridge solve for one completion row against the fixed other block.
fn ridge_row(
    block: &mut DMatrix<f64>,
    row: usize,
    obs: &[(usize, f64)],
    basis: &DMatrix<f64>,
    gamma_c: f64,
) -> Result<()> {
    let r = basis.ncols();
    let mut w = DMatrix::from_diagonal_element(r, r, gamma_c);
    let mut rhs = nalgebra::DVector::zeros(r);
    for &(j, v) in obs {
        let b = basis.row(j);
        for a in 0..r {
            rhs[a] += v * b[a];
            for c in 0..r {
                w[(a, c)] += b[a] * b[c];
            }
        }
    }
    let solved = w
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| Error::Numerical("completion block not positive definite".into()))?;
    block.set_row(row, &solved.transpose());
    Ok(())
}

/// Writes a dense matrix as CSV text, one row per user, 9 significant
/// digits per entry.
pub fn matrix_to_csv(values: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for u in 0..values.nrows() {
        for i in 0..values.ncols() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.8e}", values[(u, i)]));
        }
        out.push('\n');
    }
    out
}

/// Parses a dense CSV matrix (one row per user). Rows must be non-empty
/// and of equal width.
pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Ratings {
                line: idx + 1,
                msg: format!("entry {:?} is not a number", field.trim()),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Ratings {
                    line: idx + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Ratings {
            line: 0,
            msg: "empty matrix".into(),
        });
    }
    let (n, m) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, m, |u, i| rows[u][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    #[test]
    fn synthetic_instances_stay_in_bounds() {
        for seed in 0..100u64 {
            let mut rng = stream(seed, Purpose::Instance, &[8, 6, 3]);
            let inst = synth_instance(8, 6, 3, &mut rng).unwrap();
            assert!(inst.max_abs() <= 1.0 + 1e-12);
            let (f, phi) = inst.factors().unwrap();
            for row in 0..8 {
                assert!(f.row(row).norm() <= 1.0 + 1e-12);
            }
            for row in 0..6 {
                assert!(phi.row(row).norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_instance_rank_is_bounded() {
        let mut rng = stream(5, Purpose::Instance, &[10, 8, 2]);
        let inst = synth_instance(10, 8, 2, &mut rng).unwrap();
        let svd = inst.values().clone().svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[2] <= 1e-10, "third singular value {}", sv[2]);
    }

    #[test]
    fn synthetic_instance_is_deterministic() {
        let mut a = stream(9, Purpose::Instance, &[4, 4, 2]);
        let mut b = stream(9, Purpose::Instance, &[4, 4, 2]);
        let x = synth_instance(4, 4, 2, &mut a).unwrap();
        let y = synth_instance(4, 4, 2, &mut b).unwrap();
        assert_eq!(x.values().as_slice(), y.values().as_slice());
        let mut c = stream(10, Purpose::Instance, &[4, 4, 2]);
        let z = synth_instance(4, 4, 2, &mut c).unwrap();
        assert_ne!(x.values().as_slice(), z.values().as_slice());
    }

    #[test]
    fn static_profile_shape() {
        let mut rng = stream(3, Purpose::Constraints, &[1]);
        let cons = static_constraints(250, 200, &mut rng).unwrap();
        assert!(cons.demands().iter().all(|&d| d == 1));
        assert!(cons.capacities().iter().all(|&c| (1..=2).contains(&c)));
    }

    #[test]
    fn dynamic_profile_statistics() {
        let n = 100;
        let mut active_total = 0u64;
        let rounds = 20_000u64;
        for t in 1..=rounds {
            let mut rng = stream(7, Purpose::Constraints, &[t]);
            let cons = dynamic_constraints(n, 10, &mut rng).unwrap();
            let total: u32 = cons.demands().iter().sum();
            active_total += total as u64;
            if total == 0 {
                assert!(cons.capacities().iter().all(|&c| c == 0));
            } else {
                let c_max = (total as usize).div_ceil(10) as u32;
                assert!(cons.capacities().iter().all(|&c| (1..=c_max).contains(&c)));
            }
        }
        let mean_active = active_total as f64 / rounds as f64;
        assert!(
            (mean_active - 20.0).abs() < 0.5,
            "mean active {mean_active}"
        );
    }

    #[test]
    fn ratings_parse_counts_and_fill() {
        let table = parse_ratings("1,1,4.0\n1,2,3.0\n2,1,5.0\n").unwrap();
        assert_eq!(table.n_users(), 2);
        assert_eq!(table.n_items(), 2);
        assert_eq!(table.entries.len(), 3);
        assert_abs_diff_eq!(table.fill_rate(), 0.75, epsilon = 1e-15);
        assert_eq!(table.duplicates, 0);
    }

    #[test]
    fn ratings_header_and_duplicates() {
        let table = parse_ratings("user,item,rating\n1,1,4.0\n1,1,2.0\n").unwrap();
        assert_eq!(table.duplicates, 1);
        assert_eq!(table.entries, vec![(0, 0, 2.0)]);
    }

    #[test]
    fn ratings_errors_carry_line_numbers() {
        let err = parse_ratings("1,1,4.0\n1,2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_ratings("1,1,4.0\n2,2,abc\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_ratings("").is_err());
        assert!(parse_ratings("user,item,rating\n").is_err());
    }

    #[test]
    fn completion_recovers_rank_one_table() {
        // Fully observed rank-1 table with a tiny ridge: reconstruction is
        // exact to 1e-4 before scaling.
        let truth = [[0.72, -0.48], [0.36, -0.24]];
        let mut text = String::new();
        for (u, row) in truth.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                text.push_str(&format!("{u},{i},{v}\n"));
            }
        }
        let table = parse_ratings(&text).unwrap();
        let mut rng = stream(2, Purpose::Completion, &[1]);
        let completed = complete_and_scale(&table, 1, 1e-6, 1e-12, 500, &mut rng).unwrap();
        let max_abs = 0.72;
        for u in 0..2 {
            for i in 0..2 {
                let expect = truth[u][i] / max_abs;
                assert!(
                    (completed.get(u, i) - expect).abs() <= 2e-4,
                    "entry ({u}, {i}): {} vs {expect}",
                    completed.get(u, i)
                );
            }
        }
        assert_abs_diff_eq!(completed.max_abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn completion_fills_missing_cell() {
        // Rank-1 table with one hidden cell: the completion infers it from
        // the cross-ratio structure.
        let text = "0,0,0.8\n0,1,0.4\n1,0,0.6\n";
        let table = parse_ratings(text).unwrap();
        let mut rng = stream(4, Purpose::Completion, &[1]);
        let completed = complete_and_scale(&table, 1, 1e-4, 1e-12, 500, &mut rng).unwrap();
        // Unscaled prediction for the missing cell is 0.6 * 0.4 / 0.8 = 0.3;
        // after dividing by the max entry 0.8 the ratios persist.
        let ratio = completed.get(1, 1) / completed.get(0, 0);
        assert!((ratio - 0.375).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 1.0, 0.0, -1.0]);
        let text = matrix_to_csv(&m);
        let back = matrix_from_csv(&text).unwrap();
        assert_eq!(back.shape(), (2, 3));
        for (a, b) in m.iter().zip(back.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert!(matrix_from_csv("1.0,2.0\n3.0\n").is_err());
        assert!(matrix_from_csv("").is_err());
    }
}
