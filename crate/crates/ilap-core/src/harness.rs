//! Experiment orchestration: plain-text configuration, the per-seed round
//! loop tying estimation, decision, pricing, feedback, and scoring
//! together, and CSV persistence.
//!
//! Reproducibility contract: every random draw comes from a stream keyed
//! by `(seed, purpose, tags)` and never by algorithm identity or
//! allocation order, so runs with the same seed see identical instances,
//! constraint draws, and per-pair reward noise regardless of which policy
//! is making decisions. Comparisons across policies are therefore paired.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::baselines::{
    capped_ucb_decide, certainty_equivalent_decide, clairvoyant_decide, rankers_decide, MeanState,
};
use crate::data::{dynamic_constraints, matrix_from_csv, static_constraints, synth_instance};
use crate::error::{Error, Result};
use crate::estimator::{
    beta_star, confidence_width, rho_star, ConfidenceSpec, EstimatorState, Mode, NormKind,
};
use crate::market::{acceptance_mask, sample_rewards, NoiseStream, PriceVector, RewardMatrix};
use crate::metrics::{oracle_welfare, score_round};
use crate::policy::{decide, nu_default};
use crate::rng::{stream, Purpose};

/// Decision policy selected by a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    /// Main algorithm, contextual confidence sets (known item features).
    IlapCx,
    /// Main algorithm, low-rank confidence sets.
    IlapLr,
    /// Certainty-equivalent baseline: solve and price at the estimate.
    Rwe,
    /// Independent per-user rankers baseline.
    Ir,
    /// Capacity-aware per-pair confidence-bound baseline.
    Cucb,
    /// Clairvoyant reference that solves at the truth.
    Oracle,
}

impl Algorithm {
    /// Configuration token for this policy.
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::IlapCx => "ilap-cx",
            Algorithm::IlapLr => "ilap-lr",
            Algorithm::Rwe => "rwe",
            Algorithm::Ir => "ir",
            Algorithm::Cucb => "cucb",
            Algorithm::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ilap-cx" => Ok(Algorithm::IlapCx),
            "ilap-lr" => Ok(Algorithm::IlapLr),
            "rwe" => Ok(Algorithm::Rwe),
            "ir" => Ok(Algorithm::Ir),
            "cucb" => Ok(Algorithm::Cucb),
            "oracle" => Ok(Algorithm::Oracle),
            other => Err(format!(
                "unknown algorithm {other:?} (expected ilap-cx, ilap-lr, rwe, ir, cucb, or oracle)"
            )),
        }
    }
}

/// Whether constraints are drawn once or fresh every round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    /// Unit demands and capacities drawn once per run.
    Static,
    /// Bernoulli demands and matching capacities redrawn every round.
    Dynamic,
}

/// Ground-truth source for a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// Random low-rank instance per seed.
    Synthetic,
    /// Dense CSV matrix (a completed ratings table), fixed across seeds.
    Matrix(PathBuf),
}

/// Parsed experiment configuration. Optional fields default to the values
/// documented on [`SimConfig::parse`]; `alpha`, `nu`, and `g` stay `None`
/// for the automatic settings.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub algorithm: Algorithm,
    pub setting: Setting,
    pub accept_reject: bool,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub t_max: usize,
    pub eta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: Option<f64>,
    pub nu: Option<f64>,
    pub g: Option<f64>,
    pub seeds: Vec<u64>,
    pub data: DataSource,
    /// Collect per-round [`RoundDiag`] entries. Off by default and not a
    /// configuration key; callers that audit decisions set it directly.
    pub diagnostics: bool,
}

impl SimConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// skipped; unknown keys are errors carrying the line number; a
    /// repeated key keeps its last value.
    ///
    /// Keys: `algorithm` (required), `setting` (static), `accept_reject`
    /// (false), `N` (20), `M` (10), `R` (3), `T` (200), `eta` (0.2),
    /// `gamma` (1), `delta` (0.05), `alpha` (auto: `1/(N M T)`), `nu`
    /// (auto: size-normalized fourth root of the final radius), `G` (auto:
    /// `sqrt(N M)` times the largest absolute truth entry), `seeds` (0),
    /// `data` (synthetic, or a path to a dense CSV matrix whose shape then
    /// overrides `N` and `M`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut algorithm = None;
        let mut cfg = SimConfig {
            algorithm: Algorithm::IlapCx,
            setting: Setting::Static,
            accept_reject: false,
            n: 20,
            m: 10,
            r: 3,
            t_max: 200,
            eta: 0.2,
            gamma: 1.0,
            delta: 0.05,
            alpha: None,
            nu: None,
            g: None,
            seeds: vec![0],
            data: DataSource::Synthetic,
            diagnostics: false,
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("expected `key = value`, found {line:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |msg: String| Error::Config { line: line_no, msg };
            match key {
                "algorithm" => {
                    algorithm = Some(value.parse::<Algorithm>().map_err(bad)?);
                }
                "setting" => {
                    cfg.setting = match value {
                        "static" => Setting::Static,
                        "dynamic" => Setting::Dynamic,
                        other => {
                            return Err(bad(format!(
                                "unknown setting {other:?} (expected static or dynamic)"
                            )))
                        }
                    };
                }
                "accept_reject" => {
                    cfg.accept_reject = value
                        .parse::<bool>()
                        .map_err(|_| bad(format!("expected true or false, found {value:?}")))?;
                }
                "N" => cfg.n = parse_num(value, line_no)?,
                "M" => cfg.m = parse_num(value, line_no)?,
                "R" => cfg.r = parse_num(value, line_no)?,
                "T" => cfg.t_max = parse_num(value, line_no)?,
                "eta" => cfg.eta = parse_num(value, line_no)?,
                "gamma" => cfg.gamma = parse_num(value, line_no)?,
                "delta" => cfg.delta = parse_num(value, line_no)?,
                "alpha" => cfg.alpha = parse_auto(value, line_no)?,
                "nu" => cfg.nu = parse_auto(value, line_no)?,
                "G" => cfg.g = parse_auto(value, line_no)?,
                "seeds" => {
                    let mut seeds = Vec::new();
                    for part in value.split(',') {
                        seeds.push(parse_num::<u64>(part.trim(), line_no)?);
                    }
                    cfg.seeds = seeds;
                }
                "data" => {
                    cfg.data = if value == "synthetic" {
                        DataSource::Synthetic
                    } else {
                        DataSource::Matrix(PathBuf::from(value))
                    };
                }
                other => {
                    return Err(bad(format!("unknown key {other:?}")));
                }
            }
        }
        cfg.algorithm = algorithm.ok_or(Error::Config {
            line: 0,
            msg: "missing required key `algorithm`".into(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a configuration file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Checks the documented parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.r == 0 {
            return Err(Error::Invalid("N, M, R must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Invalid("T must be at least 1".into()));
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(Error::Invalid(format!(
                "gamma {} must be at least 1 (the regret analysis requires it)",
                self.gamma
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Invalid(format!(
                "delta {} outside (0, 1)",
                self.delta
            )));
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Invalid(format!("alpha {alpha} outside (0, 1)")));
            }
        }
        if let Some(nu) = self.nu {
            if !(nu >= 0.0) || !nu.is_finite() {
                return Err(Error::Invalid(format!("nu {nu} must be nonnegative")));
            }
        }
        if let Some(g) = self.g {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::Invalid(format!("G {g} must be positive")));
            }
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Invalid(format!(
                "eta {} must be nonnegative",
                self.eta
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("seeds must be non-empty".into()));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize) -> Result<T> {
    value.parse::<T>().map_err(|_| Error::Config {
        line,
        msg: format!("could not parse number {value:?}"),
    })
}

fn parse_auto(value: &str, line: usize) -> Result<Option<f64>> {
    if value == "auto" {
        return Ok(None);
    }
    parse_num::<f64>(value, line).map(Some)
}

/// One scored simulation round, in CSV column order.
#[derive(Clone, Debug)]
pub struct RoundRow {
    pub t: usize,
    pub welfare: f64,
    pub optimal_welfare: f64,
    pub regret: f64,
    pub cum_regret: f64,
    pub instability: f64,
    pub cum_instability: f64,
    pub rejections: usize,
    pub width: f64,
}

/// Per-round decision audit, populated only when
/// [`SimConfig::diagnostics`] is set.
#[derive(Clone, Debug)]
pub struct RoundDiag {
    /// Confidence-set membership of the truth this round; `None` for
    /// policies without a confidence set.
    pub contains_truth: Option<bool>,
    /// Optimistic objective of the chosen allocation; `None` for
    /// policies that do not optimize one.
    pub optimistic_objective: Option<f64>,
}

/// One seed's full trajectory.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub rows: Vec<RoundRow>,
    /// Whether the truth stayed inside the confidence set at every round;
    /// `None` for policies that do not maintain one.
    pub coverage_held: Option<bool>,
    /// One entry per round when diagnostics were requested, else empty.
    pub diags: Vec<RoundDiag>,
}

impl RunResult {
    /// Cumulative regret at the final round.
    pub fn final_cum_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Cumulative instability at the final round.
    pub fn final_cum_instability(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_instability)
    }
}

/// All runs of one configuration, plus the resolved market shape (which
/// may come from a data file rather than the config).
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub config: SimConfig,
    pub n: usize,
    pub m: usize,
    pub runs: Vec<RunResult>,
}

/// Ground truth and derived quantities shared by every round of one seed.
struct Environment {
    truth: RewardMatrix,
    features: Option<DMatrix<f64>>,
    alpha: f64,
    g: f64,
}

/// Loads or draws the truth for one seed and resolves the automatic
/// parameters that depend on it.
fn build_environment(cfg: &SimConfig, seed: u64) -> Result<Environment> {
    let truth = match &cfg.data {
        DataSource::Synthetic => {
            let mut rng = stream(
                seed,
                Purpose::Instance,
                &[cfg.n as u64, cfg.m as u64, cfg.r as u64],
            );
            synth_instance(cfg.n, cfg.m, cfg.r, &mut rng)?
        }
        DataSource::Matrix(path) => {
            let text = std::fs::read_to_string(path)?;
            RewardMatrix::new(matrix_from_csv(&text)?)?
        }
    };
    let (n, m) = (truth.n_users(), truth.n_items());
    let features = match cfg.algorithm {
        Algorithm::IlapCx | Algorithm::Rwe => Some(match truth.factors() {
            Some((_, phi)) => phi.clone(),
            None => derive_features(truth.values(), cfg.r),
        }),
        _ => None,
    };
    let alpha = cfg
        .alpha
        .unwrap_or(1.0 / (n as f64 * m as f64 * cfg.t_max as f64));
    let g = cfg
        .g
        .unwrap_or(((n * m) as f64).sqrt() * truth.max_abs())
        .max(f64::MIN_POSITIVE);
    Ok(Environment {
        truth,
        features,
        alpha,
        g,
    })
}

/// Rank-`r` item features of a dense matrix via truncated SVD, scaled so
/// the largest row norm is at most one. Exact for matrices of rank at most
/// `r` (completed tables are such by construction).
fn derive_features(values: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let m = values.ncols();
    let svd = values.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let k = r.min(v_t.nrows());
    let mut phi = DMatrix::zeros(m, r);
    for j in 0..k {
        let scale = svd.singular_values[j].max(0.0).sqrt();
        for i in 0..m {
            phi[(i, j)] = v_t[(j, i)] * scale;
        }
    }
    let max_row = (0..m).map(|i| phi.row(i).norm()).fold(0.0f64, f64::max);
    if max_row > 1.0 {
        phi /= max_row;
    }
    phi
}

/// Per-policy mutable state for one run.
enum PolicyState {
    Estimator(Box<EstimatorState>),
    Means(MeanState),
    None,
}

/// Runs one seed of a configuration and returns its trajectory.
pub fn run_seed(cfg: &SimConfig, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let env = build_environment(cfg, seed)?;
    let (n, m) = (env.truth.n_users(), env.truth.n_items());
    let mode = match cfg.algorithm {
        Algorithm::IlapLr => Mode::LowRank,
        _ => Mode::Contextual,
    };
    let radius_at = |t: usize| -> Result<f64> {
        match mode {
            Mode::Contextual => rho_star(
                t, cfg.delta, env.alpha, cfg.gamma, n, m, cfg.r, cfg.eta, env.g,
            ),
            Mode::LowRank => beta_star(
                t, cfg.delta, env.alpha, cfg.gamma, n, m, cfg.r, cfg.eta, env.g,
            ),
        }
    };
    let nu = match cfg.algorithm {
        Algorithm::IlapCx | Algorithm::IlapLr => match cfg.nu {
            Some(v) => v,
            None => nu_default(mode, radius_at(cfg.t_max)?, n, m)?,
        },
        _ => 0.0,
    };

    let mut policy = match cfg.algorithm {
        Algorithm::IlapCx | Algorithm::Rwe => {
            let features = env
                .features
                .clone()
                .ok_or_else(|| Error::Invalid("contextual policy requires item features".into()))?;
            PolicyState::Estimator(Box::new(EstimatorState::new_contextual(
                n, features, cfg.gamma, env.g,
            )?))
        }
        Algorithm::IlapLr => PolicyState::Estimator(Box::new(EstimatorState::new_lowrank(
            n, m, cfg.r, cfg.gamma, env.g,
        )?)),
        Algorithm::Ir | Algorithm::Cucb => PolicyState::Means(MeanState::new(n, m)?),
        Algorithm::Oracle => PolicyState::None,
    };

    let static_cons = match cfg.setting {
        Setting::Static => {
            let mut rng = stream(seed, Purpose::Constraints, &[1]);
            let cons = static_constraints(n, m, &mut rng)?;
            let opt = oracle_welfare(&env.truth, &cons)?;
            Some((cons, opt))
        }
        Setting::Dynamic => None,
    };

    let mut rows = Vec::with_capacity(cfg.t_max);
    let mut diags = Vec::new();
    let mut coverage_held = true;
    let mut counts = DMatrix::<f64>::zeros(n, m);
    let mut cum_regret = 0.0;
    let mut cum_instability = 0.0;

    for t in 1..=cfg.t_max {
        let (cons, optimal) = match &static_cons {
            Some((cons, opt)) => (cons.clone(), *opt),
            None => {
                let mut rng = stream(seed, Purpose::Constraints, &[t as u64]);
                let cons = dynamic_constraints(n, m, &mut rng)?;
                let opt = oracle_welfare(&env.truth, &cons)?;
                (cons, opt)
            }
        };

        // Decide. Estimator-based policies refit from scratch first; the
        // coverage flag is evaluated on the freshly fitted set.
        let mut diag = RoundDiag {
            contains_truth: None,
            optimistic_objective: None,
        };
        let (allocation, prices, eliminated) = match (&mut policy, cfg.algorithm) {
            (PolicyState::Estimator(est), Algorithm::IlapCx | Algorithm::IlapLr) => {
                match mode {
                    Mode::Contextual => {
                        est.fit(None)?;
                    }
                    Mode::LowRank => {
                        let mut rng = stream(seed, Purpose::AlsInit, &[t as u64]);
                        est.fit(Some(&mut rng))?;
                    }
                }
                let radius = radius_at(t)?;
                let norm = match mode {
                    Mode::Contextual => NormKind::L2Inf,
                    Mode::LowRank => NormKind::L2,
                };
                let spec = ConfidenceSpec::new(cfg.delta, env.alpha, radius, norm)?;
                let contains = est.contains_truth(&env.truth, &spec)?;
                coverage_held &= contains;
                let decision = decide(est, &cons, radius, nu)?;
                diag.contains_truth = Some(contains);
                diag.optimistic_objective = Some(decision.objective);
                (decision.allocation, decision.posted_prices, Vec::new())
            }
            (PolicyState::Estimator(est), Algorithm::Rwe) => {
                est.fit(None)?;
                let (alloc, prices) = certainty_equivalent_decide(est, &cons)?;
                (alloc, prices, Vec::new())
            }
            (PolicyState::Means(means), Algorithm::Ir) => {
                let round = rankers_decide(means, &cons, t, seed)?;
                let m_items = round.allocation.n_items();
                (
                    round.allocation,
                    PriceVector::zeros(m_items),
                    round.eliminated,
                )
            }
            (PolicyState::Means(means), Algorithm::Cucb) => {
                let (alloc, prices) = capped_ucb_decide(means, &cons, t)?;
                (alloc, prices, Vec::new())
            }
            (PolicyState::None, Algorithm::Oracle) => {
                let (alloc, prices) = clairvoyant_decide(&env.truth, &cons)?;
                (alloc, prices, Vec::new())
            }
            _ => unreachable!("policy state matches algorithm by construction"),
        };

        let width = confidence_width(allocation.pairs(), &counts, cfg.gamma)?;
        let score = score_round(
            &env.truth,
            &cons,
            &allocation,
            &prices,
            cfg.accept_reject,
            optimal,
        )?;

        // Observe feedback: noisy rewards for every assigned pair, with
        // acceptance computed against the truth at the offered prices.
        let noise = NoiseStream::new(seed, t);
        let mut feedback = sample_rewards(&allocation, &env.truth, cfg.eta, &noise)?;
        if cfg.accept_reject {
            feedback.accepted = acceptance_mask(&env.truth, &allocation, &prices)?;
        }

        match &mut policy {
            PolicyState::Estimator(est) => est.record_round(&allocation, &feedback)?,
            PolicyState::Means(means) => {
                let pairs: Vec<(usize, usize)> =
                    feedback.rewards.iter().map(|&(u, i, _)| (u, i)).collect();
                let rewards: Vec<f64> = feedback.rewards.iter().map(|&(_, _, r)| r).collect();
                means.record(&pairs, &rewards)?;
                if !eliminated.is_empty() {
                    let zeros = vec![0.0; eliminated.len()];
                    means.record(&eliminated, &zeros)?;
                }
            }
            PolicyState::None => {}
        }
        for &(u, i) in allocation.pairs() {
            counts[(u, i)] += 1.0;
        }

        if cfg.diagnostics {
            diags.push(diag);
        }
        cum_regret += score.regret;
        cum_instability += score.instability;
        rows.push(RoundRow {
            t,
            welfare: score.welfare,
            optimal_welfare: score.optimal_welfare,
            regret: score.regret,
            cum_regret,
            instability: score.instability,
            cum_instability,
            rejections: score.rejections,
            width,
        });
    }

    let coverage = match cfg.algorithm {
        Algorithm::IlapCx | Algorithm::IlapLr => Some(coverage_held),
        _ => None,
    };
    Ok(RunResult {
        seed,
        rows,
        coverage_held: coverage,
        diags,
    })
}

/// Runs every seed of a configuration, in order.
pub fn run_sim(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        runs.push(run_seed(cfg, seed)?);
    }
    let (n, m) = match &cfg.data {
        DataSource::Synthetic => (cfg.n, cfg.m),
        DataSource::Matrix(path) => {
            let text = std::fs::read_to_string(path)?;
            let values = matrix_from_csv(&text)?;
            (values.nrows(), values.ncols())
        }
    };
    Ok(SimOutput {
        config: cfg.clone(),
        n,
        m,
        runs,
    })
}

/// Formats a real with 9 significant digits.
fn fmt_real(v: f64) -> String {
    format!("{v:.8e}")
}

/// Renders one run as CSV text with the standard column order.
pub fn per_seed_csv(rows: &[RoundRow]) -> String {
    let mut out = String::from(
        "t,welfare,optimal_welfare,regret,cum_regret,instability,cum_instability,rejections,width\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            fmt_real(r.welfare),
            fmt_real(r.optimal_welfare),
            fmt_real(r.regret),
            fmt_real(r.cum_regret),
            fmt_real(r.instability),
            fmt_real(r.cum_instability),
            r.rejections,
            fmt_real(r.width),
        );
    }
    out
}

/// Renders the across-seed aggregate (per-round mean and population
/// standard deviation of regret and instability) as CSV text.
pub fn aggregate_csv(runs: &[RunResult]) -> Result<String> {
    let regrets: Vec<Vec<f64>> = runs
        .iter()
        .map(|run| run.rows.iter().map(|r| r.regret).collect())
        .collect();
    let instabilities: Vec<Vec<f64>> = runs
        .iter()
        .map(|run| run.rows.iter().map(|r| r.instability).collect())
        .collect();
    let (r_mean, r_std) = crate::metrics::aggregate_mean_std(&regrets)?;
    let (i_mean, i_std) = crate::metrics::aggregate_mean_std(&instabilities)?;
    let mut out = String::from("t,regret_mean,regret_std,instability_mean,instability_std\n");
    for t in 0..r_mean.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t + 1,
            fmt_real(r_mean[t]),
            fmt_real(r_std[t]),
            fmt_real(i_mean[t]),
            fmt_real(i_std[t]),
        );
    }
    Ok(out)
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub output: SimOutput,
    pub per_seed_paths: Vec<PathBuf>,
    pub aggregate_path: PathBuf,
}

/// Runs a configuration and writes one `seed_<seed>.csv` per seed plus
/// `aggregate.csv` into `out_dir` (created if missing).
pub fn run_experiment(cfg: &SimConfig, out_dir: &Path) -> Result<ExperimentReport> {
    let output = run_sim(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut per_seed_paths = Vec::new();
    for run in &output.runs {
        let path = out_dir.join(format!("seed_{}.csv", run.seed));
        std::fs::write(&path, per_seed_csv(&run.rows))?;
        per_seed_paths.push(path);
    }
    let aggregate_path = out_dir.join("aggregate.csv");
    std::fs::write(&aggregate_path, aggregate_csv(&output.runs)?)?;
    Ok(ExperimentReport {
        output,
        per_seed_paths,
        aggregate_path,
    })
}

/// Summary line of one configuration in a comparison.
#[derive(Clone, Debug)]
pub struct CompareEntry {
    pub algorithm: Algorithm,
    pub cum_regret_mean: f64,
    pub cum_regret_std: f64,
    pub cum_instability_mean: f64,
    pub cum_instability_std: f64,
}

/// Runs several configurations over a shared environment and summarizes
/// final cumulative regret and instability per algorithm.
///
/// The configurations must agree on everything that defines the
/// environment (market shape, horizon, setting, seeds, data source, noise
/// level, and the accept/reject switch) so the comparison is paired.
pub fn run_compare(cfgs: &[SimConfig]) -> Result<(Vec<SimOutput>, Vec<CompareEntry>)> {
    let Some(first) = cfgs.first() else {
        return Err(Error::Compare("no configurations to compare".into()));
    };
    for cfg in cfgs {
        let shared = cfg.n == first.n
            && cfg.m == first.m
            && cfg.r == first.r
            && cfg.t_max == first.t_max
            && cfg.setting == first.setting
            && cfg.seeds == first.seeds
            && cfg.data == first.data
            && cfg.eta == first.eta
            && cfg.accept_reject == first.accept_reject;
        if !shared {
            return Err(Error::Compare(format!(
                "configuration for {} does not share the environment of {}",
                cfg.algorithm.as_str(),
                first.algorithm.as_str()
            )));
        }
    }
    let mut outputs = Vec::with_capacity(cfgs.len());
    let mut entries = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let output = run_sim(cfg)?;
        let finals_r: Vec<f64> = output
            .runs
            .iter()
            .map(RunResult::final_cum_regret)
            .collect();
        let finals_i: Vec<f64> = output
            .runs
            .iter()
            .map(RunResult::final_cum_instability)
            .collect();
        let (rm, rs) = mean_std(&finals_r);
        let (im, is) = mean_std(&finals_i);
        entries.push(CompareEntry {
            algorithm: cfg.algorithm,
            cum_regret_mean: rm,
            cum_regret_std: rs,
            cum_instability_mean: im,
            cum_instability_std: is,
        });
        outputs.push(output);
    }
    Ok((outputs, entries))
}

/// Mean and population standard deviation of a slice.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Renders comparison summary lines as CSV text.
pub fn compare_csv(entries: &[CompareEntry]) -> String {
    let mut out = String::from(
        "algorithm,cum_regret_mean,cum_regret_std,cum_instability_mean,cum_instability_std\n",
    );
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.algorithm.as_str(),
            fmt_real(e.cum_regret_mean),
            fmt_real(e.cum_regret_std),
            fmt_real(e.cum_instability_mean),
            fmt_real(e.cum_instability_std),
        );
    }
    out
}

/// Runs a comparison and writes per-config CSVs plus `summary.csv` into
/// `out_dir`.
pub fn write_comparison(cfgs: &[SimConfig], out_dir: &Path) -> Result<Vec<CompareEntry>> {
    let (outputs, entries) = run_compare(cfgs)?;
    std::fs::create_dir_all(out_dir)?;
    for (idx, output) in outputs.iter().enumerate() {
        let tag = format!("{}_{}", idx, output.config.algorithm.as_str());
        for run in &output.runs {
            let path = out_dir.join(format!("{tag}_seed_{}.csv", run.seed));
            std::fs::write(&path, per_seed_csv(&run.rows))?;
        }
        let path = out_dir.join(format!("{tag}_aggregate.csv"));
        std::fs::write(&path, aggregate_csv(&output.runs)?)?;
    }
    std::fs::write(out_dir.join("summary.csv"), compare_csv(&entries))?;
    Ok(entries)
}
