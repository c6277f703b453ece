//! Fixed-point search for a mean field equilibrium over threshold strategies.
//!
//! For a candidate `(x, V_sw)` the pipeline computes the arrival rate that
//! matches the agent density, the stationary law, the stopping-problem value
//! functions, the implied switching payoff and the set of approximately
//! optimal thresholds. `dist` is zero exactly when the candidate reproduces
//! itself. Multi-start Nelder-Mead minimizes `dist`.

use serde::{Deserialize, Serialize};

use crate::ctmc::{dominating_tail_mass, solve_kappa, StationarySolution};
use crate::error::{Error, Result};
use crate::model::{Model, Payoffs, Strategy, ThresholdVector};
use crate::nelder_mead::{nelder_mead_minimize, NelderMeadOptions};
use crate::par;
use crate::stopping::{
    optimal_threshold_set, switch_value, value_bounds, StoppingProblem, ThresholdIntervals, ValueBounds,
    ValueFunctions, DEFAULT_MAX_SWEEPS,
};

/// Lower end of the switching-payoff range when the series bound underflows.
pub const DEGENERATE_LOWER_BOUND: f64 = 1e-12;

/// Start grids larger than this are thinned by a fixed stride before screening.
pub const MAX_SCREENED_STARTS: usize = 200_000;

/// How the stopping problem is solved inside the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueMethod {
    /// Exact fixed point by policy iteration.
    #[default]
    Policy,
    /// Jacobi value iteration stopped at `eps0` from the limit.
    ValueIteration,
}

/// Coordinates the Nelder-Mead runs move in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// `x` only; `V_sw` is solved for consistency at every point.
    #[default]
    Profiled,
    /// `(x, V_sw)` jointly.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Truncation level `L`.
    pub levels: usize,
    /// Start-grid resolution.
    pub k: usize,
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_restarts: usize,
    pub max_refinements: usize,
    /// Indifference band of the threshold set; `2 * eps0` when unset.
    pub indifference: Option<f64>,
    pub method: ValueMethod,
    pub search: SearchMode,
    pub nm_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            levels: 200,
            k: 20,
            eps0: 1e-4,
            eps1: 1e-6,
            eps2: 1e-8,
            max_restarts: 64,
            max_refinements: 3,
            indifference: None,
            method: ValueMethod::Policy,
            search: SearchMode::Profiled,
            nm_max_iterations: 2000,
        }
    }
}

impl SolverConfig {
    pub fn indifference_eps(&self) -> f64 {
        self.indifference.unwrap_or(2.0 * self.eps0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::TruncationTooSmall(self.levels));
        }
        let positive = [("k", self.k as f64), ("max_restarts", self.max_restarts as f64)];
        for (name, v) in positive {
            if v < 1.0 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be >= 1".into(),
                });
            }
        }
        for (name, v) in [("eps0", self.eps0), ("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be > 0, got {v}"),
                });
            }
        }
        if let Some(e) = self.indifference {
            if !(e >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "indifference",
                    reason: format!("must be >= 0, got {e}"),
                });
            }
        }
        Ok(())
    }
}

/// Arrival rate, stationary law and stopping problem for a fixed threshold vector.
pub struct Prepared {
    pub x: Vec<f64>,
    pub strategy: Strategy,
    pub stationary: StationarySolution,
    problem: StoppingProblem,
}

impl Prepared {
    pub fn kappa(&self) -> f64 {
        self.stationary.kappa
    }

    pub fn problem(&self) -> &StoppingProblem {
        &self.problem
    }
}

/// Everything computed by one pipeline pass at `(x, V_sw)`.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub x: Vec<f64>,
    pub v_sw: f64,
    pub kappa: f64,
    pub stationary: StationarySolution,
    pub values: ValueFunctions,
    /// Implied switching payoff.
    pub switch_value: f64,
    pub intervals: ThresholdIntervals,
    /// `|V_sw - implied switching payoff|`.
    pub switch_gap: f64,
    /// Distance of `x` to the threshold set.
    pub threshold_gap: f64,
    pub dist: f64,
}

/// The distance map for one model and solver configuration.
pub struct Pipeline {
    model: Model,
    config: SolverConfig,
    payoffs: Payoffs,
    bounds: ValueBounds,
}

impl Pipeline {
    pub fn new(model: &Model, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let payoffs = model.sharing.tabulate(config.levels)?;
        let bounds = match value_bounds(&model.params, &model.resource, &model.sharing, config.levels) {
            Ok(b) => b,
            Err(Error::DegenerateLowerBound) => {
                log::warn!("lower switching-payoff bound underflows; using {DEGENERATE_LOWER_BOUND}");
                ValueBounds {
                    lower: DEGENERATE_LOWER_BOUND,
                    upper: model.sharing.sup_norm(config.levels) / (1.0 - model.params.gamma),
                }
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            model: model.clone(),
            config: config.clone(),
            payoffs,
            bounds,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Search range `[V_lower, V_upper]` for the switching payoff.
    pub fn bounds(&self) -> ValueBounds {
        self.bounds
    }

    pub fn levels(&self) -> usize {
        self.config.levels
    }

    pub fn prepare(&self, x: &[f64]) -> Result<Prepared> {
        let m = &self.model;
        if x.len() != m.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "threshold vector has {} entries, model has {} resource states",
                x.len(),
                m.n_states()
            )));
        }
        let levels = self.config.levels;
        let strategy = Strategy::from_threshold(&ThresholdVector::new(x.to_vec()), levels)?;
        let (kappa, stationary) = solve_kappa(&m.params, &m.resource, &strategy, levels, self.config.eps1)?;
        let problem = StoppingProblem::new(&m.params, &m.resource, &self.payoffs, &strategy, kappa)?;
        Ok(Prepared {
            x: x.to_vec(),
            strategy,
            stationary,
            problem,
        })
    }

    pub fn values(&self, prep: &Prepared, v_sw: f64) -> Result<ValueFunctions> {
        match self.config.method {
            ValueMethod::Policy => prep.problem.policy_iterate(v_sw),
            ValueMethod::ValueIteration => prep.problem.value_iterate(v_sw, self.config.eps0, DEFAULT_MAX_SWEEPS),
        }
    }

    pub fn evaluate_prepared(&self, prep: &Prepared, v_sw: f64) -> Result<Evaluation> {
        let values = self.values(prep, v_sw)?;
        let implied = switch_value(&prep.stationary, &values);
        let intervals = optimal_threshold_set(&values, v_sw, self.config.indifference_eps())?;
        let switch_gap = (v_sw - implied).abs();
        let threshold_gap = intervals.distance(&prep.x);
        Ok(Evaluation {
            x: prep.x.clone(),
            v_sw,
            kappa: prep.kappa(),
            stationary: prep.stationary.clone(),
            values,
            switch_value: implied,
            intervals,
            switch_gap,
            threshold_gap,
            dist: switch_gap + threshold_gap,
        })
    }

    pub fn evaluate(&self, x: &[f64], v_sw: f64) -> Result<Evaluation> {
        self.evaluate_prepared(&self.prepare(x)?, v_sw)
    }

    /// `dist(x, V_sw)`.
    pub fn distance(&self, x: &[f64], v_sw: f64) -> Result<f64> {
        Ok(self.evaluate(x, v_sw)?.dist)
    }

    /// The unique `V_sw` with `V_sw = implied switching payoff` at a fixed `x`.
    ///
    /// `V - implied(V)` is increasing with slope at least `1 - gamma`, so a
    /// bracketed regula falsi (Illinois variant) on `[V_lower, V_upper]` converges.
    pub fn consistent_switch_payoff(&self, prep: &Prepared) -> Result<f64> {
        let h = |v: f64| -> Result<f64> { Ok(v - switch_value(&prep.stationary, &self.values(prep, v)?)) };
        let (mut lo, mut hi) = (self.bounds.lower, self.bounds.upper);
        let (mut h_lo, mut h_hi) = (h(lo)?, h(hi)?);
        if h_lo >= 0.0 {
            return Ok(lo);
        }
        if h_hi <= 0.0 {
            return Ok(hi);
        }
        let mut side = 0i8;
        for _ in 0..MAX_ROOT_STEPS {
            let mut v = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
            if !(v > lo && v < hi) {
                v = 0.5 * (lo + hi);
            }
            let hv = h(v)?;
            if hv == 0.0 || hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
                return Ok(v);
            }
            if hv < 0.0 {
                lo = v;
                h_lo = hv;
                if side == -1 {
                    h_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = v;
                h_hi = hv;
                if side == 1 {
                    h_lo *= 0.5;
                }
                side = 1;
            }
            if hv.abs() <= ROOT_TOL * v.abs().max(1.0) {
                return Ok(v);
            }
        }
        Ok(if h_lo.abs() < h_hi.abs() { lo } else { hi })
    }

    /// Evaluation at `x` with `V_sw` set to its consistent value.
    pub fn evaluate_profiled(&self, x: &[f64]) -> Result<Evaluation> {
        let prep = self.prepare(x)?;
        let v = self.consistent_switch_payoff(&prep)?;
        self.evaluate_prepared(&prep, v)
    }

    fn v_from_unit(&self, u: f64) -> f64 {
        self.bounds.lower + u * (self.bounds.upper - self.bounds.lower)
    }
}

const MAX_ROOT_STEPS: usize = 200;
const ROOT_TOL: f64 = 1e-15;

/// Objective wrapper that reuses the arrival-rate solve while `x` is unchanged.
struct CachedObjective<'a> {
    pipeline: &'a Pipeline,
    cache: Option<(Vec<f64>, Option<Prepared>)>,
}

impl<'a> CachedObjective<'a> {
    fn new(pipeline: &'a Pipeline) -> Self {
        Self { pipeline, cache: None }
    }

    fn prepared(&mut self, x: &[f64]) -> Option<&Prepared> {
        let hit = matches!(&self.cache, Some((cx, _)) if cx.as_slice() == x);
        if !hit {
            let prep = self.pipeline.prepare(x).ok();
            self.cache = Some((x.to_vec(), prep));
        }
        self.cache.as_ref().and_then(|(_, p)| p.as_ref())
    }

    fn dist(&mut self, x: &[f64], v_sw: f64) -> f64 {
        let pipeline = self.pipeline;
        self.prepared(x)
            .and_then(|prep| pipeline.evaluate_prepared(prep, v_sw).ok())
            .map_or(f64::INFINITY, |e| e.dist)
    }

    /// `(dist, V_sw)` with `V_sw` profiled out.
    fn profiled(&mut self, x: &[f64]) -> (f64, f64) {
        let pipeline = self.pipeline;
        let Some(prep) = self.prepared(x) else {
            return (f64::INFINITY, f64::NAN);
        };
        let Ok(v) = pipeline.consistent_switch_payoff(prep) else {
            return (f64::INFINITY, f64::NAN);
        };
        (pipeline.evaluate_prepared(prep, v).map_or(f64::INFINITY, |e| e.dist), v)
    }
}

/// An approximate equilibrium together with everything computed at it.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumResult {
    pub x_star: ThresholdVector,
    pub v_sw_star: f64,
    pub kappa_star: f64,
    pub pi_star: StationarySolution,
    pub value_functions: ValueFunctions,
    pub intervals: ThresholdIntervals,
    pub switch_value: f64,
    pub dist_value: f64,
    pub restarts_used: usize,
    /// Grid resolution of the last search round.
    pub k_used: usize,
    pub levels: usize,
    pub accepted: bool,
}

impl EquilibriumResult {
    fn from_evaluation(e: Evaluation, eps2: f64, restarts_used: usize, k_used: usize, levels: usize) -> Self {
        Self {
            x_star: ThresholdVector::new(e.x),
            v_sw_star: e.v_sw,
            kappa_star: e.kappa,
            pi_star: e.stationary,
            value_functions: e.values,
            intervals: e.intervals,
            switch_value: e.switch_value,
            dist_value: e.dist,
            restarts_used,
            k_used,
            levels,
            accepted: e.dist <= eps2,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolveError {
    #[error("no equilibrium accepted: best dist = {:e} after {} restarts", .0.dist_value, .0.restarts_used)]
    NotFound(Box<EquilibriumResult>),
    #[error(transparent)]
    Model(#[from] Error),
}

/// Rounds to 12 significant digits, matching the serialized form.
pub fn snap12(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

struct RunOutcome {
    start_index: usize,
    x: Vec<f64>,
    v_sw: f64,
    value: f64,
}

/// Points of `{0, 1/k, ..., 1}^dim` in lexicographic order (last coordinate
/// fastest), thinned by a fixed stride above `MAX_SCREENED_STARTS`.
fn unit_grid(dim: usize, k: usize) -> Vec<Vec<f64>> {
    let axis_len = k + 1;
    let total = axis_len.pow(dim as u32);
    let stride = total.div_ceil(MAX_SCREENED_STARTS).max(1);
    (0..total)
        .step_by(stride)
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for c in (0..dim).rev() {
                p[c] = (idx % axis_len) as f64 / k as f64;
                idx /= axis_len;
            }
            p
        })
        .collect()
}

fn nm_options(pipeline: &Pipeline, k: usize, with_v: bool) -> (NelderMeadOptions, Vec<(f64, f64)>) {
    let dim_x = pipeline.model.n_states();
    let top = (pipeline.levels() - 1) as f64;
    let mut step = vec![top / k as f64; dim_x];
    let mut bounds = vec![(0.0, top); dim_x];
    if with_v {
        step.push(1.0 / k as f64);
        bounds.push((0.0, 1.0));
    }
    let mut opts = NelderMeadOptions::with_step(step);
    opts.max_iterations = pipeline.config.nm_max_iterations;
    (opts, bounds)
}

fn keep_best(mut screened: Vec<(usize, f64)>, keep: usize, k: usize, total: usize) -> Vec<(usize, f64)> {
    screened.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    screened.truncate(keep);
    log::debug!(
        "k = {k}: screened {total} starts, best initial dist {:e}",
        screened.first().map_or(f64::NAN, |s| s.1)
    );
    screened
}

/// Joint search over `(x, V_sw)` with `V_sw` rescaled to `[0, 1]`.
fn joint_round(pipeline: &Pipeline, k: usize) -> Vec<RunOutcome> {
    let dim_x = pipeline.model.n_states();
    let top = (pipeline.levels() - 1) as f64;
    let starts: Vec<Vec<f64>> = unit_grid(dim_x + 1, k)
        .into_iter()
        .map(|mut p| {
            p[..dim_x].iter_mut().for_each(|c| *c *= top);
            p
        })
        .collect();
    let split = |p: &[f64]| (p[..dim_x].to_vec(), pipeline.v_from_unit(p[dim_x]));

    // Consecutive starts share x, so the arrival-rate solve is reused along the V_sw axis.
    let per_x = k + 1;
    let blocks: Vec<usize> = (0..starts.len().div_ceil(per_x)).collect();
    let screened: Vec<Vec<(usize, f64)>> = par::map(&blocks, |&b| {
        let mut obj = CachedObjective::new(pipeline);
        (b * per_x..((b + 1) * per_x).min(starts.len()))
            .map(|i| {
                let (x, v) = split(&starts[i]);
                (i, obj.dist(&x, v))
            })
            .collect()
    });
    let screened = keep_best(
        screened.into_iter().flatten().collect(),
        pipeline.config.max_restarts,
        k,
        starts.len(),
    );

    let (opts, bounds) = nm_options(pipeline, k, true);
    par::map(&screened, |&(i, _)| {
        let mut obj = CachedObjective::new(pipeline);
        let res = nelder_mead_minimize(
            |p| {
                let (x, v) = split(p);
                obj.dist(&x, v)
            },
            &starts[i],
            &bounds,
            &opts,
        );
        let (x, v_sw) = split(&res.point);
        RunOutcome {
            start_index: i,
            x,
            v_sw,
            value: res.value,
        }
    })
}

/// Search over `x` with `V_sw` set to its consistent value at every point.
fn profiled_round(pipeline: &Pipeline, k: usize) -> Vec<RunOutcome> {
    let top = (pipeline.levels() - 1) as f64;
    let starts: Vec<Vec<f64>> = unit_grid(pipeline.model.n_states(), k)
        .into_iter()
        .map(|p| p.into_iter().map(|c| c * top).collect())
        .collect();
    let screened: Vec<(usize, f64)> = par::map_range(starts.len(), |i| {
        (i, CachedObjective::new(pipeline).profiled(&starts[i]).0)
    });
    let screened = keep_best(screened, pipeline.config.max_restarts, k, starts.len());

    let (opts, bounds) = nm_options(pipeline, k, false);
    par::map(&screened, |&(i, _)| {
        let mut obj = CachedObjective::new(pipeline);
        let res = nelder_mead_minimize(|x| obj.profiled(x).0, &starts[i], &bounds, &opts);
        let (value, v_sw) = obj.profiled(&res.point);
        RunOutcome {
            start_index: i,
            x: res.point,
            v_sw,
            value,
        }
    })
}

/// Best run: the lexicographically smallest `(x, V_sw)` among accepted runs,
/// otherwise the smallest objective with ties broken by start index.
fn pick_best(runs: &[RunOutcome], eps2: f64) -> Option<&RunOutcome> {
    let key = |r: &RunOutcome| {
        let mut p = r.x.clone();
        p.push(r.v_sw);
        p
    };
    let accepted = runs
        .iter()
        .filter(|r| r.value <= eps2)
        .min_by(|a, b| lex_cmp(&key(a), &key(b)).then(a.start_index.cmp(&b.start_index)));
    accepted.or_else(|| {
        runs.iter()
            .filter(|r| r.value.is_finite())
            .min_by(|a, b| a.value.total_cmp(&b.value).then(a.start_index.cmp(&b.start_index)))
    })
}

/// Tighter occupancy tolerance used while polishing, so that the arrival
/// rate is a smooth function of `x` at the scale of the indifference roots.
fn polish_eps1(config: &SolverConfig, beta: f64) -> f64 {
    (config.eps1 * 1e-3).max(1e-10 * beta).min(config.eps1)
}

/// Moves an accepted point onto the exact indifference conditions.
///
/// A fractional `x_z` with `floor(x_z) = n >= 1` mixes at `(z, n)`, which is
/// optimal only if `V_st(z, n) = V_sw`. Inside the accepted set these hold
/// only up to the indifference band; here the mixing coordinates are moved
/// within their unit cells until `sum |V_st(z, n_z) - V_sw| = 0`, with
/// `V_sw` consistent at every point. Coordinates that end on a cell edge are
/// pure thresholds and get frozen before the next pass. The returned point
/// is re-evaluated by the caller under the normal tolerances.
fn polish(pipeline: &Pipeline, start: &Evaluation) -> Option<Vec<f64>> {
    let top = (pipeline.levels() - 1) as f64;
    let mut x = start.x.clone();
    let mixing = |x: &[f64]| -> Vec<usize> {
        (0..x.len())
            .filter(|&z| x[z] >= 1.0 && x[z] < top && x[z].fract() > 0.0)
            .collect()
    };
    let mut active = mixing(&x);
    if active.is_empty() {
        return None;
    }
    for _ in 0..x.len() {
        let cells: Vec<f64> = active.iter().map(|&z| x[z].floor()).collect();
        let bounds: Vec<(f64, f64)> = cells.iter().map(|&n| (n, n + 1.0)).collect();
        let start_m: Vec<f64> = active.iter().map(|&z| x[z]).collect();
        let mut objective = |xm: &[f64]| -> f64 {
            let mut full = x.clone();
            for (&z, &v) in active.iter().zip(xm) {
                full[z] = v;
            }
            let Ok(prep) = pipeline.prepare(&full) else {
                return f64::INFINITY;
            };
            let Ok(v) = pipeline.consistent_switch_payoff(&prep) else {
                return f64::INFINITY;
            };
            let Ok(vf) = pipeline.values(&prep, v) else {
                return f64::INFINITY;
            };
            active
                .iter()
                .zip(&cells)
                .map(|(&z, &n)| (vf.stay_value(z, n as usize) - v).abs())
                .sum()
        };
        let mut opts = NelderMeadOptions::with_step(vec![0.05; active.len()]);
        opts.x_tol = 1e-11;
        opts.f_tol = 0.0;
        opts.max_iterations = 1000;
        let res = nelder_mead_minimize(&mut objective, &start_m, &bounds, &opts);
        for (&z, &v) in active.iter().zip(&res.point) {
            x[z] = v;
        }
        let still: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&z| x[z] > x[z].floor() && x[z] < x[z].floor() + 1.0)
            .collect();
        if still.len() == active.len() || still.is_empty() {
            break;
        }
        active = still;
    }
    Some(x.iter().map(|&v| snap12(v)).collect())
}

/// Multi-start Nelder-Mead search for an approximate equilibrium.
///
/// Returns `SolveError::NotFound` carrying the best point when no round
/// reaches `dist <= eps2`.
pub fn solve_mfe(model: &Model, config: &SolverConfig) -> std::result::Result<EquilibriumResult, SolveError> {
    if !model.sharing.is_decreasing() {
        return Err(Error::InvalidSharing("equilibrium search needs a decreasing sharing function".into()).into());
    }
    let pipeline = Pipeline::new(model, config)?;
    let tail = dominating_tail_mass(&model.params, config.levels);
    if tail > 1e-8 {
        log::warn!(
            "truncation L = {} leaves dominating tail mass {tail:e}; occupancy near the top level is clipped",
            config.levels
        );
    }
    let eps2 = config.eps2;
    let mut best: Option<Evaluation> = None;
    let mut restarts = 0;
    let mut k = config.k;
    let mut k_used = k;
    for round in 0..=config.max_refinements {
        k_used = k;
        let runs = match config.search {
            SearchMode::Profiled => profiled_round(&pipeline, k),
            SearchMode::Joint => joint_round(&pipeline, k),
        };
        restarts += runs.len();
        if let Some(run) = pick_best(&runs, eps2) {
            let x: Vec<f64> = run.x.iter().map(|&xi| snap12(xi)).collect();
            let v = snap12(run.v_sw);
            match pipeline.evaluate(&x, v) {
                Ok(e) => {
                    log::info!("round {round} (k = {k}): best dist {:e}", e.dist);
                    let better = best.as_ref().is_none_or(|b| e.dist < b.dist);
                    let done = e.dist <= eps2;
                    if better {
                        best = Some(e);
                    }
                    if done {
                        break;
                    }
                }
                Err(err) => log::warn!("round {round}: re-evaluation at best point failed: {err}"),
            }
        }
        k *= 2;
    }
    let Some(best) = best else {
        return Err(Error::NonConvergence {
            what: "equilibrium search (no finite objective value)",
            iterations: restarts,
            last_delta: f64::INFINITY,
        }
        .into());
    };
    let mut best = best;
    if best.dist <= eps2 {
        let tight = SolverConfig {
            eps1: polish_eps1(config, model.params.beta),
            ..config.clone()
        };
        let polished = Pipeline::new(model, &tight)
            .ok()
            .and_then(|p| polish(&p, &best))
            .and_then(|x| {
                let prep = pipeline.prepare(&x).ok()?;
                let v = snap12(pipeline.consistent_switch_payoff(&prep).ok()?);
                pipeline.evaluate_prepared(&prep, v).ok()
            });
        match polished {
            Some(e) if e.dist <= eps2 => {
                log::info!("polished to x = {:?}, dist {:e}", e.x, e.dist);
                best = e;
            }
            Some(e) => log::warn!("polished point rejected (dist {:e}); keeping the search result", e.dist),
            None => {}
        }
    }
    let result = EquilibriumResult::from_evaluation(best, eps2, restarts, k_used, config.levels);
    if result.accepted {
        Ok(result)
    } else {
        Err(SolveError::NotFound(Box::new(result)))
    }
}

/// Residuals of a candidate equilibrium recomputed from scratch.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub dist: f64,
    pub switch_gap: f64,
    pub threshold_gap: f64,
    /// `|phi - beta|`.
    pub occupancy_error: f64,
    pub bellman_residual: f64,
    /// Largest increase of `V_st` in `n`; non-positive means monotone.
    pub max_increase: f64,
    pub monotone: bool,
    /// Dominating Poisson tail mass above `L - 1`.
    pub tail_mass: f64,
    /// Stationary mass on the top level.
    pub boundary_mass: f64,
    pub kappa: f64,
    pub accepted: bool,
}

pub fn validate_point(model: &Model, config: &SolverConfig, x: &[f64], v_sw: f64, eps2: f64) -> Result<ValidationReport> {
    let pipeline = Pipeline::new(model, config)?;
    let prep = pipeline.prepare(x)?;
    let vf = pipeline.values(&prep, v_sw)?;
    let bellman_residual = vf.bellman_residual(prep.problem.payoffs(), model.params.gamma, v_sw);
    let max_increase = vf.max_increase().0;
    let switch_gap = (v_sw - switch_value(&prep.stationary, &vf)).abs();
    let threshold_gap = match optimal_threshold_set(&vf, v_sw, config.indifference_eps()) {
        Ok(iv) => iv.distance(x),
        Err(Error::MonotonicityViolation { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let dist = switch_gap + threshold_gap;
    Ok(ValidationReport {
        dist,
        switch_gap,
        threshold_gap,
        occupancy_error: (prep.stationary.phi - model.params.beta).abs(),
        bellman_residual,
        max_increase,
        monotone: max_increase <= crate::stopping::MONOTONICITY_TOL,
        tail_mass: dominating_tail_mass(&model.params, config.levels),
        boundary_mass: prep.stationary.boundary_mass(),
        kappa: prep.kappa(),
        accepted: dist <= eps2,
    })
}

/// Recomputes the full pipeline at the result's `(x*, V_sw*)`.
pub fn validate_equilibrium(
    model: &Model,
    config: &SolverConfig,
    result: &EquilibriumResult,
    eps2: f64,
) -> Result<ValidationReport> {
    validate_point(model, config, &result.x_star.0, result.v_sw_star, eps2)
}
