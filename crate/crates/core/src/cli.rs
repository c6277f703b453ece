//! Command-line front end.
//!
//! ```text
//! nomad-mfe <solve|sweep|casestudy|simulate|validate> --config run.toml
//!           [--out PATH] [--format csv|json] [--seed N] [--log-level LEVEL]
//! ```
//!
//! Exit codes: 0 success, 2 configuration error, 3 equilibrium not accepted
//! (the best point is still written), 4 any other failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::equilibrium::{
    snap12, solve_mfe, validate_point, EquilibriumResult, SearchMode, SolveError, SolverConfig, ValueMethod,
};
use crate::error::Error;
use crate::model::{Model, ModelParams, ResourceProcess, SharingFunction, Strategy, ThresholdVector};
use crate::simulate::{
    coupled_dominance_replications, simulate_finite_system, simulate_location, FiniteSystemConfig, Horizon,
};
use crate::welfare::{row_from_result, run_case_study, sweep, CaseStudy, SweepParameter, SweepRow};
use crate::par;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_FOUND: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Default cap on the case-study truncation when `solver.L` is not given.
pub const DEFAULT_CASESTUDY_MAX_LEVELS: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "nomad-mfe", version, about = "Mean field equilibria for nomadic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one equilibrium.
    Solve(CommonArgs),
    /// Solve once per value of a swept parameter.
    Sweep(CommonArgs),
    /// Platform commission case study.
    Casestudy(CommonArgs),
    /// Monte-Carlo checks at an equilibrium (solved unless `simulate.x` is given).
    Simulate(CommonArgs),
    /// Recompute the residuals of a written solve result.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "warn")]
    log_level: String,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// JSON written by `solve`.
    #[arg(long)]
    result: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Configuration error naming the offending key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }

    fn from_model(section: &str, e: Error) -> Self {
        match &e {
            Error::InvalidParameter { name, .. } => Self::new(format!("{section}.{name}"), e.to_string()),
            _ => Self::new(section, e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    lambda: Option<f64>,
    gamma: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResource {
    states: Option<Vec<f64>>,
    rates: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSharing {
    kind: Option<String>,
    alpha: Option<f64>,
    level_payoffs: Option<Vec<f64>>,
    table: Option<Vec<Vec<f64>>>,
    decreasing: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(rename = "L")]
    levels: Option<usize>,
    k: Option<usize>,
    eps0: Option<f64>,
    eps1: Option<f64>,
    eps2: Option<f64>,
    max_restarts: Option<usize>,
    max_refinements: Option<usize>,
    seed: Option<u64>,
    indifference: Option<f64>,
    method: Option<ValueMethod>,
    search: Option<SearchMode>,
    nm_max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: Option<SweepParameter>,
    values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCaseStudy {
    f: Option<Vec<f64>>,
    commissions: Option<Vec<Vec<f64>>>,
    n_locations: Option<usize>,
    #[serde(rename = "max_L")]
    max_levels: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    horizon: Option<f64>,
    replications: Option<usize>,
    #[serde(rename = "K")]
    locations: Option<usize>,
    warmup: Option<f64>,
    events: Option<u64>,
    x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<RawModel>,
    resource: Option<RawResource>,
    sharing: Option<RawSharing>,
    solver: Option<RawSolver>,
    sweep: Option<RawSweep>,
    casestudy: Option<RawCaseStudy>,
    simulate: Option<RawSimulate>,
}

/// Sweep block of a run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Simulate block of a run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    /// Simulated time of the coupled runs and of the finite system.
    pub horizon: f64,
    /// Number of coupled runs.
    pub replications: usize,
    pub locations: usize,
    pub warmup: f64,
    /// Events of the single-location run.
    pub events: u64,
    /// Thresholds to simulate instead of a freshly solved equilibrium.
    pub x: Option<Vec<f64>>,
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: Model,
    pub solver: SolverConfig,
    pub seed: u64,
    pub sweep: Option<SweepConfig>,
    pub casestudy: Option<CaseStudy>,
    /// Truncation for the case study; `solver.L` when given, otherwise
    /// `ceil(4 beta / (1 - gamma))` capped at `casestudy.max_L`.
    pub casestudy_levels: usize,
    pub simulate: SimulateConfig,
}

fn require<T: Clone>(v: &Option<T>, key: &str) -> Result<T, ConfigError> {
    v.clone().ok_or_else(|| ConfigError::new(key, "missing required key"))
}

fn parse_sharing(raw: &RawSharing, fallback_payoffs: Option<&[f64]>) -> Result<SharingFunction, ConfigError> {
    let kind = raw.kind.clone().unwrap_or_else(|| "power".into());
    match kind.as_str() {
        "power" => {
            let alpha = require(&raw.alpha, "sharing.alpha")?;
            let payoffs = match (&raw.level_payoffs, fallback_payoffs) {
                (Some(p), _) => p.clone(),
                (None, Some(f)) => f.to_vec(),
                (None, None) => return Err(ConfigError::new("sharing.level_payoffs", "missing required key")),
            };
            SharingFunction::power(payoffs, alpha).map_err(|e| ConfigError::new("sharing", e.to_string()))
        }
        "table" => {
            let table = require(&raw.table, "sharing.table")?;
            SharingFunction::table(table, raw.decreasing.unwrap_or(false))
                .map_err(|e| ConfigError::new("sharing.table", e.to_string()))
        }
        other => Err(ConfigError::new(
            "sharing.kind",
            format!("expected \"power\" or \"table\", got {other:?}"),
        )),
    }
}

/// Parses and validates a configuration file's contents.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        ConfigError::new(key_of_toml_error(&msg, text, e.span()), msg)
    })?;

    let rm = require(&raw.model, "model")?;
    let params = ModelParams::new(
        require(&rm.lambda, "model.lambda")?,
        require(&rm.gamma, "model.gamma")?,
        require(&rm.beta, "model.beta")?,
    )
    .map_err(|e| ConfigError::from_model("model", e))?;

    let rr = require(&raw.resource, "resource")?;
    let states = require(&rr.states, "resource.states")?;
    let rates = require(&rr.rates, "resource.rates")?;
    let resource = ResourceProcess::new(states, rates).map_err(|e| ConfigError::new("resource.rates", e.to_string()))?;

    let casestudy = match &raw.casestudy {
        Some(c) => {
            let alpha = raw
                .sharing
                .as_ref()
                .and_then(|s| s.alpha)
                .ok_or_else(|| ConfigError::new("sharing.alpha", "missing required key"))?;
            Some(CaseStudy {
                f: require(&c.f, "casestudy.f")?,
                alpha,
                commissions: require(&c.commissions, "casestudy.commissions")?,
                n_locations: require(&c.n_locations, "casestudy.n_locations")?,
            })
        }
        None => None,
    };

    let rs = require(&raw.sharing, "sharing")?;
    let sharing = parse_sharing(&rs, casestudy.as_ref().map(|c| c.f.as_slice()))?;
    let model = Model::new(params, resource, sharing).map_err(|e| ConfigError::new("sharing", e.to_string()))?;

    let sv = raw.solver.clone().unwrap_or_default();
    let d = SolverConfig::default();
    let solver = SolverConfig {
        levels: sv.levels.unwrap_or(d.levels),
        k: sv.k.unwrap_or(d.k),
        eps0: sv.eps0.unwrap_or(d.eps0),
        eps1: sv.eps1.unwrap_or(d.eps1),
        eps2: sv.eps2.unwrap_or(d.eps2),
        max_restarts: sv.max_restarts.unwrap_or(d.max_restarts),
        max_refinements: sv.max_refinements.unwrap_or(d.max_refinements),
        indifference: sv.indifference.or(d.indifference),
        method: sv.method.unwrap_or(d.method),
        search: sv.search.unwrap_or(d.search),
        nm_max_iterations: sv.nm_max_iterations.unwrap_or(d.nm_max_iterations),
    };
    solver.validate().map_err(|e| match &e {
        Error::TruncationTooSmall(_) => ConfigError::new("solver.L", e.to_string()),
        _ => ConfigError::from_model("solver", e),
    })?;

    let sweep = match &raw.sweep {
        Some(s) => Some(SweepConfig {
            parameter: require(&s.parameter, "sweep.parameter")?,
            values: require(&s.values, "sweep.values")?,
        }),
        None => None,
    };

    let sim = raw.simulate.clone().unwrap_or_default();
    let simulate = SimulateConfig {
        horizon: sim.horizon.unwrap_or(2000.0),
        replications: sim.replications.unwrap_or(200),
        locations: sim.locations.unwrap_or(50),
        warmup: sim.warmup.unwrap_or(200.0),
        events: sim.events.unwrap_or(1_000_000),
        x: sim.x,
    };
    if !(simulate.horizon > 0.0) {
        return Err(ConfigError::new("simulate.horizon", "must be > 0"));
    }
    if simulate.locations < 2 {
        return Err(ConfigError::new("simulate.K", "need at least 2 locations"));
    }
    if !(simulate.warmup >= 0.0) {
        return Err(ConfigError::new("simulate.warmup", "must be >= 0"));
    }

    let casestudy_levels = match (sv.levels, &raw.casestudy) {
        (Some(l), _) => l,
        (None, Some(c)) => {
            let p = &model.params;
            let want = (4.0 * p.beta / (1.0 - p.gamma)).ceil();
            let cap = c.max_levels.unwrap_or(DEFAULT_CASESTUDY_MAX_LEVELS);
            if cap < 2 {
                return Err(ConfigError::new("casestudy.max_L", "must be >= 2"));
            }
            (want as usize).clamp(2, cap)
        }
        (None, None) => solver.levels,
    };

    Ok(RunConfig {
        model,
        solver,
        seed: sv.seed.unwrap_or(0),
        sweep,
        casestudy,
        casestudy_levels,
        simulate,
    })
}

/// Best-effort dotted key for a TOML decoding error: the innermost table
/// header above the error position, plus the field named in the message.
fn key_of_toml_error(msg: &str, text: &str, span: Option<std::ops::Range<usize>>) -> String {
    let field = msg.split('`').nth(1).unwrap_or("").to_string();
    let upto = span.map(|s| s.start.min(text.len())).unwrap_or(0);
    let table = text[..upto]
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            (l.starts_with('[') && l.ends_with(']')).then(|| l.trim_matches(['[', ']']).trim().to_string())
        })
        .unwrap_or_default();
    match (table.is_empty(), field.is_empty()) {
        (true, _) => field,
        (false, true) => table,
        (false, false) => format!("{table}.{field}"),
    }
}

/// Formats with 12 significant digits in positional notation.
pub fn fmt12(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0.00000000000".into();
    }
    let sci = format!("{v:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if exp < 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    } else {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            out.push_str(&digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    }
    out
}

/// Rounds every non-integer number in a JSON tree to 12 significant digits.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(snap12(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut value = serde_json::to_value(v).expect("serializable output");
    round_json(&mut value);
    let mut s = serde_json::to_string_pretty(&value).expect("serializable output");
    s.push('\n');
    s
}

/// Header of the sweep and solve CSV outputs for `m` resource states.
pub fn sweep_csv_header(m: usize) -> String {
    let mut h = String::from("param,value");
    for z in 0..m {
        let _ = write!(h, ",x_{z}");
    }
    h.push_str(",V_sw,kappa,W_L,W_A,dist,accepted\n");
    h
}

pub fn sweep_csv(rows: &[SweepRow], m: usize) -> String {
    let mut s = sweep_csv_header(m);
    for r in rows {
        s.push_str(&r.param);
        s.push(',');
        s.push_str(&fmt12(r.value));
        for x in &r.x {
            s.push(',');
            s.push_str(&fmt12(*x));
        }
        for v in [r.v_sw, r.kappa, r.w_l, r.w_a, r.dist] {
            s.push(',');
            s.push_str(&fmt12(v));
        }
        let _ = writeln!(s, ",{}", r.accepted);
    }
    s
}

/// JSON document written by `solve` and read back by `validate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOutput {
    pub x_star: Vec<f64>,
    #[serde(rename = "V_sw_star")]
    pub v_sw_star: f64,
    pub kappa_star: f64,
    pub dist: f64,
    pub accepted: bool,
    #[serde(rename = "W_L")]
    pub w_l: f64,
    #[serde(rename = "W_A")]
    pub w_a: f64,
    /// Optimal threshold intervals `[a_z, b_z]` at the solution.
    pub intervals: Vec<(f64, f64)>,
    pub switch_value: f64,
    pub restarts_used: usize,
    pub k_used: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub boundary_mass: f64,
}

impl SolveOutput {
    fn new(model: &Model, r: &EquilibriumResult) -> Result<Self, Error> {
        let row = row_from_result("none", f64::NAN, model, r, 0.0)?;
        Ok(Self {
            x_star: r.x_star.0.clone(),
            v_sw_star: r.v_sw_star,
            kappa_star: r.kappa_star,
            dist: r.dist_value,
            accepted: r.accepted,
            w_l: row.w_l,
            w_a: row.w_a,
            intervals: r.intervals.intervals.clone(),
            switch_value: r.switch_value,
            restarts_used: r.restarts_used,
            k_used: r.k_used,
            levels: r.levels,
            boundary_mass: r.pi_star.boundary_mass(),
        })
    }
}

/// Failure of a subcommand, mapped onto an exit code.
#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

struct Output {
    body: String,
    accepted: bool,
}

fn load(path: &Path) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

fn solve_any(model: &Model, solver: &SolverConfig) -> Result<EquilibriumResult, RunError> {
    match solve_mfe(model, solver) {
        Ok(r) => Ok(r),
        Err(SolveError::NotFound(r)) => {
            log::error!("no equilibrium accepted: best dist {:e}", r.dist_value);
            Ok(*r)
        }
        Err(SolveError::Model(e)) => Err(e.into()),
    }
}

fn cmd_solve(cfg: &RunConfig, format: Format) -> Result<Output, RunError> {
    let r = solve_any(&cfg.model, &cfg.solver)?;
    let out = SolveOutput::new(&cfg.model, &r)?;
    let body = match format {
        Format::Json => to_json(&out),
        Format::Csv => {
            let mut row = row_from_result("none", f64::NAN, &cfg.model, &r, 0.0)?;
            row.value = f64::NAN;
            sweep_csv(&[row], cfg.model.n_states())
        }
    };
    Ok(Output {
        body,
        accepted: r.accepted,
    })
}

fn cmd_sweep(cfg: &RunConfig, format: Format) -> Result<Output, RunError> {
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::new("sweep", "missing required table"))?;
    let rows = sweep(&cfg.model, &cfg.solver, sw.parameter, &sw.values);
    for r in &rows {
        if let Some(e) = &r.error {
            log::error!("{} = {}: {e}", r.param, r.value);
        }
    }
    let accepted = rows.iter().all(|r| r.accepted);
    let body = match format {
        Format::Json => to_json(&rows),
        Format::Csv => sweep_csv(&rows, cfg.model.n_states()),
    };
    Ok(Output { body, accepted })
}

fn cmd_casestudy(cfg: &RunConfig, format: Format) -> Result<Output, RunError> {
    let study = cfg
        .casestudy
        .as_ref()
        .ok_or_else(|| ConfigError::new("casestudy", "missing required table"))?;
    let solver = SolverConfig {
        levels: cfg.casestudy_levels,
        ..cfg.solver.clone()
    };
    log::info!("case study truncation L = {}", solver.levels);
    let out = run_case_study(&cfg.model, study, &solver)?;
    let accepted = out.iter().all(|o| o.accepted);
    let body = match format {
        Format::Json => to_json(&out),
        Format::Csv => {
            let m = cfg.model.n_states();
            let mut s = String::new();
            for z in 0..m {
                let _ = write!(s, "c_{z},");
            }
            s.push_str("DriRev,PlatRev,AggRev,dDriRev,dPlatRev,dAggRev");
            for z in 0..m {
                let _ = write!(s, ",x_{z}");
            }
            s.push_str(",V_sw,kappa,dist,accepted\n");
            for o in &out {
                for c in &o.row.commission {
                    s.push_str(&fmt12(*c));
                    s.push(',');
                }
                let r = &o.row;
                let opt = |v: Option<f64>| v.map(fmt12).unwrap_or_default();
                let _ = write!(
                    s,
                    "{},{},{},{},{},{}",
                    fmt12(r.dri_rev),
                    fmt12(r.plat_rev),
                    fmt12(r.agg_rev),
                    opt(r.delta_dri),
                    opt(r.delta_plat),
                    opt(r.delta_agg)
                );
                for x in &o.x {
                    s.push(',');
                    s.push_str(&fmt12(*x));
                }
                let _ = writeln!(s, ",{},{},{},{}", fmt12(o.v_sw), fmt12(o.kappa), fmt12(o.dist), o.accepted);
            }
            s
        }
    };
    Ok(Output { body, accepted })
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    x: Vec<f64>,
    #[serde(rename = "V_sw")]
    v_sw: f64,
    kappa: f64,
    dist: f64,
    location_events: u64,
    location_tv: f64,
    location_mean_occupancy: f64,
    location_occupancy_half_width: f64,
    stationary_mean_occupancy: f64,
    coupled_runs: usize,
    coupled_sandwich_held: usize,
    finite_locations: usize,
    finite_agents: usize,
    finite_tv: f64,
    finite_mean_occupancy: f64,
    finite_occupancy_half_width: f64,
    finite_payoff_mean: f64,
    finite_payoff_half_width: f64,
    finite_payoff_samples: usize,
    finite_conservation_violations: u64,
}

fn cmd_simulate(cfg: &RunConfig, format: Format) -> Result<Output, RunError> {
    let model = &cfg.model;
    let sim = &cfg.simulate;
    let pipeline = crate::equilibrium::Pipeline::new(model, &cfg.solver)?;
    let (eval, accepted) = match &sim.x {
        Some(x) => {
            if x.len() != model.n_states() {
                return Err(ConfigError::new("simulate.x", "one threshold per resource state").into());
            }
            // An explicit strategy need not be an equilibrium.
            (pipeline.evaluate_profiled(x)?, true)
        }
        None => {
            let r = solve_any(model, &cfg.solver)?;
            let ok = r.accepted;
            (pipeline.evaluate_profiled(&r.x_star.0)?, ok)
        }
    };
    let strategy = Strategy::from_threshold(&ThresholdVector::new(eval.x.clone()), cfg.solver.levels)?;
    let loc = simulate_location(
        &model.params,
        &model.resource,
        &strategy,
        eval.kappa,
        Horizon::Events(sim.events),
        cfg.seed,
        None,
    )?;
    let reps = coupled_dominance_replications(
        &model.params,
        &model.resource,
        &strategy,
        eval.kappa,
        Horizon::Time(sim.horizon),
        cfg.seed,
        sim.replications,
    );
    let fin = simulate_finite_system(
        &FiniteSystemConfig {
            locations: sim.locations,
            horizon: sim.horizon,
            warmup: sim.warmup,
            seed: cfg.seed,
        },
        &model.params,
        &model.resource,
        &model.sharing,
        &strategy,
    )?;
    let out = SimulateOutput {
        x: eval.x.clone(),
        v_sw: eval.v_sw,
        kappa: eval.kappa,
        dist: eval.dist,
        location_events: loc.events,
        location_tv: loc.distribution.total_variation(&eval.stationary),
        location_mean_occupancy: loc.mean_occupancy,
        location_occupancy_half_width: loc.occupancy_half_width,
        stationary_mean_occupancy: eval.stationary.phi,
        coupled_runs: reps.len(),
        coupled_sandwich_held: reps.iter().filter(|r| r.sandwich_held()).count(),
        finite_locations: fin.locations,
        finite_agents: fin.agents,
        finite_tv: fin.distribution.total_variation(&eval.stationary),
        finite_mean_occupancy: fin.mean_occupancy,
        finite_occupancy_half_width: fin.occupancy_half_width,
        finite_payoff_mean: fin.payoff_mean,
        finite_payoff_half_width: fin.payoff_half_width,
        finite_payoff_samples: fin.payoff_samples.len(),
        finite_conservation_violations: fin.conservation_violations,
    };
    let body = match format {
        Format::Json => to_json(&out),
        Format::Csv => {
            let value = serde_json::to_value(&out).expect("serializable output");
            let mut s = String::from("metric,value\n");
            if let Value::Object(map) = value {
                for (k, v) in map {
                    let cell = match v {
                        Value::Number(n) if n.is_f64() => fmt12(n.as_f64().unwrap_or(f64::NAN)),
                        Value::Array(a) => a
                            .iter()
                            .map(|x| fmt12(x.as_f64().unwrap_or(f64::NAN)))
                            .collect::<Vec<_>>()
                            .join(";"),
                        Value::Null => "NaN".into(),
                        other => other.to_string(),
                    };
                    let _ = writeln!(s, "{k},{cell}");
                }
            }
            s
        }
    };
    Ok(Output { body, accepted })
}

fn cmd_validate(cfg: &RunConfig, result: &Path, format: Format) -> Result<Output, RunError> {
    let text = std::fs::read_to_string(result)
        .map_err(|e| ConfigError::new("--result", format!("cannot read {}: {e}", result.display())))?;
    let recorded: SolveOutput =
        serde_json::from_str(&text).map_err(|e| ConfigError::new("--result", e.to_string()))?;
    let report = validate_point(
        &cfg.model,
        &cfg.solver,
        &recorded.x_star,
        recorded.v_sw_star,
        cfg.solver.eps2,
    )?;
    let out = json!({
        "recorded_dist": recorded.dist,
        "dist_difference": (report.dist - recorded.dist).abs(),
        "report": report,
    });
    let body = match format {
        Format::Json => to_json(&out),
        Format::Csv => {
            let mut s = String::from("metric,value\n");
            let _ = writeln!(s, "recorded_dist,{}", fmt12(recorded.dist));
            let _ = writeln!(s, "dist,{}", fmt12(report.dist));
            let _ = writeln!(s, "switch_gap,{}", fmt12(report.switch_gap));
            let _ = writeln!(s, "threshold_gap,{}", fmt12(report.threshold_gap));
            let _ = writeln!(s, "occupancy_error,{}", fmt12(report.occupancy_error));
            let _ = writeln!(s, "bellman_residual,{}", fmt12(report.bellman_residual));
            let _ = writeln!(s, "max_increase,{}", fmt12(report.max_increase));
            let _ = writeln!(s, "tail_mass,{}", fmt12(report.tail_mass));
            let _ = writeln!(s, "boundary_mass,{}", fmt12(report.boundary_mass));
            let _ = writeln!(s, "kappa,{}", fmt12(report.kappa));
            let _ = writeln!(s, "accepted,{}", report.accepted);
            s
        }
    };
    Ok(Output {
        body,
        accepted: report.accepted,
    })
}

fn write_output(out: Option<&Path>, body: &str) -> Result<(), RunError> {
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| RunError::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| RunError::Runtime(format!("cannot write output: {e}")))
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (common, result) = match &cli.command {
        Command::Solve(a) | Command::Sweep(a) | Command::Casestudy(a) | Command::Simulate(a) => (a, None),
        Command::Validate(v) => (&v.common, Some(v.result.as_path())),
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&common.log_level)
        .format_timestamp(None)
        .try_init();
    par::configure_from_env();

    let outcome = load(&common.config).and_then(|mut cfg| {
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        match &cli.command {
            Command::Solve(_) => cmd_solve(&cfg, common.format),
            Command::Sweep(_) => cmd_sweep(&cfg, common.format),
            Command::Casestudy(_) => cmd_casestudy(&cfg, common.format),
            Command::Simulate(_) => cmd_simulate(&cfg, common.format),
            Command::Validate(_) => cmd_validate(&cfg, result.expect("validate has --result"), common.format),
        }
    });
    let out = match outcome {
        Ok(o) => o,
        Err(RunError::Config(e)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_output(common.out.as_deref(), &out.body) {
        eprintln!("error: {e}");
        return EXIT_RUNTIME;
    }
    if out.accepted {
        EXIT_OK
    } else {
        eprintln!("error: equilibrium not accepted");
        EXIT_NOT_FOUND
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digit_positional_format() {
        assert_eq!(fmt12(0.5001649884121109), "0.500164988412");
        assert_eq!(fmt12(20.0), "20.0000000000");
        assert_eq!(fmt12(-1.25e-3), "-0.00125000000000");
        assert_eq!(fmt12(123456789012345.0), "123456789012000");
        assert_eq!(fmt12(0.0), "0.00000000000");
        assert_eq!(fmt12(f64::NAN), "NaN");
    }

    #[test]
    fn toml_error_key_includes_table() {
        let text = "[model]\nlambda = 1.0\ngamma = 0.9\nbeta = 2.0\nbogus = 1\n";
        let err = toml::from_str::<RawConfig>(text).unwrap_err();
        let key = key_of_toml_error(err.message(), text, err.span());
        assert_eq!(key, "model.bogus");
    }

    #[test]
    fn case_study_truncation_follows_the_density() {
        let base = "[model]\nlambda = 1.0\ngamma = 0.995\nbeta = 400.0\n\
                    [resource]\nstates = [0.0, 1.0]\nrates = [[0.0, 0.25], [0.5, 0.0]]\n\
                    [sharing]\nkind = \"power\"\nalpha = 0.5\n\
                    [casestudy]\nf = [1.0, 1.2]\ncommissions = [[0.15, 0.15]]\nn_locations = 12\n";
        assert_eq!(parse_config(base).unwrap().casestudy_levels, DEFAULT_CASESTUDY_MAX_LEVELS);
        let capped = format!("{base}max_L = 500000\n");
        assert_eq!(parse_config(&capped).unwrap().casestudy_levels, 320_000);
        let fixed = format!("{base}[solver]\nL = 700\n");
        assert_eq!(parse_config(&fixed).unwrap().casestudy_levels, 700);
    }
}
