//! Monte-Carlo validators.
//!
//! * [`simulate_location`]: exact event simulation of one location chain.
//! * [`simulate_coupled_dominance`]: the location chain sandwiched between two
//!   infinite-server queues on a shared event stream.
//! * [`simulate_finite_system`]: `K` locations and `N` agents, every agent
//!   playing the same stay/switch strategy.
//!
//! All runs are reproducible from their seed. Confidence half-widths come
//! from batch means over [`BATCHES`] equal batches.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::ctmc::{Generator, StationarySolution};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ResourceProcess, SharingFunction, Strategy};
use crate::par;

pub const BATCHES: usize = 20;

/// Length of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Simulated time.
    Time(f64),
    /// Number of clock rings (state changes and payoff-only epochs alike).
    Events(u64),
}

impl Horizon {
    fn is_empty(self) -> bool {
        match self {
            Horizon::Time(t) => !(t > 0.0),
            Horizon::Events(e) => e == 0,
        }
    }
}

/// Empirical law over `(z, n)`, layout `z * levels + n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    pub n_states: usize,
    pub levels: usize,
    pub prob: Vec<f64>,
}

impl EmpiricalDistribution {
    fn from_weights(n_states: usize, levels: usize, mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Self {
            n_states,
            levels,
            prob: weights,
        }
    }

    pub fn prob(&self, z: usize, n: usize) -> f64 {
        if z < self.n_states && n < self.levels {
            self.prob[z * self.levels + n]
        } else {
            0.0
        }
    }

    pub fn mean_occupancy(&self) -> f64 {
        self.prob.iter().enumerate().map(|(i, p)| (i % self.levels) as f64 * p).sum()
    }

    /// Total variation distance to a stationary law; levels outside either
    /// support count with probability zero.
    pub fn total_variation(&self, sol: &StationarySolution) -> f64 {
        let levels = self.levels.max(sol.levels());
        let mut acc = 0.0;
        for z in 0..self.n_states.max(sol.n_states()) {
            for n in 0..levels {
                let q = if z < sol.n_states() && n < sol.levels() {
                    sol.prob(z, n)
                } else {
                    0.0
                };
                acc += (self.prob(z, n) - q).abs();
            }
        }
        0.5 * acc
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryStats {
    pub horizon: Horizon,
    pub seed: u64,
    /// Simulated time actually covered.
    pub elapsed: f64,
    pub events: u64,
    pub mean_occupancy: f64,
    pub occupancy_half_width: f64,
    pub distribution: EmpiricalDistribution,
    /// Payoff collected per unit time by all agents at the location.
    pub payoff_rate: Option<f64>,
    pub payoff_half_width: Option<f64>,
}

/// 95% half-width of the mean of `batch` values.
pub fn batch_half_width(batch: &[f64]) -> f64 {
    let k = batch.len();
    if k < 2 {
        return 0.0;
    }
    let mean = batch.iter().sum::<f64>() / k as f64;
    let var = batch.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (k - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    t * (var / k as f64).sqrt()
}

/// Mean and batch-means half-width of a sample sequence, in order.
pub fn sample_mean_half_width(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    if samples.len() < BATCHES {
        return (mean, f64::INFINITY);
    }
    let size = samples.len() / BATCHES;
    let batch: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let chunk = if b + 1 == BATCHES {
                &samples[b * size..]
            } else {
                &samples[b * size..(b + 1) * size]
            };
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    (mean, batch_half_width(&batch))
}

/// Time-weighted accumulators split into [`BATCHES`] consecutive batches.
struct Batches {
    duration: [f64; BATCHES],
    occupancy: [f64; BATCHES],
    payoff: [f64; BATCHES],
}

impl Batches {
    fn new() -> Self {
        Self {
            duration: [0.0; BATCHES],
            occupancy: [0.0; BATCHES],
            payoff: [0.0; BATCHES],
        }
    }

    fn occupancy_means(&self) -> Vec<f64> {
        (0..BATCHES)
            .filter(|&b| self.duration[b] > 0.0)
            .map(|b| self.occupancy[b] / self.duration[b])
            .collect()
    }

    fn payoff_rates(&self) -> Vec<f64> {
        (0..BATCHES)
            .filter(|&b| self.duration[b] > 0.0)
            .map(|b| self.payoff[b] / self.duration[b])
            .collect()
    }
}

fn exp_time(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

fn pick_resource_target(rng: &mut ChaCha8Rng, resource: &ResourceProcess, z: usize) -> usize {
    let mut u = rng.random::<f64>() * resource.exit_rate(z);
    let mut last = z;
    for y in 0..resource.len() {
        if y == z {
            continue;
        }
        last = y;
        u -= resource.rate(z, y);
        if u < 0.0 {
            return y;
        }
    }
    last
}

fn initial_resource(rng: &mut ChaCha8Rng, resource: &ResourceProcess) -> usize {
    WeightedIndex::new(resource.stationary())
        .map(|w| w.sample(rng))
        .unwrap_or(0)
}

/// Simulates the location chain on `S_L` with `L = strategy.max_n()`, the
/// same truncation as [`Generator`] (arrivals blocked at `n = L - 1`).
///
/// Clocks: resource jumps, arrivals at `kappa`, departures at
/// `lambda n (1 - gamma xi)` and payoff-only epochs at `lambda n gamma xi`.
/// The chain starts at `n = 0` with `z` drawn from the resource law.
/// When `sharing` is given, `F(z, n)` is collected at every epoch.
pub fn simulate_location(
    params: &ModelParams,
    resource: &ResourceProcess,
    strategy: &Strategy,
    kappa: f64,
    horizon: Horizon,
    seed: u64,
    sharing: Option<&SharingFunction>,
) -> Result<TrajectoryStats> {
    let levels = strategy.max_n();
    let g = Generator::new(params, resource, strategy, kappa, levels)?;
    let m = resource.len();
    let mut weights = vec![0.0; m * levels];
    if horizon.is_empty() {
        return Ok(TrajectoryStats {
            horizon,
            seed,
            elapsed: 0.0,
            events: 0,
            mean_occupancy: 0.0,
            occupancy_half_width: 0.0,
            distribution: EmpiricalDistribution::from_weights(m, levels, weights),
            payoff_rate: sharing.map(|_| 0.0),
            payoff_half_width: sharing.map(|_| 0.0),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = initial_resource(&mut rng, resource);
    let mut n = 0usize;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut batches = Batches::new();
    let lambda = params.lambda;

    loop {
        let exit = resource.exit_rate(z);
        let arrive = g.arrival_rate(n);
        let depart = g.departure_rate(z, n);
        let epoch_stay = lambda * n as f64 - depart;
        let epoch_stay = epoch_stay.max(0.0);
        let total = exit + arrive + depart + epoch_stay;
        let mut dt = exp_time(&mut rng, total);
        let mut stop = false;
        match horizon {
            Horizon::Time(end) => {
                if t + dt >= end {
                    dt = end - t;
                    stop = true;
                }
            }
            Horizon::Events(e) => {
                if events + 1 >= e {
                    stop = true;
                }
            }
        }
        // Spread the holding interval across the batches it overlaps.
        let mut rest = dt;
        let mut start = t;
        while rest > 0.0 {
            let (b, room) = match horizon {
                Horizon::Time(end) => {
                    let width = end / BATCHES as f64;
                    let b = ((start / width) as usize).min(BATCHES - 1);
                    let edge = if b + 1 == BATCHES { f64::INFINITY } else { (b + 1) as f64 * width };
                    (b, (edge - start).max(0.0))
                }
                Horizon::Events(e) => {
                    let b = ((events as u128 * BATCHES as u128) / e as u128) as usize;
                    (b.min(BATCHES - 1), f64::INFINITY)
                }
            };
            let piece = if room <= 0.0 { rest } else { rest.min(room) };
            batches.duration[b] += piece;
            batches.occupancy[b] += piece * n as f64;
            weights[z * levels + n] += piece;
            rest -= piece;
            start += piece;
        }
        t += dt;
        if stop && matches!(horizon, Horizon::Time(_)) {
            break;
        }
        events += 1;

        let batch_now = match horizon {
            Horizon::Time(end) => ((t / (end / BATCHES as f64)) as usize).min(BATCHES - 1),
            Horizon::Events(e) => (((events - 1) as u128 * BATCHES as u128 / e as u128) as usize).min(BATCHES - 1),
        };
        let u = rng.random::<f64>() * total;
        if u < exit {
            z = pick_resource_target(&mut rng, resource, z);
        } else if u < exit + arrive {
            n += 1;
        } else {
            if let Some(f) = sharing {
                batches.payoff[batch_now] += f.eval(z, n)?;
            }
            if u < exit + arrive + depart {
                n -= 1;
            }
        }
        if stop {
            break;
        }
    }

    let occ = batches.occupancy_means();
    let total_time: f64 = batches.duration.iter().sum();
    let mean_occupancy = batches.occupancy.iter().sum::<f64>() / total_time;
    let (payoff_rate, payoff_half_width) = match sharing {
        Some(_) => (
            Some(batches.payoff.iter().sum::<f64>() / total_time),
            Some(batch_half_width(&batches.payoff_rates())),
        ),
        None => (None, None),
    };
    Ok(TrajectoryStats {
        horizon,
        seed,
        elapsed: t,
        events,
        mean_occupancy,
        occupancy_half_width: batch_half_width(&occ),
        distribution: EmpiricalDistribution::from_weights(m, levels, weights),
        payoff_rate,
        payoff_half_width,
    })
}

/// Outcome of one coupled run.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub seed: u64,
    pub events: u64,
    /// Event times where the lower queue exceeded the location count.
    pub lower_violations: u64,
    /// Event times where the location count exceeded the upper queue.
    pub upper_violations: u64,
    pub always_equal_lower: bool,
    pub always_equal_upper: bool,
    /// `(X1, N, X2)` at the end of the run.
    pub final_state: (usize, usize, usize),
}

impl CouplingReport {
    pub fn sandwich_held(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0
    }
}

/// Runs three untruncated chains on one event stream: `X2` (everyone stays,
/// departures at `(1 - gamma) lambda v`), the location count `N` under
/// `strategy`, and `X1` (everyone leaves, departures at `lambda x`). All
/// three see the same resource path and arrivals at `kappa`.
///
/// `X2` drives the stream with epochs at `lambda v`. At a departing epoch of
/// `X2` a process with per-epoch leave probability `q` and `n` agents leaves
/// with probability `min(zeta, 1)`, `zeta = n q / (v (1 - gamma))`; at a
/// staying epoch it leaves with probability
/// `eta = (1 - gamma) / gamma * max(zeta - 1, 0)`. `N` and `X1` share the
/// uniform used for these decisions.
pub fn simulate_coupled_dominance(
    params: &ModelParams,
    resource: &ResourceProcess,
    strategy: &Strategy,
    kappa: f64,
    horizon: Horizon,
    seed: u64,
) -> CouplingReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = params.lambda;
    let gamma = params.gamma;
    let mut z = initial_resource(&mut rng, resource);
    let (mut x1, mut n, mut x2) = (0usize, 0usize, 0usize);
    let mut t = 0.0;
    let mut events = 0u64;
    let mut report = CouplingReport {
        seed,
        events: 0,
        lower_violations: 0,
        upper_violations: 0,
        always_equal_lower: true,
        always_equal_upper: true,
        final_state: (0, 0, 0),
    };
    if horizon.is_empty() {
        return report;
    }

    let zeta = |count: usize, leave: f64, v: usize| -> f64 {
        if count == 0 {
            0.0
        } else {
            count as f64 * leave / (v as f64 * (1.0 - gamma))
        }
    };
    let eta = |zeta: f64| (1.0 - gamma) / gamma * (zeta - 1.0).max(0.0);

    loop {
        let exit = resource.exit_rate(z);
        let epochs = lambda * x2 as f64;
        let total = exit + kappa + epochs;
        if !(total > 0.0) {
            break;
        }
        let dt = exp_time(&mut rng, total);
        match horizon {
            Horizon::Time(end) if t + dt > end => break,
            Horizon::Events(e) if events >= e => break,
            _ => {}
        }
        t += dt;
        events += 1;

        let u = rng.random::<f64>() * total;
        if u < exit {
            z = pick_resource_target(&mut rng, resource, z);
        } else if u < exit + kappa {
            x1 += 1;
            n += 1;
            x2 += 1;
        } else {
            let v = x2;
            let zn = zeta(n, 1.0 - gamma * strategy.stay(z, n), v);
            let z1 = zeta(x1, 1.0, v);
            let shared = rng.random::<f64>();
            let base_departs = u < exit + kappa + epochs * (1.0 - gamma);
            let (n_leaves, x1_leaves) = if base_departs {
                x2 -= 1;
                (shared < zn.min(1.0), shared < z1.min(1.0))
            } else {
                (shared < eta(zn), shared < eta(z1))
            };
            if n_leaves && n > 0 {
                n -= 1;
            }
            if x1_leaves && x1 > 0 {
                x1 -= 1;
            }
        }
        if x1 > n {
            report.lower_violations += 1;
        }
        if n > x2 {
            report.upper_violations += 1;
        }
        report.always_equal_lower &= x1 == n;
        report.always_equal_upper &= n == x2;
    }
    report.events = events;
    report.final_state = (x1, n, x2);
    report
}

/// `runs` coupled runs with seeds `seed, seed + 1, ...`, in parallel.
pub fn coupled_dominance_replications(
    params: &ModelParams,
    resource: &ResourceProcess,
    strategy: &Strategy,
    kappa: f64,
    horizon: Horizon,
    seed: u64,
    runs: usize,
) -> Vec<CouplingReport> {
    par::map_range(runs, |i| {
        simulate_coupled_dominance(params, resource, strategy, kappa, horizon, seed.wrapping_add(i as u64))
    })
}

/// One-sided two-sample Kolmogorov-Smirnov check of `smaller <=_st larger`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsOutcome {
    /// `sup_x F_larger(x) - F_smaller(x)`.
    pub statistic: f64,
    pub critical: f64,
    pub rejected: bool,
}

pub fn ks_dominance(smaller: &[usize], larger: &[usize], level: f64) -> KsOutcome {
    let top = smaller.iter().chain(larger).copied().max().unwrap_or(0);
    let cdf = |s: &[usize]| {
        let mut counts = vec![0usize; top + 1];
        for &v in s {
            counts[v] += 1;
        }
        let mut acc = 0usize;
        counts
            .into_iter()
            .map(|c| {
                acc += c;
                acc as f64 / s.len() as f64
            })
            .collect::<Vec<_>>()
    };
    let (fs, fl) = (cdf(smaller), cdf(larger));
    let statistic = fl.iter().zip(&fs).map(|(a, b)| a - b).fold(0.0, f64::max);
    let (n, m) = (smaller.len() as f64, larger.len() as f64);
    let critical = (-level.ln() * (n + m) / (2.0 * n * m)).sqrt();
    KsOutcome {
        statistic,
        critical,
        rejected: statistic > critical,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteSystemConfig {
    /// Number of locations `K`.
    pub locations: usize,
    /// Simulated time over which statistics are collected.
    pub horizon: f64,
    /// Time simulated before collection starts.
    pub warmup: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteSystemStats {
    pub locations: usize,
    pub agents: usize,
    pub horizon: f64,
    pub seed: u64,
    pub events: u64,
    /// Time and location average of `(z, n)`; levels run to `N`.
    pub distribution: EmpiricalDistribution,
    pub mean_occupancy: f64,
    pub occupancy_half_width: f64,
    /// Payoff realized by an agent from its first epoch after a switch until
    /// it leaves the system, one sample per switch, in switch order.
    pub payoff_samples: Vec<f64>,
    pub payoff_mean: f64,
    pub payoff_half_width: f64,
    /// Events after which the location counts did not add up to `N`.
    pub conservation_violations: u64,
}

/// Simulates `K` locations with independent resource chains and
/// `N = round(beta K)` agents placed uniformly at random.
///
/// Each agent rings at rate `lambda`; at a ring it collects `F(z, n)` at its
/// location, stays with probability `xi(z, n)` or else moves to a uniformly
/// chosen other location, and then leaves the system with probability
/// `1 - gamma`. A leaving agent is replaced by a new one at a uniform location.
///
/// Switches made during `[warmup, warmup + horizon)` by agents that survive
/// the epoch open a payoff sample; an agent has at most one open sample.
/// After the horizon the system keeps running, without further statistics,
/// until every open sample has closed.
pub fn simulate_finite_system(
    cfg: &FiniteSystemConfig,
    params: &ModelParams,
    resource: &ResourceProcess,
    sharing: &SharingFunction,
    strategy: &Strategy,
) -> Result<FiniteSystemStats> {
    let k = cfg.locations;
    if k < 2 {
        return Err(Error::InvalidSystem(format!("need at least 2 locations, got {k}")));
    }
    if !(cfg.horizon >= 0.0) || !(cfg.warmup >= 0.0) {
        return Err(Error::InvalidSystem("horizon and warmup must be >= 0".into()));
    }
    if strategy.n_states() != resource.len() {
        return Err(Error::DimensionMismatch(format!(
            "strategy has {} resource states, process has {}",
            strategy.n_states(),
            resource.len()
        )));
    }
    let agents = (params.beta * k as f64).round() as usize;
    let m = resource.len();
    let levels = agents + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut z: Vec<usize> = (0..k).map(|_| initial_resource(&mut rng, resource)).collect();
    let mut count = vec![0usize; k];
    let mut at: Vec<usize> = (0..agents)
        .map(|_| {
            let loc = rng.random_range(0..k);
            count[loc] += 1;
            loc
        })
        .collect();
    // Open sample of each agent: index into `payoff_samples`.
    let mut open: Vec<Option<usize>> = vec![None; agents];
    let mut open_count = 0usize;
    let mut samples: Vec<f64> = Vec::new();

    let mut weights = vec![0.0; m * levels];
    let mut batches = Batches::new();
    let start = cfg.warmup;
    let end = cfg.warmup + cfg.horizon;
    let width = cfg.horizon / BATCHES as f64;
    let epochs = params.lambda * agents as f64;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut violations = 0u64;
    let mut resource_rate: f64 = z.iter().map(|&s| resource.exit_rate(s)).sum();

    loop {
        let draining = t >= end;
        if draining && open_count == 0 {
            break;
        }
        let total = resource_rate + epochs;
        if !(total > 0.0) {
            break;
        }
        let dt = exp_time(&mut rng, total);
        // Time-weighted statistics on [start, end).
        let (lo, hi) = (t.max(start), (t + dt).min(end));
        if hi > lo {
            let mut s = lo;
            while s < hi {
                let b = (((s - start) / width) as usize).min(BATCHES - 1);
                let edge = if b + 1 == BATCHES { hi } else { (start + (b + 1) as f64 * width).min(hi) };
                let piece = (edge - s).max(0.0);
                if piece == 0.0 {
                    break;
                }
                batches.duration[b] += piece;
                batches.occupancy[b] += piece * agents as f64 / k as f64;
                s = edge;
            }
            for loc in 0..k {
                weights[z[loc] * levels + count[loc]] += hi - lo;
            }
        }
        t += dt;
        events += 1;

        let u = rng.random::<f64>() * total;
        if u < resource_rate {
            let mut acc = u;
            let mut loc = k - 1;
            for (l, &s) in z.iter().enumerate() {
                let r = resource.exit_rate(s);
                if acc < r {
                    loc = l;
                    break;
                }
                acc -= r;
            }
            let old = z[loc];
            z[loc] = pick_resource_target(&mut rng, resource, old);
            resource_rate += resource.exit_rate(z[loc]) - resource.exit_rate(old);
        } else {
            let i = rng.random_range(0..agents);
            let loc = at[i];
            let (zs, ns) = (z[loc], count[loc]);
            if let Some(idx) = open[i] {
                samples[idx] += sharing.eval(zs, ns)?;
            }
            let switches = rng.random::<f64>() >= strategy.stay(zs, ns);
            let dies = rng.random::<f64>() >= params.gamma;
            let dest = if dies {
                if open[i].take().is_some() {
                    open_count -= 1;
                }
                rng.random_range(0..k)
            } else if switches {
                if open[i].is_none() && (start..end).contains(&t) {
                    open[i] = Some(samples.len());
                    samples.push(0.0);
                    open_count += 1;
                }
                let d = rng.random_range(0..k - 1);
                if d >= loc {
                    d + 1
                } else {
                    d
                }
            } else {
                loc
            };
            count[loc] -= 1;
            count[dest] += 1;
            at[i] = dest;
        }
        if count.iter().sum::<usize>() != agents {
            violations += 1;
        }
    }

    let occ = batches.occupancy_means();
    let total_time: f64 = batches.duration.iter().sum();
    let mean_occupancy = if total_time > 0.0 {
        batches.occupancy.iter().sum::<f64>() / total_time
    } else {
        0.0
    };
    let (payoff_mean, payoff_half_width) = sample_mean_half_width(&samples);
    Ok(FiniteSystemStats {
        locations: k,
        agents,
        horizon: cfg.horizon,
        seed: cfg.seed,
        events,
        distribution: EmpiricalDistribution::from_weights(m, levels, weights),
        mean_occupancy,
        occupancy_half_width: batch_half_width(&occ),
        payoff_samples: samples,
        payoff_mean,
        payoff_half_width,
        conservation_violations: violations,
    })
}
