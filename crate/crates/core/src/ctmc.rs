//! The truncated location chain `(Z_t, N_t)` on `S_L = Z x {0..L-1}`: its
//! generator, stationary law, mean occupancy and the arrival rate that makes
//! the mean occupancy equal the agent density.
//!
//! States are laid out as `z * L + n`. The chain is block tridiagonal in `n`
//! with `|Z| x |Z|` blocks, so the stationary law is computed exactly by
//! block (level) elimination in `O(L |Z|^3)`.

use serde::Serialize;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelParams, ResourceProcess, Strategy};

/// Maximum number of bisection steps for the arrival rate.
pub const MAX_BISECTION_STEPS: usize = 200;

/// Sparse generator of the truncated location chain.
#[derive(Debug, Clone)]
pub struct Generator {
    params: ModelParams,
    resource: ResourceProcess,
    strategy: Strategy,
    kappa: f64,
    levels: usize,
    /// `lambda * n * (1 - gamma * xi(z, n))`, indexed like states.
    departure: Vec<f64>,
}

impl Generator {
    pub fn new(
        params: &ModelParams,
        resource: &ResourceProcess,
        strategy: &Strategy,
        kappa: f64,
        levels: usize,
    ) -> Result<Self> {
        if levels < 2 {
            return Err(Error::TruncationTooSmall(levels));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter {
                name: "kappa",
                reason: format!("arrival rate must be finite and >= 0, got {kappa}"),
            });
        }
        if strategy.n_states() != resource.len() {
            return Err(Error::DimensionMismatch(format!(
                "strategy has {} resource states, process has {}",
                strategy.n_states(),
                resource.len()
            )));
        }
        if strategy.max_n() + 1 < levels {
            return Err(Error::DimensionMismatch(format!(
                "strategy covers n <= {}, generator needs n <= {}",
                strategy.max_n(),
                levels - 1
            )));
        }
        let m = resource.len();
        let mut departure = Vec::with_capacity(m * levels);
        for z in 0..m {
            for n in 0..levels {
                departure.push(params.lambda * n as f64 * (1.0 - params.gamma * strategy.stay(z, n)));
            }
        }
        Ok(Self {
            params: *params,
            resource: resource.clone(),
            strategy: strategy.clone(),
            kappa,
            levels,
            departure,
        })
    }

    pub fn n_states(&self) -> usize {
        self.resource.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.n_states() * self.levels
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn resource(&self) -> &ResourceProcess {
        &self.resource
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    #[inline]
    pub fn index(&self, z: usize, n: usize) -> usize {
        z * self.levels + n
    }

    /// `(z, n)` for a flat index.
    #[inline]
    pub fn state(&self, i: usize) -> (usize, usize) {
        (i / self.levels, i % self.levels)
    }

    #[inline]
    pub fn departure_rate(&self, z: usize, n: usize) -> f64 {
        self.departure[z * self.levels + n]
    }

    #[inline]
    pub fn arrival_rate(&self, n: usize) -> f64 {
        if n + 1 < self.levels {
            self.kappa
        } else {
            0.0
        }
    }

    /// Total outflow rate of `(z, n)`, i.e. minus the diagonal entry.
    #[inline]
    pub fn outflow(&self, z: usize, n: usize) -> f64 {
        self.resource.exit_rate(z) + self.arrival_rate(n) + self.departure_rate(z, n)
    }

    /// Rate `(z, n) -> (x, m)`, including the (negative) diagonal.
    pub fn rate(&self, from: (usize, usize), to: (usize, usize)) -> f64 {
        let ((z, n), (x, m)) = (from, to);
        if z == x && n == m {
            -self.outflow(z, n)
        } else if z != x && n == m {
            self.resource.rate(z, x)
        } else if z == x && m == n + 1 {
            self.arrival_rate(n)
        } else if z == x && m + 1 == n {
            self.departure_rate(z, n)
        } else {
            0.0
        }
    }

    /// Nonzero entries as `(row, col, rate)`, diagonal included.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let m = self.n_states();
        let mut out = Vec::with_capacity(self.dim() * (m + 2));
        for z in 0..m {
            for n in 0..self.levels {
                let i = self.index(z, n);
                out.push((i, i, -self.outflow(z, n)));
                for x in (0..m).filter(|&x| x != z) {
                    out.push((i, self.index(x, n), self.resource.rate(z, x)));
                }
                if self.arrival_rate(n) > 0.0 {
                    out.push((i, self.index(z, n + 1), self.kappa));
                }
                if n > 0 && self.departure_rate(z, n) > 0.0 {
                    out.push((i, self.index(z, n - 1), self.departure_rate(z, n)));
                }
            }
        }
        out
    }

    /// Largest absolute row sum; zero for a conservative generator.
    pub fn max_row_sum(&self) -> f64 {
        let mut sums = vec![0.0; self.dim()];
        for (i, _, r) in self.entries() {
            sums[i] += r;
        }
        sums.iter().fold(0.0, |a, s| a.max(s.abs()))
    }

    /// `max_j |(pi Q)_j|`.
    pub fn stationarity_residual(&self, pi: &[f64]) -> f64 {
        let mut flow = vec![0.0; self.dim()];
        for (i, j, r) in self.entries() {
            flow[j] += pi[i] * r;
        }
        flow.iter().fold(0.0, |a, f| a.max(f.abs()))
    }
}

/// Stationary law of a generator plus the quantities derived from it.
#[derive(Debug, Clone, Serialize)]
pub struct StationarySolution {
    n_states: usize,
    levels: usize,
    pub pi: Vec<f64>,
    pub kappa: f64,
    pub phi: f64,
    pub residual: f64,
}

impl StationarySolution {
    /// Wraps a distribution over `S_L` (layout `z * L + n`).
    pub fn from_distribution(n_states: usize, levels: usize, pi: Vec<f64>, kappa: f64) -> Self {
        let phi = occupancy_of(&pi, levels);
        Self {
            n_states,
            levels,
            pi,
            kappa,
            phi,
            residual: 0.0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn prob(&self, z: usize, n: usize) -> f64 {
        self.pi[z * self.levels + n]
    }

    /// `P(N = n)` for `n = 0..L-1`.
    pub fn occupancy_marginal(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|n| (0..self.n_states).map(|z| self.prob(z, n)).sum())
            .collect()
    }

    /// `P(Z = z)`.
    pub fn resource_marginal(&self) -> Vec<f64> {
        (0..self.n_states)
            .map(|z| self.pi[z * self.levels..(z + 1) * self.levels].iter().sum())
            .collect()
    }

    /// Probability of the top level `n = L - 1`, where arrivals are blocked.
    pub fn boundary_mass(&self) -> f64 {
        (0..self.n_states).map(|z| self.prob(z, self.levels - 1)).sum()
    }
}

fn occupancy_of(pi: &[f64], levels: usize) -> f64 {
    pi.iter().enumerate().map(|(i, p)| (i % levels) as f64 * p).sum()
}

/// `sum_{z,n} n pi(z, n)`.
pub fn expected_occupancy(sol: &StationarySolution) -> f64 {
    occupancy_of(&sol.pi, sol.levels)
}

/// Exact stationary law by linear level reduction.
///
/// With `pi_{n+1} = pi_n R_n`, the matrices `R_n` follow from the top level
/// down; the level-0 censored generator then fixes `pi_0` up to scale.
pub fn steady_state(g: &Generator) -> Result<StationarySolution> {
    let m = g.n_states();
    let levels = g.levels;
    let kappa = g.kappa;
    let res = &g.resource;

    // -Q_{n,n} as a dense block.
    let neg_diag_block = |n: usize, b: &mut [f64]| {
        for z in 0..m {
            for y in 0..m {
                b[z * m + y] = if z == y { g.outflow(z, n) } else { -res.rate(z, y) };
            }
        }
    };

    // r[n] holds R_n for n = 0..L-2.
    let mut r = vec![0.0; (levels - 1) * m * m];
    let mut t = vec![0.0; m * m];
    neg_diag_block(levels - 1, &mut t);
    for n in (0..levels - 1).rev() {
        let rn = &mut r[n * m * m..(n + 1) * m * m];
        if !linalg::invert_into(&t, m, rn) {
            return Err(Error::SingularSystem(format!("level {} of the location chain", n + 1)));
        }
        rn.iter_mut().for_each(|v| *v *= kappa);
        if n == 0 {
            break;
        }
        // T_n = -Q_{n,n} - R_n diag(d(., n+1)). Its row sums are exactly the
        // departure rates d(., n), so the diagonal is rebuilt from the
        // off-diagonal entries instead of by subtraction.
        neg_diag_block(n, &mut t);
        for z in 0..m {
            for y in 0..m {
                t[z * m + y] -= rn[z * m + y] * g.departure_rate(y, n + 1);
            }
            let off: f64 = (0..m).filter(|&y| y != z).map(|y| t[z * m + y]).sum();
            t[z * m + z] = g.departure_rate(z, n) - off;
        }
    }

    // Censored generator on level 0: Q_00 + R_0 diag(d(., 1)), rows summing to zero.
    let mut h = vec![0.0; m * m];
    neg_diag_block(0, &mut h);
    h.iter_mut().for_each(|v| *v = -*v);
    for z in 0..m {
        for y in 0..m {
            h[z * m + y] += r[z * m + y] * g.departure_rate(y, 1);
        }
        let off: f64 = (0..m).filter(|&y| y != z).map(|y| h[z * m + y]).sum();
        h[z * m + z] = -off;
    }
    let pi0 = linalg::left_null_normalized(&h, m)
        .ok_or_else(|| Error::SingularSystem("level 0 of the location chain".into()))?;

    let mut levels_pi = vec![0.0; levels * m];
    levels_pi[..m].copy_from_slice(&pi0);
    let mut next = vec![0.0; m];
    for n in 0..levels - 1 {
        let (done, rest) = levels_pi.split_at_mut((n + 1) * m);
        linalg::vec_mat(&done[n * m..], &r[n * m * m..(n + 1) * m * m], &mut next, m);
        rest[..m].copy_from_slice(&next);
        let peak = next.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if peak > 1e150 {
            levels_pi[..(n + 2) * m].iter_mut().for_each(|v| *v *= 1e-150);
        }
    }

    let mut pi = vec![0.0; m * levels];
    for n in 0..levels {
        for z in 0..m {
            pi[z * levels + n] = levels_pi[n * m + z].max(0.0);
        }
    }
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::SingularSystem("stationary vector could not be normalized".into()));
    }
    pi.iter_mut().for_each(|p| *p /= total);

    let residual = g.stationarity_residual(&pi);
    let phi = occupancy_of(&pi, levels);
    Ok(StationarySolution {
        n_states: m,
        levels,
        pi,
        kappa,
        phi,
        residual,
    })
}

/// Stationary law of `MC_L(xi, kappa)`.
pub fn stationary_for(
    params: &ModelParams,
    resource: &ResourceProcess,
    strategy: &Strategy,
    kappa: f64,
    levels: usize,
) -> Result<StationarySolution> {
    steady_state(&Generator::new(params, resource, strategy, kappa, levels)?)
}

/// Bisection on `[beta lambda (1 - gamma), beta lambda]` for the arrival rate
/// with `|phi(kappa) - beta| <= eps1`.
pub fn solve_kappa(
    params: &ModelParams,
    resource: &ResourceProcess,
    strategy: &Strategy,
    levels: usize,
    eps1: f64,
) -> Result<(f64, StationarySolution)> {
    if !(eps1 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps1",
            reason: format!("must be > 0, got {eps1}"),
        });
    }
    let beta = params.beta;
    let solve = |k: f64| stationary_for(params, resource, strategy, k, levels);

    let mut lo = beta * params.lambda * (1.0 - params.gamma);
    let mut hi = beta * params.lambda;
    let sol_lo = solve(lo)?;
    let f_lo = sol_lo.phi - beta;
    if f_lo.abs() <= eps1 {
        return Ok((lo, sol_lo));
    }
    let sol_hi = solve(hi)?;
    let f_hi = sol_hi.phi - beta;
    if f_hi.abs() <= eps1 {
        return Ok((hi, sol_hi));
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::NoBracket { lo, hi, f_lo, f_hi });
    }
    let mut last = f64::INFINITY;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let sol = solve(mid)?;
        let f = sol.phi - beta;
        if f.abs() <= eps1 {
            return Ok((mid, sol));
        }
        last = f.abs();
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        what: "arrival-rate bisection",
        iterations: MAX_BISECTION_STEPS,
        last_delta: last,
    })
}

/// `P(X >= L)` for `X ~ Poisson(mean)`.
pub fn poisson_upper_tail(mean: f64, levels: usize) -> f64 {
    if levels == 0 {
        return 1.0;
    }
    if mean <= 0.0 {
        return 0.0;
    }
    // P(X >= L) = P(L, mean), the regularized lower incomplete gamma.
    gamma_lr(levels as f64, mean).clamp(0.0, 1.0)
}

/// Tail mass above `L - 1` of the Poisson(beta / (1 - gamma)) law that
/// dominates the occupancy under any strategy.
pub fn dominating_tail_mass(params: &ModelParams, levels: usize) -> f64 {
    poisson_upper_tail(params.beta / (1.0 - params.gamma), levels)
}

/// Truncation slack `L * P(Poisson(kappa / (lambda (1 - gamma))) >= L)` used to
/// widen the lower occupancy bound.
pub fn occupancy_truncation_slack(params: &ModelParams, kappa: f64, levels: usize) -> f64 {
    levels as f64 * poisson_upper_tail(kappa / (params.lambda * (1.0 - params.gamma)), levels)
}
