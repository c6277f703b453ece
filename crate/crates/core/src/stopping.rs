//! The tagged agent's optimal stopping problem at a single location.
//!
//! From state `(z, n)`, `n = 1..=L` (the agent itself is counted in `n`), the
//! first event is one of: the agent's own epoch (rate `lambda`), an arrival
//! (rate `kappa`, blocked at `n = L`), a resource flip `z -> y` (rate
//! `mu_zy`), or a competitor leaving (rate `(n-1) lambda (1 - gamma xi(z, n))`).
//! Competitor epochs that end in a stay are self-loops and drop out.
//!
//! `V_st = P V` where `P` is the expectation at the next own epoch. With
//! `D(z,n)` the total non-self-loop rate, `P = M^-1 (lambda I)` for the block
//! tridiagonal M-matrix `M = D - (off-diagonal rates)`. `M` depends on the
//! strategy and the arrival rate but not on `V_sw`, so one factorization
//! serves every Bellman sweep and every switching payoff.

use serde::Serialize;

use crate::ctmc::StationarySolution;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelParams, Payoffs, ResourceProcess, SharingFunction, Strategy};

/// Default sweep budget for value iteration.
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;

/// Tolerance for the non-increasing-in-`n` check on `V_st`.
pub const MONOTONICITY_TOL: f64 = 1e-8;

const MAX_POLICY_STEPS: usize = 500;

/// Factorized first-epoch operator of the tagged agent.
#[derive(Debug, Clone)]
struct EpochSystem {
    m: usize,
    levels: usize,
    kappa: f64,
    /// `S_n^-1`, level-major (`(n - 1) * m * m`).
    schur_inv: Vec<f64>,
    /// Competitor departure rates `(n-1) lambda (1 - gamma xi(z, n))`, level-major.
    lower: Vec<f64>,
}

impl EpochSystem {
    /// Factorizes `M + diag(shift)`; `shift` is level-major when given.
    fn new(
        params: &ModelParams,
        resource: &ResourceProcess,
        strategy: &Strategy,
        kappa: f64,
        levels: usize,
        shift: Option<&[f64]>,
    ) -> Result<Self> {
        let m = resource.len();
        let lambda = params.lambda;
        let mut lower = vec![0.0; levels * m];
        for n in 1..=levels {
            for z in 0..m {
                lower[(n - 1) * m + z] =
                    (n - 1) as f64 * lambda * (1.0 - params.gamma * strategy.stay(z, n));
            }
        }
        let mut schur_inv = vec![0.0; levels * m * m];
        let mut block = vec![0.0; m * m];
        for n in 1..=levels {
            let j = n - 1;
            let arrival = if n < levels { kappa } else { 0.0 };
            for z in 0..m {
                for y in 0..m {
                    block[z * m + y] = if z == y {
                        lambda + arrival + resource.exit_rate(z) + lower[j * m + z]
                    } else {
                        -resource.rate(z, y)
                    };
                }
                if let Some(s) = shift {
                    block[z * m + z] += s[j * m + z];
                }
            }
            if j > 0 {
                // S_n = A_n - kappa diag(l_n) S_{n-1}^-1
                let prev = &schur_inv[(j - 1) * m * m..j * m * m];
                for z in 0..m {
                    let l = lower[j * m + z];
                    for y in 0..m {
                        block[z * m + y] -= kappa * l * prev[z * m + y];
                    }
                }
            }
            if !linalg::invert_into(&block, m, &mut schur_inv[j * m * m..(j + 1) * m * m]) {
                return Err(Error::SingularSystem(format!("tagged-agent level {n}")));
            }
        }
        Ok(Self {
            m,
            levels,
            kappa,
            schur_inv,
            lower,
        })
    }

    /// Solves `(M + shift) x = rhs`, both level-major, in place.
    fn solve_in_place(&self, rhs: &mut [f64], scratch: &mut Vec<f64>) {
        let m = self.m;
        scratch.resize(m, 0.0);
        // Forward: z_n = S_n^-1 (b_n + diag(l_n) z_{n-1}).
        for j in 0..self.levels {
            if j > 0 {
                for z in 0..m {
                    rhs[j * m + z] += self.lower[j * m + z] * rhs[(j - 1) * m + z];
                }
            }
            let inv = &self.schur_inv[j * m * m..(j + 1) * m * m];
            linalg::mat_vec(inv, &rhs[j * m..(j + 1) * m], scratch, m);
            rhs[j * m..(j + 1) * m].copy_from_slice(scratch);
        }
        // Backward: x_n = z_n + kappa S_n^-1 x_{n+1}.
        for j in (0..self.levels - 1).rev() {
            let inv = &self.schur_inv[j * m * m..(j + 1) * m * m];
            let (head, tail) = rhs.split_at_mut((j + 1) * m);
            linalg::mat_vec(inv, &tail[..m], scratch, m);
            for z in 0..m {
                head[j * m + z] += self.kappa * scratch[z];
            }
        }
    }
}

/// `DEC(xi, kappa, .)` on the truncated state space, ready for any `V_sw`.
#[derive(Debug, Clone)]
pub struct StoppingProblem {
    params: ModelParams,
    resource: ResourceProcess,
    strategy: Strategy,
    payoffs: Payoffs,
    kappa: f64,
    levels: usize,
    system: EpochSystem,
}

impl StoppingProblem {
    /// The truncation `L` is taken from `payoffs.levels()`.
    pub fn new(
        params: &ModelParams,
        resource: &ResourceProcess,
        payoffs: &Payoffs,
        strategy: &Strategy,
        kappa: f64,
    ) -> Result<Self> {
        let levels = payoffs.levels();
        if levels < 2 {
            return Err(Error::TruncationTooSmall(levels));
        }
        if payoffs.n_states() != resource.len() || strategy.n_states() != resource.len() {
            return Err(Error::DimensionMismatch(
                "payoffs, strategy and resource process disagree on |Z|".into(),
            ));
        }
        if strategy.max_n() < levels {
            return Err(Error::DimensionMismatch(format!(
                "strategy covers n <= {}, stopping problem needs n <= {levels}",
                strategy.max_n()
            )));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter {
                name: "kappa",
                reason: format!("must be finite and >= 0, got {kappa}"),
            });
        }
        let system = EpochSystem::new(params, resource, strategy, kappa, levels, None)?;
        Ok(Self {
            params: *params,
            resource: resource.clone(),
            strategy: strategy.clone(),
            payoffs: payoffs.clone(),
            kappa,
            levels,
            system,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn n_states(&self) -> usize {
        self.resource.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn payoffs(&self) -> &Payoffs {
        &self.payoffs
    }

    fn to_level_major(&self, v: &[f64], out: &mut [f64]) {
        let (m, l) = (self.n_states(), self.levels);
        for z in 0..m {
            for j in 0..l {
                out[j * m + z] = v[z * l + j];
            }
        }
    }

    fn from_level_major(&self, v: &[f64], out: &mut [f64]) {
        let (m, l) = (self.n_states(), self.levels);
        for z in 0..m {
            for j in 0..l {
                out[z * l + j] = v[j * m + z];
            }
        }
    }

    /// `E[U(Z_tau, N_tau) | z, n]` at the next own epoch; layout `z * L + (n - 1)`.
    pub fn expectation(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        let mut work = vec![0.0; u.len()];
        let mut scratch = Vec::new();
        self.expectation_into(u, &mut out, &mut work, &mut scratch);
        out
    }

    fn expectation_into(&self, u: &[f64], out: &mut [f64], work: &mut [f64], scratch: &mut Vec<f64>) {
        self.to_level_major(u, work);
        let lambda = self.params.lambda;
        work.iter_mut().for_each(|w| *w *= lambda);
        self.system.solve_in_place(work, scratch);
        self.from_level_major(work, out);
    }

    /// One Bellman sweep `F + gamma max(P U, V_sw)`.
    pub fn bellman(&self, u: &[f64], v_sw: f64) -> Vec<f64> {
        let st = self.expectation(u);
        self.combine(&st, v_sw)
    }

    fn combine(&self, v_st: &[f64], v_sw: f64) -> Vec<f64> {
        let gamma = self.params.gamma;
        let l = self.levels;
        v_st.iter()
            .enumerate()
            .map(|(i, &s)| self.payoffs.get(i / l, i % l + 1) + gamma * s.max(v_sw))
            .collect()
    }

    /// Value iteration with Jacobi sweeps, stopped once the sup-norm change
    /// is at most `eps0 (1 - gamma) / gamma`.
    pub fn value_iterate(&self, v_sw: f64, eps0: f64, max_sweeps: usize) -> Result<ValueFunctions> {
        if !(eps0 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "eps0",
                reason: format!("must be > 0, got {eps0}"),
            });
        }
        let gamma = self.params.gamma;
        let tol = eps0 * (1.0 - gamma) / gamma;
        let dim = self.n_states() * self.levels;
        let l = self.levels;
        // Start from the always-switch value, a lower bound on the fixed point.
        let mut v: Vec<f64> = (0..dim)
            .map(|i| self.payoffs.get(i / l, i % l + 1) + gamma * v_sw)
            .collect();
        let mut st = vec![0.0; dim];
        let mut work = vec![0.0; dim];
        let mut scratch = Vec::new();
        let mut delta = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            self.expectation_into(&v, &mut st, &mut work, &mut scratch);
            delta = 0.0;
            for (i, vi) in v.iter_mut().enumerate() {
                let next = self.payoffs.get(i / l, i % l + 1) + gamma * st[i].max(v_sw);
                delta = delta.max((next - *vi).abs());
                *vi = next;
            }
            sweeps += 1;
            if delta <= tol {
                self.expectation_into(&v, &mut st, &mut work, &mut scratch);
                let v = self.combine(&st, v_sw);
                return Ok(ValueFunctions {
                    n_states: self.n_states(),
                    levels: l,
                    v,
                    v_st: st,
                    iterations: sweeps,
                    final_delta: delta,
                });
            }
        }
        Err(Error::NonConvergence {
            what: "value iteration",
            iterations: sweeps,
            last_delta: delta,
        })
    }

    /// Exact solution by policy iteration over stay/switch sets; each
    /// evaluation is one block-tridiagonal solve.
    pub fn policy_iterate(&self, v_sw: f64) -> Result<ValueFunctions> {
        let (m, l) = (self.n_states(), self.levels);
        let dim = m * l;
        let gamma = self.params.gamma;
        let lambda = self.params.lambda;
        let always_switch: Vec<f64> = (0..dim)
            .map(|i| self.payoffs.get(i / l, i % l + 1) + gamma * v_sw)
            .collect();
        let mut v_st = self.expectation(&always_switch);
        let mut stay: Vec<bool> = v_st.iter().map(|&s| s > v_sw).collect();
        let mut rhs = vec![0.0; dim];
        let mut shift = vec![0.0; dim];
        let mut scratch = Vec::new();
        for step in 1..=MAX_POLICY_STEPS {
            for z in 0..m {
                for j in 0..l {
                    let i = z * l + j;
                    let f = self.payoffs.get(z, j + 1);
                    let (s, r) = if stay[i] {
                        (-gamma * lambda, lambda * f)
                    } else {
                        (0.0, lambda * (f + gamma * v_sw))
                    };
                    shift[j * m + z] = s;
                    rhs[j * m + z] = r;
                }
            }
            let sys = EpochSystem::new(
                &self.params,
                &self.resource,
                &self.strategy,
                self.kappa,
                l,
                Some(&shift),
            )?;
            sys.solve_in_place(&mut rhs, &mut scratch);
            self.from_level_major(&rhs, &mut v_st);
            let next: Vec<bool> = v_st.iter().map(|&s| s > v_sw).collect();
            if next == stay {
                let v = self.combine(&v_st, v_sw);
                // Replace V_st by P V so both Bellman relations hold to round-off.
                let v_st = self.expectation(&v);
                let v = self.combine(&v_st, v_sw);
                return Ok(ValueFunctions {
                    n_states: m,
                    levels: l,
                    v,
                    v_st,
                    iterations: step,
                    final_delta: 0.0,
                });
            }
            stay = next;
        }
        Err(Error::NonConvergence {
            what: "policy iteration",
            iterations: MAX_POLICY_STEPS,
            last_delta: f64::NAN,
        })
    }
}

/// Values at a decision epoch (`v`) and after deciding to stay (`v_st`),
/// both over `z` and `n = 1..=L` with layout `z * L + (n - 1)`.
#[derive(Debug, Clone, Serialize)]
pub struct ValueFunctions {
    n_states: usize,
    levels: usize,
    pub v: Vec<f64>,
    pub v_st: Vec<f64>,
    pub iterations: usize,
    pub final_delta: f64,
}

impl ValueFunctions {
    /// Wraps precomputed arrays (layout `z * L + (n - 1)`).
    pub fn from_parts(n_states: usize, levels: usize, v: Vec<f64>, v_st: Vec<f64>) -> Self {
        Self {
            n_states,
            levels,
            v,
            v_st,
            iterations: 0,
            final_delta: 0.0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn value(&self, z: usize, n: usize) -> f64 {
        self.v[z * self.levels + n - 1]
    }

    #[inline]
    pub fn stay_value(&self, z: usize, n: usize) -> f64 {
        self.v_st[z * self.levels + n - 1]
    }

    /// Largest increase `V_st(z, n+1) - V_st(z, n)` and where it happens.
    pub fn max_increase(&self) -> (f64, usize, usize) {
        let mut worst = (f64::NEG_INFINITY, 0, 0);
        for z in 0..self.n_states {
            for n in 1..self.levels {
                let d = self.stay_value(z, n + 1) - self.stay_value(z, n);
                if d > worst.0 {
                    worst = (d, z, n);
                }
            }
        }
        worst
    }

    /// `max |V - F - gamma max(V_st, V_sw)|`.
    pub fn bellman_residual(&self, payoffs: &Payoffs, gamma: f64, v_sw: f64) -> f64 {
        let l = self.levels;
        self.v
            .iter()
            .zip(&self.v_st)
            .enumerate()
            .map(|(i, (v, s))| (v - payoffs.get(i / l, i % l + 1) - gamma * s.max(v_sw)).abs())
            .fold(0.0, f64::max)
    }
}

/// Value iteration for `DEC(xi, kappa, V_sw)` on `S_L`.
#[allow(clippy::too_many_arguments)]
pub fn value_iterate(
    params: &ModelParams,
    resource: &ResourceProcess,
    sharing: &SharingFunction,
    strategy: &Strategy,
    kappa: f64,
    v_sw: f64,
    levels: usize,
    eps0: f64,
) -> Result<ValueFunctions> {
    let payoffs = sharing.tabulate(levels)?;
    StoppingProblem::new(params, resource, &payoffs, strategy, kappa)?.value_iterate(v_sw, eps0, DEFAULT_MAX_SWEEPS)
}

/// `sum_{z, n < L} pi(z, n) V_st(z, n + 1)`: the payoff of joining a location
/// drawn from the stationary law.
pub fn switch_value(sol: &StationarySolution, vf: &ValueFunctions) -> f64 {
    let levels = sol.levels().min(vf.levels());
    let mut acc = 0.0;
    for z in 0..sol.n_states() {
        for n in 0..levels {
            acc += sol.prob(z, n) * vf.stay_value(z, n + 1);
        }
    }
    acc
}

/// Per-state intervals `[a_z, b_z]` of approximately optimal thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdIntervals {
    pub intervals: Vec<(f64, f64)>,
}

impl ThresholdIntervals {
    /// Euclidean distance from `x` to the box `prod_z [a_z, b_z]`.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.intervals
            .iter()
            .zip(x)
            .map(|(&(a, b), &xz)| {
                let d = if xz < a {
                    a - xz
                } else if xz > b {
                    xz - b
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) == 0.0
    }
}

/// Thresholds that stay wherever `V_st > V_sw + eps` and leave wherever
/// `V_st < V_sw - eps`. Requires `V_st` non-increasing in `n`.
pub fn optimal_threshold_set(vf: &ValueFunctions, v_sw: f64, eps: f64) -> Result<ThresholdIntervals> {
    let (excess, z, n) = vf.max_increase();
    if excess > MONOTONICITY_TOL {
        return Err(Error::MonotonicityViolation { z, n, excess });
    }
    let l = vf.levels();
    let cap = (l - 1) as f64;
    let intervals = (0..vf.n_states())
        .map(|z| {
            let last_above = (1..=l).rev().find(|&n| vf.stay_value(z, n) > v_sw + eps);
            let last_not_below = (1..=l).rev().find(|&n| vf.stay_value(z, n) >= v_sw - eps);
            let a = last_above.map_or(0.0, |n| ((n + 1) as f64).min(cap));
            let b = last_not_below.map_or(0.0, |n| ((n + 1) as f64).min(cap));
            (a, b.max(a))
        })
        .collect();
    Ok(ThresholdIntervals { intervals })
}

/// Analytic bounds on the switching payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueBounds {
    pub lower: f64,
    pub upper: f64,
}

/// `V_upper = ||F|| / (1 - gamma)` and the series lower bound
/// `exp(-beta/(1-gamma)) sum_{z,n} (beta(1-gamma))^n / ((1+beta+Psi)^{n+1} (n+1)!) pi_res(z) F(z, n+1)`
/// with `Psi = max_z sum_{y != z} mu_zy / lambda`.
pub fn value_bounds(
    params: &ModelParams,
    resource: &ResourceProcess,
    sharing: &SharingFunction,
    levels: usize,
) -> Result<ValueBounds> {
    let sup = sharing.sup_norm(levels);
    let gamma = params.gamma;
    let beta = params.beta;
    let upper = sup / (1.0 - gamma);
    let psi = resource.max_exit_rate() / params.lambda;
    let ln_ratio = (beta * (1.0 - gamma)).ln();
    let ln_base = (1.0 + beta + psi).ln();
    let pi_res = resource.stationary();

    let mut sum = 0.0;
    let mut ln_fact = 0.0; // ln((n+1)!)
    for n in 0..levels {
        ln_fact += ((n + 1) as f64).ln();
        let ln_coef = n as f64 * ln_ratio - (n + 1) as f64 * ln_base - ln_fact;
        let coef = ln_coef.exp();
        let mut w = 0.0;
        for (z, p) in pi_res.iter().enumerate() {
            w += p * sharing.eval(z, n + 1)?;
        }
        sum += coef * w;
        if n > 0 && coef * sup <= 1e-15 * sum {
            break;
        }
    }
    let lower = (sum.ln() - beta / (1.0 - gamma)).exp();
    if !(lower > 0.0) {
        return Err(Error::DegenerateLowerBound);
    }
    Ok(ValueBounds { lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ThresholdVector;

    fn single() -> ResourceProcess {
        ResourceProcess::new(vec![1.0], vec![vec![0.0]]).unwrap()
    }

    fn constant_payoff(levels: usize) -> SharingFunction {
        SharingFunction::table(vec![vec![1.0; levels]], true).unwrap()
    }

    #[test]
    fn stay_region_fixed_point() {
        let p = ModelParams::new(1.0, 0.5, 3.0).unwrap();
        let s = Strategy::constant(1, 12, 0.3).unwrap();
        let vf = value_iterate(&p, &single(), &constant_payoff(12), &s, 0.7, 1.0, 12, 1e-10).unwrap();
        for n in 1..=12 {
            assert!((vf.stay_value(0, n) - 2.0).abs() < 1e-9);
            assert!((vf.value(0, n) - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn switch_region_fixed_point() {
        let p = ModelParams::new(1.0, 0.5, 3.0).unwrap();
        let s = Strategy::constant(1, 12, 0.3).unwrap();
        let vf = value_iterate(&p, &single(), &constant_payoff(12), &s, 0.7, 10.0, 12, 1e-10).unwrap();
        for n in 1..=12 {
            assert!((vf.stay_value(0, n) - 6.0).abs() < 1e-9);
            assert!((vf.value(0, n) - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn policy_iteration_matches_value_iteration() {
        let p = ModelParams::new(1.0, 0.95, 20.0).unwrap();
        let r = ResourceProcess::binary(0.25, 0.25).unwrap();
        let f = SharingFunction::power(vec![0.0, 1.0], 1.0).unwrap();
        let payoffs = f.tabulate(60).unwrap();
        let s = Strategy::from_threshold(&ThresholdVector(vec![3.5, 25.2]), 60).unwrap();
        let prob = StoppingProblem::new(&p, &r, &payoffs, &s, 3.0).unwrap();
        let vi = prob.value_iterate(0.4, 1e-9, DEFAULT_MAX_SWEEPS).unwrap();
        let pi = prob.policy_iterate(0.4).unwrap();
        for (a, b) in vi.v_st.iter().zip(&pi.v_st) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(pi.bellman_residual(&payoffs, 0.95, 0.4) < 1e-12);
    }

    fn vf_from_row(row: &[f64], levels: usize) -> ValueFunctions {
        let mut st = row.to_vec();
        st.resize(levels, *row.last().unwrap());
        ValueFunctions::from_parts(1, levels, st.clone(), st)
    }

    #[test]
    fn threshold_set_strict_case() {
        let vf = vf_from_row(&[5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.25, 0.1], 8);
        let set = optimal_threshold_set(&vf, 3.5, 0.0).unwrap();
        assert_eq!(set.intervals, vec![(3.0, 3.0)]);
    }

    #[test]
    fn threshold_set_indifference() {
        let vf = vf_from_row(&[5.0, 4.0, 3.5, 2.0, 1.0, 0.5, 0.25, 0.1], 8);
        let set = optimal_threshold_set(&vf, 3.5, 0.0).unwrap();
        assert_eq!(set.intervals, vec![(3.0, 4.0)]);
    }

    #[test]
    fn threshold_set_stay_everywhere() {
        let vf = vf_from_row(&[9.0, 8.0, 7.0, 6.0, 5.0], 5);
        let set = optimal_threshold_set(&vf, 1.0, 0.01).unwrap();
        assert_eq!(set.intervals, vec![(4.0, 4.0)]);
    }

    #[test]
    fn threshold_set_rejects_increasing_values() {
        let vf = vf_from_row(&[1.0, 2.0, 0.5], 3);
        assert!(matches!(
            optimal_threshold_set(&vf, 1.0, 0.0),
            Err(Error::MonotonicityViolation { .. })
        ));
    }

    #[test]
    fn switch_value_of_constant_and_point_mass() {
        let vf = ValueFunctions::from_parts(2, 4, vec![0.0; 8], vec![1.25; 8]);
        let pi = vec![0.1, 0.2, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1];
        let sol = StationarySolution::from_distribution(2, 4, pi, 1.0);
        assert!((switch_value(&sol, &vf) - 1.25).abs() < 1e-15);

        let st: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let vf = ValueFunctions::from_parts(2, 4, vec![0.0; 8], st);
        let mut pi = vec![0.0; 8];
        pi[4] = 1.0; // (z = 1, n = 0)
        let sol = StationarySolution::from_distribution(2, 4, pi, 1.0);
        assert_eq!(switch_value(&sol, &vf), vf.stay_value(1, 1));
    }

    #[test]
    fn upper_bound_values() {
        let p = ModelParams::new(1.0, 0.95, 20.0).unwrap();
        let r = ResourceProcess::binary(0.25, 0.25).unwrap();
        let f = SharingFunction::power(vec![0.0, 1.0], 1.0).unwrap();
        let b = value_bounds(&p, &r, &f, 200).unwrap();
        assert!((b.upper - 20.0).abs() < 1e-12);
        assert!(b.lower > 0.0 && b.lower < b.upper);

        let p = ModelParams::new(1.0, 1e-9, 1.0).unwrap();
        let b = value_bounds(&p, &r, &f, 50).unwrap();
        assert!((b.upper - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lower_bound_underflow_is_reported() {
        let p = ModelParams::new(1.0, 0.995, 400.0).unwrap();
        let r = ResourceProcess::binary(0.25, 0.5).unwrap();
        let f = SharingFunction::power(vec![1.0, 1.2], 0.5).unwrap();
        assert_eq!(value_bounds(&p, &r, &f, 100), Err(Error::DegenerateLowerBound));
    }
}
