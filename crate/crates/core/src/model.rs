//! Domain types: the exogenous resource chain, resource-sharing payoffs,
//! model parameters and (threshold) strategies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Finite-state resource chain of a single location.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceProcess {
    states: Vec<f64>,
    /// Row-major `|states| x |states|`; the diagonal is stored as zero.
    rates: Vec<f64>,
    exit: Vec<f64>,
    stationary: Vec<f64>,
}

impl ResourceProcess {
    /// Builds the process and solves global balance for its stationary law.
    pub fn new(states: Vec<f64>, rates: Vec<Vec<f64>>) -> Result<Self> {
        let m = states.len();
        if m == 0 {
            return Err(Error::DimensionMismatch(
                "resource process needs at least one state".into(),
            ));
        }
        if rates.len() != m || rates.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "rate matrix must be {m}x{m} to match the state list"
            )));
        }
        let mut flat = vec![0.0; m * m];
        for (z, row) in rates.iter().enumerate() {
            for (y, &r) in row.iter().enumerate() {
                if z == y {
                    continue;
                }
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::NonPositiveRate {
                        from: z,
                        to: y,
                        rate: r,
                    });
                }
                flat[z * m + y] = r;
            }
        }
        let exit: Vec<f64> = (0..m).map(|z| flat[z * m..(z + 1) * m].iter().sum()).collect();
        let mut generator = flat.clone();
        for z in 0..m {
            generator[z * m + z] = -exit[z];
        }
        let mut stationary = linalg::left_null_normalized(&generator, m)
            .ok_or_else(|| Error::SingularSystem("resource balance equations".into()))?;
        // Round-off can leave tiny negatives.
        stationary.iter_mut().for_each(|p| *p = p.max(0.0));
        let total: f64 = stationary.iter().sum();
        stationary.iter_mut().for_each(|p| *p /= total);
        Ok(Self {
            states,
            rates: flat,
            exit,
            stationary,
        })
    }

    /// Two-state chain with `0 -> 1` rate `up` and `1 -> 0` rate `down`.
    pub fn binary(up: f64, down: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![vec![0.0, up], vec![down, 0.0]])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Rate `z -> y`; zero on the diagonal.
    #[inline]
    pub fn rate(&self, z: usize, y: usize) -> f64 {
        self.rates[z * self.len() + y]
    }

    /// Total rate of leaving `z`.
    #[inline]
    pub fn exit_rate(&self, z: usize) -> f64 {
        self.exit[z]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().cloned().fold(0.0, f64::max)
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn rate_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.len();
        (0..m).map(|z| self.rates[z * m..(z + 1) * m].to_vec()).collect()
    }

    /// Same chain with every rate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let rates = self
            .rate_matrix()
            .into_iter()
            .map(|row| row.into_iter().map(|r| r * c).collect())
            .collect();
        Self::new(self.states.clone(), rates)
    }
}

/// Payoff `F(z, n)` an agent collects at a decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SharingFunction {
    /// `g(z) * n^-alpha`.
    Power { level_payoffs: Vec<f64>, alpha: f64 },
    /// Explicit values; `table[z][n - 1] = F(z, n)` for `n = 1..=table[z].len()`.
    Table {
        table: Vec<Vec<f64>>,
        #[serde(default)]
        decreasing: bool,
    },
}

impl SharingFunction {
    pub fn power(level_payoffs: Vec<f64>, alpha: f64) -> Result<Self> {
        let f = Self::Power {
            level_payoffs,
            alpha,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn table(table: Vec<Vec<f64>>, decreasing: bool) -> Result<Self> {
        let f = Self::Table { table, decreasing };
        f.validate()?;
        Ok(f)
    }

    pub fn n_states(&self) -> usize {
        match self {
            Self::Power { level_payoffs, .. } => level_payoffs.len(),
            Self::Table { table, .. } => table.len(),
        }
    }

    /// Whether `F(z, n + 1) <= F(z, n)` is guaranteed.
    pub fn is_decreasing(&self) -> bool {
        match self {
            Self::Power { .. } => true,
            Self::Table { decreasing, .. } => *decreasing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Power {
                level_payoffs,
                alpha,
            } => {
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::InvalidSharing(format!("alpha must be > 0, got {alpha}")));
                }
                if level_payoffs.is_empty() {
                    return Err(Error::InvalidSharing("no level payoffs".into()));
                }
                if level_payoffs.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
                    return Err(Error::InvalidSharing("level payoffs must be finite and >= 0".into()));
                }
                if !level_payoffs.iter().any(|g| *g > 0.0) {
                    return Err(Error::InvalidSharing("payoff is identically zero".into()));
                }
            }
            Self::Table { table, decreasing } => {
                if table.is_empty() || table.iter().any(|r| r.is_empty()) {
                    return Err(Error::InvalidSharing("empty payoff table".into()));
                }
                if table.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidSharing("table entries must be finite and >= 0".into()));
                }
                if !table.iter().flatten().any(|v| *v > 0.0) {
                    return Err(Error::InvalidSharing("payoff is identically zero".into()));
                }
                if *decreasing {
                    for (z, row) in table.iter().enumerate() {
                        if let Some(n) = row.windows(2).position(|w| w[1] > w[0]) {
                            return Err(Error::InvalidSharing(format!(
                                "declared decreasing but F({z},{}) > F({z},{})",
                                n + 2,
                                n + 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `F(z, n)` for `n >= 1`.
    pub fn eval(&self, z: usize, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::OccupancyZero);
        }
        match self {
            Self::Power {
                level_payoffs,
                alpha,
            } => {
                let g = level_payoffs.get(z).ok_or_else(|| {
                    Error::DimensionMismatch(format!("resource state {z} has no level payoff"))
                })?;
                Ok(g * (n as f64).powf(-alpha))
            }
            Self::Table { table, .. } => {
                let row = table
                    .get(z)
                    .ok_or_else(|| Error::DimensionMismatch(format!("resource state {z} has no table row")))?;
                row.get(n - 1).copied().ok_or(Error::OutOfRange {
                    what: format!("table occupancy for z={z}"),
                    value: n as f64,
                    lo: 1.0,
                    hi: row.len() as f64,
                })
            }
        }
    }

    /// Max over `z` and `n = 1..=L` of `F(z, n)`.
    pub fn sup_norm(&self, levels: usize) -> f64 {
        let mut best = 0.0_f64;
        for z in 0..self.n_states() {
            for n in 1..=levels {
                match self.eval(z, n) {
                    Ok(v) => best = best.max(v),
                    Err(_) => break,
                }
            }
        }
        best
    }

    /// Same function multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::Power {
                level_payoffs,
                alpha,
            } => Self::Power {
                level_payoffs: level_payoffs.iter().map(|g| g * c).collect(),
                alpha: *alpha,
            },
            Self::Table { table, decreasing } => Self::Table {
                table: table
                    .iter()
                    .map(|r| r.iter().map(|v| v * c).collect())
                    .collect(),
                decreasing: *decreasing,
            },
        }
    }

    /// Tabulates `F(z, n)` for `n = 1..=levels`.
    pub fn tabulate(&self, levels: usize) -> Result<Payoffs> {
        let m = self.n_states();
        let mut values = Vec::with_capacity(m * levels);
        for z in 0..m {
            for n in 1..=levels {
                values.push(self.eval(z, n)?);
            }
        }
        Ok(Payoffs {
            n_states: m,
            levels,
            values,
        })
    }
}

/// Dense `F(z, n)` for `n = 1..=levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Payoffs {
    n_states: usize,
    levels: usize,
    values: Vec<f64>,
}

impl Payoffs {
    #[inline]
    pub fn get(&self, z: usize, n: usize) -> f64 {
        debug_assert!(n >= 1 && n <= self.levels);
        self.values[z * self.levels + n - 1]
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_decreasing(&self) -> bool {
        (0..self.n_states).all(|z| {
            self.values[z * self.levels..(z + 1) * self.levels]
                .windows(2)
                .all(|w| w[1] <= w[0])
        })
    }
}

/// Rates and population parameters shared by every location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Decision-epoch rate of each agent.
    pub lambda: f64,
    /// Per-epoch survival probability.
    pub gamma: f64,
    /// Agents per location.
    pub beta: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, gamma: f64, beta: f64) -> Result<Self> {
        let p = Self {
            lambda,
            gamma,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be > 0, got {}", self.lambda),
            });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must lie in (0, 1), got {}", self.gamma),
            });
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be > 0, got {}", self.beta),
            });
        }
        Ok(())
    }
}

/// Everything that defines the single-location game.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub resource: ResourceProcess,
    pub sharing: SharingFunction,
}

impl Model {
    pub fn new(params: ModelParams, resource: ResourceProcess, sharing: SharingFunction) -> Result<Self> {
        params.validate()?;
        sharing.validate()?;
        if sharing.n_states() != resource.len() {
            return Err(Error::DimensionMismatch(format!(
                "sharing function covers {} resource states, process has {}",
                sharing.n_states(),
                resource.len()
            )));
        }
        Ok(Self {
            params,
            resource,
            sharing,
        })
    }

    pub fn n_states(&self) -> usize {
        self.resource.len()
    }
}

/// Stay probabilities `xi(z, n)` for `n = 0..=L`.
///
/// Queries above `L` reuse the `n = L` column, so a threshold strategy keeps
/// leaving and a constant strategy stays constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    n_states: usize,
    max_n: usize,
    stay: Vec<f64>,
}

impl Strategy {
    /// Builds from `f(z, n)`; `xi(z, 0)` is forced to 1.
    pub fn from_fn(n_states: usize, max_n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut stay = Vec::with_capacity(n_states * (max_n + 1));
        for z in 0..n_states {
            for n in 0..=max_n {
                let p = if n == 0 { 1.0 } else { f(z, n) };
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::OutOfRange {
                        what: format!("stay probability xi({z},{n})"),
                        value: p,
                        lo: 0.0,
                        hi: 1.0,
                    });
                }
                stay.push(p);
            }
        }
        Ok(Self {
            n_states,
            max_n,
            stay,
        })
    }

    /// `xi(z, n) = p` for every `n >= 1`.
    pub fn constant(n_states: usize, max_n: usize, p: f64) -> Result<Self> {
        Self::from_fn(n_states, max_n, |_, _| p)
    }

    /// Threshold strategy: stay below `floor(x_z)`, mix at `floor(x_z)`, leave above.
    pub fn from_threshold(x: &ThresholdVector, levels: usize) -> Result<Self> {
        let hi = levels.saturating_sub(1) as f64;
        for (z, &xz) in x.0.iter().enumerate() {
            if !(0.0..=hi).contains(&xz) {
                return Err(Error::OutOfRange {
                    what: format!("threshold x_{z}"),
                    value: xz,
                    lo: 0.0,
                    hi,
                });
            }
        }
        Self::from_fn(x.0.len(), levels, |z, n| threshold_stay(x.0[z], n))
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    #[inline]
    pub fn stay(&self, z: usize, n: usize) -> f64 {
        let n = n.min(self.max_n);
        self.stay[z * (self.max_n + 1) + n]
    }

    /// Componentwise `self <= other` for `n >= 1` on the common range.
    pub fn dominated_by(&self, other: &Self) -> bool {
        let top = self.max_n.max(other.max_n);
        (0..self.n_states).all(|z| (1..=top).all(|n| self.stay(z, n) <= other.stay(z, n)))
    }
}

#[inline]
fn threshold_stay(x: f64, n: usize) -> f64 {
    let fl = x.floor();
    let n = n as f64;
    if n < fl {
        1.0
    } else if n == fl {
        x - fl
    } else {
        0.0
    }
}

/// Per-state thresholds `x = (x_z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(pub Vec<f64>);

impl ThresholdVector {
    pub fn new(x: Vec<f64>) -> Self {
        Self(x)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    #[test]
    fn case_study_stationary_law() {
        let r = ResourceProcess::binary(1.0 / 3.86, 1.0 / 1.93).unwrap();
        assert!((r.stationary()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.stationary()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_state_is_degenerate() {
        let r = ResourceProcess::new(vec![1.0], vec![vec![0.0]]).unwrap();
        assert_eq!(r.stationary(), &[1.0]);
    }

    #[test]
    fn rejects_bad_rates() {
        let e = ResourceProcess::new(vec![0.0, 1.0], vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(e, Err(Error::NonPositiveRate { from: 0, to: 1, .. })));
        let e = ResourceProcess::new(vec![0.0, 1.0], vec![vec![0.0, 1.0]]);
        assert!(matches!(e, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn threshold_materialization() {
        let s = Strategy::from_threshold(&ThresholdVector(vec![3.0]), 10).unwrap();
        let row: Vec<f64> = (0..=4).map(|n| s.stay(0, n)).collect();
        assert_eq!(row, vec![1.0, 1.0, 1.0, 0.0, 0.0]);

        let s = Strategy::from_threshold(&ThresholdVector(vec![2.4]), 10).unwrap();
        assert_eq!(s.stay(0, 1), 1.0);
        assert!((s.stay(0, 2) - 0.4).abs() < 1e-15);
        assert_eq!(s.stay(0, 3), 0.0);

        let s = Strategy::from_threshold(&ThresholdVector(vec![0.0]), 10).unwrap();
        assert_eq!(s.stay(0, 0), 1.0);
        assert!((1..=10).all(|n| s.stay(0, n) == 0.0));
    }

    #[test]
    fn threshold_out_of_range() {
        let e = Strategy::from_threshold(&ThresholdVector(vec![9.5]), 10);
        assert!(matches!(e, Err(Error::OutOfRange { .. })));
        let e = Strategy::from_threshold(&ThresholdVector(vec![-0.1]), 10);
        assert!(matches!(e, Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn power_sharing_eval() {
        let f = SharingFunction::power(vec![0.0, 1.0], 1.0).unwrap();
        assert_eq!(f.eval(1, 4).unwrap(), 0.25);
        assert_eq!(f.eval(0, 7).unwrap(), 0.0);
        assert_eq!(f.eval(1, 0), Err(Error::OccupancyZero));
        assert_eq!(f.sup_norm(50), 1.0);
    }

    #[test]
    fn table_sharing_lookup_and_bounds() {
        let f = SharingFunction::table(vec![vec![3.0, 2.0, 1.5], vec![0.5, 0.5, 0.25]], true).unwrap();
        assert_eq!(f.eval(0, 2).unwrap(), 2.0);
        assert_eq!(f.eval(1, 3).unwrap(), 0.25);
        assert!(matches!(f.eval(0, 4), Err(Error::OutOfRange { .. })));
        let c = SharingFunction::table(vec![vec![0.7; 5]], true).unwrap();
        assert_eq!(c.sup_norm(5), 0.7);
        let bad = SharingFunction::table(vec![vec![1.0, 2.0]], true);
        assert!(matches!(bad, Err(Error::InvalidSharing(_))));
        let zero = SharingFunction::table(vec![vec![0.0, 0.0]], false);
        assert!(matches!(zero, Err(Error::InvalidSharing(_))));
    }

    #[test]
    fn case_study_sup_norm() {
        let f0 = 1.2e4;
        let f = SharingFunction::power(vec![0.85 * f0, 0.85 * 1.2 * f0], 0.5).unwrap();
        let expected = [0.85 * f0, 0.85 * 1.2 * f0]
            .iter()
            .map(|g| g * 1.0_f64.powf(-0.5))
            .fold(0.0, f64::max);
        assert!((f.sup_norm(500) - expected).abs() < 1e-9);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(1.0, 0.95, 20.0).is_ok());
        assert!(ModelParams::new(0.0, 0.95, 20.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 20.0).is_err());
        assert!(ModelParams::new(1.0, 0.5, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn stationary_balance_and_scale_invariance(
            rates in proptest::collection::vec(0.05f64..5.0, 9),
            c in 0.01f64..100.0,
        ) {
            let m = 3;
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|z| (0..m).map(|y| if z == y { 0.0 } else { rates[z * m + y] }).collect())
                .collect();
            let r = ResourceProcess::new(vec![0.0, 1.0, 2.0], rows).unwrap();
            let pi = r.stationary();
            prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for y in 0..m {
                let inflow: f64 = (0..m).filter(|&z| z != y).map(|z| pi[z] * r.rate(z, y)).sum();
                prop_assert!((inflow - pi[y] * r.exit_rate(y)).abs() < 1e-10);
            }
            let s = r.scaled(c).unwrap();
            for (a, b) in pi.iter().zip(s.stationary()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn threshold_strategy_is_monotone(
            x in proptest::collection::vec(0.0f64..19.0, 2),
            dx in proptest::collection::vec(0.0f64..5.0, 2),
        ) {
            let y: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| (a + d).min(19.0)).collect();
            let sx = Strategy::from_threshold(&ThresholdVector(x), 20).unwrap();
            let sy = Strategy::from_threshold(&ThresholdVector(y), 20).unwrap();
            prop_assert!(sx.dominated_by(&sy));
        }

        #[test]
        fn power_sharing_is_decreasing(alpha in 0.01f64..4.0, levels in 2usize..300) {
            let f = SharingFunction::power(vec![0.0, 1.0, 2.5], alpha).unwrap();
            prop_assert!(f.tabulate(levels).unwrap().is_decreasing());
        }
    }
}
