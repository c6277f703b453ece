//! Equilibrium welfare, comparative-statics sweeps and the commission case study.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ctmc::StationarySolution;
use crate::equilibrium::{solve_mfe, EquilibriumResult, SolveError, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ResourceProcess, SharingFunction};
use crate::par;

/// Revenues are reported in units of 1e5 per hour.
pub const REVENUE_UNIT: f64 = 1e5;

/// `W_L = sum_{z, n >= 1} lambda n F(z, n) pi(z, n)`.
pub fn welfare_per_location(sol: &StationarySolution, sharing: &SharingFunction, lambda: f64) -> Result<f64> {
    let mut w = 0.0;
    for z in 0..sol.n_states() {
        for n in 1..sol.levels() {
            let p = sol.prob(z, n);
            if p > 0.0 {
                w += lambda * n as f64 * sharing.eval(z, n)? * p;
            }
        }
    }
    Ok(w)
}

/// `W_A = W_L / beta`.
pub fn welfare_per_agent(w_l: f64, beta: f64) -> f64 {
    w_l / beta
}

/// Model parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    /// Every off-diagonal resource rate set to the value.
    Mu,
    Beta,
    Alpha,
    Gamma,
    Lambda,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mu => "mu",
            Self::Beta => "beta",
            Self::Alpha => "alpha",
            Self::Gamma => "gamma",
            Self::Lambda => "lambda",
        }
    }

    /// The base model with this parameter set to `value`.
    pub fn apply(self, base: &Model, value: f64) -> Result<Model> {
        let mut params = base.params;
        let mut resource = base.resource.clone();
        let mut sharing = base.sharing.clone();
        match self {
            Self::Mu => {
                let m = resource.len();
                let rates = (0..m)
                    .map(|z| (0..m).map(|y| if z == y { 0.0 } else { value }).collect())
                    .collect();
                resource = ResourceProcess::new(resource.states().to_vec(), rates)?;
            }
            Self::Beta => params.beta = value,
            Self::Gamma => params.gamma = value,
            Self::Lambda => params.lambda = value,
            Self::Alpha => match &mut sharing {
                SharingFunction::Power { alpha, .. } => *alpha = value,
                SharingFunction::Table { .. } => {
                    return Err(Error::InvalidSharing("alpha sweep needs a power sharing function".into()))
                }
            },
        }
        Model::new(params, resource, sharing)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub x: Vec<f64>,
    pub v_sw: f64,
    pub kappa: f64,
    pub w_l: f64,
    pub w_a: f64,
    pub dist: f64,
    pub accepted: bool,
    pub runtime_secs: f64,
    /// Set when the solve failed before producing any point.
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(param: SweepParameter, value: f64, n_states: usize, runtime_secs: f64, err: String) -> Self {
        Self {
            param: param.name().into(),
            value,
            x: vec![f64::NAN; n_states],
            v_sw: f64::NAN,
            kappa: f64::NAN,
            w_l: f64::NAN,
            w_a: f64::NAN,
            dist: f64::NAN,
            accepted: false,
            runtime_secs,
            error: Some(err),
        }
    }
}

/// Welfare of a solved (possibly unaccepted) equilibrium.
pub fn row_from_result(
    param: &str,
    value: f64,
    model: &Model,
    result: &EquilibriumResult,
    runtime_secs: f64,
) -> Result<SweepRow> {
    let w_l = welfare_per_location(&result.pi_star, &model.sharing, model.params.lambda)?;
    Ok(SweepRow {
        param: param.into(),
        value,
        x: result.x_star.0.clone(),
        v_sw: result.v_sw_star,
        kappa: result.kappa_star,
        w_l,
        w_a: welfare_per_agent(w_l, model.params.beta),
        dist: result.dist_value,
        accepted: result.accepted,
        runtime_secs,
        error: None,
    })
}

/// One fresh equilibrium solve per value; rows keep the input order and a
/// failing value is recorded without stopping the sweep.
pub fn sweep(base: &Model, solver: &SolverConfig, param: SweepParameter, values: &[f64]) -> Vec<SweepRow> {
    par::map(values, |&value| {
        let start = Instant::now();
        let model = match param.apply(base, value) {
            Ok(m) => m,
            Err(e) => return SweepRow::failed(param, value, base.n_states(), 0.0, e.to_string()),
        };
        let solved = solve_mfe(&model, solver);
        let secs = start.elapsed().as_secs_f64();
        let result = match solved {
            Ok(r) => r,
            Err(SolveError::NotFound(r)) => *r,
            Err(SolveError::Model(e)) => return SweepRow::failed(param, value, base.n_states(), secs, e.to_string()),
        };
        row_from_result(param.name(), value, &model, &result, secs)
            .unwrap_or_else(|e| SweepRow::failed(param, value, base.n_states(), secs, e.to_string()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudyRow {
    /// Commission rate per resource state.
    pub commission: Vec<f64>,
    pub dri_rev: f64,
    pub plat_rev: f64,
    pub agg_rev: f64,
    /// Percent change against the base row; `None` on the base row itself.
    pub delta_dri: Option<f64>,
    pub delta_plat: Option<f64>,
    pub delta_agg: Option<f64>,
}

/// Driver, platform and total rider-payment rates, in units of `REVENUE_UNIT`.
///
/// A location in state `(z, n)` collects `f(z) n^(1 - alpha)` from riders, of
/// which the platform keeps the share `c(z)`.
pub fn case_study_revenues(
    pi: &StationarySolution,
    f: &[f64],
    commission: &[f64],
    alpha: f64,
    n_locations: usize,
) -> Result<CaseStudyRow> {
    if f.len() != pi.n_states() || commission.len() != pi.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "case study needs {} rider-payment rates and commissions, got {} and {}",
            pi.n_states(),
            f.len(),
            commission.len()
        )));
    }
    let mut dri = 0.0;
    let mut plat = 0.0;
    for z in 0..pi.n_states() {
        let mut gross = 0.0;
        for n in 1..pi.levels() {
            gross += f[z] * (n as f64).powf(1.0 - alpha) * pi.prob(z, n);
        }
        dri += (1.0 - commission[z]) * gross;
        plat += commission[z] * gross;
    }
    let scale = n_locations as f64 / REVENUE_UNIT;
    Ok(CaseStudyRow {
        commission: commission.to_vec(),
        dri_rev: dri * scale,
        plat_rev: plat * scale,
        agg_rev: (dri + plat) * scale,
        delta_dri: None,
        delta_plat: None,
        delta_agg: None,
    })
}

/// Fills the percent changes of every row against `rows[0]`.
pub fn fill_deltas(rows: &mut [CaseStudyRow]) {
    let Some(base) = rows.first().cloned() else {
        return;
    };
    let pct = |v: f64, b: f64| 100.0 * (v - b) / b;
    for row in rows.iter_mut().skip(1) {
        row.delta_dri = Some(pct(row.dri_rev, base.dri_rev));
        row.delta_plat = Some(pct(row.plat_rev, base.plat_rev));
        row.delta_agg = Some(pct(row.agg_rev, base.agg_rev));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    /// Rider payment rate `f(z)` per resource state.
    pub f: Vec<f64>,
    pub alpha: f64,
    /// Commission scenarios; the first one is the base row.
    pub commissions: Vec<Vec<f64>>,
    pub n_locations: usize,
}

/// One equilibrium solve plus its revenue row.
#[derive(Debug, Clone, Serialize)]
pub struct CaseStudyOutcome {
    pub row: CaseStudyRow,
    pub x: Vec<f64>,
    pub v_sw: f64,
    pub kappa: f64,
    pub dist: f64,
    pub accepted: bool,
    pub boundary_mass: f64,
}

/// Solves the equilibrium under `F(z, n) = (1 - c(z)) f(z) / n^alpha` for
/// every commission scenario and tabulates revenues.
pub fn run_case_study(base: &Model, study: &CaseStudy, solver: &SolverConfig) -> Result<Vec<CaseStudyOutcome>> {
    let m = base.n_states();
    if study.f.len() != m || study.commissions.iter().any(|c| c.len() != m) {
        return Err(Error::DimensionMismatch(format!(
            "case study rates and commissions must cover {m} resource states"
        )));
    }
    let solved: Vec<Result<CaseStudyOutcome>> = par::map(&study.commissions, |c| {
        let g: Vec<f64> = study.f.iter().zip(c).map(|(f, c)| (1.0 - c) * f).collect();
        let model = Model::new(base.params, base.resource.clone(), SharingFunction::power(g, study.alpha)?)?;
        let result = match solve_mfe(&model, solver) {
            Ok(r) => r,
            Err(SolveError::NotFound(r)) => {
                log::warn!("commission {c:?}: equilibrium not accepted (dist {:e})", r.dist_value);
                *r
            }
            Err(SolveError::Model(e)) => return Err(e),
        };
        let row = case_study_revenues(&result.pi_star, &study.f, c, study.alpha, study.n_locations)?;
        Ok(CaseStudyOutcome {
            row,
            x: result.x_star.0.clone(),
            v_sw: result.v_sw_star,
            kappa: result.kappa_star,
            dist: result.dist_value,
            accepted: result.accepted,
            boundary_mass: result.pi_star.boundary_mass(),
        })
    });
    let mut out = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<CaseStudyRow> = out.iter().map(|o| o.row.clone()).collect();
    fill_deltas(&mut rows);
    for (o, r) in out.iter_mut().zip(rows) {
        o.row = r;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mass(m: usize, levels: usize, z: usize, n: usize) -> StationarySolution {
        let mut pi = vec![0.0; m * levels];
        pi[z * levels + n] = 1.0;
        StationarySolution::from_distribution(m, levels, pi, 1.0)
    }

    #[test]
    fn point_mass_welfare() {
        let sol = point_mass(1, 10, 0, 4);
        let f = SharingFunction::power(vec![1.0], 0.5).unwrap();
        assert!((welfare_per_location(&sol, &f, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn occupied_high_state_probability() {
        // F = z / n gives W_L = P(Z = 1, N >= 1).
        let levels = 6;
        let pi: Vec<f64> = (0..2 * levels).map(|i| (i + 1) as f64).collect();
        let total: f64 = pi.iter().sum();
        let pi: Vec<f64> = pi.iter().map(|p| p / total).collect();
        let sol = StationarySolution::from_distribution(2, levels, pi.clone(), 1.0);
        let f = SharingFunction::power(vec![0.0, 1.0], 1.0).unwrap();
        let expect: f64 = pi[levels + 1..].iter().sum();
        assert!((welfare_per_location(&sol, &f, 1.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn per_agent() {
        assert_eq!(welfare_per_agent(10.0, 20.0), 0.5);
        assert_eq!(welfare_per_agent(0.0, 20.0), 0.0);
    }

    #[test]
    fn revenue_split_adds_up() {
        let levels = 8;
        let pi: Vec<f64> = (0..2 * levels).map(|i| 1.0 / (2 * levels) as f64 + 0.0 * i as f64).collect();
        let sol = StationarySolution::from_distribution(2, levels, pi, 1.0);
        let f = [1.2e4, 1.44e4];
        let row = case_study_revenues(&sol, &f, &[0.15, 0.15], 0.5, 12).unwrap();
        assert!((row.dri_rev + row.plat_rev - row.agg_rev).abs() < 1e-9);
        assert!((row.plat_rev - 0.15 * row.agg_rev).abs() < 1e-9);
        let full = case_study_revenues(&sol, &f, &[1.0, 1.0], 0.5, 12).unwrap();
        assert_eq!(full.dri_rev, 0.0);
        assert!((full.plat_rev - row.agg_rev).abs() < 1e-9);
    }

    #[test]
    fn deltas_against_base_row() {
        let mk = |d: f64| CaseStudyRow {
            commission: vec![0.1],
            dri_rev: d,
            plat_rev: 1.0,
            agg_rev: d + 1.0,
            delta_dri: None,
            delta_plat: None,
            delta_agg: None,
        };
        let mut rows = vec![mk(10.0), mk(9.0)];
        fill_deltas(&mut rows);
        assert_eq!(rows[0].delta_dri, None);
        assert!((rows[1].delta_dri.unwrap() + 10.0).abs() < 1e-12);
        assert_eq!(rows[1].delta_plat, Some(0.0));
    }

    #[test]
    fn sweep_parameter_application() {
        let base = Model::new(
            crate::model::ModelParams::new(1.0, 0.95, 20.0).unwrap(),
            ResourceProcess::binary(0.25, 0.25).unwrap(),
            SharingFunction::power(vec![0.0, 1.0], 1.0).unwrap(),
        )
        .unwrap();
        let m = SweepParameter::Mu.apply(&base, 2.0).unwrap();
        assert_eq!(m.resource.rate(0, 1), 2.0);
        assert_eq!(m.resource.rate(1, 0), 2.0);
        let m = SweepParameter::Alpha.apply(&base, 1.5).unwrap();
        assert!(matches!(m.sharing, SharingFunction::Power { alpha, .. } if alpha == 1.5));
        assert_eq!(SweepParameter::Beta.apply(&base, 40.0).unwrap().params.beta, 40.0);
        assert!(SweepParameter::Gamma.apply(&base, 1.5).is_err());
    }
}
