//! Box-constrained Nelder-Mead simplex search.
//!
//! Standard reflection / expansion / contraction / shrink steps with
//! coefficients 1, 2, 0.5, 0.5. Trial points outside the box are clamped onto
//! it before they are evaluated, so every vertex is feasible.

use serde::Serialize;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Edge length of the initial simplex along each axis.
    pub initial_step: Vec<f64>,
    pub max_iterations: usize,
    /// Stop once the simplex diameter (max vertex distance to the best) is below this.
    pub x_tol: f64,
    /// Stop once `f_worst - f_best` is below this.
    pub f_tol: f64,
}

impl NelderMeadOptions {
    pub fn with_step(initial_step: Vec<f64>) -> Self {
        Self {
            initial_step,
            max_iterations: 2000,
            x_tol: 1e-10,
            f_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NelderMeadResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `f` over the box `bounds` starting from `start`.
///
/// Objective values of `NaN` are treated as `+inf`.
pub fn nelder_mead_minimize<F>(
    mut f: F,
    start: &[f64],
    bounds: &[(f64, f64)],
    opts: &NelderMeadOptions,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    assert_eq!(bounds.len(), dim, "one bound per coordinate");
    assert_eq!(opts.initial_step.len(), dim, "one initial step per coordinate");
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut x0 = start.to_vec();
    clamp_into(&mut x0, bounds);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(&x0);
    simplex.push((x0.clone(), f0));
    for i in 0..dim {
        let mut p = x0.clone();
        let (lo, hi) = bounds[i];
        let step = opts.initial_step[i];
        p[i] = if p[i] + step <= hi { p[i] + step } else { p[i] - step };
        p[i] = p[i].clamp(lo, hi);
        let fp = eval(&p);
        simplex.push((p, fp));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    loop {
        // Stable sort keeps earlier vertices first on ties.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < opts.x_tol || (worst - best).abs() < opts.f_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (p, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let along = |coef: f64, from: &[f64], out: &mut [f64]| {
            for k in 0..dim {
                out[k] = centroid[k] + coef * (centroid[k] - from[k]);
            }
            clamp_into(out, bounds);
        };

        let worst_point = simplex[dim].0.clone();
        along(REFLECT, &worst_point, &mut trial);
        let reflected = trial.clone();
        let fr = eval(&reflected);
        let second_worst = simplex[dim - 1].1;

        if fr < best {
            along(EXPAND, &worst_point, &mut trial);
            let fe = eval(&trial);
            simplex[dim] = if fe < fr { (trial.clone(), fe) } else { (reflected, fr) };
            continue;
        }
        if fr < second_worst {
            simplex[dim] = (reflected, fr);
            continue;
        }
        if fr < worst {
            // Outside contraction.
            along(CONTRACT * REFLECT, &worst_point, &mut trial);
            let fc = eval(&trial);
            if fc <= fr {
                simplex[dim] = (trial.clone(), fc);
                continue;
            }
        } else {
            // Inside contraction.
            along(-CONTRACT, &worst_point, &mut trial);
            let fc = eval(&trial);
            if fc < worst {
                simplex[dim] = (trial.clone(), fc);
                continue;
            }
        }
        let anchor = simplex[0].0.clone();
        for (p, fp) in simplex.iter_mut().skip(1) {
            for (v, a) in p.iter_mut().zip(&anchor) {
                *v = a + SHRINK * (*v - a);
            }
            *fp = eval(p);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (point, value) = simplex.swap_remove(0);
    NelderMeadResult {
        point,
        value,
        iterations,
        evaluations,
        converged,
    }
}
