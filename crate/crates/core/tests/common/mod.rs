//! Dense brute-force solves built directly from the model rates.

use nalgebra::{DMatrix, DVector};
use nomad_mfe::model::{ModelParams, ResourceProcess, SharingFunction, Strategy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub params: ModelParams,
    pub resource: ResourceProcess,
    pub strategy: Strategy,
    pub sharing: SharingFunction,
    pub kappa: f64,
    pub levels: usize,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let m = rng.random_range(1..=3);
    let levels = rng.random_range(2..=12);
    let rates: Vec<Vec<f64>> = (0..m)
        .map(|z| (0..m).map(|y| if z == y { 0.0 } else { rng.random_range(0.1..3.0) }).collect())
        .collect();
    let resource = ResourceProcess::new((0..m).map(|z| z as f64).collect(), rates).unwrap();
    let params = ModelParams::new(
        rng.random_range(0.5..2.0),
        rng.random_range(0.3..0.95),
        rng.random_range(1.0..5.0),
    )
    .unwrap();
    let stay: Vec<f64> = (0..m * (levels + 1)).map(|_| rng.random::<f64>()).collect();
    let strategy = Strategy::from_fn(m, levels, |z, n| stay[z * (levels + 1) + n]).unwrap();
    let table: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut v = rng.random_range(0.5..3.0);
            (0..levels)
                .map(|_| {
                    let out = v;
                    v *= rng.random_range(0.5..1.0);
                    out
                })
                .collect()
        })
        .collect();
    Instance {
        params,
        resource,
        strategy,
        sharing: SharingFunction::table(table, true).unwrap(),
        kappa: rng.random_range(0.1..5.0),
        levels,
    }
}

/// Balance equations `pi Q = 0`, `sum pi = 1`, with `Q` written out from
/// the model rates.
pub fn dense_stationary(inst: &Instance) -> Vec<f64> {
    let (m, l) = (inst.resource.len(), inst.levels);
    let dim = m * l;
    let idx = |z: usize, n: usize| z * l + n;
    let mut q = DMatrix::<f64>::zeros(dim, dim);
    let p = &inst.params;
    for z in 0..m {
        for n in 0..l {
            let i = idx(z, n);
            for y in 0..m {
                if y != z {
                    q[(i, idx(y, n))] += inst.resource.rate(z, y);
                }
            }
            if n + 1 < l {
                q[(i, idx(z, n + 1))] += inst.kappa;
            }
            if n > 0 {
                q[(i, idx(z, n - 1))] += p.lambda * n as f64 * (1.0 - p.gamma * inst.strategy.stay(z, n));
            }
        }
    }
    for i in 0..dim {
        let s: f64 = (0..dim).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -s;
    }
    let mut a = q.transpose();
    for j in 0..dim {
        a[(dim - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(dim);
    b[dim - 1] = 1.0;
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

/// Stay values of the tagged agent: policy iteration where each policy is
/// evaluated by a dense first-transition linear solve.
pub fn dense_stay_values(inst: &Instance, v_sw: f64) -> Vec<f64> {
    let (m, l) = (inst.resource.len(), inst.levels);
    let dim = m * l;
    let idx = |z: usize, n: usize| z * l + (n - 1);
    let p = &inst.params;
    let f = |z: usize, n: usize| inst.sharing.eval(z, n).unwrap();
    let mut stay = vec![true; dim];
    for _ in 0..200 {
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for z in 0..m {
            for n in 1..=l {
                let i = idx(z, n);
                let leave_rate = (n - 1) as f64 * p.lambda * (1.0 - p.gamma * inst.strategy.stay(z, n));
                let arrive = if n < l { inst.kappa } else { 0.0 };
                let total = p.lambda + arrive + inst.resource.exit_rate(z) + leave_rate;
                a[(i, i)] += total;
                // Own epoch: V = F + gamma * (V_st or V_sw).
                b[i] += p.lambda * f(z, n);
                if stay[i] {
                    a[(i, i)] -= p.lambda * p.gamma;
                } else {
                    b[i] += p.lambda * p.gamma * v_sw;
                }
                if n < l {
                    a[(i, idx(z, n + 1))] -= arrive;
                }
                for y in 0..m {
                    if y != z {
                        a[(i, idx(y, n))] -= inst.resource.rate(z, y);
                    }
                }
                if n > 1 {
                    a[(i, idx(z, n - 1))] -= leave_rate;
                }
            }
        }
        let v: Vec<f64> = a.lu().solve(&b).unwrap().iter().copied().collect();
        let next: Vec<bool> = v.iter().map(|&s| s > v_sw).collect();
        if next == stay {
            return v;
        }
        stay = next;
    }
    panic!("oracle policy iteration did not settle");
}
