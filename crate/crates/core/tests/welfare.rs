use nomad_mfe::equilibrium::{solve_mfe, SolverConfig};
use nomad_mfe::model::{Model, ModelParams, ResourceProcess, SharingFunction};
use nomad_mfe::welfare::{case_study_revenues, sweep, welfare_per_location, SweepParameter};

fn model(alpha: f64) -> Model {
    Model::new(
        ModelParams::new(1.0, 0.95, 20.0).unwrap(),
        ResourceProcess::binary(0.25, 0.25).unwrap(),
        SharingFunction::power(vec![0.0, 1.0], alpha).unwrap(),
    )
    .unwrap()
}

#[test]
fn single_value_sweep_is_a_plain_solve() {
    let cfg = SolverConfig::default();
    let m = model(1.0);
    let rows = sweep(&m, &cfg, SweepParameter::Beta, &[20.0]);
    let r = solve_mfe(&m, &cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].x, r.x_star.0);
    assert_eq!(rows[0].v_sw, r.v_sw_star);
    assert_eq!(rows[0].kappa, r.kappa_star);
    let w_l = welfare_per_location(&r.pi_star, &m.sharing, 1.0).unwrap();
    assert_eq!(rows[0].w_l, w_l);
    assert!((rows[0].w_a - w_l / 20.0).abs() <= 1e-12);
}

#[test]
fn mu_sweep_narrows_the_gap() {
    let cfg = SolverConfig::default();
    let mus = [0.25, 0.5, 1.0, 2.0, 4.0];
    let rows = sweep(&model(0.5), &cfg, SweepParameter::Mu, &mus);
    for (r, &mu) in rows.iter().zip(&mus) {
        assert_eq!(r.value, mu);
        assert!(r.accepted, "mu {mu}: dist {}", r.dist);
        assert!((r.w_a - r.w_l / 20.0).abs() <= 1e-12);
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r.x[1] - r.x[0]).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
}

#[test]
fn unit_exponent_welfare_is_nearly_constant_in_mu() {
    let cfg = SolverConfig::default();
    let rows = sweep(&model(1.0), &cfg, SweepParameter::Mu, &[0.25, 0.5, 1.0, 2.0, 4.0]);
    let w: Vec<f64> = rows.iter().map(|r| r.w_l).collect();
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
    assert!(hi - lo <= 0.005 * lo, "{w:?}");
}

#[test]
fn beta_sweep_widens_the_gap() {
    let cfg = SolverConfig::default();
    let rows = sweep(&model(1.0), &cfg, SweepParameter::Beta, &[5.0, 10.0, 20.0, 40.0]);
    assert!(rows.iter().all(|r| r.accepted));
    let gaps: Vec<f64> = rows.iter().map(|r| r.x[1] - r.x[0]).collect();
    assert!(gaps.windows(2).all(|w| w[1] >= w[0]), "{gaps:?}");
    let wa: Vec<f64> = rows.iter().map(|r| r.w_a).collect();
    assert!(wa.windows(2).all(|w| w[1] < w[0]), "{wa:?}");
}

#[test]
fn failing_value_does_not_stop_the_sweep() {
    let cfg = SolverConfig {
        levels: 40,
        ..Default::default()
    };
    let rows = sweep(&model(1.0), &cfg, SweepParameter::Gamma, &[1.5, 0.8]);
    assert!(rows[0].error.is_some() && !rows[0].accepted);
    assert!(rows[1].error.is_none() && rows[1].accepted);
}

#[test]
fn revenue_identities_on_a_solved_market() {
    let m = Model::new(
        ModelParams::new(1.0, 0.9, 6.0).unwrap(),
        ResourceProcess::binary(1.0 / 3.86, 1.0 / 1.93).unwrap(),
        SharingFunction::power(vec![1.0, 1.2], 0.5).unwrap(),
    )
    .unwrap();
    let r = solve_mfe(&m, &SolverConfig { levels: 80, ..Default::default() }).unwrap();
    let f = [1.2e4, 1.44e4];
    for c in [[0.15, 0.15], [0.15, 0.2], [0.0, 0.0]] {
        let row = case_study_revenues(&r.pi_star, &f, &c, 0.5, 12).unwrap();
        assert!((row.dri_rev + row.plat_rev - row.agg_rev).abs() <= 1e-9);
        if c[0] == c[1] {
            assert!((row.plat_rev - c[0] * row.agg_rev).abs() <= 1e-9);
        }
    }
    let all = case_study_revenues(&r.pi_star, &f, &[1.0, 1.0], 0.5, 12).unwrap();
    assert_eq!(all.dri_rev, 0.0);
    assert!(case_study_revenues(&r.pi_star, &f[..1], &[0.1, 0.1], 0.5, 12).is_err());
}
