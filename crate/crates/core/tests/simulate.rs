use nomad_mfe::ctmc::solve_kappa;
use nomad_mfe::equilibrium::{solve_mfe, EquilibriumResult, SolverConfig};
use nomad_mfe::model::{Model, ModelParams, ResourceProcess, SharingFunction, Strategy, ThresholdVector};
use nomad_mfe::simulate::{
    coupled_dominance_replications, ks_dominance, simulate_coupled_dominance, simulate_finite_system,
    simulate_location, FiniteSystemConfig, Horizon,
};
use nomad_mfe::welfare::welfare_per_location;

fn base_model() -> Model {
    Model::new(
        ModelParams::new(1.0, 0.95, 20.0).unwrap(),
        ResourceProcess::binary(0.25, 0.25).unwrap(),
        SharingFunction::power(vec![0.0, 1.0], 1.0).unwrap(),
    )
    .unwrap()
}

fn solved() -> (Model, EquilibriumResult, Strategy) {
    let model = base_model();
    let cfg = SolverConfig::default();
    let r = solve_mfe(&model, &cfg).unwrap();
    let s = Strategy::from_threshold(&r.x_star, cfg.levels).unwrap();
    (model, r, s)
}

#[test]
fn infinite_server_mean() {
    let params = ModelParams::new(1.0, 0.5, 2.0).unwrap();
    let resource = ResourceProcess::new(vec![1.0], vec![vec![0.0]]).unwrap();
    let leave = Strategy::constant(1, 60, 0.0).unwrap();
    let st = simulate_location(&params, &resource, &leave, 2.0, Horizon::Time(1e5), 7, None).unwrap();
    assert!(st.occupancy_half_width > 0.0);
    assert!(
        (st.mean_occupancy - 2.0).abs() <= 3.0 * st.occupancy_half_width,
        "{} +- {}",
        st.mean_occupancy,
        st.occupancy_half_width
    );
}

#[test]
fn equilibrium_chain_matches_stationary_law() {
    let (model, r, s) = solved();
    let st = simulate_location(
        &model.params,
        &model.resource,
        &s,
        r.kappa_star,
        Horizon::Events(1_000_000),
        1,
        Some(&model.sharing),
    )
    .unwrap();
    let tv = st.distribution.total_variation(&r.pi_star);
    assert!(tv <= 0.02, "tv {tv}");
    assert!((st.distribution.prob.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

    // Payoff rate against welfare per location.
    let w_l = welfare_per_location(&r.pi_star, &model.sharing, model.params.lambda).unwrap();
    let (rate, hw) = (st.payoff_rate.unwrap(), st.payoff_half_width.unwrap());
    assert!((rate - w_l).abs() <= 3.0 * hw, "{rate} +- {hw} vs {w_l}");
}

#[test]
fn same_seed_same_run() {
    let (model, r, s) = solved();
    let run = |seed| {
        simulate_location(&model.params, &model.resource, &s, r.kappa_star, Horizon::Events(20_000), seed, None).unwrap()
    };
    let (a, b) = (run(5), run(5));
    assert_eq!(a.distribution, b.distribution);
    assert_eq!(a.elapsed, b.elapsed);
    assert_ne!(run(6).distribution, a.distribution);

    let cfg = FiniteSystemConfig {
        locations: 4,
        horizon: 50.0,
        warmup: 5.0,
        seed: 9,
    };
    let small = Model::new(
        ModelParams::new(1.0, 0.9, 3.0).unwrap(),
        model.resource.clone(),
        model.sharing.clone(),
    )
    .unwrap();
    let st = Strategy::from_threshold(&ThresholdVector::new(vec![1.0, 4.0]), 20).unwrap();
    let f1 = simulate_finite_system(&cfg, &small.params, &small.resource, &small.sharing, &st).unwrap();
    let f2 = simulate_finite_system(&cfg, &small.params, &small.resource, &small.sharing, &st).unwrap();
    assert_eq!(f1.payoff_samples, f2.payoff_samples);
    assert_eq!(f1.events, f2.events);
}

#[test]
fn coupling_sandwich_holds_on_every_run() {
    let (model, r, s) = solved();
    let reps = coupled_dominance_replications(&model.params, &model.resource, &s, r.kappa_star, Horizon::Time(200.0), 0, 200);
    assert_eq!(reps.len(), 200);
    for rep in &reps {
        assert!(rep.sandwich_held(), "seed {}: {:?}", rep.seed, rep);
        assert!(rep.events > 0);
    }
}

#[test]
fn extreme_strategies_coincide_with_the_bounds() {
    let model = base_model();
    let levels = 200;
    let stay = Strategy::constant(2, levels, 1.0).unwrap();
    let leave = Strategy::constant(2, levels, 0.0).unwrap();
    for seed in 0..20 {
        let up = simulate_coupled_dominance(&model.params, &model.resource, &stay, 3.0, Horizon::Time(100.0), seed);
        assert!(up.always_equal_upper && up.sandwich_held());
        let low = simulate_coupled_dominance(&model.params, &model.resource, &leave, 3.0, Horizon::Time(100.0), seed);
        assert!(low.always_equal_lower && low.sandwich_held());
    }
}

#[test]
fn larger_stay_probabilities_dominate_in_law() {
    let model = base_model();
    let levels = 200;
    let kappa = 4.0;
    let small = Strategy::from_threshold(&ThresholdVector::new(vec![2.0, 8.0]), levels).unwrap();
    let large = Strategy::from_threshold(&ThresholdVector::new(vec![6.0, 20.0]), levels).unwrap();
    let at = |s: &Strategy, seed| -> Vec<usize> {
        coupled_dominance_replications(&model.params, &model.resource, s, kappa, Horizon::Time(50.0), seed, 200)
            .iter()
            .map(|r| r.final_state.1)
            .collect()
    };
    let (a, b) = (at(&small, 100), at(&large, 10_000));
    let ks = ks_dominance(&a, &b, 0.01);
    assert!(!ks.rejected, "{ks:?}");
    // The reversed claim is clearly rejected.
    assert!(ks_dominance(&b, &a, 0.01).rejected);
}

#[test]
fn finite_system_tracks_the_mean_field() {
    let (model, r, s) = solved();
    let cfg = FiniteSystemConfig {
        locations: 50,
        horizon: 2000.0,
        warmup: 200.0,
        seed: 3,
    };
    let fs = simulate_finite_system(&cfg, &model.params, &model.resource, &model.sharing, &s).unwrap();
    assert_eq!(fs.agents, 1000);
    assert_eq!(fs.conservation_violations, 0);
    let beta = model.params.beta;
    assert!((fs.mean_occupancy - beta).abs() <= 3.0 * fs.occupancy_half_width + 1e-9);
    let tv = fs.distribution.total_variation(&r.pi_star);
    assert!(tv <= 0.1, "tv {tv}");
    let rel = (fs.payoff_mean - r.v_sw_star).abs() / r.v_sw_star;
    assert!(rel <= 0.05, "payoff {} vs {}", fs.payoff_mean, r.v_sw_star);
}

#[test]
fn kappa_from_simulation_matches_the_target_density() {
    // Under the solved arrival rate the simulated occupancy lands on beta.
    let model = base_model();
    let s = Strategy::from_threshold(&ThresholdVector::new(vec![4.0, 30.0]), 200).unwrap();
    let (kappa, _) = solve_kappa(&model.params, &model.resource, &s, 200, 1e-6).unwrap();
    let st = simulate_location(&model.params, &model.resource, &s, kappa, Horizon::Events(1_000_000), 2, None).unwrap();
    assert!(
        (st.mean_occupancy - model.params.beta).abs() <= 3.0 * st.occupancy_half_width,
        "{} +- {}",
        st.mean_occupancy,
        st.occupancy_half_width
    );
}
