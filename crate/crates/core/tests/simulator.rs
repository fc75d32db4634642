use fxband::simulator::{
    compare_policies, estimate_cost, simulate_path, simulate_paths, write_event_log, PathStreams, SimConfig,
};
use fxband::solver::{solve, solve_t0, SolverConfig};
use fxband::tables::{reference_params, unit_volatility_reaction, MATCHED_COST, REFERENCE_COST};
use fxband::{CostSpec, ReactionLaw, ScalarLaw};

fn cost() -> CostSpec {
    CostSpec::new(REFERENCE_COST).unwrap()
}

#[test]
fn estimate_agrees_with_value_function() {
    let params = reference_params();
    let law = unit_volatility_reaction();
    let sol = solve(&params, &cost(), &law, &SolverConfig::default()).unwrap();
    let cfg = SimConfig {
        x0: 1.4,
        dt: 2e-3,
        horizon: 150.0,
        n_paths: 2000,
        seed: 3,
        crn: true,
    };
    let est = estimate_cost(&sol.policy(), &params, &law, &cost(), &cfg).unwrap();
    let target = sol.value(cfg.x0);
    assert!((est.mean - target).abs() < 3.0 * est.stderr, "{est:?} vs {target}");
}

#[test]
fn larger_cost_means_fewer_interventions() {
    let params = reference_params();
    let config = SolverConfig::default();
    let law = ReactionLaw::none();
    let cfg = SimConfig {
        dt: 5e-3,
        horizon: 100.0,
        n_paths: 500,
        ..SimConfig::default()
    };
    let cheap = solve_t0(&params, &cost(), &config).unwrap();
    let dear_cost = CostSpec::new(MATCHED_COST).unwrap();
    let dear = solve_t0(&params, &dear_cost, &config).unwrap();
    let cheap_est = estimate_cost(&cheap.policy(), &params, &law, &cost(), &cfg).unwrap();
    let dear_est = estimate_cost(&dear.policy(), &params, &law, &dear_cost, &cfg).unwrap();
    assert!(dear_est.mean_interventions_per_unit_time < cheap_est.mean_interventions_per_unit_time);
}

#[test]
fn halving_the_step_changes_little() {
    let params = reference_params();
    let law = unit_volatility_reaction();
    let sol = solve(&params, &cost(), &law, &SolverConfig::default()).unwrap();
    let coarse = SimConfig {
        x0: 1.4,
        dt: 4e-3,
        horizon: 100.0,
        n_paths: 1000,
        seed: 5,
        crn: true,
    };
    let fine = SimConfig { dt: 2e-3, ..coarse };
    let c = estimate_cost(&sol.policy(), &params, &law, &cost(), &coarse).unwrap();
    let f = estimate_cost(&sol.policy(), &params, &law, &cost(), &fine).unwrap();
    let combined = (c.stderr * c.stderr + f.stderr * f.stderr).sqrt();
    let bound = (3.0 * combined).max(0.01 * f.mean.abs());
    assert!((c.mean - f.mean).abs() < bound, "{c:?} vs {f:?}");
}

#[test]
fn truncation_error_bounded_by_discounted_tail() {
    let params = reference_params();
    let law = unit_volatility_reaction();
    let sol = solve(&params, &cost(), &law, &SolverConfig::default()).unwrap();
    let short = SimConfig {
        x0: 1.4,
        dt: 1e-2,
        horizon: 50.0,
        n_paths: 300,
        seed: 9,
        crn: true,
    };
    let long = SimConfig { horizon: 100.0, ..short };
    let a = simulate_paths(&sol.policy(), &params, &law, &cost(), &short, short.seed).unwrap();
    let b = simulate_paths(&sol.policy(), &params, &law, &cost(), &long, long.seed).unwrap();
    let bound = a.iter().map(|o| o.cost).fold(0.0, f64::max);
    let tail = (-params.r * short.horizon).exp();
    for (x, y) in a.iter().zip(&b) {
        // the longer run extends the same path
        assert!(y.cost >= x.cost);
    }
    let mean = |v: &[fxband::simulator::PathOutcome]| v.iter().map(|o| o.cost).sum::<f64>() / v.len() as f64;
    assert!(mean(&b) - mean(&a) < tail * bound);

    // the default horizon leaves a negligible tail
    let default = SimConfig::default();
    assert!((-params.r * default.horizon).exp() * bound < 1e-3 * mean(&b));
}

#[test]
fn baseline_policy_wins_without_reaction() {
    let params = reference_params();
    let config = SolverConfig::default();
    let baseline = solve_t0(&params, &cost(), &config).unwrap();
    let reactive = solve(&params, &cost(), &unit_volatility_reaction(), &config).unwrap();
    let cfg = SimConfig {
        x0: 1.4,
        dt: 2e-3,
        horizon: 100.0,
        n_paths: 1000,
        seed: 21,
        crn: true,
    };
    let cmp = compare_policies(&[baseline.policy(), reactive.policy()], &params, &ReactionLaw::none(), &cost(), &cfg)
        .unwrap();
    assert!(cmp.diff_mean[0][1] <= 2.0 * cmp.diff_stderr[0][1], "{cmp:?}");
    assert!(cmp.diff_stderr[0][1] < cmp.estimates[0].stderr);
}

#[test]
fn independent_streams_without_crn() {
    let params = reference_params();
    let law = unit_volatility_reaction();
    let sol = solve(&params, &cost(), &law, &SolverConfig::default()).unwrap();
    let cfg = SimConfig {
        dt: 1e-2,
        horizon: 30.0,
        n_paths: 64,
        crn: false,
        ..SimConfig::default()
    };
    let cmp = compare_policies(&[sol.policy(), sol.policy()], &params, &law, &cost(), &cfg).unwrap();
    assert_ne!(cmp.estimates[0].mean, cmp.estimates[1].mean);
    let crn = compare_policies(&[sol.policy(), sol.policy()], &params, &law, &cost(), &SimConfig { crn: true, ..cfg })
        .unwrap();
    assert_eq!(crn.estimates[0], crn.estimates[1]);
}

#[test]
fn event_log_csv_obeys_lockout_and_restart() {
    let params = reference_params();
    let law = ReactionLaw {
        t: ScalarLaw::Uniform { lo: 0.0, hi: 1.0 },
        sigma_shift: ScalarLaw::Point(0.1),
        mu_shift: ScalarLaw::Point(0.0),
    };
    let sol = solve(&params, &cost(), &law, &SolverConfig::default()).unwrap();
    let policy = sol.policy();
    let cfg = SimConfig {
        x0: 0.3,
        dt: 1e-3,
        horizon: 40.0,
        n_paths: 1,
        seed: 1,
        crn: true,
    };
    let mut events = Vec::new();
    for path in 0..10 {
        let mut streams = PathStreams::for_path(cfg.seed, path);
        simulate_path(&policy, &params, &law, &cost(), &cfg, &mut streams, path, Some(&mut events)).unwrap();
    }
    let mut csv = Vec::new();
    write_event_log(&events, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();

    let mut last: Option<(usize, f64, f64)> = None;
    let mut interventions = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        let path: usize = f[0].parse().unwrap();
        let t: f64 = f[1].parse().unwrap();
        let x_before: f64 = f[3].parse().unwrap();
        let x_after: f64 = f[4].parse().unwrap();
        let t_drawn: f64 = f[5].parse().unwrap();
        assert!(x_before > 0.0 && x_after > 0.0);
        match f[2] {
            "intervene" => {
                interventions += 1;
                assert_eq!(x_after, policy.alpha);
                assert!(!policy.contains(x_before));
                if let Some((p, t0, wait)) = last {
                    if p == path {
                        assert!(t - t0 >= wait - 1e-9, "path {path}: {t} after {t0} with T={wait}");
                    }
                }
                last = Some((path, t, t_drawn));
            }
            "reaction_end" => assert_eq!(x_before, x_after),
            other => panic!("unknown event {other}"),
        }
    }
    // every path starts below the band and is restarted at t = 0
    assert!(text.lines().skip(1).filter(|l| l.contains(",0,intervene,")).count() == 10);
    assert!(interventions > 10);
}
