use ndarray::{Array1, Array2};
use ramen::bench::{mean_and_se, run_experiment, ExperimentConfig, Method, ScenarioSpec};
use ramen::estimator::{baseline, estimate, Baseline};
use ramen::invariance::{evaluate_subset, InvariantNode, InvarianceConfig};
use ramen::nuisance::NuisanceConfig;
use ramen::relax::{gumbel_train, hyperparameter_sweep, GridPoint, TrainConfig};
use ramen::scm::{sample_known_dag, Invariance, KnownDagScenario, PostKind};
use ramen::search::{combinatorial_select, combinatorial_select_with, SearchConfig, SelectionResult};
use ramen::{Environment, Error, MultiEnvDataset, SubsetMask};

fn small(invariance: Invariance, seed: u64) -> (MultiEnvDataset, Vec<f64>) {
    let scenario = KnownDagScenario::new(invariance, PostKind::Collider, 3);
    sample_known_dag(&scenario, 300, 3, seed).unwrap()
}

#[test]
fn search_is_deterministic_and_consistent() {
    let (data, _) = small(Invariance::YOnly, 1);
    let a = combinatorial_select(&data, None, 4).unwrap();
    let b = combinatorial_select(&data, None, 4).unwrap();
    assert_eq!(a, b);
    let recomputed = evaluate_subset(&data, &a.subset, &InvarianceConfig::with_seed(4), &NuisanceConfig::default()).unwrap();
    assert_eq!(recomputed.combined, a.loss);
    assert_eq!(recomputed.node, a.node);
    for s in SubsetMask::enumerate(3, None) {
        assert!(a.loss_table.objective_for(&s).unwrap().combined >= a.loss);
    }
}

#[test]
fn max_size_limits_the_search() {
    let (data, _) = small(Invariance::TY, 2);
    let sel = combinatorial_select(&data, Some(1), 0).unwrap();
    assert!(sel.subset.len() <= 1);
    let evaluated: std::collections::BTreeSet<_> = sel.loss_table.entries.iter().map(|e| e.subset.clone()).collect();
    assert_eq!(evaluated.len(), 4);
}

#[test]
fn zero_covariates_evaluates_the_empty_set() {
    let env = |shift: f64, seed: u64| {
        let mut rng = ramen::seed::rng(seed);
        let t = Array1::from_iter((0..40).map(|_| f64::from(rand::Rng::gen_bool(&mut rng, 0.5) as u8)));
        let y = t.mapv(|v| v + shift + rand::Rng::gen_range(&mut rng, -0.1..0.1));
        Environment::new(Array2::zeros((40, 0)), t, y).unwrap()
    };
    let data = MultiEnvDataset::from_envs(vec![env(0.0, 1), env(0.5, 2)]).unwrap();
    let sel = combinatorial_select(&data, None, 0).unwrap();
    assert!(sel.subset.is_empty());
    assert!(sel.j_t.is_finite() && sel.j_y.is_finite());
}

#[test]
fn single_environment_is_refused() {
    let (data, _) = small(Invariance::TY, 3);
    let one = MultiEnvDataset::from_envs(vec![data.env(0).clone()]).unwrap();
    let err = combinatorial_select(&one, None, 0).unwrap_err();
    assert!(err.to_string().contains("environments"));
}

#[test]
fn degenerate_arm_scores_infinite_not_fatal() {
    // environment 1 has only two control rows, so every outcome loss fails
    let mut rng = ramen::seed::rng(5);
    let mk = |treated: usize, n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let x = Array2::from_shape_fn((n, 1), |_| rand::Rng::gen_range(rng, -1.0..1.0));
        let t = Array1::from_iter((0..n).map(|i| f64::from((i < treated) as u8)));
        let y = &t + &x.column(0);
        Environment::new(x, t, y).unwrap()
    };
    let data = MultiEnvDataset::from_envs(vec![mk(20, 40, &mut rng), mk(38, 40, &mut rng)]).unwrap();
    let err = combinatorial_select(&data, None, 0).unwrap_err();
    assert!(matches!(err, Error::InsufficientArm { env: 1, arm: 0, .. }));
}

#[test]
fn too_many_covariates_needs_a_cap() {
    let n = 12;
    let env = |s: f64| {
        let t = Array1::from_iter((0..n).map(|i| (i % 2) as f64));
        let y = t.mapv(|v| v + s);
        Environment::new(Array2::from_shape_fn((n, 13), |(i, j)| ((i * j) % 5) as f64), t, y).unwrap()
    };
    let data = MultiEnvDataset::from_envs(vec![env(0.0), env(1.0)]).unwrap();
    match combinatorial_select(&data, None, 0) {
        Err(Error::SearchTooLarge { d, subsets }) => {
            assert_eq!(d, 13);
            assert_eq!(subsets, 1 << 13);
        }
        other => panic!("expected a refusal, got {other:?}"),
    }
    let cfg = SearchConfig::new(Some(1), 0);
    assert!(combinatorial_select_with(&data, &cfg).unwrap().subset.len() <= 1);
}

#[test]
fn adjust_none_equals_empty_selection() {
    let (data, _) = small(Invariance::TY, 6);
    let none = baseline(&data, Baseline::AdjustNone).unwrap();
    let empty = estimate(&data, &SelectionResult::fixed(SubsetMask::empty(), InvariantNode::T)).unwrap();
    assert_eq!(none.estimates, empty.estimates);
    assert_eq!(baseline(&data, Baseline::AdjustAll).unwrap().subset, SubsetMask::full(3));
}

#[test]
fn adjust_none_is_difference_in_means_without_confounding() {
    let env = |seed: u64| {
        let mut rng = ramen::seed::rng(seed);
        let t = Array1::from_iter((0..50).map(|_| f64::from(rand::Rng::gen_bool(&mut rng, 0.4) as u8)));
        let y = t.mapv(|v| v + 3.0);
        Environment::new(Array2::zeros((50, 0)), t, y).unwrap()
    };
    let data = MultiEnvDataset::from_envs(vec![env(1), env(2)]).unwrap();
    let report = baseline(&data, Baseline::AdjustNone).unwrap();
    for est in report.estimates {
        assert!((est - 1.0).abs() < 1e-9);
    }
}

#[test]
fn duplicated_environments_get_identical_estimates() {
    let (data, _) = small(Invariance::TY, 7);
    let twice = MultiEnvDataset::from_envs(vec![data.env(0).clone(), data.env(0).clone()]).unwrap();
    let r = estimate(&twice, &SelectionResult::fixed(SubsetMask::new(vec![0, 1]), InvariantNode::Y)).unwrap();
    assert_eq!(r.estimates[0], r.estimates[1]);
}

#[test]
fn gumbel_zero_epochs_is_deterministic() {
    let (data, _) = small(Invariance::TY, 8);
    let mut cfg = TrainConfig::with_seed(3);
    cfg.epochs = 0;
    let a = gumbel_train(&data, &cfg).unwrap();
    let b = gumbel_train(&data, &cfg).unwrap();
    assert_eq!(a.selection, b.selection);
    assert!(a.trace.rows.is_empty());
    assert!(a.w_pi.iter().all(|w| *w == cfg.init_logit));
}

#[test]
fn gumbel_selection_matches_exact_objective() {
    let (data, _) = small(Invariance::YOnly, 9);
    let mut cfg = TrainConfig::with_seed(2);
    cfg.epochs = 40;
    cfg.batch_size = Some(64);
    let run = gumbel_train(&data, &cfg).unwrap();
    let exact = evaluate_subset(&data, &run.selection.subset, &cfg.invariance, &cfg.nuisance).unwrap();
    assert_eq!(exact.combined, run.selection.loss);
    assert!(run.trace.rows.windows(2).all(|p| p[1].tau <= p[0].tau && p[1].tau >= cfg.tau_final));
    let mut csv = Vec::new();
    run.trace.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("epoch,tau,loss_T,loss_Y\n"));
}

#[test]
fn sweep_picks_the_lowest_exact_loss() {
    let (data, _) = small(Invariance::TY, 10);
    let mut base = TrainConfig::with_seed(1);
    base.epochs = 10;
    base.batch_size = Some(64);
    let grid = vec![
        GridPoint { lr: 0.01, tau_init: 0.5, anneal_rate: 0.9 },
        GridPoint { lr: 0.1, tau_init: 1.0, anneal_rate: 0.95 },
    ];
    let out = hyperparameter_sweep(&data, &base, &grid).unwrap();
    let losses: Vec<f64> = out.losses.iter().map(|l| l.unwrap()).collect();
    assert!(losses.iter().all(|l| out.selection.loss <= *l));

    let single = hyperparameter_sweep(&data, &base, &grid[..1]).unwrap();
    assert_eq!(single.best, grid[0].apply(&base));
    assert!(hyperparameter_sweep(&data, &base, &[]).is_err());
}

#[test]
fn bench_rows_and_aggregates() {
    let scenario = KnownDagScenario::new(Invariance::TY, PostKind::Collider, 3);
    let cfg = ExperimentConfig::new(
        ScenarioSpec::KnownDag(scenario),
        200,
        2,
        vec![Method::Combinatorial, Method::AdjustAll, Method::AdjustNone],
        4,
        21,
    );
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 12);
    for m in &cfg.methods {
        let rows: Vec<_> = report.rows_for(*m).collect();
        assert_eq!(rows.len(), 4);
        assert!(rows.windows(2).all(|p| p[0].run < p[1].run));
        let maes: Vec<f64> = rows.iter().map(|r| r.mae.unwrap()).collect();
        let (mean, se) = mean_and_se(&maes);
        let s = report.summary_for(*m).unwrap();
        assert!((s.mean_mae - mean).abs() <= 1e-12);
        assert!((s.standard_error - se).abs() <= 1e-12);
    }
    // every method saw the same data: adjust_none does not depend on the method list
    let solo = ExperimentConfig { methods: vec![Method::AdjustNone], ..cfg.clone() };
    let solo = run_experiment(&solo).unwrap();
    let a: Vec<_> = report.rows_for(Method::AdjustNone).map(|r| r.estimates.clone()).collect();
    let b: Vec<_> = solo.rows_for(Method::AdjustNone).map(|r| r.estimates.clone()).collect();
    assert_eq!(a, b);
}

#[test]
fn bench_records_failures_without_aborting() {
    let scenario = KnownDagScenario::new(Invariance::TY, PostKind::Collider, 3);
    // n below the simulator minimum makes every run fail at sampling
    let cfg = ExperimentConfig::new(ScenarioSpec::KnownDag(scenario), 5, 2, vec![Method::AdjustAll], 2, 0);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.error.is_some()));
    assert_eq!(report.summary[0].failed, 2);
    assert!(report.summary_json().unwrap().contains("reason"));
}

#[test]
fn randomized_null_has_zero_error() {
    let cfg = ExperimentConfig::new(ScenarioSpec::Randomized { noise_sd: 0.0 }, 60, 2, vec![Method::AdjustNone], 1, 3);
    let report = run_experiment(&cfg).unwrap();
    assert!(report.rows[0].mae.unwrap() < 1e-12);
}

#[test]
fn error_shrinks_with_sample_size() {
    let scenario = KnownDagScenario::new(Invariance::TY, PostKind::Noise, 3);
    let mean = |n| {
        let cfg = ExperimentConfig::new(ScenarioSpec::KnownDag(scenario), n, 3, vec![Method::AdjustAll], 20, 4);
        run_experiment(&cfg).unwrap().summary[0].mean_mae
    };
    assert!(mean(2500) < mean(250));
}

#[test]
fn random_dag_scenario_runs() {
    let spec = ScenarioSpec::RandomDag { p: 8, density: 0.4, invariance: Invariance::YOnly, epsilon: 1.0 };
    let cfg = ExperimentConfig::new(spec, 200, 3, vec![Method::AdjustAll, Method::AdjustNone], 2, 9);
    let report = run_experiment(&cfg).unwrap();
    assert!(report.rows.iter().all(|r| r.error.is_none()));
}
