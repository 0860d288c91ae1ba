//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use ramen::bench::{run_experiment, ExperimentConfig, MaeReport, Method, MethodSummary, ScenarioSpec};
use ramen::estimator::aipw_from_predictions;
use ramen::invariance::{cross_u_statistic, half_split, evaluate_subset, InvarianceConfig, ResidualVector};
use ramen::kernel::{gaussian, gaussian_gram, KernelConfig};
use ramen::nuisance::NuisanceConfig;
use ramen::relax::{gumbel_gate_sample, relaxed_term, FixedDraw, Link, MlpModel, ScaleMode};
use ramen::scm::{Invariance, KnownDagScenario, PostKind};
use ramen::seed;

const RUNS: usize = 20;
const N: usize = 2500;
const N_ENV: usize = 5;
const D: usize = 5;
const MASTER_SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn report(id: usize, name: &str, v: &Verdict, failures: &mut usize) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {name:<38} {tag}  {}", v.detail);
    if !v.pass {
        *failures += 1;
    }
}

fn grid_config(scenario: KnownDagScenario, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig::new(ScenarioSpec::KnownDag(scenario), N, N_ENV, methods, RUNS, MASTER_SEED)
}

fn summary(report: &MaeReport, m: Method) -> &MethodSummary {
    report.summary_for(m).expect("method was run")
}

/// `a` beats `b` by more than two joint standard errors.
fn separated(a: &MethodSummary, b: &MethodSummary) -> bool {
    let joint = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
    a.failed == 0 && b.failed == 0 && b.mean_mae - a.mean_mae > 2.0 * joint
}

fn ordering(report: &MaeReport) -> (bool, String) {
    let c = summary(report, Method::Combinatorial);
    let all = summary(report, Method::AdjustAll);
    let none = summary(report, Method::AdjustNone);
    let ok = separated(c, all) && separated(c, none);
    let detail = format!(
        "comb {:.3}±{:.3}, all {:.3}±{:.3}, none {:.3}±{:.3}",
        c.mean_mae, c.standard_error, all.mean_mae, all.standard_error, none.mean_mae, none.standard_error
    );
    (ok, detail)
}

fn excludes(report: &MaeReport, m: Method, column: usize) -> usize {
    report
        .rows_for(m)
        .filter(|r| r.subset.as_ref().is_some_and(|s| !s.contains(column)))
        .count()
}

fn random_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Array2<f64>, f64, u64) {
    let n = rng.gen_range(4..=40);
    let q = rng.gen_range(0..=3);
    let values = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let feats = Array2::from_shape_fn((n, q), |_| rng.gen_range(-3.0..3.0));
    (values, feats, rng.gen_range(0.2..3.0), rng.gen())
}

fn criterion_4() -> Verdict {
    let mut rng = seed::rng(4);
    let mut worst_stat = 0.0f64;
    let mut worst_stud = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..100 {
        let (values, feats, sigma, split_seed) = random_instance(&mut rng);
        let kern = KernelConfig::new(sigma).unwrap();
        let res = ResidualVector::new(Array1::from(values.clone()), feats.clone()).unwrap();
        let fast = cross_u_statistic(&res, &kern, split_seed).unwrap();
        let (first, second) = half_split(values.len(), split_seed);
        let (stat, stud) = common::brute_cross_u(&values, feats.view(), sigma, &first, &second);
        worst_stat = worst_stat.max((fast.statistic - stat).abs());
        worst_stud = worst_stud.max((fast.studentized - stud).abs() / stud.abs().max(1.0));
        for c in [0.1, 10.0] {
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let res = ResidualVector::new(Array1::from(scaled), feats.clone()).unwrap();
            let other = cross_u_statistic(&res, &kern, split_seed).unwrap();
            if fast.standard_error > 1e-10 {
                worst_scale = worst_scale.max((other.studentized - fast.studentized).abs());
            }
        }
    }
    Verdict::new(
        worst_stat <= 1e-12 && worst_stud <= 1e-12 && worst_scale <= 1e-9,
        format!("max |stat diff| {worst_stat:.1e}, max rel |stud diff| {worst_stud:.1e}, max scale drift {worst_scale:.1e}"),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = seed::rng(5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 20 {
        let x = Array2::from_shape_fn((16, 3), |_| rng.gen_range(-3.0..3.0));
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let link = if checked % 2 == 0 { Link::Identity } else { Link::Logistic };
        let target: Vec<f64> = (0..16)
            .map(|_| {
                let v: f64 = rng.gen_range(-1.5..1.5);
                if link == Link::Logistic { f64::from((v > 0.0) as u8) } else { v }
            })
            .collect();
        let model = MlpModel::new(3, 5, &mut rng);
        let draw = FixedDraw { noise: ramen::relax::gumbel_noise(3, &mut rng), tau: 0.7, sigma: 1.3, scale: ScaleMode::Batch };
        let analytic = relaxed_term(&model, link, x.view(), &target, &w, &draw).unwrap();
        if analytic.statistic.abs() <= 1e-6 {
            continue;
        }
        let (d_theta, d_w) = common::finite_difference(&model, link, x.view(), &target, &w, &draw, 1e-5);
        worst = worst
            .max(common::relative_error(&analytic.d_model.flatten(), &d_theta, 1e-8))
            .max(common::relative_error(&analytic.d_logits, &d_w, 1e-8));
        checked += 1;
    }
    Verdict::new(worst <= 1e-4, format!("20 batches, max relative error {worst:.1e}"))
}

fn criterion_6() -> Verdict {
    let draws = 100_000;
    let mut worst = 0.0f64;
    let mut rng = seed::rng(6);
    for w in [-2.0, 0.0, 2.0] {
        for tau in [0.1, 1.0] {
            let on = (0..draws)
                .filter(|_| gumbel_gate_sample(&[w], tau, &mut rng)[0] > 0.5)
                .count();
            let expected = 1.0 / (1.0 + (-w).exp());
            worst = worst.max((on as f64 / draws as f64 - expected).abs());
        }
    }
    Verdict::new(worst <= 0.01, format!("max |P(B > 0.5) - sigmoid(w)| {worst:.4}"))
}

fn criterion_7() -> Verdict {
    let mut rng = seed::rng(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..30);
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect();
        let mut col = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
        let (y, mu0, mu1, pi) = (col(-3.0, 3.0), col(-3.0, 3.0), col(-3.0, 3.0), col(0.01, 0.99));
        let a = |v: &Vec<f64>| Array1::from(v.clone());
        let est = aipw_from_predictions(a(&t).view(), a(&y).view(), a(&mu0).view(), a(&mu1).view(), a(&pi).view()).unwrap();
        worst = worst.max((est - common::aipw_rows(&t, &y, &mu0, &mu1, &pi)).abs());
    }
    let t = Array1::from_iter((0..20).map(|i| (i % 2) as f64));
    let exact = aipw_from_predictions(
        t.view(),
        t.view(),
        Array1::zeros(20).view(),
        Array1::ones(20).view(),
        Array1::from_elem(20, 0.5).view(),
    )
    .unwrap();
    Verdict::new(worst <= 1e-12 && exact == 1.0, format!("max |diff| {worst:.1e}, Y = T case {exact}"))
}

fn criterion_8() -> Verdict {
    let mut rng = seed::rng(8);
    let mut asym = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let mut diag = true;
    for _ in 0..50 {
        let n = rng.gen_range(2..=64);
        let q = rng.gen_range(1..=4);
        let x = Array2::from_shape_fn((n, q), |_| rng.gen_range(-3.0..3.0));
        let sigma = rng.gen_range(0.2..4.0);
        let k = gaussian_gram(x.view(), x.view(), sigma).unwrap();
        for i in 0..n {
            diag &= k[[i, i]] == 1.0;
            for j in 0..n {
                asym = asym.max((k[[i, j]] - k[[j, i]]).abs());
            }
        }
        min_eig = min_eig.min(common::min_eigenvalue(&k));
    }
    let sigma = 1.7;
    let spot = gaussian(&[0.0, 0.0], &[sigma * 0.6, sigma * 0.8], sigma);
    let spot_ok = (spot - (-0.5f64).exp()).abs() <= 1e-12;
    Verdict::new(
        asym <= 1e-12 && min_eig >= -1e-8 && diag && spot_ok,
        format!("asymmetry {asym:.1e}, min eigenvalue {min_eig:.1e}, unit diagonal {diag}, k at distance sigma {spot:.6}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut failures = 0;

    report(4, "cross U-statistic oracle", &criterion_4(), &mut failures);
    report(5, "gradient check", &criterion_5(), &mut failures);
    report(6, "Gumbel gate law", &criterion_6(), &mut failures);
    report(7, "AIPW exactness", &criterion_7(), &mut failures);
    report(8, "kernel suite", &criterion_8(), &mut failures);

    let baselines = vec![Method::Combinatorial, Method::AdjustAll, Method::AdjustNone];
    let collider = |inv| KnownDagScenario::new(inv, PostKind::Collider, D);

    let t0 = Instant::now();
    let ty = run_experiment(&grid_config(collider(Invariance::TY), baselines.clone())).unwrap();
    let ty_secs = t0.elapsed().as_secs_f64();
    let y_scenario = collider(Invariance::YOnly);
    let y_cfg = grid_config(y_scenario, vec![Method::Combinatorial, Method::Gumbel, Method::AdjustAll, Method::AdjustNone]);
    let y_only = run_experiment(&y_cfg).unwrap();
    let t_only = run_experiment(&grid_config(collider(Invariance::TOnly), baselines.clone())).unwrap();

    let c = summary(&ty, Method::Combinatorial);
    report(
        1,
        "ground-truth recovery",
        &Verdict::new(
            c.failed == 0 && c.mean_mae <= 0.15,
            format!("mean MAE {:.3} ± {:.3} over {} runs in {ty_secs:.0} s", c.mean_mae, c.standard_error, c.completed),
        ),
        &mut failures,
    );

    let mut ok = true;
    let mut details = Vec::new();
    for (name, r) in [("TY", &ty), ("Y_only", &y_only), ("T_only", &t_only)] {
        let (pass, d) = ordering(r);
        ok &= pass;
        details.push(format!("{name}: {d}"));
    }
    report(2, "bias ordering", &Verdict::new(ok, details.join("; ")), &mut failures);

    let post = y_scenario.post_column();
    let comb_ex = excludes(&y_only, Method::Combinatorial, post);
    let gum_ex = excludes(&y_only, Method::Gumbel, post);
    report(
        3,
        "collider exclusion",
        &Verdict::new(
            comb_ex * 10 >= RUNS * 9 && gum_ex * 10 >= RUNS * 8,
            format!("combinatorial {comb_ex}/{RUNS}, Gumbel {gum_ex}/{RUNS}"),
        ),
        &mut failures,
    );

    let mut agree = 0;
    let mut worst_ratio = 0.0f64;
    let mut within = true;
    for (comb, gum) in y_only.rows_for(Method::Combinatorial).zip(y_only.rows_for(Method::Gumbel)) {
        let (Some(a), Some(b)) = (&comb.subset, &gum.subset) else {
            within = false;
            continue;
        };
        if a == b {
            agree += 1;
            continue;
        }
        let (data, _) = y_cfg.scenario.sample(N, N_ENV, comb.seed).unwrap();
        let inv = InvarianceConfig::with_seed(comb.seed);
        let nuis = NuisanceConfig::default();
        let best = evaluate_subset(&data, a, &inv, &nuis).unwrap().combined;
        let other = evaluate_subset(&data, b, &inv, &nuis).unwrap().combined;
        let ratio = other / best;
        worst_ratio = worst_ratio.max(ratio);
        within &= other <= 2.0 * best;
    }
    report(
        9,
        "cross-algorithm agreement",
        &Verdict::new(
            agree * 2 > RUNS && within,
            format!("agree {agree}/{RUNS}, worst loss ratio when differing {worst_ratio:.2}"),
        ),
        &mut failures,
    );

    let het = |eps: f64| {
        let scenario = KnownDagScenario::new(Invariance::YOnly, PostKind::Collider, 3).with_epsilon(eps);
        run_experiment(&grid_config(scenario, baselines.clone())).unwrap()
    };
    let flat = het(0.0);
    let mild = het(0.5);
    let flat_comb = summary(&flat, Method::Combinatorial);
    let flat_ok = flat.rows.iter().all(|r| r.error.is_none());
    let (mild_ok, mild_detail) = ordering(&mild);
    report(
        10,
        "degradation under weak heterogeneity",
        &Verdict::new(
            flat_ok && mild_ok,
            format!(
                "eps 0: comb MAE {:.3}±{:.3}, errors {}; eps 0.5: {mild_detail}",
                flat_comb.mean_mae,
                flat_comb.standard_error,
                if flat_ok { "none" } else { "present" }
            ),
        ),
        &mut failures,
    );

    println!("acceptance finished in {:.0} s, {failures} failing", start.elapsed().as_secs_f64());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
