//! The acceptance criteria as runnable checks. Each returns whether it passed
//! and a one-line account of the worst discrepancy seen.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssmreserve::chainladder::{cl_fit, mack_se};
use ssmreserve::estimation::{FitOptions, ModelScore};
use ssmreserve::kalman;
use ssmreserve::models::{build_cc, build_hertig, build_verrall, recipe, BuiltModel, ModelName};
use ssmreserve::simsmooth::{
    draw_missing_responses, draw_states, reserve_distribution, simulate, ReserveOptions, SimulationSmoother,
};
use ssmreserve::ssm::{SsmSpec, TimeStep};
use ssmreserve::stats::{mean, quantile_sorted, sample_variance};
use ssmreserve::triangle::{
    reconstruct_incremental, transform, ResponseKind, Triangle, TriangleKind,
};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dense::{big_kappa, dense_smooth};
use crate::gen::{random_identified_spec, random_runoff, random_spec, SpecOptions};
use crate::gls::{two_way, TwoWay};
use crate::mack::mack_direct;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn max_rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

fn max_rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

/// Filter likelihood and smoothed moments against joint Gaussian
/// conditioning on random proper models, half of them with missing values.
pub fn dense_oracle(n_specs: usize, seed: u64, limit: Duration) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_ll, mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64, 0.0f64);
    let mut n_missing = 0;
    for i in 0..n_specs {
        let missing = if i % 2 == 0 { 0.0 } else { 0.3 };
        let (spec, obs) = random_spec(&mut rng, &SpecOptions { missing, ..Default::default() });
        n_missing += obs.iter().flatten().filter(|v| v.is_none()).count();
        let sm = kalman::smooth(&spec, &obs).expect("proper models always filter");
        let dense = dense_smooth(&spec, &obs);
        worst_ll = worst_ll.max(rel(sm.loglik(), dense.loglik));
        for t in 0..spec.n_times() {
            worst_mean = worst_mean.max(max_rel_vec(&sm.state_mean[t], &dense.smoothed_means[t]));
            worst_cov = worst_cov.max(max_rel_mat(&sm.state_cov[t], &dense.smoothed_covs[t]));
        }
    }
    let elapsed = start.elapsed();
    let tol = 1e-8;
    Outcome {
        passed: worst_ll <= tol && worst_mean <= tol && worst_cov <= tol && elapsed < limit,
        detail: format!(
            "{n_specs} specs ({n_missing} missing slots): max rel err loglik {worst_ll:.1e}, \
             mean {worst_mean:.1e}, var {worst_cov:.1e} (tol {tol:.0e})"
        ),
        elapsed,
    }
}

/// Exact-diffuse smoothed states against a proper prior with variance 1e8
/// on the diffuse elements, computed by the filter and by the dense oracle.
pub fn diffuse_limit(n_specs: usize, seed: u64, limit: Duration) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_filter, mut worst_dense) = (0.0f64, 0.0f64);
    let mut diffuse_counts = [0usize; 4];
    for i in 0..n_specs {
        let opts = SpecOptions {
            n_diffuse: 1 + i % 3,
            missing: if i % 4 == 3 { 0.2 } else { 0.0 },
            ..Default::default()
        };
        let (spec, obs) = random_identified_spec(&mut rng, &opts);
        diffuse_counts[spec.n_diffuse()] += 1;
        let exact = kalman::smooth(&spec, &obs).expect("identified");
        let kappa = big_kappa(&spec, 1e8);
        let approx = kalman::smooth(&kappa, &obs).expect("proper");
        let dense = dense_smooth(&kappa, &obs);
        for t in 0..spec.n_times() {
            worst_filter = worst_filter.max(max_rel_vec(&exact.state_mean[t], &approx.state_mean[t]));
            worst_dense = worst_dense.max(max_rel_vec(&exact.state_mean[t], &dense.smoothed_means[t]));
        }
    }
    let elapsed = start.elapsed();
    let tol = 1e-4;
    Outcome {
        passed: worst_filter <= tol && worst_dense <= tol && elapsed < limit,
        detail: format!(
            "{n_specs} specs (d=1:{} d=2:{} d=3:{}): max rel diff vs big-kappa filter {worst_filter:.1e}, \
             vs big-kappa dense {worst_dense:.1e} (tol {tol:.0e})",
            diffuse_counts[1], diffuse_counts[2], diffuse_counts[3]
        ),
        elapsed,
    }
}

fn scalar_step(z: &[f64], h: f64, transition: DMatrix<f64>, q: DMatrix<f64>) -> TimeStep {
    TimeStep::new(
        DMatrix::from_row_slice(1, z.len(), z),
        DVector::from_element(1, h),
        transition,
        q,
    )
}

/// The five fixed models of the simulation smoother moment check.
/// Name, model and data.
pub type MomentModel = (&'static str, SsmSpec, Vec<Vec<Option<f64>>>);

pub fn moment_models() -> Vec<MomentModel> {
    let one = |v: &[Option<f64>]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
    let mut out = Vec::new();

    let level = |n: usize, diffuse: bool| {
        SsmSpec::from_generator(
            n,
            DVector::from_element(1, 0.5),
            DMatrix::from_element(1, 1, if diffuse { 0.0 } else { 2.0 }),
            vec![diffuse],
            |_| {
                scalar_step(
                    &[1.0],
                    0.8,
                    DMatrix::identity(1, 1),
                    DMatrix::from_element(1, 1, 0.3),
                )
            },
        )
    };
    out.push((
        "proper local level",
        level(6, false),
        one(&[Some(1.0), Some(0.2), None, Some(1.5), Some(0.9), None]),
    ));
    out.push((
        "diffuse local level",
        level(6, true),
        one(&[Some(1.0), None, Some(2.0), Some(1.2), Some(1.6), None]),
    ));

    let trend = SsmSpec::from_generator(
        8,
        DVector::zeros(2),
        DMatrix::zeros(2, 2),
        vec![true, true],
        |_| {
            scalar_step(
                &[1.0, 0.0],
                0.5,
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
                DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.05])),
            )
        },
    );
    out.push((
        "diffuse local linear trend",
        trend,
        one(&[Some(1.0), Some(1.4), None, Some(2.9), Some(3.1), None, Some(4.8), None]),
    ));

    let bivariate = SsmSpec::from_generator(
        5,
        DVector::from_vec(vec![0.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
        vec![false, false],
        |t| TimeStep::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0 + 0.1 * t as f64]),
            DVector::from_vec(vec![0.4, 0.6]),
            DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
        ),
    );
    out.push((
        "bivariate proper",
        bivariate,
        vec![
            vec![Some(0.3), Some(1.1)],
            vec![None, Some(0.8)],
            vec![Some(-0.2), None],
            vec![None, None],
            vec![Some(0.5), Some(1.4)],
        ],
    ));

    let xs = [0.5, 1.0, -0.3, 2.0, 0.8, 1.5, -1.0];
    let mut regression = SsmSpec::from_generator(
        7,
        DVector::zeros(1),
        DMatrix::zeros(1, 1),
        vec![true],
        |_| scalar_step(&[1.0], 0.3, DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 0.1)),
    );
    for (s, x) in regression.steps.iter_mut().zip(xs) {
        s.x = DMatrix::from_element(1, 1, x);
    }
    out.push((
        "level plus diffuse regression",
        regression,
        one(&[Some(1.2), Some(1.9), None, Some(3.5), Some(2.0), Some(2.6), None]),
    ));
    out
}

/// One-sample Kolmogorov-Smirnov statistic against a normal.
fn ks_normal(sample: &mut [f64], mean: f64, sd: f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let dist = Normal::new(mean, sd).expect("positive sd");
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = dist.cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Draw moments of the five fixed models against the smoother, and the
/// distribution of one missing response against its predictive normal.
pub fn simsmooth_moments(n_draws: usize, seed: u64, limit: Duration) -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut passed = true;
    let (mut n_mean_checks, mut worst_z, mut worst_var) = (0usize, 0.0f64, 0.0f64);
    for (m, (name, spec, obs)) in moment_models().into_iter().enumerate() {
        let sm = kalman::smooth(&spec, &obs).expect("identified");
        let draws = draw_states(&spec, &obs, n_draws, seed + m as u64).expect("draws");
        let k = sm.state_mean[0].len();
        for t in 0..spec.n_times() {
            for a in 0..k {
                let xs: Vec<f64> = draws.iter().map(|d| d[t][a]).collect();
                let (mu, var) = (mean(&xs), sample_variance(&xs));
                let (target_mu, target_var) = (sm.state_mean[t][a], sm.state_cov[t][(a, a)]);
                let se = (var / n_draws as f64).sqrt();
                let z = (mu - target_mu).abs() / se;
                let dv = (var / target_var - 1.0).abs();
                n_mean_checks += 1;
                worst_z = worst_z.max(z);
                worst_var = worst_var.max(dv);
                if z > 3.0 || dv > 0.05 {
                    passed = false;
                    lines.push(format!("{name} t={} state {a}: z={z:.2} var dev {dv:.3}", t + 1));
                }
            }
        }
    }
    // one missing response: the diffuse local level's last slot
    let (_, spec, obs) = moment_models().remove(1);
    let sm = kalman::smooth(&spec, &obs).expect("identified");
    let p = &sm.predictions[5][0];
    let n_ks = 20_000;
    let draws = draw_missing_responses(&spec, &obs, n_ks, seed + 100).expect("draws");
    let mut xs: Vec<f64> = draws.iter().map(|d| d[5][0]).collect();
    let d = ks_normal(&mut xs, p.mean, p.variance.sqrt());
    let crit = 1.628 / (n_ks as f64).sqrt();
    if d >= crit {
        passed = false;
    }
    let elapsed = start.elapsed();
    let mut detail = format!(
        "5 models, {n_draws} draws: {n_mean_checks} means, worst |z| {worst_z:.2} (limit 3), \
         worst var dev {:.2}% (limit 5%); KS D={d:.4} vs 1% critical {crit:.4}",
        100.0 * worst_var
    );
    if !lines.is_empty() {
        detail.push_str(&format!("; exceedances: {}", lines.join(", ")));
    }
    Outcome {
        passed: passed && elapsed < limit,
        detail,
        elapsed,
    }
}

/// 5x5 triangle used by the pipeline and nesting checks.
pub fn fixture_5x5(variant: u64) -> Triangle {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + variant);
    let level = [1000.0, 600.0, 300.0, 120.0, 40.0];
    let rows = (0..5)
        .map(|i| {
            (0..5)
                .map(|j| {
                    let noise: f64 = rng.random_range(-0.15..0.15);
                    (i + j < 5).then(|| level[j] * (1.0 + 0.08 * i as f64) * noise.exp())
                })
                .collect()
        })
        .collect();
    Triangle::from_rows(rows, TriangleKind::Incremental).expect("fixture")
}

/// Exactly multiplicative runoff triangle: every model here reproduces it
/// without noise.
pub fn multiplicative_5x5() -> Triangle {
    let row = [1.0, 1.1, 0.9, 1.2, 1.05];
    let col = [1000.0, 600.0, 300.0, 120.0, 40.0];
    let rows = (0..5)
        .map(|i| (0..5).map(|j| (i + j < 5).then(|| row[i] * col[j])).collect())
        .collect();
    Triangle::from_rows(rows, TriangleKind::Incremental).expect("fixture")
}

/// Median of exp-transformed missing-cell draws against exp of the smoothed
/// mean, and point-mass draws for zero-noise models.
pub fn reserve_identity(n_draws: usize, seed: u64) -> Outcome {
    let start = Instant::now();
    let t = fixture_5x5(0);
    let mut worst_z = 0.0f64;
    let mut n_cells = 0;
    let mut passed = true;
    for (m, model) in [build_cc(&t).unwrap(), build_verrall(&t).unwrap()].iter().enumerate() {
        let theta = model.map.initial_theta();
        let spec = model.spec_at(&theta).unwrap();
        let obs = model.observations();
        let sm = kalman::smooth(&spec, &obs).unwrap();
        let sim = SimulationSmoother::new(&spec, &obs).unwrap();
        let draws: Vec<Vec<Vec<f64>>> = (0..n_draws)
            .map(|i| sim.response_draw(seed + m as u64, i, true))
            .collect();
        for (ti, row) in obs.iter().enumerate() {
            for (e, o) in row.iter().enumerate() {
                if o.is_some() {
                    continue;
                }
                let mut xs: Vec<f64> = draws.iter().map(|d| d[ti][e].exp()).collect();
                xs.sort_by(f64::total_cmp);
                let med = quantile_sorted(&xs, 0.5);
                let p = &sm.predictions[ti][e];
                let target = p.mean.exp();
                // asymptotic sd of the sample median of a log-normal
                let se = target * p.variance.sqrt() * (std::f64::consts::PI / 2.0).sqrt() / (n_draws as f64).sqrt();
                let z = (med - target).abs() / se;
                worst_z = worst_z.max(z);
                n_cells += 1;
                if z > 3.0 {
                    passed = false;
                }
            }
        }
    }

    // zero noise: every draw equals the plug-in reserve
    let exact = multiplicative_5x5();
    let mut point_mass = Vec::new();
    for model in [build_hertig(&exact).unwrap(), build_cc(&exact).unwrap(), build_verrall(&exact).unwrap()] {
        let theta = vec![f64::NEG_INFINITY; model.map.q()];
        let opts = ReserveOptions {
            n_draws: 200,
            seed,
            ..Default::default()
        };
        let dist = reserve_distribution(&model, &theta, &exact, &opts).unwrap();
        let all_equal = dist.draws.iter().all(|&d| d == dist.point_estimate);
        passed &= all_equal;
        point_mass.push(format!("{} {}", model.name, if all_equal { "exact" } else { "differs" }));
    }
    Outcome {
        passed,
        detail: format!(
            "{n_cells} missing cells x {n_draws} draws: worst median |z| {worst_z:.2} (limit 3); \
             zero-noise point mass: {}",
            point_mass.join(", ")
        ),
        elapsed: start.elapsed(),
    }
}

/// Hand fixture, multiplicative triangles and the direct Mack oracle.
pub fn chain_ladder_fixtures(n_random: usize, seed: u64) -> Outcome {
    let start = Instant::now();
    let hand = Triangle::from_rows(
        vec![
            vec![Some(100.0), Some(150.0), Some(175.0)],
            vec![Some(110.0), Some(165.0), None],
            vec![Some(120.0), None, None],
        ],
        TriangleKind::Cumulative,
    )
    .unwrap();
    let r = cl_fit(&hand).unwrap();
    let hand_ok = (r.factors[0] - 1.5).abs() < 1e-12
        && (r.factors[1] - 7.0 / 6.0).abs() < 1e-12
        && (r.total_reserve - 117.5).abs() < 1e-9;

    let mut mult_se = 0.0f64;
    for n in 3..=8 {
        let rows = (0..n)
            .map(|i| {
                let mut c = 500.0 * (1.0 + 0.2 * i as f64);
                (0..n)
                    .map(|j| {
                        if j > 0 {
                            c *= 1.0 + 1.5 / (j * j) as f64;
                        }
                        (i + j < n).then_some(c)
                    })
                    .collect()
            })
            .collect();
        let t = Triangle::from_rows(rows, TriangleKind::Cumulative).unwrap();
        let m = mack_se(&t).unwrap();
        let res = cl_fit(&t).unwrap().total_reserve;
        mult_se = mult_se.max(m.std_error / res);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..n_random {
        let n = 4 + i % 5;
        let t = random_runoff(&mut rng, n);
        let cum = ssmreserve::triangle::cumulate(&t).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|r| (0..n - r).map(|c| cum.value(r, c).unwrap()).collect()).collect();
        let oracle = mack_direct(&rows);
        let fit = cl_fit(&t).unwrap();
        let m = fit.mack.unwrap();
        worst = worst
            .max((m.std_error - oracle.std_error()).abs() / oracle.std_error())
            .max((fit.total_reserve - oracle.reserve).abs() / oracle.reserve);
    }
    Outcome {
        passed: hand_ok && mult_se < 1e-9 && worst <= 1e-10,
        detail: format!(
            "3x3 fixture f=({:.4}, {:.4}) reserve {} [{}]; multiplicative max SE/reserve {mult_se:.1e}; \
             {n_random} random 4x4-8x8 vs direct Mack: max rel err {worst:.1e} (tol 1e-10)",
            r.factors[0],
            r.factors[1],
            r.total_reserve,
            if hand_ok { "ok" } else { "MISMATCH" }
        ),
        elapsed: start.elapsed(),
    }
}

fn prediction_means(model: &BuiltModel, natural: &[f64]) -> (f64, Vec<Vec<f64>>) {
    let spec = model.map.materialize_natural(natural).unwrap();
    let sm = kalman::smooth(&spec, &model.observations()).unwrap();
    let mut grid = vec![vec![0.0; model.series.n_cols]; model.series.n_rows];
    for (step, preds) in model.series.steps.iter().zip(&sm.predictions) {
        for (c, p) in step.cells.iter().zip(preds) {
            grid[c.row][c.lag] = p.mean;
        }
    }
    (sm.loglik(), grid)
}

fn max_abs_grid(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Boundary limits of the nested recipes and the closed form of the
/// time-invariant lag effects.
pub fn nesting(n_fixtures: u64) -> Outcome {
    let start = Instant::now();
    let (mut cc_gap, mut verrall_gap, mut delta_gap, mut fitted_gap) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for v in 0..n_fixtures {
        let t = fixture_5x5(v);
        let hertig = build_hertig(&t).unwrap();
        let cc = build_cc(&t).unwrap();
        let opts = FitOptions::default();
        let hf = hertig.fit(&opts).unwrap();
        let s2 = hf.params[0].value;
        let (ll_h, pred_h) = prediction_means(&hertig, &[s2]);
        let (ll_c, pred_c) = prediction_means(&cc, &[s2, 0.0]);
        cc_gap = cc_gap.max((ll_h - ll_c).abs()).max(max_abs_grid(&pred_h, &pred_c));
        let cf = cc.fit(&opts).unwrap();
        fitted_gap = fitted_gap.min(cf.loglik - hf.loglik);

        // Hertig lag effects are the observed column means
        let spec = hertig.map.materialize_natural(&[s2]).unwrap();
        let sm = kalman::smooth(&spec, &hertig.observations()).unwrap();
        let grid = transform(&t, ResponseKind::LogDevRatio).unwrap().grid;
        for j in 0..5 {
            let col: Vec<f64> = (0..5).filter_map(|i| grid.get(i, j)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            delta_gap = delta_gap.max((sm.state_mean[0][j] - m).abs());
        }

        // Verrall with frozen effects is the two-way regression
        let verrall = build_verrall(&t).unwrap();
        let resp = transform(&t, ResponseKind::LogIncremental).unwrap().grid;
        let ls = two_way(&resp.rows(), TwoWay { rows: true, cols: true });
        let s2 = ls.restricted_sigma2();
        let (ll_v, pred_v) = prediction_means(&verrall, &[s2, 0.0, 0.0]);
        verrall_gap = verrall_gap
            .max((ll_v - ls.restricted_loglik(s2)).abs())
            .max(max_abs_grid(&pred_v, &ls.fitted));
    }
    let tol = 1e-6;
    Outcome {
        passed: cc_gap <= tol && verrall_gap <= tol && delta_gap <= 1e-8 && fitted_gap >= -tol,
        detail: format!(
            "{n_fixtures} 5x5 fixtures: CC(tau2=0) vs Hertig {cc_gap:.1e}, Verrall(0,0) vs two-way LS \
             {verrall_gap:.1e} (tol 1e-6); Hertig delta vs column means {delta_gap:.1e} (tol 1e-8); \
             min fitted loglik CC - Hertig {fitted_gap:.2e}"
        ),
        elapsed: start.elapsed(),
    }
}

/// Generating state and variances for one recipe on a 10x10 grid.
pub struct Generator {
    pub name: ModelName,
    pub natural: Vec<f64>,
    pub initial_state: Vec<f64>,
}

pub fn generators() -> Vec<Generator> {
    let lags = [13.8, 2.0f64.ln(), 1.4f64.ln(), 1.2f64.ln(), 1.1f64.ln(), 1.06f64.ln(), 1.04f64.ln(), 1.025f64.ln(), 1.015f64.ln(), 1.01f64.ln()];
    let cols = [0.3, 0.1, -0.3, -0.8, -1.3, -1.9, -2.5, -3.1, -3.8];
    let mut verrall = vec![13.0];
    verrall.extend((1..10).map(|i| 0.05 * i as f64));
    verrall.extend(cols);
    let pattern: Vec<f64> = {
        let raw = [0.0, 0.3, 0.1, -0.3, -0.8, -1.3, -1.9, -2.5, -3.1, -3.8];
        let m = raw.iter().sum::<f64>() / 10.0;
        raw.iter().map(|p| p - m).collect()
    };
    // dummy seasonal state at the first cell: s_0, s_9, s_8, ..., s_2
    let mut bsm = vec![13.0, pattern[0]];
    bsm.extend((2..10).rev().map(|j| pattern[j]));
    vec![
        Generator {
            name: ModelName::Hertig,
            natural: vec![0.001],
            initial_state: lags.to_vec(),
        },
        Generator {
            name: ModelName::Cc,
            natural: vec![0.001, 0.0005],
            initial_state: lags.to_vec(),
        },
        Generator {
            name: ModelName::Verrall,
            natural: vec![0.01, 0.002, 0.002],
            initial_state: verrall,
        },
        Generator {
            name: ModelName::Bsm,
            natural: vec![0.01, 0.005, 0.001],
            initial_state: bsm,
        },
    ]
}

/// Complete 10x10 incremental triangle drawn from a generator.
pub fn simulate_truth(g: &Generator, n: usize, rng: &mut ChaCha8Rng) -> Triangle {
    let ones = Triangle::from_rows(vec![vec![Some(1.0); n]; n], TriangleKind::Incremental).unwrap();
    let model = recipe(g.name).build(&ones).unwrap();
    let mut spec = model.map.materialize_natural(&g.natural).unwrap();
    spec.a0 = DVector::from_vec(g.initial_state.clone());
    spec.diffuse = vec![false; spec.state_dim()];
    let (_, ys) = simulate(&spec, rng);
    let wrapped: Vec<Vec<Option<f64>>> = ys.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
    let grid = model.series.to_grid(&wrapped).unwrap();
    reconstruct_incremental(&grid, &Triangle::empty(n, n).unwrap()).unwrap()
}

/// Observed runoff part of a complete triangle and the true reserve.
pub fn runoff_of(full: &Triangle) -> (Triangle, f64) {
    let n = full.n_origin();
    let mask: Vec<bool> = (0..n * n).map(|k| k / n + k % n < n).collect();
    let truth: f64 = (0..n * n).filter(|&k| !mask[k]).map(|k| full.value(k / n, k % n).unwrap()).sum();
    let rows = (0..n)
        .map(|i| (0..n).map(|j| (i + j < n).then(|| full.value(i, j).unwrap())).collect())
        .collect();
    (Triangle::from_rows(rows, TriangleKind::Incremental).unwrap(), truth)
}

pub struct RecoveryRow {
    pub name: ModelName,
    pub bic_wins: usize,
    pub covered: usize,
    pub n_seeds: usize,
    pub notes: Vec<String>,
}

/// For each recipe and seed: simulate, fit both models of the response
/// group, and check BIC selection and Q3 coverage of the true reserve.
pub fn recovery(seeds: &[u64], n_draws: usize) -> (Vec<RecoveryRow>, Duration) {
    let start = Instant::now();
    let mut rows = Vec::new();
    for g in generators() {
        let own = recipe(g.name);
        let rivals: Vec<ModelName> = ssmreserve::models::recipes()
            .iter()
            .filter(|r| r.response_kind == own.response_kind)
            .map(|r| r.name)
            .collect();
        let mut row = RecoveryRow {
            name: g.name,
            bic_wins: 0,
            covered: 0,
            n_seeds: seeds.len(),
            notes: Vec::new(),
        };
        for &seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let full = simulate_truth(&g, 10, &mut rng);
            let (observed, truth) = runoff_of(&full);
            let opts = FitOptions {
                seed,
                ..Default::default()
            };
            let mut scores = Vec::new();
            let mut own_fit = None;
            for &name in &rivals {
                let model = recipe(name).build(&observed).unwrap();
                match model.fit(&opts) {
                    Ok(f) => {
                        scores.push(ModelScore::from_fit(name.to_string(), own.response_kind, &f));
                        if name == g.name {
                            own_fit = Some((model, f));
                        }
                    }
                    Err(e) => row.notes.push(format!("seed {seed} {name}: {e}")),
                }
            }
            let best = scores
                .iter()
                .min_by(|a, b| a.bic.total_cmp(&b.bic))
                .map(|s| s.name.clone());
            if best.as_deref() == Some(&g.name.to_string()) {
                row.bic_wins += 1;
            }
            if let Some((model, f)) = own_fit {
                let ropts = ReserveOptions {
                    n_draws,
                    seed,
                    ..Default::default()
                };
                match reserve_distribution(&model, &f.theta, &observed, &ropts) {
                    Ok(d) => {
                        if truth <= d.summary.q3 {
                            row.covered += 1;
                        }
                    }
                    Err(e) => row.notes.push(format!("seed {seed}: {e}")),
                }
            }
        }
        rows.push(row);
    }
    (rows, start.elapsed())
}

/// Deterministic pseudo-random f64 in `[lo, hi)` for callers without an rng.
pub fn uniform(seed: u64, lo: f64, hi: f64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random_range(lo..hi)
}
