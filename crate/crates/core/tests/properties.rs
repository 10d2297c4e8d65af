use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssmreserve::estimation::{fit, FitOptions};
use ssmreserve::kalman::{self, residual_diagnostics, DiagnosticsOptions};
use ssmreserve::simsmooth::{draw_states, simulate};
use ssmreserve::ssm::{ParamDescriptor, ParamMap, SsmSpec, TimeStep};
use ssmreserve_oracles::dense::dense_smooth;
use ssmreserve_oracles::gen::{random_identified_spec, random_spec, SpecOptions};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn local_level(n: usize, noise: f64, level: f64) -> SsmSpec {
    SsmSpec::from_generator(n, DVector::zeros(1), DMatrix::zeros(1, 1), vec![true], |_| {
        TimeStep::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, noise),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, level),
        )
    })
}

fn local_level_map(n: usize) -> ParamMap {
    ParamMap::new(
        vec![
            ParamDescriptor::log_variance("noise", 1.0),
            ParamDescriptor::log_variance("level", 1.0),
        ],
        move |v| local_level(n, v[0], v[1]),
    )
}

fn simulated(spec: &SsmSpec, seed: u64) -> Vec<Vec<Option<f64>>> {
    let mut proper = spec.clone();
    proper.diffuse = vec![false; proper.state_dim()];
    let (_, ys) = simulate(&proper, &mut ChaCha8Rng::seed_from_u64(seed));
    ys.into_iter().map(|r| r.into_iter().map(Some).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_and_smoother_match_dense_conditioning(seed in any::<u64>(), missing in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, obs) = random_spec(&mut rng, &SpecOptions { missing, ..Default::default() });
        let sm = kalman::smooth(&spec, &obs).unwrap();
        let dense = dense_smooth(&spec, &obs);
        prop_assert!(rel(sm.loglik(), dense.loglik) < 1e-8);
        for t in 0..spec.n_times() {
            for (a, b) in sm.state_mean[t].iter().zip(dense.smoothed_means[t].iter()) {
                prop_assert!(rel(*a, *b) < 1e-8);
            }
            for (a, b) in sm.state_cov[t].iter().zip(dense.smoothed_covs[t].iter()) {
                prop_assert!(rel(*a, *b) < 1e-8);
            }
        }
    }

    #[test]
    fn likelihood_ignores_element_order_within_a_time_point(seed in any::<u64>(), d in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = SpecOptions { n_diffuse: d, missing: 0.2, max_obs_dim: 3, ..Default::default() };
        let (spec, obs) = random_identified_spec(&mut rng, &opts);
        let mut rev = spec.clone();
        let mut rev_obs = obs.clone();
        for (s, o) in rev.steps.iter_mut().zip(rev_obs.iter_mut()) {
            let p = s.dim();
            let perm: Vec<usize> = (0..p).rev().collect();
            s.z = DMatrix::from_fn(p, s.z.ncols(), |r, c| s.z[(perm[r], c)]);
            s.x = DMatrix::from_fn(p, s.x.ncols(), |r, c| s.x[(perm[r], c)]);
            s.h = DVector::from_fn(p, |r, _| s.h[perm[r]]);
            o.reverse();
        }
        let a = kalman::log_likelihood(&spec, &obs).unwrap();
        let b = kalman::log_likelihood(&rev, &rev_obs).unwrap();
        prop_assert!(rel(a.loglik, b.loglik) < 1e-10, "{} vs {}", a.loglik, b.loglik);
        prop_assert_eq!(a.n_diffuse, b.n_diffuse);
    }

    #[test]
    fn a_missing_element_is_the_same_as_no_element(seed in any::<u64>(), d in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, obs) = random_identified_spec(&mut rng, &SpecOptions { n_diffuse: d, ..Default::default() });
        // append an extra, unobserved element to the last time point
        let mut padded = spec.clone();
        let mut padded_obs = obs.clone();
        let last = padded.steps.last_mut().unwrap();
        last.z = last.z.clone().insert_row(last.z.nrows(), 0.7);
        last.x = DMatrix::zeros(last.z.nrows(), last.x.ncols());
        last.h = last.h.clone().push(0.4);
        padded_obs.last_mut().unwrap().push(None);
        let a = kalman::smooth(&spec, &obs).unwrap();
        let b = kalman::smooth(&padded, &padded_obs).unwrap();
        prop_assert_eq!(a.loglik(), b.loglik());
        for t in 0..spec.n_times() {
            for (x, y) in a.state_mean[t].iter().zip(b.state_mean[t].iter()) {
                prop_assert!(rel(*x, *y) < 1e-12);
            }
            for (p, q) in a.predictions[t].iter().zip(&b.predictions[t]) {
                prop_assert!(rel(p.mean, q.mean) < 1e-12);
            }
        }
    }
}

#[test]
fn draws_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (spec, obs) = random_identified_spec(&mut rng, &SpecOptions { n_diffuse: 1, missing: 0.2, ..Default::default() });
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| draw_states(&spec, &obs, 300, 17).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn local_level_variances_are_recovered() {
    // noise and level variance 1, n = 200: both estimates in [0.5, 2] for 90% of seeds
    let n = 200;
    let truth = local_level(n, 1.0, 1.0);
    let mut hits = 0;
    for seed in 0..20 {
        let r = fit(&local_level_map(n), &simulated(&truth, seed), &FitOptions { seed, ..Default::default() }).unwrap();
        if r.params.iter().all(|p| (0.5..=2.0).contains(&p.value)) {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn standardized_residual_variance_is_near_one() {
    // the sample variance of n standard normals has sd sqrt(2 / n); n = 200
    // puts [0.7, 1.3] beyond three of them
    let n = 200;
    let truth = local_level(n, 0.8, 0.3);
    let mut hits = 0;
    for seed in 100..120 {
        let f = kalman::filter(&truth, &simulated(&truth, seed)).unwrap();
        let v = residual_diagnostics(&f, &DiagnosticsOptions::default()).variance.unwrap();
        if (0.7..=1.3).contains(&v) {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn larger_nested_map_never_fits_worse() {
    let n = 40;
    let truth = local_level(n, 1.0, 0.2);
    for seed in 0..5 {
        let obs = simulated(&truth, 1000 + seed);
        let small = ParamMap::new(vec![ParamDescriptor::log_variance("noise", 1.0)], move |v| {
            local_level(n, v[0], 0.0)
        });
        let opts = FitOptions { seed, ..Default::default() };
        let a = fit(&small, &obs, &opts).unwrap();
        let b = fit(&local_level_map(n), &obs, &opts).unwrap();
        assert!(b.loglik >= a.loglik - 1e-6, "{} < {}", b.loglik, a.loglik);
    }
}
