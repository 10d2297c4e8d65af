//! Random small state space models and triangles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use ssmreserve::kalman;
use ssmreserve::ssm::{SsmSpec, TimeStep};
use ssmreserve::triangle::{Triangle, TriangleKind};

pub struct SpecOptions {
    pub max_times: usize,
    pub max_state: usize,
    pub max_obs_dim: usize,
    /// Number of diffuse initial elements, capped at the state dimension.
    pub n_diffuse: usize,
    /// Probability that an observation element is missing.
    pub missing: f64,
}

impl Default for SpecOptions {
    fn default() -> Self {
        Self {
            max_times: 8,
            max_state: 3,
            max_obs_dim: 2,
            n_diffuse: 0,
            missing: 0.0,
        }
    }
}

fn normal_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn spd<R: Rng>(rng: &mut R, k: usize, scale: f64, ridge: f64) -> DMatrix<f64> {
    let b = normal_matrix(rng, k, k, scale);
    &b * b.transpose() + DMatrix::identity(k, k) * ridge
}

/// One random model with data; time-varying design and observation
/// dimension, stable transitions, positive definite disturbances.
pub fn random_spec<R: Rng>(rng: &mut R, opts: &SpecOptions) -> (SsmSpec, Vec<Vec<Option<f64>>>) {
    let n = rng.random_range(2..=opts.max_times);
    let k = rng.random_range(1..=opts.max_state);
    let d = opts.n_diffuse.min(k);
    let mut q0 = spd(rng, k, 0.7, 0.1);
    for i in 0..d {
        for j in 0..k {
            q0[(i, j)] = 0.0;
            q0[(j, i)] = 0.0;
        }
    }
    let a0 = DVector::from_fn(k, |i, _| if i < d { 0.0 } else { rng.sample(StandardNormal) });
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        let p = rng.random_range(1..=opts.max_obs_dim);
        let z = normal_matrix(rng, p, k, 1.0);
        let h = DVector::from_fn(p, |_, _| rng.random_range(0.2..1.5));
        let transition = DMatrix::identity(k, k) * 0.6 + DMatrix::from_fn(k, k, |_, _| rng.random_range(-0.3..0.3));
        let q = spd(rng, k, 0.4, 0.05);
        steps.push(TimeStep::new(z, h, transition, q));
    }
    let obs = steps
        .iter()
        .map(|s| {
            (0..s.dim())
                .map(|_| {
                    let y: f64 = 2.0 * rng.sample::<f64, _>(StandardNormal);
                    (rng.random::<f64>() >= opts.missing).then_some(y)
                })
                .collect()
        })
        .collect();
    let spec = SsmSpec {
        steps,
        a0,
        q0,
        diffuse: (0..k).map(|i| i < d).collect(),
        components: Vec::new(),
        regression: None,
    };
    (spec, obs)
}

/// Like [`random_spec`], redrawn until the diffuse part is identified.
pub fn random_identified_spec<R: Rng>(rng: &mut R, opts: &SpecOptions) -> (SsmSpec, Vec<Vec<Option<f64>>>) {
    loop {
        let (spec, obs) = random_spec(rng, opts);
        if kalman::filter(&spec, &obs).is_ok() {
            return (spec, obs);
        }
    }
}

/// Regular runoff triangle of positive incremental claims.
pub fn random_runoff<R: Rng>(rng: &mut R, n: usize) -> Triangle {
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (i + j < n).then(|| rng.random_range(1.0..1000.0) * 0.7f64.powi(j as i32)))
                .collect()
        })
        .collect();
    Triangle::from_rows(rows, TriangleKind::Incremental).expect("well-formed triangle")
}
