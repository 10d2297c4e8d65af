//! Joint multivariate-normal treatment of a proper (non-diffuse) state space
//! model: stack every state and observation, then condition.

use nalgebra::{DMatrix, DVector};
use ssmreserve::ssm::SsmSpec;

pub struct DenseResult {
    pub loglik: f64,
    pub smoothed_means: Vec<DVector<f64>>,
    pub smoothed_covs: Vec<DMatrix<f64>>,
    /// Conditional mean and variance of every observation slot, observed or not.
    pub predictions: Vec<Vec<(f64, f64)>>,
}

/// Prior means and the full cross-time covariance blocks of the states.
fn state_moments(spec: &SsmSpec) -> (Vec<DVector<f64>>, Vec<Vec<DMatrix<f64>>>) {
    let n = spec.n_times();
    let mut means = vec![spec.a0.clone()];
    let mut cov: Vec<Vec<DMatrix<f64>>> = vec![vec![spec.q0.clone()]];
    for t in 0..n - 1 {
        let tr = &spec.steps[t].transition;
        means.push(tr * &means[t]);
        let mut row: Vec<DMatrix<f64>> = (0..=t).map(|s| tr * &cov[t][s]).collect();
        row.push(tr * &cov[t][t] * tr.transpose() + &spec.steps[t].q);
        cov.push(row);
    }
    (means, cov)
}

fn block(cov: &[Vec<DMatrix<f64>>], t: usize, s: usize) -> DMatrix<f64> {
    if s <= t {
        cov[t][s].clone()
    } else {
        cov[s][t].transpose()
    }
}

/// Log-likelihood and smoothed moments by direct conditioning.
///
/// Panics on diffuse elements or regression effects, which this oracle does
/// not cover.
pub fn dense_smooth(spec: &SsmSpec, obs: &[Vec<Option<f64>>]) -> DenseResult {
    assert!(spec.diffuse.iter().all(|d| !d), "dense oracle needs a proper prior");
    assert!(spec.n_beta() == 0 && spec.n_gamma() == 0);
    let n = spec.n_times();
    let (means, cov) = state_moments(spec);

    // observed slots
    let slots: Vec<(usize, usize, f64)> = obs
        .iter()
        .enumerate()
        .flat_map(|(t, row)| row.iter().enumerate().filter_map(move |(e, v)| v.map(|y| (t, e, y))))
        .collect();
    let m = slots.len();
    let z = |t: usize, e: usize| spec.steps[t].z.row(e).transpose();

    let mut s_yy = DMatrix::zeros(m, m);
    let mut resid = DVector::zeros(m);
    for (a, &(t, e, y)) in slots.iter().enumerate() {
        resid[a] = y - z(t, e).dot(&means[t]);
        for (b, &(s, f, _)) in slots.iter().enumerate() {
            let v = (z(t, e).transpose() * block(&cov, t, s) * z(s, f))[(0, 0)];
            s_yy[(a, b)] = v + if a == b { spec.steps[t].h[e] } else { 0.0 };
        }
    }

    let (loglik, solve) = if m > 0 {
        let chol = s_yy.clone().cholesky().expect("observation covariance is positive definite");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let w = chol.solve(&resid);
        let ll = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&w));
        (ll, Some(chol))
    } else {
        (0.0, None)
    };

    // Cov(alpha_t, y_obs)
    let cross = |t: usize| -> DMatrix<f64> {
        let k = spec.state_dim();
        let mut c = DMatrix::zeros(k, m);
        for (b, &(s, f, _)) in slots.iter().enumerate() {
            c.set_column(b, &(block(&cov, t, s) * z(s, f)));
        }
        c
    };

    let mut smoothed_means = Vec::with_capacity(n);
    let mut smoothed_covs = Vec::with_capacity(n);
    for t in 0..n {
        let c = cross(t);
        match &solve {
            Some(chol) => {
                smoothed_means.push(&means[t] + &c * chol.solve(&resid));
                smoothed_covs.push(&cov[t][t] - &c * chol.solve(&c.transpose()));
            }
            None => {
                smoothed_means.push(means[t].clone());
                smoothed_covs.push(cov[t][t].clone());
            }
        }
    }

    let predictions = (0..n)
        .map(|t| {
            (0..spec.steps[t].dim())
                .map(|e| {
                    let zt = z(t, e);
                    let mean = zt.dot(&smoothed_means[t]);
                    let var = (zt.transpose() * &smoothed_covs[t] * &zt)[(0, 0)] + spec.steps[t].h[e];
                    (mean, var)
                })
                .collect()
        })
        .collect();

    DenseResult {
        loglik,
        smoothed_means,
        smoothed_covs,
        predictions,
    }
}

/// Copy of `spec` with every diffuse element given prior variance `kappa`.
pub fn big_kappa(spec: &SsmSpec, kappa: f64) -> SsmSpec {
    let mut out = spec.clone();
    for (i, d) in spec.diffuse.iter().enumerate() {
        if *d {
            out.q0[(i, i)] = kappa;
            out.diffuse[i] = false;
        }
    }
    out
}
