//! Marginal maximum-likelihood fitting of a [`ParamMap`], information
//! criteria, and BIC-based model comparison.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kalman::{self, KalmanError, Observations};
use crate::ssm::{ParamMap, ParamScale, SsmError, SsmSpec};
use crate::triangle::ResponseKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Ssm(#[from] SsmError),
    #[error("likelihood is not finite at any of the {0} starting points")]
    AllStartsFailed(usize),
    #[error("no observations remain after the diffuse initialization")]
    NoEffectiveObservations,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub n_starts: usize,
    pub seed: u64,
    /// Standard deviation of the start jitter on the `theta` scale.
    pub jitter: f64,
    /// Relative function tolerance of the simplex search.
    pub ftol: f64,
    /// Iteration budget per start is `max_iter_per_param * q`.
    pub max_iter_per_param: usize,
    /// Variances below this at the optimum mark the fit as degenerate.
    pub degenerate_variance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 5,
            seed: 0,
            jitter: 0.5,
            ftol: 1e-8,
            max_iter_per_param: 200,
            degenerate_variance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    MaxIter,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: Vec<f64>,
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParam {
    pub name: String,
    pub theta: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub params: Vec<FittedParam>,
    pub loglik: f64,
    pub q: usize,
    pub n_obs: usize,
    pub n_diffuse: usize,
    pub n_eff: usize,
    pub aic: f64,
    pub bic: f64,
    pub status: FitStatus,
    pub trace: Vec<StartTrace>,
    #[serde(skip)]
    pub spec: Option<SsmSpec>,
}

/// `(AIC, BIC)` in smaller-is-better form.
pub fn information_criteria(loglik: f64, q: usize, n_eff: usize) -> (f64, f64) {
    let q = q as f64;
    (-2.0 * loglik + 2.0 * q, -2.0 * loglik + q * (n_eff as f64).ln())
}

struct Simplex {
    best: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

/// Nelder-Mead minimization with standard coefficients and a relative
/// function-value stopping rule.
fn nelder_mead<F>(f: &F, x0: &[f64], step: f64, ftol: f64, max_iter: usize) -> Simplex
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = (0..=n)
        .map(|i| {
            let mut p = x0.to_vec();
            if i > 0 {
                p[i - 1] += step;
            }
            p
        })
        .collect();
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let (lo, hi) = (vals[0], vals[n]);
        if lo.is_finite()
            && hi.is_finite()
            && 2.0 * (hi - lo).abs() <= ftol * (hi.abs() + lo.abs()) + 1e-12
        {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |c: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(m, w)| m + c * (w - m))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    pts[i] = pts[0]
                        .iter()
                        .zip(&pts[i])
                        .map(|(b, p)| b + 0.5 * (p - b))
                        .collect();
                    vals[i] = eval(&pts[i]);
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    Simplex {
        best: pts[best].clone(),
        value: vals[best],
        iterations,
        evaluations,
        converged,
    }
}

fn neg_loglik(map: &ParamMap, obs: &Observations, theta: &[f64]) -> f64 {
    let Ok(spec) = map.materialize(theta) else {
        return f64::INFINITY;
    };
    match kalman::log_likelihood(&spec, obs) {
        Ok(l) if l.loglik.is_finite() => -l.loglik,
        _ => f64::INFINITY,
    }
}

/// Simplex search from one start, restarted from its own optimum until a
/// restart no longer improves the objective.
fn search(map: &ParamMap, obs: &Observations, start: &[f64], opts: &FitOptions) -> StartTrace {
    let f = |x: &[f64]| neg_loglik(map, obs, x);
    let budget = opts.max_iter_per_param * start.len();
    let mut x = start.to_vec();
    let mut value = f64::INFINITY;
    let (mut iterations, mut evaluations, mut converged) = (0, 0, false);
    let mut step = 1.0;
    while iterations < budget {
        let run = nelder_mead(&f, &x, step, opts.ftol, budget - iterations);
        iterations += run.iterations;
        evaluations += run.evaluations;
        converged = run.converged;
        let improved = value - run.value > opts.ftol * run.value.abs().max(1.0);
        if run.value <= value {
            x = run.best;
            value = run.value;
        }
        if !improved || !converged {
            break;
        }
        step = 0.25;
    }
    StartTrace {
        start: start.to_vec(),
        theta: x,
        loglik: -value,
        iterations,
        evaluations,
        converged,
    }
}

/// Pushes near-zero variances onto the boundary when that does not lower
/// the likelihood.
fn snap_to_boundary(map: &ParamMap, obs: &Observations, trace: &mut StartTrace) {
    const FLOOR: f64 = -50.0;
    for i in 0..trace.theta.len() {
        if map.params()[i].scale != ParamScale::LogVariance || trace.theta[i] > (1e-6f64).ln() {
            continue;
        }
        let mut cand = trace.theta.clone();
        cand[i] = FLOOR;
        let ll = -neg_loglik(map, obs, &cand);
        if ll >= trace.loglik {
            trace.theta = cand;
            trace.loglik = ll;
        }
    }
}

fn cmp_traces(a: &StartTrace, b: &StartTrace) -> Ordering {
    b.loglik.total_cmp(&a.loglik).then_with(|| {
        a.theta
            .iter()
            .zip(&b.theta)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// The map's initial values followed by jittered copies.
pub fn default_starts(map: &ParamMap, opts: &FitOptions) -> Vec<Vec<f64>> {
    let init = map.initial_theta();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![init.clone()];
    for _ in 1..opts.n_starts.max(1) {
        starts.push(
            init.iter()
                .map(|v| v + opts.jitter * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
    }
    starts
}

/// Maximizes the marginal likelihood from the default multi-start set.
pub fn fit(map: &ParamMap, obs: &Observations, opts: &FitOptions) -> Result<FitResult, FitError> {
    fit_from_starts(map, obs, &default_starts(map, opts), opts)
}

/// Maximizes the marginal likelihood from the given starting points.
///
/// The result does not depend on the order of `starts`: the best start is
/// chosen by likelihood with ties broken on `theta`.
pub fn fit_from_starts(
    map: &ParamMap,
    obs: &Observations,
    starts: &[Vec<f64>],
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    // structural problems (dimensions, identification) do not depend on theta
    let probe = map.materialize(&map.initial_theta())?;
    let lik = kalman::log_likelihood(&probe, obs)?;
    if lik.n_obs <= lik.n_diffuse {
        return Err(FitError::NoEffectiveObservations);
    }

    let best = if map.q() == 0 {
        StartTrace {
            start: Vec::new(),
            theta: Vec::new(),
            loglik: lik.loglik,
            iterations: 0,
            evaluations: 1,
            converged: true,
        }
    } else {
        let mut traces: Vec<StartTrace> = starts
            .par_iter()
            .map(|s| {
                let mut t = search(map, obs, s, opts);
                snap_to_boundary(map, obs, &mut t);
                t
            })
            .collect();
        let mut ranked: Vec<&StartTrace> = traces.iter().collect();
        ranked.sort_by(|a, b| cmp_traces(a, b));
        let best = ranked[0].clone();
        if !best.loglik.is_finite() {
            return Err(FitError::AllStartsFailed(starts.len()));
        }
        return finish(map, obs, best, std::mem::take(&mut traces), opts);
    };
    finish(map, obs, best.clone(), vec![best], opts)
}

fn finish(
    map: &ParamMap,
    obs: &Observations,
    best: StartTrace,
    trace: Vec<StartTrace>,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let spec = map.materialize(&best.theta)?;
    let lik = kalman::log_likelihood(&spec, obs)?;
    let natural = map.natural(&best.theta)?;
    let degenerate = map
        .params()
        .iter()
        .zip(&natural)
        .any(|(p, &v)| p.scale == ParamScale::LogVariance && v < opts.degenerate_variance);
    let status = if degenerate {
        FitStatus::Degenerate
    } else if best.converged {
        FitStatus::Converged
    } else {
        FitStatus::MaxIter
    };
    let n_eff = lik.n_obs - lik.n_diffuse;
    let (aic, bic) = information_criteria(lik.loglik, map.q(), n_eff);
    Ok(FitResult {
        params: map
            .params()
            .iter()
            .zip(best.theta.iter().zip(&natural))
            .map(|(p, (&theta, &value))| FittedParam {
                name: p.name.clone(),
                theta,
                value,
            })
            .collect(),
        theta: best.theta,
        loglik: lik.loglik,
        q: map.q(),
        n_obs: lik.n_obs,
        n_diffuse: lik.n_diffuse,
        n_eff,
        aic,
        bic,
        status,
        trace,
        spec: Some(spec),
    })
}

impl FitResult {
    /// Human-readable summary.
    pub fn report(&self, name: &str) -> String {
        let mut s = format!(
            "model {name}: loglik {:.4}, q {}, N_eff {}, AIC {:.3}, BIC {:.3}, status {:?}\n",
            self.loglik, self.q, self.n_eff, self.aic, self.bic, self.status
        );
        for p in &self.params {
            s.push_str(&format!("  {:<12} {:.6e}\n", p.name, p.value));
        }
        s
    }
}

/// One entry of a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    pub response: ResponseKind,
    pub bic: f64,
    pub aic: f64,
    pub loglik: f64,
    pub q: usize,
    pub n_eff: usize,
}

impl ModelScore {
    pub fn from_fit(name: impl Into<String>, response: ResponseKind, fit: &FitResult) -> Self {
        Self {
            name: name.into(),
            response,
            bic: fit.bic,
            aic: fit.aic,
            loglik: fit.loglik,
            q: fit.q,
            n_eff: fit.n_eff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonGroup {
    pub response: ResponseKind,
    /// Smallest BIC first.
    pub ranking: Vec<ModelScore>,
}

impl ComparisonGroup {
    pub fn preferred(&self) -> Option<&ModelScore> {
        (self.ranking.len() >= 2).then(|| &self.ranking[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub groups: Vec<ComparisonGroup>,
    /// Why models in different groups were not ranked against each other.
    pub refusal: Option<String>,
}

/// Ranks models by BIC within groups that share a response variable.
pub fn compare(scores: &[ModelScore]) -> ComparisonReport {
    let mut responses: Vec<ResponseKind> = scores.iter().map(|s| s.response).collect();
    responses.sort();
    responses.dedup();
    let groups: Vec<ComparisonGroup> = responses
        .iter()
        .map(|&response| {
            let mut ranking: Vec<ModelScore> = scores
                .iter()
                .filter(|s| s.response == response)
                .cloned()
                .collect();
            ranking.sort_by(|a, b| a.bic.total_cmp(&b.bic).then_with(|| a.name.cmp(&b.name)));
            ComparisonGroup { response, ranking }
        })
        .collect();
    let refusal = (groups.len() > 1).then(|| {
        let names: Vec<String> = groups.iter().map(|g| g.response.to_string()).collect();
        format!(
            "BIC values are comparable only between models with the same response variable; \
             {} are ranked separately",
            names.join(" and ")
        )
    });
    ComparisonReport { groups, refusal }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{ParamDescriptor, SsmSpec, TimeStep};
    use nalgebra::{DMatrix, DVector};

    fn constant_mean(n: usize, noise: f64) -> SsmSpec {
        SsmSpec::from_generator(n, DVector::zeros(1), DMatrix::zeros(1, 1), vec![true], |_| {
            TimeStep::new(
                DMatrix::from_element(1, 1, 1.0),
                DVector::from_element(1, noise),
                DMatrix::identity(1, 1),
                DMatrix::zeros(1, 1),
            )
        })
    }

    fn obs(data: &[f64]) -> Vec<Vec<Option<f64>>> {
        data.iter().map(|&v| vec![Some(v)]).collect()
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + 3.0;
        let r = nelder_mead(&f, &[0.0, 0.0], 1.0, 1e-14, 2000);
        assert!(r.converged);
        assert!((r.best[0] - 1.0).abs() < 1e-4 && (r.best[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn zero_parameters_returns_fixed_model() {
        let data = [1.0, 2.0, 4.0];
        let map = ParamMap::new(vec![], move |_| constant_mean(3, 2.0));
        let r = fit(&map, &obs(&data), &FitOptions::default()).unwrap();
        let direct = kalman::log_likelihood(&constant_mean(3, 2.0), &obs(&data)).unwrap();
        assert_eq!(r.loglik, direct.loglik);
        assert_eq!(r.q, 0);
        assert_eq!(r.bic, -2.0 * r.loglik);
    }

    #[test]
    fn constant_mean_variance_is_restricted_mle() {
        // the marginal likelihood integrates out the mean, so the maximizer is
        // sum of squares / (n - 1)
        let data = [3.1, 2.4, 5.0, 4.2, 3.3, 1.9, 2.8];
        let n = data.len();
        let mean = data.iter().sum::<f64>() / n as f64;
        let ss = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let map = ParamMap::new(vec![ParamDescriptor::log_variance("noise", 1.0)], move |v| {
            constant_mean(n, v[0])
        });
        let r = fit(&map, &obs(&data), &FitOptions::default()).unwrap();
        assert_eq!(r.status, FitStatus::Converged);
        // a relative function tolerance of 1e-8 pins theta to about 1e-4
        let target = ss / (n as f64 - 1.0);
        assert!((r.params[0].value / target - 1.0).abs() < 1e-3);
        assert_eq!(r.n_eff, n - 1);
        let (aic, bic) = information_criteria(r.loglik, 1, n - 1);
        assert_eq!((r.aic, r.bic), (aic, bic));
    }

    #[test]
    fn start_order_does_not_matter() {
        let data = [3.1, 2.4, 5.0, 4.2, 3.3, 1.9, 2.8, 3.5];
        let n = data.len();
        let map = ParamMap::new(
            vec![
                ParamDescriptor::log_variance("noise", 1.0),
                ParamDescriptor::log_variance("level", 0.1),
            ],
            move |v| {
                let mut s = constant_mean(n, v[0]);
                for st in &mut s.steps {
                    st.q[(0, 0)] = v[1];
                }
                s
            },
        );
        let opts = FitOptions::default();
        let starts = default_starts(&map, &opts);
        let mut rev = starts.clone();
        rev.reverse();
        let a = fit_from_starts(&map, &obs(&data), &starts, &opts).unwrap();
        let b = fit_from_starts(&map, &obs(&data), &rev, &opts).unwrap();
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn underidentified_model_is_an_error() {
        let map = ParamMap::new(vec![ParamDescriptor::log_variance("noise", 1.0)], |v| {
            constant_mean(2, v[0])
        });
        let r = fit(&map, &[vec![None], vec![None]], &FitOptions::default());
        assert!(matches!(r, Err(FitError::Kalman(KalmanError::UnderIdentified { .. }))));
    }

    fn score(name: &str, response: ResponseKind, bic: f64) -> ModelScore {
        ModelScore {
            name: name.into(),
            response,
            bic,
            aic: bic,
            loglik: 0.0,
            q: 1,
            n_eff: 10,
        }
    }

    #[test]
    fn comparison_groups_by_response() {
        let report = compare(&[
            score("Hertig", ResponseKind::LogDevRatio, -232.4),
            score("BSM", ResponseKind::LogIncremental, 72.0),
            score("CC", ResponseKind::LogDevRatio, -248.9),
            score("Verrall", ResponseKind::LogIncremental, -100.1),
        ]);
        assert_eq!(report.groups.len(), 2);
        let names = |g: &ComparisonGroup| g.ranking.iter().map(|s| s.name.clone()).collect::<Vec<_>>();
        let inc = report.groups.iter().find(|g| g.response == ResponseKind::LogIncremental).unwrap();
        let dev = report.groups.iter().find(|g| g.response == ResponseKind::LogDevRatio).unwrap();
        assert_eq!(names(dev), ["CC", "Hertig"]);
        assert_eq!(names(inc), ["Verrall", "BSM"]);
        assert!(report.refusal.is_some());
    }

    #[test]
    fn cross_group_pair_is_refused() {
        let report = compare(&[
            score("CC", ResponseKind::LogDevRatio, -10.0),
            score("BSM", ResponseKind::LogIncremental, -20.0),
        ]);
        assert!(report.groups.iter().all(|g| g.preferred().is_none()));
        assert!(report.refusal.unwrap().contains("same response variable"));
    }
}
