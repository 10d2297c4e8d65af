//! Exact-diffuse Kalman filter and smoother.
//!
//! Vector observations are processed one scalar at a time, which is valid
//! because the observation noise covariance is diagonal. The initial state
//! covariance is carried as `P = P_* + kappa * P_inf`; while `P_inf` is
//! nonzero each scalar is classified by its diffuse innovation variance
//! `F_inf = z P_inf z'`:
//!
//! * `F_inf > 0`: a diffuse step. The state absorbs the datum, `P_inf` loses
//!   one rank, and the likelihood gains only `-log(F_inf) / 2`.
//! * `F_inf = 0`: an ordinary update with `F = z P_* z' + h`.
//!
//! The smoother is the `1/kappa` expansion of the ordinary backward
//! recursion: `r = r0 + r1/kappa`, `N = N0 + N1/kappa + N2/kappa^2`, giving
//! `alpha_hat = a + P_* r0 + P_inf r1`.
//!
//! The log-likelihood is the marginal (diffuse) likelihood
//! `-1/2 [ (N_obs - d) log 2pi + sum_diffuse log F_inf + sum_regular (log F + v^2/F) ]`.

use std::borrow::Cow;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::ssm::{augment_regression, SsmSpec};

/// Per-time observation values; `None` marks a missing element.
pub type Observations = [Vec<Option<f64>>];

const DIFFUSE_TOL: f64 = 1e-8;
const DEGENERATE_F: f64 = 1e-13;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KalmanError {
    #[error("t={time}: observation has {found} elements, model expects {expected}")]
    DimensionMismatch {
        time: usize,
        expected: usize,
        found: usize,
    },
    #[error("series has {found} time points, model has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("t={time}, element {index}: innovation variance is not finite")]
    NonFiniteVariance { time: usize, index: usize },
    #[error("model is under-identified: {remaining} diffuse direction(s) not absorbed by the data")]
    UnderIdentified { remaining: usize },
}

pub type Result<T> = std::result::Result<T, KalmanError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepKind {
    /// Absorbed into the diffuse part; no density contribution.
    Diffuse,
    Regular,
    /// Zero prediction variance; the datum carries no information.
    Degenerate,
}

/// Record of one observed scalar.
#[derive(Debug, Clone, Serialize)]
pub struct Innovation {
    pub time: usize,
    pub index: usize,
    pub kind: StepKind,
    /// `v = y - z a`.
    pub value: f64,
    /// `F_* = z P_* z' + h`.
    pub variance: f64,
    /// `F_inf = z P_inf z'`.
    pub diffuse_variance: f64,
    #[serde(skip)]
    pub(crate) m_star: DVector<f64>,
    #[serde(skip)]
    pub(crate) m_inf: DVector<f64>,
}

impl Innovation {
    /// `v / sqrt(F)` for regular steps.
    pub fn standardized(&self) -> Option<f64> {
        (self.kind == StepKind::Regular).then(|| self.value / self.variance.sqrt())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StateMoments {
    pub mean: DVector<f64>,
    /// Proper part `P_*` of the covariance.
    pub cov: DMatrix<f64>,
    /// Diffuse part `P_inf`; zero once the diffuse phase has ended.
    pub diffuse_cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub loglik: f64,
    /// Observed scalars processed.
    pub n_obs: usize,
    /// Diffuse steps absorbed.
    pub n_diffuse: usize,
    pub n_degenerate: usize,
    pub innovations: Vec<Innovation>,
    /// State moments at the start of each time point (before its data).
    pub predicted: Vec<StateMoments>,
    /// State moments after all data at each time point.
    pub filtered: Vec<StateMoments>,
    /// The (regression-augmented) model that was filtered.
    pub spec: SsmSpec,
}

impl FilterOutput {
    /// Scalar count entering information criteria.
    pub fn n_effective(&self) -> usize {
        self.n_obs - self.n_diffuse
    }

    /// Per-time filtered moments as delimited text, for debugging.
    pub fn moments_table(&self) -> String {
        let mut out = String::from("t,state,predicted_mean,predicted_var,filtered_mean,filtered_var\n");
        for (t, (p, f)) in self.predicted.iter().zip(&self.filtered).enumerate() {
            for i in 0..p.mean.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    t + 1,
                    i,
                    p.mean[i],
                    if p.diffuse_cov[(i, i)] > 0.0 { f64::INFINITY } else { p.cov[(i, i)] },
                    f.mean[i],
                    if f.diffuse_cov[(i, i)] > 0.0 { f64::INFINITY } else { f.cov[(i, i)] },
                );
            }
        }
        out
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_dims(spec: &SsmSpec, obs: &Observations) -> Result<()> {
    if obs.len() != spec.n_times() {
        return Err(KalmanError::LengthMismatch {
            expected: spec.n_times(),
            found: obs.len(),
        });
    }
    for (time, (s, y)) in spec.steps.iter().zip(obs).enumerate() {
        if s.dim() != y.len() {
            return Err(KalmanError::DimensionMismatch {
                time,
                expected: s.dim(),
                found: y.len(),
            });
        }
    }
    Ok(())
}

fn with_regression(spec: &SsmSpec) -> Cow<'_, SsmSpec> {
    if spec.n_beta() > 0 || spec.n_gamma() > 0 {
        Cow::Owned(augment_regression(spec))
    } else {
        Cow::Borrowed(spec)
    }
}

fn rank_estimate(m: &DMatrix<f64>) -> usize {
    let scale = m.amax().max(1.0);
    nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .filter(|&&e| e > DIFFUSE_TOL * scale)
        .count()
        .max(1)
}

struct Pass {
    loglik: f64,
    n_obs: usize,
    n_diffuse: usize,
    n_degenerate: usize,
    innovations: Vec<Innovation>,
    predicted: Vec<StateMoments>,
    filtered: Vec<StateMoments>,
}

fn run_filter(spec: &SsmSpec, obs: &Observations, store: bool) -> Result<Pass> {
    check_dims(spec, obs)?;
    let k = spec.state_dim();
    let mut a = spec.a0.clone();
    let mut p_star = spec.q0.clone();
    let mut p_inf = DMatrix::from_diagonal(&DVector::from_iterator(
        k,
        spec.diffuse.iter().map(|&d| if d { 1.0 } else { 0.0 }),
    ));
    let mut diffuse_active = spec.diffuse.iter().any(|&d| d);

    let mut pass = Pass {
        loglik: 0.0,
        n_obs: 0,
        n_diffuse: 0,
        n_degenerate: 0,
        innovations: Vec::new(),
        predicted: Vec::new(),
        filtered: Vec::new(),
    };
    let mut n_regular = 0usize;

    for (time, (step, y_t)) in spec.steps.iter().zip(obs).enumerate() {
        if store {
            pass.predicted.push(StateMoments {
                mean: a.clone(),
                cov: p_star.clone(),
                diffuse_cov: p_inf.clone(),
            });
        }
        for (index, y) in y_t.iter().enumerate() {
            let Some(y) = *y else { continue };
            pass.n_obs += 1;
            let z = step.z.row(index);
            let h = step.h[index];
            let v = y - (z * &a)[0];
            let m_star: DVector<f64> = &p_star * z.transpose();
            let f_star = (z * &m_star)[0] + h;
            let (m_inf, f_inf) = if diffuse_active {
                let m: DVector<f64> = &p_inf * z.transpose();
                let f = (z * &m)[0];
                (m, f)
            } else {
                (DVector::zeros(k), 0.0)
            };
            if !f_star.is_finite() || !f_inf.is_finite() {
                return Err(KalmanError::NonFiniteVariance { time, index });
            }
            let z_scale = z.norm_squared().max(f64::MIN_POSITIVE);

            let kind = if diffuse_active && f_inf > DIFFUSE_TOL * z_scale {
                let k_inf = &m_inf / f_inf;
                a += &k_inf * v;
                let cross = &k_inf * m_star.transpose();
                p_star += &k_inf * k_inf.transpose() * f_star - &cross - cross.transpose();
                p_inf -= &m_inf * m_inf.transpose() / f_inf;
                symmetrize(&mut p_star);
                symmetrize(&mut p_inf);
                pass.loglik -= 0.5 * f_inf.ln();
                pass.n_diffuse += 1;
                StepKind::Diffuse
            } else if f_star > DEGENERATE_F {
                a += &m_star * (v / f_star);
                p_star -= &m_star * m_star.transpose() / f_star;
                symmetrize(&mut p_star);
                pass.loglik -= 0.5 * (LN_2PI + f_star.ln() + v * v / f_star);
                n_regular += 1;
                StepKind::Regular
            } else {
                pass.n_degenerate += 1;
                if v.abs() > 1e-8 * (1.0 + y.abs()) {
                    pass.loglik = f64::NEG_INFINITY;
                }
                StepKind::Degenerate
            };
            if store {
                pass.innovations.push(Innovation {
                    time,
                    index,
                    kind,
                    value: v,
                    variance: f_star,
                    diffuse_variance: f_inf,
                    m_star,
                    m_inf,
                });
            }
        }
        if store {
            pass.filtered.push(StateMoments {
                mean: a.clone(),
                cov: p_star.clone(),
                diffuse_cov: p_inf.clone(),
            });
        }
        if time + 1 < spec.n_times() {
            let tr = &step.transition;
            a = tr * &a;
            p_star = tr * &p_star * tr.transpose() + &step.q;
            symmetrize(&mut p_star);
            if diffuse_active {
                p_inf = tr * &p_inf * tr.transpose();
                symmetrize(&mut p_inf);
            }
        }
        if diffuse_active && p_inf.amax() <= DIFFUSE_TOL {
            p_inf.fill(0.0);
            diffuse_active = false;
        }
    }
    if diffuse_active {
        return Err(KalmanError::UnderIdentified {
            remaining: rank_estimate(&p_inf),
        });
    }
    debug_assert_eq!(n_regular + pass.n_diffuse + pass.n_degenerate, pass.n_obs);
    Ok(pass)
}

/// Filters the series and records everything the smoother needs.
pub fn filter(spec: &SsmSpec, obs: &Observations) -> Result<FilterOutput> {
    let spec = with_regression(spec).into_owned();
    let pass = run_filter(&spec, obs, true)?;
    Ok(FilterOutput {
        loglik: pass.loglik,
        n_obs: pass.n_obs,
        n_diffuse: pass.n_diffuse,
        n_degenerate: pass.n_degenerate,
        innovations: pass.innovations,
        predicted: pass.predicted,
        filtered: pass.filtered,
        spec,
    })
}

/// Likelihood summary without stored moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Likelihood {
    pub loglik: f64,
    pub n_obs: usize,
    pub n_diffuse: usize,
}

/// Marginal log-likelihood only; the optimizer's hot path.
pub fn log_likelihood(spec: &SsmSpec, obs: &Observations) -> Result<Likelihood> {
    let spec = with_regression(spec);
    let pass = run_filter(&spec, obs, false)?;
    Ok(Likelihood {
        loglik: pass.loglik,
        n_obs: pass.n_obs,
        n_diffuse: pass.n_diffuse,
    })
}

/// Smoothed prediction of one observation element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub observed: bool,
    /// `z alpha_hat` (includes the regression contribution).
    pub mean: f64,
    /// Variance of the signal `z alpha`.
    pub signal_variance: f64,
    /// Signal variance plus observation noise: the variance of a new draw.
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentPath {
    pub name: String,
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub state_mean: Vec<DVector<f64>>,
    pub state_cov: Vec<DMatrix<f64>>,
    /// Smoothed `beta` (mean, covariance) when the model has one.
    pub beta: Option<(DVector<f64>, DMatrix<f64>)>,
    pub gamma: Option<(DVector<f64>, DMatrix<f64>)>,
    /// Per time point, per element.
    pub predictions: Vec<Vec<Prediction>>,
    pub components: Vec<ComponentPath>,
    pub filter: FilterOutput,
}

impl SmootherOutput {
    pub fn loglik(&self) -> f64 {
        self.filter.loglik
    }

    pub fn prediction_means(&self) -> Vec<Vec<Option<f64>>> {
        self.predictions
            .iter()
            .map(|p| p.iter().map(|x| Some(x.mean)).collect())
            .collect()
    }
}

/// Filters then runs the exact-diffuse backward pass.
pub fn smooth(spec: &SsmSpec, obs: &Observations) -> Result<SmootherOutput> {
    let f = filter(spec, obs)?;
    Ok(smooth_filtered(f, obs))
}

/// Backward pass over a stored filter run.
pub fn smooth_filtered(f: FilterOutput, obs: &Observations) -> SmootherOutput {
    let spec = &f.spec;
    let k = spec.state_dim();
    let n = spec.n_times();
    let ident = DMatrix::<f64>::identity(k, k);
    let mut r0 = DVector::zeros(k);
    let mut r1 = DVector::zeros(k);
    let mut n0 = DMatrix::zeros(k, k);
    let mut n1 = DMatrix::zeros(k, k);
    let mut n2 = DMatrix::zeros(k, k);
    let mut state_mean = vec![DVector::zeros(k); n];
    let mut state_cov = vec![DMatrix::zeros(k, k); n];

    let mut innov = f.innovations.iter().rev().peekable();
    for t in (0..n).rev() {
        let step = &spec.steps[t];
        while let Some(inn) = innov.next_if(|i| i.time == t) {
            let z: RowDVector<f64> = step.z.row(inn.index).into_owned();
            let zt = z.transpose();
            match inn.kind {
                StepKind::Regular => {
                    let fv = inn.variance;
                    let kg = &inn.m_star / fv;
                    let l0 = &ident - &kg * &z;
                    r0 = &zt * (inn.value / fv) + l0.transpose() * &r0;
                    r1 = l0.transpose() * &r1;
                    n0 = &zt * &z / fv + l0.transpose() * &n0 * &l0;
                    n1 = l0.transpose() * &n1 * &l0;
                    n2 = l0.transpose() * &n2 * &l0;
                }
                StepKind::Diffuse => {
                    let fi = inn.diffuse_variance;
                    let fs = inn.variance;
                    let k_inf = &inn.m_inf / fi;
                    let k1 = (&inn.m_star - &k_inf * fs) / fi;
                    let l0 = &ident - &k_inf * &z;
                    let l1 = -(&k1 * &z);
                    let zz = &zt * &z;
                    let new_r1 = &zt * (inn.value / fi) + l0.transpose() * &r1 + l1.transpose() * &r0;
                    let new_r0 = l0.transpose() * &r0;
                    let new_n0 = l0.transpose() * &n0 * &l0;
                    let l1n0l0 = l1.transpose() * &n0 * &l0;
                    let new_n1 = &zz / fi + l0.transpose() * &n1 * &l0 + &l1n0l0 + l1n0l0.transpose();
                    let l0n1l1 = l0.transpose() * &n1 * &l1;
                    let new_n2 = -&zz * (fs / (fi * fi))
                        + l0.transpose() * &n2 * &l0
                        + &l0n1l1
                        + l0n1l1.transpose()
                        + l1.transpose() * &n0 * &l1;
                    r0 = new_r0;
                    r1 = new_r1;
                    n0 = new_n0;
                    n1 = new_n1;
                    n2 = new_n2;
                }
                StepKind::Degenerate => {}
            }
            symmetrize(&mut n0);
            symmetrize(&mut n1);
            symmetrize(&mut n2);
        }
        let pred = &f.predicted[t];
        let (ps, pi) = (&pred.cov, &pred.diffuse_cov);
        state_mean[t] = &pred.mean + ps * &r0 + pi * &r1;
        let pi_n1_ps = pi * &n1 * ps;
        let mut v = ps - ps * &n0 * ps - &pi_n1_ps - pi_n1_ps.transpose() - pi * &n2 * pi;
        symmetrize(&mut v);
        state_cov[t] = v;
        if t > 0 {
            let tr = &spec.steps[t - 1].transition;
            r0 = tr.transpose() * &r0;
            r1 = tr.transpose() * &r1;
            n0 = tr.transpose() * &n0 * tr;
            n1 = tr.transpose() * &n1 * tr;
            n2 = tr.transpose() * &n2 * tr;
        }
    }

    let predictions = spec
        .steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            (0..step.dim())
                .map(|i| {
                    let z = step.z.row(i);
                    let mean = (z * &state_mean[t])[0];
                    let signal_variance = (z * &state_cov[t] * z.transpose())[0].max(0.0);
                    Prediction {
                        observed: obs[t][i].is_some(),
                        mean,
                        signal_variance,
                        variance: signal_variance + step.h[i],
                    }
                })
                .collect()
        })
        .collect();

    let components = spec
        .components
        .iter()
        .map(|c| ComponentPath {
            name: c.name.clone(),
            mean: state_mean.iter().map(|m| &c.selection * m).collect(),
            cov: state_cov
                .iter()
                .map(|v| &c.selection * v * c.selection.transpose())
                .collect(),
        })
        .collect();

    let block = |range: std::ops::Range<usize>| {
        (!range.is_empty() && n > 0).then(|| {
            let len = range.len();
            (
                state_mean[0].rows(range.start, len).into_owned(),
                state_cov[0].view((range.start, range.start), (len, len)).into_owned(),
            )
        })
    };
    let (beta, gamma) = match spec.regression {
        Some(layout) => (block(layout.beta_range()), block(layout.gamma_range())),
        None => (None, None),
    };

    SmootherOutput {
        state_mean,
        state_cov,
        beta,
        gamma,
        predictions,
        components,
        filter: f,
    }
}

impl FilterOutput {
    /// Smoothed state means for a different data set with the same missing
    /// pattern, reusing the stored gains and covariances.
    ///
    /// The gains do not depend on the data, so only the mean recursions are
    /// re-run. Used by the simulation smoother.
    pub fn smoothed_means_for(&self, obs: &Observations) -> Vec<DVector<f64>> {
        let spec = &self.spec;
        let k = spec.state_dim();
        let n = spec.n_times();

        // forward: innovations for the new data
        let mut values = Vec::with_capacity(self.innovations.len());
        let mut a = spec.a0.clone();
        let mut a_pred = Vec::with_capacity(n);
        let mut innov = self.innovations.iter().peekable();
        for (t, (step, y_t)) in spec.steps.iter().zip(obs).enumerate() {
            a_pred.push(a.clone());
            while let Some(inn) = innov.next_if(|i| i.time == t) {
                let y = y_t[inn.index].expect("missing pattern differs from filtered data");
                let v = y - step.z.row(inn.index).dot(&a.transpose());
                match inn.kind {
                    StepKind::Regular => a.axpy(v / inn.variance, &inn.m_star, 1.0),
                    StepKind::Diffuse => a.axpy(v / inn.diffuse_variance, &inn.m_inf, 1.0),
                    StepKind::Degenerate => {}
                }
                values.push(v);
            }
            if t + 1 < n {
                a = &step.transition * &a;
            }
        }

        // backward
        let mut r0 = DVector::zeros(k);
        let mut r1 = DVector::zeros(k);
        let mut means = vec![DVector::zeros(k); n];
        let mut idx = self.innovations.len();
        for t in (0..n).rev() {
            let step = &spec.steps[t];
            while idx > 0 && self.innovations[idx - 1].time == t {
                idx -= 1;
                let inn = &self.innovations[idx];
                let v = values[idx];
                let z = step.z.row(inn.index);
                match inn.kind {
                    StepKind::Regular => {
                        // r0 <- z' v/F + (I - K z)' r0 ; r1 <- (I - K z)' r1
                        let fv = inn.variance;
                        let c0 = v / fv - inn.m_star.dot(&r0) / fv;
                        let c1 = inn.m_star.dot(&r1) / fv;
                        r0.axpy(c0, &z.transpose(), 1.0);
                        r1.axpy(-c1, &z.transpose(), 1.0);
                    }
                    StepKind::Diffuse => {
                        let fi = inn.diffuse_variance;
                        let k_inf = &inn.m_inf / fi;
                        let k1 = (&inn.m_star - &k_inf * inn.variance) / fi;
                        // r1 <- z' v/F_inf + L0' r1 + L1' r0 ; r0 <- L0' r0
                        let c1 = v / fi - k_inf.dot(&r1) - k1.dot(&r0);
                        let c0 = k_inf.dot(&r0);
                        r1.axpy(c1, &z.transpose(), 1.0);
                        r0.axpy(-c0, &z.transpose(), 1.0);
                    }
                    StepKind::Degenerate => {}
                }
            }
            let pred = &self.predicted[t];
            means[t] = &a_pred[t] + &pred.cov * &r0 + &pred.diffuse_cov * &r1;
            if t > 0 {
                let tr = &spec.steps[t - 1].transition;
                r0 = tr.transpose() * &r0;
                r1 = tr.transpose() * &r1;
            }
        }
        means
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticsOptions {
    pub lags: Vec<usize>,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self { lags: vec![5, 10] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiagnosticsStatus {
    Ok,
    /// Fewer than 8 standardized residuals.
    InsufficientData,
    /// Some non-diffuse data had zero prediction variance.
    Degenerate,
}

#[derive(Debug, Clone, Serialize)]
pub struct LjungBox {
    pub lag: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub status: DiagnosticsStatus,
    pub residuals: Vec<f64>,
    pub n_degenerate: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub ljung_box: Vec<LjungBox>,
    /// Jarque-Bera statistic and its chi-square(2) p-value.
    pub normality: Option<(f64, f64)>,
}

/// Standardized one-step residuals from the non-diffuse phase and summary tests.
pub fn residual_diagnostics(f: &FilterOutput, opts: &DiagnosticsOptions) -> ResidualReport {
    let residuals: Vec<f64> = f.innovations.iter().filter_map(Innovation::standardized).collect();
    let n = residuals.len();
    let status = if f.n_degenerate > 0 {
        DiagnosticsStatus::Degenerate
    } else if n < 8 {
        DiagnosticsStatus::InsufficientData
    } else {
        DiagnosticsStatus::Ok
    };
    let mut report = ResidualReport {
        status,
        residuals,
        n_degenerate: f.n_degenerate,
        mean: None,
        variance: None,
        ljung_box: Vec::new(),
        normality: None,
    };
    if n < 8 {
        return report;
    }
    let e = &report.residuals;
    let nf = n as f64;
    let mean = e.iter().sum::<f64>() / nf;
    let c0 = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    report.mean = Some(mean);
    report.variance = Some(e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0));
    if c0 > 0.0 {
        let acf = |lag: usize| {
            (lag..n).map(|t| (e[t] - mean) * (e[t - lag] - mean)).sum::<f64>() / (nf * c0)
        };
        for &lag in opts.lags.iter().filter(|&&l| l > 0 && l < n) {
            let statistic = nf * (nf + 2.0)
                * (1..=lag).map(|h| acf(h).powi(2) / (nf - h as f64)).sum::<f64>();
            let p_value = ChiSquared::new(lag as f64).map_or(f64::NAN, |d| 1.0 - d.cdf(statistic));
            report.ljung_box.push(LjungBox {
                lag,
                statistic,
                p_value,
            });
        }
        let skew = e.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf / c0.powf(1.5);
        let kurt = e.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf / (c0 * c0);
        let jb = nf / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
        let p = ChiSquared::new(2.0).map_or(f64::NAN, |d| 1.0 - d.cdf(jb));
        report.normality = Some((jb, p));
    }
    report
}
