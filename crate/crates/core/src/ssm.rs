//! Linear Gaussian state space model with regression effects and a
//! partially diffuse initial state.
//!
//! ```text
//! y_t       = Z_t alpha_t + X_t beta + eps_t,     eps_t ~ N(0, diag(h_t))
//! alpha_t+1 = T_t alpha_t + W_t gamma + eta_t+1,  eta_t+1 ~ N(0, Q_t)
//! alpha_1   ~ N(a0, Q0 + kappa * diag(diffuse)),  kappa -> infinity
//! ```
//!
//! Time points are stored densely. `a0`/`Q0` describe the state at the first
//! time point; the transition stored with step `t` maps `alpha_t` to
//! `alpha_t+1` (the one on the final step is only used for forecasting).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SsmError {
    #[error("parameter vector has length {found}, expected {expected}")]
    WrongParamLength { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
}

/// System matrices for one time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    /// Observation design, `p_t x k`.
    pub z: DMatrix<f64>,
    /// Observation regression design, `p_t x r`.
    pub x: DMatrix<f64>,
    /// Diagonal of the observation noise covariance, length `p_t`.
    pub h: DVector<f64>,
    /// State transition to the next time point, `k x k`.
    pub transition: DMatrix<f64>,
    /// State regression design, `k x g`.
    pub w: DMatrix<f64>,
    /// Disturbance covariance of the next state, `k x k`.
    pub q: DMatrix<f64>,
}

impl TimeStep {
    /// A step with no regression effects.
    pub fn new(
        z: DMatrix<f64>,
        h: DVector<f64>,
        transition: DMatrix<f64>,
        q: DMatrix<f64>,
    ) -> Self {
        let (p, k) = z.shape();
        Self {
            z,
            x: DMatrix::zeros(p, 0),
            h,
            transition,
            w: DMatrix::zeros(k, 0),
            q,
        }
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }
}

/// Named linear combination of the state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDef {
    pub name: String,
    /// `c x k` selection matrix; the component at time t is `selection * alpha_t`.
    pub selection: DMatrix<f64>,
}

impl ComponentDef {
    /// Component equal to a single state element.
    pub fn element(name: impl Into<String>, k: usize, index: usize) -> Self {
        let mut selection = DMatrix::zeros(1, k);
        selection[(0, index)] = 1.0;
        Self {
            name: name.into(),
            selection,
        }
    }
}

/// Position of the regression coefficients inside an augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionLayout {
    pub n_state: usize,
    pub n_beta: usize,
    pub n_gamma: usize,
}

impl RegressionLayout {
    pub fn beta_range(&self) -> std::ops::Range<usize> {
        self.n_state..self.n_state + self.n_beta
    }
    pub fn gamma_range(&self) -> std::ops::Range<usize> {
        let start = self.n_state + self.n_beta;
        start..start + self.n_gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmSpec {
    pub steps: Vec<TimeStep>,
    pub a0: DVector<f64>,
    pub q0: DMatrix<f64>,
    pub diffuse: Vec<bool>,
    pub components: Vec<ComponentDef>,
    /// Set by [`augment_regression`].
    pub regression: Option<RegressionLayout>,
}

impl SsmSpec {
    /// Builds a spec by evaluating a pure per-time generator.
    pub fn from_generator<F>(
        n_times: usize,
        a0: DVector<f64>,
        q0: DMatrix<f64>,
        diffuse: Vec<bool>,
        mut step: F,
    ) -> Self
    where
        F: FnMut(usize) -> TimeStep,
    {
        Self {
            steps: (0..n_times).map(&mut step).collect(),
            a0,
            q0,
            diffuse,
            components: Vec::new(),
            regression: None,
        }
    }

    pub fn with_components(mut self, components: Vec<ComponentDef>) -> Self {
        self.components = components;
        self
    }

    pub fn n_times(&self) -> usize {
        self.steps.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a0.len()
    }

    pub fn n_beta(&self) -> usize {
        self.steps.first().map_or(0, |s| s.x.ncols())
    }

    pub fn n_gamma(&self) -> usize {
        self.steps.first().map_or(0, |s| s.w.ncols())
    }

    pub fn n_diffuse(&self) -> usize {
        self.diffuse.iter().filter(|&&d| d).count()
    }

    /// Observation dimension schedule `p_1..p_T`.
    pub fn dims(&self) -> Vec<usize> {
        self.steps.iter().map(TimeStep::dim).collect()
    }

    /// True when every noise source (observation, disturbance, proper part of
    /// the initial state) has zero variance.
    pub fn is_noise_free(&self) -> bool {
        self.q0.iter().all(|&v| v == 0.0)
            && self
                .steps
                .iter()
                .all(|s| s.h.iter().all(|&v| v == 0.0) && s.q.iter().all(|&v| v == 0.0))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// A single finding of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ValidationIssue {
    NoTimePoints,
    Dimension {
        time: Option<usize>,
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NotSymmetric {
        time: Option<usize>,
        what: &'static str,
    },
    NotPsd {
        time: Option<usize>,
        what: &'static str,
        min_eigenvalue: f64,
    },
    NegativeVariance {
        time: usize,
        index: usize,
        value: f64,
    },
    NonFinite {
        time: Option<usize>,
        what: &'static str,
    },
    DiffusePrior {
        index: usize,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = |t: &Option<usize>| t.map_or("initial state".to_string(), |t| format!("t={}", t + 1));
        match self {
            Self::NoTimePoints => write!(f, "model has no time points"),
            Self::Dimension {
                time,
                what,
                expected,
                found,
            } => write!(
                f,
                "{}: {what} is {}x{}, expected {}x{}",
                at(time),
                found.0,
                found.1,
                expected.0,
                expected.1
            ),
            Self::NotSymmetric { time, what } => write!(f, "{}: {what} is not symmetric", at(time)),
            Self::NotPsd {
                time,
                what,
                min_eigenvalue,
            } => write!(
                f,
                "{}: {what} is not positive semidefinite (min eigenvalue {min_eigenvalue:e})",
                at(time)
            ),
            Self::NegativeVariance { time, index, value } => write!(
                f,
                "t={}: observation variance {index} is negative ({value})",
                time + 1
            ),
            Self::NonFinite { time, what } => write!(f, "{}: {what} has non-finite entries", at(time)),
            Self::DiffusePrior { index } => {
                write!(f, "diffuse state {index} has a nonzero row/column in Q0")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("no issues");
        }
        for (n, issue) in self.issues.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

fn check_shape(
    issues: &mut Vec<ValidationIssue>,
    time: Option<usize>,
    what: &'static str,
    found: (usize, usize),
    expected: (usize, usize),
) -> bool {
    if found != expected {
        issues.push(ValidationIssue::Dimension {
            time,
            what,
            expected,
            found,
        });
        return false;
    }
    true
}

fn check_covariance(
    issues: &mut Vec<ValidationIssue>,
    time: Option<usize>,
    what: &'static str,
    m: &DMatrix<f64>,
) {
    if m.iter().any(|v| !v.is_finite()) {
        issues.push(ValidationIssue::NonFinite { time, what });
        return;
    }
    if m.is_empty() {
        return;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        issues.push(ValidationIssue::NotSymmetric { time, what });
        return;
    }
    let min_eigenvalue = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min_eigenvalue < -1e-8 * scale {
        issues.push(ValidationIssue::NotPsd {
            time,
            what,
            min_eigenvalue,
        });
    }
}

/// Reports dimension mismatches, non-PSD covariances and negative variances.
pub fn validate(spec: &SsmSpec) -> ValidationReport {
    let mut issues = Vec::new();
    if spec.steps.is_empty() {
        issues.push(ValidationIssue::NoTimePoints);
    }
    let k = spec.state_dim();
    let r = spec.n_beta();
    let g = spec.n_gamma();
    check_shape(&mut issues, None, "a0", spec.a0.shape(), (k, 1));
    check_shape(&mut issues, None, "diffuse flags", (spec.diffuse.len(), 1), (k, 1));
    if check_shape(&mut issues, None, "Q0", spec.q0.shape(), (k, k)) {
        check_covariance(&mut issues, None, "Q0", &spec.q0);
        for (i, &d) in spec.diffuse.iter().enumerate().take(k) {
            if d && (spec.q0.row(i).amax() > 0.0 || spec.q0.column(i).amax() > 0.0) {
                issues.push(ValidationIssue::DiffusePrior { index: i });
            }
        }
    }
    if spec.a0.iter().any(|v| !v.is_finite()) {
        issues.push(ValidationIssue::NonFinite {
            time: None,
            what: "a0",
        });
    }

    for (t, s) in spec.steps.iter().enumerate() {
        let p = s.dim();
        let time = Some(t);
        check_shape(&mut issues, time, "Z", s.z.shape(), (p, k));
        check_shape(&mut issues, time, "X", s.x.shape(), (p, r));
        check_shape(&mut issues, time, "H", s.h.shape(), (p, 1));
        check_shape(&mut issues, time, "T", s.transition.shape(), (k, k));
        check_shape(&mut issues, time, "W", s.w.shape(), (k, g));
        if check_shape(&mut issues, time, "Q", s.q.shape(), (k, k)) {
            check_covariance(&mut issues, time, "Q", &s.q);
        }
        for (what, m) in [("Z", &s.z), ("X", &s.x), ("T", &s.transition), ("W", &s.w)] {
            if m.iter().any(|v| !v.is_finite()) {
                issues.push(ValidationIssue::NonFinite { time, what });
            }
        }
        for (index, &value) in s.h.iter().enumerate() {
            if !value.is_finite() {
                issues.push(ValidationIssue::NonFinite { time, what: "H" });
            } else if value < 0.0 {
                issues.push(ValidationIssue::NegativeVariance { time: t, index, value });
            }
        }
    }
    for c in &spec.components {
        check_shape(
            &mut issues,
            None,
            "component selection",
            (1, c.selection.ncols()),
            (1, k),
        );
    }
    ValidationReport { issues }
}

/// Moves `beta` and `gamma` into the state vector as constant diffuse states.
///
/// The result has no regression designs and is observationally identical to
/// the input. Components are padded with zeros; the layout of the appended
/// coefficients is recorded in [`SsmSpec::regression`].
pub fn augment_regression(spec: &SsmSpec) -> SsmSpec {
    let r = spec.n_beta();
    let g = spec.n_gamma();
    if r == 0 && g == 0 {
        return spec.clone();
    }
    let k = spec.state_dim();
    let ka = k + r + g;

    let steps = spec
        .steps
        .iter()
        .map(|s| {
            let p = s.dim();
            let mut z = DMatrix::zeros(p, ka);
            z.view_mut((0, 0), (p, k)).copy_from(&s.z);
            z.view_mut((0, k), (p, r)).copy_from(&s.x);
            let mut transition = DMatrix::identity(ka, ka);
            transition.view_mut((0, 0), (k, k)).copy_from(&s.transition);
            transition.view_mut((0, k + r), (k, g)).copy_from(&s.w);
            let mut q = DMatrix::zeros(ka, ka);
            q.view_mut((0, 0), (k, k)).copy_from(&s.q);
            TimeStep {
                z,
                x: DMatrix::zeros(p, 0),
                h: s.h.clone(),
                transition,
                w: DMatrix::zeros(ka, 0),
                q,
            }
        })
        .collect();

    let mut a0 = DVector::zeros(ka);
    a0.rows_mut(0, k).copy_from(&spec.a0);
    let mut q0 = DMatrix::zeros(ka, ka);
    q0.view_mut((0, 0), (k, k)).copy_from(&spec.q0);
    let mut diffuse = spec.diffuse.clone();
    diffuse.resize(ka, true);
    let components = spec
        .components
        .iter()
        .map(|c| {
            let mut selection = DMatrix::zeros(c.selection.nrows(), ka);
            selection
                .view_mut((0, 0), (c.selection.nrows(), k))
                .copy_from(&c.selection);
            ComponentDef {
                name: c.name.clone(),
                selection,
            }
        })
        .collect();

    SsmSpec {
        steps,
        a0,
        q0,
        diffuse,
        components,
        regression: Some(RegressionLayout {
            n_state: k,
            n_beta: r,
            n_gamma: g,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamScale {
    /// `theta` is the log of a variance.
    LogVariance,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    pub scale: ParamScale,
    /// Starting value on the `theta` scale.
    pub initial: f64,
}

impl ParamDescriptor {
    pub fn log_variance(name: impl Into<String>, variance: f64) -> Self {
        Self {
            name: name.into(),
            scale: ParamScale::LogVariance,
            initial: variance.ln(),
        }
    }
}

type Builder = dyn Fn(&[f64]) -> SsmSpec + Send + Sync;

/// Maps a free parameter vector `theta` to a full [`SsmSpec`].
///
/// The builder receives natural-scale values (variances, not log variances)
/// and must be pure.
#[derive(Clone)]
pub struct ParamMap {
    params: Vec<ParamDescriptor>,
    build: Arc<Builder>,
}

impl fmt::Debug for ParamMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamMap")
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl ParamMap {
    pub fn new<F>(params: Vec<ParamDescriptor>, build: F) -> Self
    where
        F: Fn(&[f64]) -> SsmSpec + Send + Sync + 'static,
    {
        Self {
            params,
            build: Arc::new(build),
        }
    }

    /// Number of free parameters.
    pub fn q(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamDescriptor] {
        &self.params
    }

    pub fn initial_theta(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.initial).collect()
    }

    pub fn with_initial(mut self, theta: &[f64]) -> Result<Self, SsmError> {
        self.check_len(theta)?;
        for (p, &v) in self.params.iter_mut().zip(theta) {
            p.initial = v;
        }
        Ok(self)
    }

    fn check_len(&self, theta: &[f64]) -> Result<(), SsmError> {
        if theta.len() != self.q() {
            return Err(SsmError::WrongParamLength {
                expected: self.q(),
                found: theta.len(),
            });
        }
        Ok(())
    }

    /// Natural-scale parameter values.
    pub fn natural(&self, theta: &[f64]) -> Result<Vec<f64>, SsmError> {
        self.check_len(theta)?;
        Ok(self
            .params
            .iter()
            .zip(theta)
            .map(|(p, &v)| match p.scale {
                ParamScale::LogVariance => v.exp(),
                ParamScale::Unconstrained => v,
            })
            .collect())
    }

    pub fn materialize(&self, theta: &[f64]) -> Result<SsmSpec, SsmError> {
        let natural = self.natural(theta)?;
        Ok((self.build)(&natural))
    }

    /// Builds the spec from natural-scale values directly (variances may be 0).
    pub fn materialize_natural(&self, values: &[f64]) -> Result<SsmSpec, SsmError> {
        self.check_len(values)?;
        Ok((self.build)(values))
    }
}

pub fn materialize(map: &ParamMap, theta: &[f64]) -> Result<SsmSpec, SsmError> {
    map.materialize(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn local_level(n: usize, noise: f64, level: f64) -> SsmSpec {
        SsmSpec::from_generator(
            n,
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            vec![true],
            |_| {
                TimeStep::new(
                    DMatrix::from_element(1, 1, 1.0),
                    DVector::from_element(1, noise),
                    DMatrix::identity(1, 1),
                    DMatrix::from_element(1, 1, level),
                )
            },
        )
        .with_components(vec![ComponentDef::element("level", 1, 0)])
    }

    #[test]
    fn well_formed_local_level_validates() {
        assert!(validate(&local_level(5, 1.0, 0.5)).is_ok());
    }

    #[test]
    fn reports_non_psd_q() {
        let mut spec = local_level(3, 1.0, 0.5);
        spec.steps[1].q = DMatrix::from_element(1, 1, -0.1);
        let report = validate(&spec);
        assert!(matches!(
            report.issues[..],
            [ValidationIssue::NotPsd { time: Some(1), what: "Q", .. }]
        ));
    }

    #[test]
    fn reports_wrong_z_columns_with_time() {
        let mut spec = local_level(3, 1.0, 0.5);
        spec.steps[2].z = DMatrix::zeros(1, 2);
        let report = validate(&spec);
        assert!(matches!(
            report.issues[..],
            [ValidationIssue::Dimension { time: Some(2), what: "Z", .. }]
        ));
        assert!(report.to_string().contains("t=3"));
    }

    #[test]
    fn reports_negative_h_and_diffuse_prior() {
        let mut spec = local_level(2, 1.0, 0.5);
        spec.steps[0].h[0] = -1.0;
        spec.q0[(0, 0)] = 2.0;
        let report = validate(&spec);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::NegativeVariance { .. })));
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::DiffusePrior { index: 0 })));
    }

    fn level_map() -> ParamMap {
        ParamMap::new(
            vec![
                ParamDescriptor::log_variance("noise", 1.0),
                ParamDescriptor::log_variance("level", 0.1),
            ],
            |v| local_level(4, v[0], v[1]),
        )
    }

    #[test]
    fn materialize_exponentiates_log_variances() {
        let map = ParamMap::new(vec![ParamDescriptor::log_variance("v", 1.0)], |v| {
            local_level(2, v[0], 0.0)
        });
        assert_eq!(map.materialize(&[0.0]).unwrap().steps[0].h[0], 1.0);
        let four = map.materialize(&[4f64.ln()]).unwrap().steps[0].h[0];
        assert!((four - 4.0).abs() < 1e-14);
        assert_eq!(
            map.materialize(&[0.0, 1.0]),
            Err(SsmError::WrongParamLength {
                expected: 1,
                found: 2
            })
        );
    }

    #[test]
    fn augmentation_identity_without_regression() {
        let spec = local_level(3, 1.0, 0.5);
        assert_eq!(augment_regression(&spec), spec);
    }

    #[test]
    fn augmentation_appends_diffuse_beta() {
        let mut spec = local_level(3, 1.0, 0.5);
        for (t, s) in spec.steps.iter_mut().enumerate() {
            s.x = DMatrix::from_element(1, 1, t as f64);
        }
        let aug = augment_regression(&spec);
        assert_eq!(aug.state_dim(), 2);
        assert_eq!(aug.diffuse, vec![true, true]);
        assert_eq!(aug.steps[2].z[(0, 1)], 2.0);
        assert_eq!(aug.components[0].selection.ncols(), 2);
        assert_eq!(aug.regression.unwrap().beta_range(), 1..2);
        assert!(validate(&aug).is_ok());
    }

    #[test]
    fn materialize_is_deterministic() {
        let map = level_map();
        let a = map.materialize(&[0.3, -1.2]).unwrap();
        let b = map.materialize(&[0.3, -1.2]).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    proptest! {
        #[test]
        fn random_theta_gives_valid_spec(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let spec = level_map().materialize(&[a, b]).unwrap();
            prop_assert!(validate(&spec).is_ok());
        }
    }
}
