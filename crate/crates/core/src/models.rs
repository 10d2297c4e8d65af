//! The four reserving model recipes and a registry addressable by name.
//!
//! Each recipe fixes a response variable and a sequencing and maps a triangle
//! to its transformed series plus a parameter map over log variances.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{self, FitError, FitOptions, FitResult};
use crate::ssm::{ComponentDef, ParamDescriptor, ParamMap, SsmSpec, TimeStep};
use crate::triangle::{
    sequence, transform, Cell, ResponseKind, Sequencing, TransformedSeries, Triangle,
    TriangleError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error("unknown model {0:?} (expected one of Hertig, CC, Verrall, BSM)")]
    Unknown(String),
    #[error("triangle has no observed responses")]
    NoData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelName {
    Hertig,
    #[serde(rename = "CC")]
    Cc,
    Verrall,
    #[serde(rename = "BSM")]
    Bsm,
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hertig => "Hertig",
            Self::Cc => "CC",
            Self::Verrall => "Verrall",
            Self::Bsm => "BSM",
        })
    }
}

impl FromStr for ModelName {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hertig" => Ok(Self::Hertig),
            "cc" => Ok(Self::Cc),
            "verrall" | "verral" => Ok(Self::Verrall),
            "bsm" => Ok(Self::Bsm),
            _ => Err(ModelError::Unknown(s.to_string())),
        }
    }
}

#[derive(Debug)]
pub struct ModelRecipe {
    pub name: ModelName,
    /// Bumped whenever the recipe's model form changes.
    pub version: &'static str,
    pub response_kind: ResponseKind,
    pub sequencing: Sequencing,
    pub param_names: &'static [&'static str],
    build: fn(&Triangle) -> Result<BuiltModel, ModelError>,
}

impl ModelRecipe {
    pub fn q(&self) -> usize {
        self.param_names.len()
    }

    pub fn build(&self, t: &Triangle) -> Result<BuiltModel, ModelError> {
        (self.build)(t)
    }
}

static RECIPES: [ModelRecipe; 4] = [
    ModelRecipe {
        name: ModelName::Hertig,
        version: "hertig/1",
        response_kind: ResponseKind::LogDevRatio,
        sequencing: Sequencing::CalendarYear,
        param_names: &["sigma2"],
        build: build_hertig,
    },
    ModelRecipe {
        name: ModelName::Cc,
        version: "cc/1",
        response_kind: ResponseKind::LogDevRatio,
        sequencing: Sequencing::CalendarYear,
        param_names: &["sigma2", "tau2"],
        build: build_cc,
    },
    ModelRecipe {
        name: ModelName::Verrall,
        version: "verrall/1",
        response_kind: ResponseKind::LogIncremental,
        sequencing: Sequencing::CalendarYear,
        param_names: &["sigma2", "tau2_row", "tau2_col"],
        build: build_verrall,
    },
    ModelRecipe {
        name: ModelName::Bsm,
        version: "bsm/1",
        response_kind: ResponseKind::LogIncremental,
        sequencing: Sequencing::RowWise,
        param_names: &["sigma2", "tau2_level", "tau2_pattern"],
        build: build_bsm,
    },
];

pub fn recipes() -> &'static [ModelRecipe] {
    &RECIPES
}

pub fn recipe(name: ModelName) -> &'static ModelRecipe {
    RECIPES.iter().find(|r| r.name == name).expect("every name has a recipe")
}

/// Looks a recipe up by case-insensitive name.
pub fn recipe_by_name(name: &str) -> Result<&'static ModelRecipe, ModelError> {
    Ok(recipe(name.parse()?))
}

/// A recipe applied to a triangle.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub name: ModelName,
    pub version: &'static str,
    pub series: TransformedSeries,
    pub map: ParamMap,
}

impl BuiltModel {
    pub fn observations(&self) -> Vec<Vec<Option<f64>>> {
        self.series.steps.iter().map(|s| s.values.clone()).collect()
    }

    pub fn fit(&self, opts: &FitOptions) -> Result<FitResult, FitError> {
        estimation::fit(&self.map, &self.observations(), opts)
    }

    pub fn spec_at(&self, theta: &[f64]) -> Result<SsmSpec, crate::ssm::SsmError> {
        self.map.materialize(theta)
    }
}

fn series_for(t: &Triangle, kind: ResponseKind, seq: Sequencing) -> Result<TransformedSeries, ModelError> {
    let s = sequence(&transform(t, kind)?, seq);
    if s.n_observed() == 0 {
        return Err(ModelError::NoData);
    }
    Ok(s)
}

/// Pooled variance of the observed responses about their column means; the
/// starting value for the observation variance.
fn within_column_variance(series: &TransformedSeries) -> f64 {
    let m = series.n_cols;
    let (mut sum, mut count) = (vec![0.0; m], vec![0usize; m]);
    let cells = || {
        series
            .steps
            .iter()
            .flat_map(|s| s.cells.iter().zip(&s.values))
            .filter_map(|(c, v)| v.map(|v| (c.lag, v)))
    };
    for (j, v) in cells() {
        sum[j] += v;
        count[j] += 1;
    }
    let ss: f64 = cells().map(|(j, v)| (v - sum[j] / count[j] as f64).powi(2)).sum();
    let dof = count.iter().sum::<usize>() as isize - count.iter().filter(|&&c| c > 0).count() as isize;
    let s2 = if dof > 0 { ss / dof as f64 } else { f64::NAN };
    if s2.is_finite() && s2 > 1e-12 {
        s2
    } else {
        0.01
    }
}

fn variance_params(names: &[&str], s2: f64) -> Vec<ParamDescriptor> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| ParamDescriptor::log_variance(*n, if i == 0 { s2 } else { s2 / 10.0 }))
        .collect()
}

/// Observation rows selecting state elements: one row per cell.
fn design<F>(cells: &[Cell], k: usize, mut select: F) -> DMatrix<f64>
where
    F: FnMut(Cell, &mut dyn FnMut(usize)),
{
    let mut z = DMatrix::zeros(cells.len(), k);
    for (r, &c) in cells.iter().enumerate() {
        select(c, &mut |idx| z[(r, idx)] = 1.0);
    }
    z
}

fn diffuse_spec(k: usize, steps: Vec<TimeStep>, components: Vec<ComponentDef>) -> SsmSpec {
    SsmSpec {
        steps,
        a0: DVector::zeros(k),
        q0: DMatrix::zeros(k, k),
        diffuse: vec![true; k],
        components,
        regression: None,
    }
}

/// Lag-effect models on log development ratios. With `walk` the lag effects
/// follow a random walk across accident years, otherwise they are fixed.
fn lag_effect_model(t: &Triangle, walk: bool) -> Result<BuiltModel, ModelError> {
    let name = if walk { ModelName::Cc } else { ModelName::Hertig };
    let r = recipe(name);
    let series = series_for(t, r.response_kind, r.sequencing)?;
    let params = variance_params(r.param_names, within_column_variance(&series));
    let cells: Vec<Vec<Cell>> = series.steps.iter().map(|s| s.cells.clone()).collect();
    let m = series.n_cols;
    let components: Vec<ComponentDef> =
        (0..m).map(|j| ComponentDef::element(format!("delta_{j}"), m, j)).collect();
    let map = ParamMap::new(params, move |v| {
        let (sigma2, tau2) = (v[0], if walk { v[1] } else { 0.0 });
        let steps = cells
            .iter()
            .map(|cs| {
                TimeStep::new(
                    design(cs, m, |c, set| set(c.lag)),
                    DVector::from_element(cs.len(), sigma2),
                    DMatrix::identity(m, m),
                    DMatrix::identity(m, m) * tau2,
                )
            })
            .collect();
        diffuse_spec(m, steps, components.clone())
    });
    Ok(BuiltModel {
        name,
        version: r.version,
        series,
        map,
    })
}

/// Time-invariant lag effects on log development ratios; one variance.
pub fn build_hertig(t: &Triangle) -> Result<BuiltModel, ModelError> {
    lag_effect_model(t, false)
}

/// Lag effects on log development ratios that drift across accident years.
pub fn build_cc(t: &Triangle) -> Result<BuiltModel, ModelError> {
    lag_effect_model(t, true)
}

/// Two-way model `mu + a_i + b_j` on log incremental claims with `a_0 = b_0 = 0`.
///
/// The row and column effects drift over calendar time, so for a fixed cell
/// the walk runs along its diagonal; with both walk variances at zero the
/// model is the fixed two-way regression.
pub fn build_verrall(t: &Triangle) -> Result<BuiltModel, ModelError> {
    let r = recipe(ModelName::Verrall);
    let series = series_for(t, r.response_kind, r.sequencing)?;
    let params = variance_params(r.param_names, within_column_variance(&series));
    let (n, m) = (series.n_rows, series.n_cols);
    let k = 1 + (n - 1) + (m - 1);
    let row_idx = move |i: usize| i; // a_i at 1..n-1
    let col_idx = move |j: usize| n - 1 + j; // b_j at n..n+m-2
    let cells: Vec<Vec<Cell>> = series.steps.iter().map(|s| s.cells.clone()).collect();
    let mut components = vec![ComponentDef::element("mu", k, 0)];
    components.extend((1..n).map(|i| ComponentDef::element(format!("row_{i}"), k, row_idx(i))));
    components.extend((1..m).map(|j| ComponentDef::element(format!("col_{j}"), k, col_idx(j))));
    let map = ParamMap::new(params, move |v| {
        let mut q = DMatrix::zeros(k, k);
        for i in 1..n {
            q[(row_idx(i), row_idx(i))] = v[1];
        }
        for j in 1..m {
            q[(col_idx(j), col_idx(j))] = v[2];
        }
        let steps = cells
            .iter()
            .map(|cs| {
                let z = design(cs, k, |c, set| {
                    set(0);
                    if c.row > 0 {
                        set(row_idx(c.row));
                    }
                    if c.lag > 0 {
                        set(col_idx(c.lag));
                    }
                });
                TimeStep::new(
                    z,
                    DVector::from_element(cs.len(), v[0]),
                    DMatrix::identity(k, k),
                    q.clone(),
                )
            })
            .collect();
        diffuse_spec(k, steps, components.clone())
    });
    Ok(BuiltModel {
        name: r.name,
        version: r.version,
        series,
        map,
    })
}

/// Local level plus a dummy-seasonal development pattern of period `m` on
/// the row-wise stacked log incremental claims.
pub fn build_bsm(t: &Triangle) -> Result<BuiltModel, ModelError> {
    let r = recipe(ModelName::Bsm);
    let series = series_for(t, r.response_kind, r.sequencing)?;
    let params = variance_params(r.param_names, within_column_variance(&series));
    let m = series.n_cols;
    let k = m; // level + (m - 1) seasonal states
    let mut transition = DMatrix::zeros(k, k);
    transition[(0, 0)] = 1.0;
    if k > 1 {
        for c in 1..k {
            transition[(1, c)] = -1.0;
        }
        for s in 2..k {
            transition[(s, s - 1)] = 1.0;
        }
    }
    let mut z = DMatrix::zeros(1, k);
    z[(0, 0)] = 1.0;
    if k > 1 {
        z[(0, 1)] = 1.0;
    }
    let n_times = series.len();
    let mut components = vec![ComponentDef::element("level", k, 0)];
    if k > 1 {
        components.push(ComponentDef::element("pattern", k, 1));
    }
    let map = ParamMap::new(params, move |v| {
        let mut q = DMatrix::zeros(k, k);
        q[(0, 0)] = v[1];
        if k > 1 {
            q[(1, 1)] = v[2];
        }
        let step = TimeStep::new(z.clone(), DVector::from_element(1, v[0]), transition.clone(), q);
        diffuse_spec(k, vec![step; n_times], components.clone())
    });
    Ok(BuiltModel {
        name: r.name,
        version: r.version,
        series,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman;
    use crate::ssm::validate;
    use crate::triangle::TriangleKind;

    fn runoff(n: usize) -> Triangle {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        (i + j < n).then(|| {
                            1000.0 * (1.0 + 0.1 * i as f64) * (0.6f64).powi(j as i32)
                                * (1.0 + 0.03 * ((i * 7 + j * 3) % 5) as f64)
                        })
                    })
                    .collect()
            })
            .collect();
        Triangle::from_rows(rows, TriangleKind::Incremental).unwrap()
    }

    #[test]
    fn recipes_match_their_response_and_sequencing() {
        use ResponseKind::*;
        use Sequencing::*;
        let want = [
            (ModelName::Hertig, LogDevRatio, CalendarYear, 1),
            (ModelName::Cc, LogDevRatio, CalendarYear, 2),
            (ModelName::Verrall, LogIncremental, CalendarYear, 3),
            (ModelName::Bsm, LogIncremental, RowWise, 3),
        ];
        for (name, kind, seq, q) in want {
            let r = recipe(name);
            assert_eq!((r.response_kind, r.sequencing, r.q()), (kind, seq, q));
            let built = r.build(&runoff(5)).unwrap();
            assert_eq!(built.series.response_kind, kind);
            assert_eq!(built.series.sequencing, seq);
            assert_eq!(built.map.q(), q);
        }
    }

    #[test]
    fn names_parse_case_insensitively() {
        assert_eq!("cc".parse::<ModelName>().unwrap(), ModelName::Cc);
        assert_eq!("VERRALL".parse::<ModelName>().unwrap(), ModelName::Verrall);
        assert_eq!(recipe_by_name("bsm").unwrap().name, ModelName::Bsm);
        assert!(matches!(recipe_by_name("mack"), Err(ModelError::Unknown(_))));
        assert_eq!(ModelName::Cc.to_string(), "CC");
    }

    #[test]
    fn every_spec_validates() {
        for n in 3..8 {
            let t = runoff(n);
            for r in recipes() {
                let b = r.build(&t).unwrap();
                let spec = b.spec_at(&b.map.initial_theta()).unwrap();
                let report = validate(&spec);
                assert!(report.is_ok(), "{} n={n}: {report}", r.name);
                assert_eq!(spec.dims(), b.series.dims());
            }
        }
    }

    #[test]
    fn bsm_series_has_row_tail_gaps() {
        let b = build_bsm(&runoff(4)).unwrap();
        assert_eq!(b.series.len(), 16);
        let missing: Vec<usize> = b
            .observations()
            .iter()
            .enumerate()
            .filter(|(_, v)| v[0].is_none())
            .map(|(t, _)| t + 1)
            .collect();
        assert_eq!(missing, [8, 11, 12, 14, 15, 16]);
    }

    #[test]
    fn hertig_smoothed_effects_are_column_means() {
        let t = runoff(6);
        let b = build_hertig(&t).unwrap();
        let spec = b.spec_at(&[0.0]).unwrap();
        let sm = kalman::smooth(&spec, &b.observations()).unwrap();
        let grid = transform(&t, ResponseKind::LogDevRatio).unwrap().grid;
        for j in 0..6 {
            let col: Vec<f64> = (0..6).filter_map(|i| grid.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!((sm.state_mean[0][j] - mean).abs() < 1e-9, "lag {j}");
        }
    }

    #[test]
    fn positivity_errors_propagate() {
        let t = Triangle::from_rows(
            vec![vec![Some(1.0), Some(-2.0)], vec![Some(1.0), None]],
            TriangleKind::Incremental,
        )
        .unwrap();
        assert!(matches!(
            build_verrall(&t),
            Err(ModelError::Triangle(TriangleError::PositivityViolation { .. }))
        ));
    }
}
