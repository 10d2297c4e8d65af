//! Runoff triangles and the data forms derived from them.
//!
//! A [`Triangle`] is a rectangular grid of claims indexed by origin (accident
//! year, row) and development lag (column) together with a mask of observed
//! cells. The module converts between incremental and cumulative claims,
//! computes development ratios, applies the log transforms used as model
//! responses, orders transformed cells into a time series, and inverts the
//! whole chain to turn model predictions back into incremental claims.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriangleError {
    #[error("input is empty")]
    Empty,
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, field {field}: cannot parse {token:?} as a number")]
    NonNumeric {
        line: usize,
        field: usize,
        token: String,
    },
    #[error("observed region is not upper-left justified at {0}")]
    NotRunoff(Cell),
    #[error("non-positive value {value} at {cell}")]
    PositivityViolation { cell: Cell, value: f64 },
    #[error("expected a {expected:?} triangle, got {found:?}")]
    WrongKind {
        expected: TriangleKind,
        found: TriangleKind,
    },
    #[error("zero denominator in development ratio at {0}")]
    ZeroDenominator(Cell),
    #[error("row {row} has an observed value after a missing one (lag {lag})")]
    GapInRow { row: usize, lag: usize },
    #[error("prediction grid has no value at {0}")]
    IncompletePrediction(Cell),
    #[error("reconstructed value at {0} is not finite")]
    NonFinite(Cell),
    #[error("no value at {0}")]
    MissingValue(Cell),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid triangle JSON: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, TriangleError>;

/// Zero-based (origin row, development lag) address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub lag: usize,
}

impl Cell {
    pub fn new(row: usize, lag: usize) -> Self {
        Self { row, lag }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cell (row {}, lag {})", self.row, self.lag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriangleKind {
    Incremental,
    Cumulative,
}

/// Response variable an SSM is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResponseKind {
    LogIncremental,
    LogCumulative,
    LogDevRatio,
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ResponseKind::LogIncremental => "Log(Incremental claims)",
            ResponseKind::LogCumulative => "Log(Cumulative claims)",
            ResponseKind::LogDevRatio => "Log(Development ratios)",
        };
        f.write_str(s)
    }
}

/// Order in which grid cells are presented to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sequencing {
    RowWise,
    CalendarYear,
}

/// Dense row-major grid with optional entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<Option<f64>>,
}

impl Grid {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![None; n_rows * n_cols],
        }
    }

    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(TriangleError::Shape("rows have different lengths".into()));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn get(&self, row: usize, lag: usize) -> Option<f64> {
        self.values[row * self.n_cols + lag]
    }

    #[inline]
    pub fn set(&mut self, row: usize, lag: usize, value: Option<f64>) {
        self.values[row * self.n_cols + lag] = value;
    }

    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        self.values.chunks(self.n_cols.max(1)).map(<[_]>::to_vec).collect()
    }
}

/// A grid of transformed responses tagged with the transform that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseGrid {
    pub kind: ResponseKind,
    pub grid: Grid,
}

/// Claims triangle: values, observed mask and labels.
///
/// Observed cells always carry a value. Unobserved cells are normally empty,
/// but a triangle completed by [`reconstruct_incremental`] keeps its original
/// mask while holding predicted values in the unobserved region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TriangleJson", into = "TriangleJson")]
pub struct Triangle {
    n_origin: usize,
    n_dev: usize,
    values: Vec<Option<f64>>,
    observed: Vec<bool>,
    origin_labels: Vec<i64>,
    dev_labels: Vec<String>,
    kind: TriangleKind,
    epsilon_shift: f64,
}

impl Triangle {
    /// Builds a triangle whose mask is the set of non-empty cells.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>, kind: TriangleKind) -> Result<Self> {
        let grid = Grid::from_rows(&rows)?;
        let observed = grid.values.iter().map(Option::is_some).collect();
        Self::from_parts(grid, observed, kind)
    }

    pub fn from_parts(grid: Grid, observed: Vec<bool>, kind: TriangleKind) -> Result<Self> {
        let Grid {
            n_rows,
            n_cols,
            values,
        } = grid;
        if n_rows == 0 || n_cols == 0 {
            return Err(TriangleError::Empty);
        }
        if observed.len() != values.len() {
            return Err(TriangleError::Shape("mask and values differ in size".into()));
        }
        for (idx, (v, &obs)) in values.iter().zip(&observed).enumerate() {
            let cell = Cell::new(idx / n_cols, idx % n_cols);
            match v {
                Some(x) if !x.is_finite() => return Err(TriangleError::NonFinite(cell)),
                None if obs => return Err(TriangleError::MissingValue(cell)),
                _ => {}
            }
        }
        Ok(Self {
            n_origin: n_rows,
            n_dev: n_cols,
            values,
            observed,
            origin_labels: (1..=n_rows as i64).collect(),
            dev_labels: (0..n_cols).map(|j| j.to_string()).collect(),
            kind,
            epsilon_shift: 0.0,
        })
    }

    /// Incremental triangle with no values and no observed cells; used as a
    /// template for simulation.
    pub fn empty(n_origin: usize, n_dev: usize) -> Result<Self> {
        let grid = Grid::empty(n_origin, n_dev);
        let observed = vec![false; n_origin * n_dev];
        Self::from_parts(grid, observed, TriangleKind::Incremental)
    }

    pub fn with_origin_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.n_origin {
            return Err(TriangleError::Shape(format!(
                "{} origin labels for {} rows",
                labels.len(),
                self.n_origin
            )));
        }
        self.origin_labels = labels;
        Ok(self)
    }

    pub fn with_dev_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_dev {
            return Err(TriangleError::Shape(format!(
                "{} lag labels for {} columns",
                labels.len(),
                self.n_dev
            )));
        }
        self.dev_labels = labels;
        Ok(self)
    }

    /// Records a constant added to every incremental value before logs are
    /// taken. Predictions are shifted back on reconstruction.
    pub fn with_epsilon_shift(mut self, shift: f64) -> Self {
        self.epsilon_shift = shift;
        self
    }

    /// Replaces the observed mask, keeping values. Cells leaving the mask keep
    /// their values; cells entering it must have one.
    pub fn with_mask(mut self, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != self.values.len() {
            return Err(TriangleError::Shape("mask size".into()));
        }
        for (idx, (&obs, v)) in observed.iter().zip(&self.values).enumerate() {
            if obs && v.is_none() {
                return Err(TriangleError::MissingValue(self.cell_at(idx)));
            }
        }
        self.observed = observed;
        Ok(self)
    }

    /// Drops values outside the observed mask.
    pub fn observed_only(&self) -> Self {
        let mut out = self.clone();
        for (v, &obs) in out.values.iter_mut().zip(&self.observed) {
            if !obs {
                *v = None;
            }
        }
        out
    }

    pub fn n_origin(&self) -> usize {
        self.n_origin
    }
    pub fn n_dev(&self) -> usize {
        self.n_dev
    }
    pub fn kind(&self) -> TriangleKind {
        self.kind
    }
    pub fn epsilon_shift(&self) -> f64 {
        self.epsilon_shift
    }
    pub fn origin_labels(&self) -> &[i64] {
        &self.origin_labels
    }
    pub fn dev_labels(&self) -> &[String] {
        &self.dev_labels
    }
    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    #[inline]
    pub fn value(&self, row: usize, lag: usize) -> Option<f64> {
        self.values[row * self.n_dev + lag]
    }

    #[inline]
    pub fn is_observed(&self, row: usize, lag: usize) -> bool {
        self.observed[row * self.n_dev + lag]
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn n_unobserved(&self) -> usize {
        self.observed.len() - self.n_observed()
    }

    pub fn grid(&self) -> Grid {
        Grid {
            n_rows: self.n_origin,
            n_cols: self.n_dev,
            values: self.values.clone(),
        }
    }

    fn cell_at(&self, idx: usize) -> Cell {
        Cell::new(idx / self.n_dev, idx % self.n_dev)
    }

    /// True when the mask is exactly `i + j <= n_origin - 1`.
    pub fn is_regular_runoff(&self) -> bool {
        (0..self.n_origin).all(|i| {
            (0..self.n_dev).all(|j| self.is_observed(i, j) == (i + j < self.n_origin))
        })
    }

    /// Checks that every row's observed cells form a prefix and that prefix
    /// lengths do not increase down the rows.
    pub fn check_upper_left(&self) -> Result<()> {
        let mut prev_len = self.n_dev;
        for i in 0..self.n_origin {
            let len = (0..self.n_dev)
                .take_while(|&j| self.is_observed(i, j))
                .count();
            if let Some(j) = (len..self.n_dev).find(|&j| self.is_observed(i, j)) {
                return Err(TriangleError::NotRunoff(Cell::new(i, j)));
            }
            if len > prev_len {
                return Err(TriangleError::NotRunoff(Cell::new(i, prev_len)));
            }
            prev_len = len;
        }
        Ok(())
    }

    /// First observed cell with a value `<= 0`, if any.
    pub fn check_positive(&self) -> Result<()> {
        for (idx, (v, &obs)) in self.values.iter().zip(&self.observed).enumerate() {
            if let (Some(x), true) = (v, obs) {
                let shifted = x + self.epsilon_shift;
                if shifted <= 0.0 {
                    return Err(TriangleError::PositivityViolation {
                        cell: self.cell_at(idx),
                        value: *x,
                    });
                }
            }
        }
        Ok(())
    }

    fn require_kind(&self, expected: TriangleKind) -> Result<()> {
        if self.kind != expected {
            return Err(TriangleError::WrongKind {
                expected,
                found: self.kind,
            });
        }
        Ok(())
    }

    fn map_rows<F>(&self, kind: TriangleKind, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &[Option<f64>]) -> Result<Vec<Option<f64>>>,
    {
        let mut values = Vec::with_capacity(self.values.len());
        for (i, row) in self.values.chunks(self.n_dev).enumerate() {
            values.extend(f(i, row)?);
        }
        Ok(Self {
            values,
            kind,
            ..self.clone()
        })
    }

    /// Incremental claims as a plain grid, converting if necessary.
    pub fn incremental_grid(&self) -> Result<Grid> {
        match self.kind {
            TriangleKind::Incremental => Ok(self.grid()),
            TriangleKind::Cumulative => Ok(decumulate(self)?.grid()),
        }
    }
}

fn check_no_gap(row: usize, values: &[Option<f64>]) -> Result<()> {
    let prefix = values.iter().take_while(|v| v.is_some()).count();
    if let Some(lag) = (prefix..values.len()).find(|&j| values[j].is_some()) {
        return Err(TriangleError::GapInRow { row, lag });
    }
    Ok(())
}

/// Cumulative row sums `C_ij = sum_{k<=j} x_ik`.
pub fn cumulate(t: &Triangle) -> Result<Triangle> {
    t.require_kind(TriangleKind::Incremental)?;
    t.map_rows(TriangleKind::Cumulative, |i, row| {
        check_no_gap(i, row)?;
        let mut acc = 0.0;
        Ok(row
            .iter()
            .map(|v| {
                v.map(|x| {
                    acc += x;
                    acc
                })
            })
            .collect())
    })
}

/// First differences along rows.
pub fn decumulate(t: &Triangle) -> Result<Triangle> {
    t.require_kind(TriangleKind::Cumulative)?;
    t.map_rows(TriangleKind::Incremental, |i, row| {
        check_no_gap(i, row)?;
        let mut prev = 0.0;
        Ok(row
            .iter()
            .map(|v| {
                v.map(|c| {
                    let x = c - prev;
                    prev = c;
                    x
                })
            })
            .collect())
    })
}

/// Development ratios `D_i0 = C_i0`, `D_ij = C_ij / C_i(j-1)`.
pub fn dev_ratios(t: &Triangle) -> Result<Grid> {
    t.require_kind(TriangleKind::Cumulative)?;
    let mut out = Grid::empty(t.n_origin, t.n_dev);
    for i in 0..t.n_origin {
        for j in 0..t.n_dev {
            let Some(c) = t.value(i, j) else { continue };
            let d = if j == 0 {
                c
            } else {
                let prev = t
                    .value(i, j - 1)
                    .ok_or(TriangleError::GapInRow { row: i, lag: j })?;
                if prev == 0.0 {
                    return Err(TriangleError::ZeroDenominator(Cell::new(i, j)));
                }
                c / prev
            };
            out.set(i, j, Some(d));
        }
    }
    Ok(out)
}

/// Inverse of [`dev_ratios`]: cumulative products along each row.
pub fn cumulative_from_ratios(ratios: &Grid) -> Grid {
    let mut out = Grid::empty(ratios.n_rows, ratios.n_cols);
    for i in 0..ratios.n_rows {
        let mut acc = 1.0;
        for j in 0..ratios.n_cols {
            match ratios.get(i, j) {
                Some(d) => {
                    acc = if j == 0 { d } else { acc * d };
                    out.set(i, j, Some(acc));
                }
                None => break,
            }
        }
    }
    out
}

/// Elementwise log of the chosen data form, on the cells that carry values.
///
/// The triangle's epsilon shift is added to incremental claims before any
/// form is derived. `LogIncremental` requires positive shifted increments;
/// the cumulative-based forms require positive cumulative claims.
pub fn transform(t: &Triangle, kind: ResponseKind) -> Result<ResponseGrid> {
    let shifted = shifted_incremental(t)?;
    let source = match kind {
        ResponseKind::LogIncremental => shifted.grid(),
        ResponseKind::LogCumulative => cumulate(&shifted)?.grid(),
        ResponseKind::LogDevRatio => dev_ratios(&cumulate(&shifted)?)?,
    };
    let mut grid = Grid::empty(source.n_rows, source.n_cols);
    for i in 0..source.n_rows {
        for j in 0..source.n_cols {
            if let Some(x) = source.get(i, j) {
                if x <= 0.0 {
                    return Err(TriangleError::PositivityViolation {
                        cell: Cell::new(i, j),
                        value: x,
                    });
                }
                grid.set(i, j, Some(x.ln()));
            }
        }
    }
    Ok(ResponseGrid { kind, grid })
}

/// Observed-only incremental triangle with the epsilon shift applied.
fn shifted_incremental(t: &Triangle) -> Result<Triangle> {
    let base = match t.kind {
        TriangleKind::Incremental => t.observed_only(),
        TriangleKind::Cumulative => decumulate(&t.observed_only())?,
    };
    let shift = t.epsilon_shift;
    Ok(Triangle {
        values: base.values.iter().map(|v| v.map(|x| x + shift)).collect(),
        ..base
    })
}

/// One time point of a [`TransformedSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStep {
    pub values: Vec<Option<f64>>,
    pub cells: Vec<Cell>,
}

/// Time-indexed response sequence with a map from each element back to its
/// grid cell. Time points are stored in order; index `s` is time `t = s + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedSeries {
    pub sequencing: Sequencing,
    pub response_kind: ResponseKind,
    pub n_rows: usize,
    pub n_cols: usize,
    pub steps: Vec<SeriesStep>,
}

impl TransformedSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Observation dimension at each time point.
    pub fn dims(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.cells.len()).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.values)
            .filter(|v| v.is_some())
            .count()
    }

    /// Places per-element values (same layout as the steps) into a grid.
    pub fn to_grid(&self, per_step: &[Vec<Option<f64>>]) -> Result<ResponseGrid> {
        if per_step.len() != self.steps.len() {
            return Err(TriangleError::Shape("time points".into()));
        }
        let mut grid = Grid::empty(self.n_rows, self.n_cols);
        for (step, vals) in self.steps.iter().zip(per_step) {
            if vals.len() != step.cells.len() {
                return Err(TriangleError::Shape("observation dimension".into()));
            }
            for (cell, v) in step.cells.iter().zip(vals) {
                grid.set(cell.row, cell.lag, *v);
            }
        }
        Ok(ResponseGrid {
            kind: self.response_kind,
            grid,
        })
    }

    /// Same series with every element replaced by `f(cell, old value)`.
    pub fn map_values<F>(&self, mut f: F) -> Self
    where
        F: FnMut(Cell, Option<f64>) -> Option<f64>,
    {
        let steps = self
            .steps
            .iter()
            .map(|s| SeriesStep {
                values: s.cells.iter().zip(&s.values).map(|(c, v)| f(*c, *v)).collect(),
                cells: s.cells.clone(),
            })
            .collect();
        Self {
            steps,
            ..self.clone()
        }
    }
}

/// Assigns a time index to every grid cell.
///
/// Row-wise: one scalar per cell in row-major order. Calendar year: the
/// observation at time `t` (1-based) holds the cells with `i + j + 1 = t`
/// (0-based `i`, `j`), listed from the latest origin to the earliest.
pub fn sequence(grid: &ResponseGrid, sequencing: Sequencing) -> TransformedSeries {
    let g = &grid.grid;
    let steps = match sequencing {
        Sequencing::RowWise => (0..g.n_rows)
            .flat_map(|i| (0..g.n_cols).map(move |j| Cell::new(i, j)))
            .map(|c| SeriesStep {
                values: vec![g.get(c.row, c.lag)],
                cells: vec![c],
            })
            .collect(),
        Sequencing::CalendarYear => (0..g.n_rows + g.n_cols - 1)
            .map(|s| {
                let cells: Vec<Cell> = (0..g.n_rows)
                    .rev()
                    .filter(|&i| i <= s && s - i < g.n_cols)
                    .map(|i| Cell::new(i, s - i))
                    .collect();
                SeriesStep {
                    values: cells.iter().map(|c| g.get(c.row, c.lag)).collect(),
                    cells,
                }
            })
            .collect(),
    };
    TransformedSeries {
        sequencing,
        response_kind: grid.kind,
        n_rows: g.n_rows,
        n_cols: g.n_cols,
        steps,
    }
}

/// Fills the unobserved cells of `t` by inverting the transform chain.
///
/// Observed cells keep their data. For `LogDevRatio` each row is rebuilt from
/// its running cumulative total; for `LogCumulative` the predicted cumulative
/// is differenced against the previous (observed or predicted) cumulative.
pub fn reconstruct_incremental(pred: &ResponseGrid, t: &Triangle) -> Result<Triangle> {
    let g = &pred.grid;
    if g.n_rows != t.n_origin || g.n_cols != t.n_dev {
        return Err(TriangleError::Shape(format!(
            "prediction grid {}x{} vs triangle {}x{}",
            g.n_rows, g.n_cols, t.n_origin, t.n_dev
        )));
    }
    let incr = t.incremental_grid()?;
    let shift = t.epsilon_shift;
    let mut values = Vec::with_capacity(incr.values.len());
    for i in 0..t.n_origin {
        let mut cum = 0.0;
        for j in 0..t.n_dev {
            let cell = Cell::new(i, j);
            if t.is_observed(i, j) {
                let x = incr.get(i, j).ok_or(TriangleError::MissingValue(cell))?;
                cum += x + shift;
                values.push(Some(x));
                continue;
            }
            let y = g.get(i, j).ok_or(TriangleError::IncompletePrediction(cell))?;
            let x_shifted = match pred.kind {
                ResponseKind::LogIncremental => {
                    let x = y.exp();
                    cum += x;
                    x
                }
                ResponseKind::LogCumulative => {
                    let c = y.exp();
                    let x = c - cum;
                    cum = c;
                    x
                }
                ResponseKind::LogDevRatio => {
                    let c = if j == 0 { y.exp() } else { cum * y.exp() };
                    let x = c - cum;
                    cum = c;
                    x
                }
            };
            if !x_shifted.is_finite() || !cum.is_finite() {
                return Err(TriangleError::NonFinite(cell));
            }
            values.push(Some(x_shifted - shift));
        }
    }
    Ok(Triangle {
        n_origin: t.n_origin,
        n_dev: t.n_dev,
        values,
        observed: t.observed.clone(),
        origin_labels: t.origin_labels.clone(),
        dev_labels: t.dev_labels.clone(),
        kind: TriangleKind::Incremental,
        epsilon_shift: shift,
    })
}

/// Sum of the values in the unobserved cells.
pub fn reserve_sum(full: &Triangle) -> Result<f64> {
    full.require_kind(TriangleKind::Incremental)?;
    let mut total = 0.0;
    for (idx, (v, &obs)) in full.values.iter().zip(&full.observed).enumerate() {
        if obs {
            continue;
        }
        total += v.ok_or(TriangleError::MissingValue(full.cell_at(idx)))?;
    }
    Ok(total)
}

/// Options for [`parse_triangle`].
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Field separator; `None` picks the first of `,`, tab, `;` found in the header.
    pub delimiter: Option<char>,
    /// Reject masks that are not upper-left justified.
    pub strict_runoff: bool,
    /// Reject observed values `<= 0` (after the epsilon shift).
    pub require_positive: bool,
    pub epsilon_shift: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            delimiter: None,
            strict_runoff: false,
            require_positive: true,
            epsilon_shift: 0.0,
        }
    }
}

fn is_missing_token(tok: &str) -> bool {
    tok.is_empty()
        || tok.eq_ignore_ascii_case("nan")
        || tok.eq_ignore_ascii_case("na")
        || tok == "."
}

/// Parses delimited text: a header row of lag labels, then one row per origin.
///
/// If the first header field is empty or not an integer, the first column of
/// every row is read as the origin label. Blank, `NaN`, `NA` and `.` mark
/// missing cells.
pub fn parse_triangle(source: &str, opts: &ParseOptions) -> Result<Triangle> {
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or(TriangleError::Empty)?;
    let delim = opts.delimiter.unwrap_or_else(|| {
        [',', '\t', ';']
            .into_iter()
            .find(|d| header.contains(*d))
            .unwrap_or(',')
    });
    let header: Vec<&str> = header.split(delim).map(str::trim).collect();
    let has_origin_col = header[0].is_empty() || header[0].parse::<i64>().is_err();
    let dev_labels: Vec<String> = header
        .iter()
        .skip(usize::from(has_origin_col))
        .map(|s| s.to_string())
        .collect();
    if dev_labels.is_empty() {
        return Err(TriangleError::Empty);
    }

    let mut rows = Vec::new();
    let mut origin_labels = Vec::new();
    for (line, text) in lines {
        let fields: Vec<&str> = text.split(delim).map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(TriangleError::Ragged {
                line,
                expected: header.len(),
                found: fields.len(),
            });
        }
        let mut cells = fields.iter().enumerate();
        if has_origin_col {
            let (_, tok) = cells.next().unwrap();
            let label = tok.parse::<i64>().map_err(|_| TriangleError::NonNumeric {
                line,
                field: 1,
                token: tok.to_string(),
            })?;
            origin_labels.push(label);
        }
        let row = cells
            .map(|(k, tok)| {
                if is_missing_token(tok) {
                    return Ok(None);
                }
                match tok.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(Some(x)),
                    _ => Err(TriangleError::NonNumeric {
                        line,
                        field: k + 1,
                        token: tok.to_string(),
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(TriangleError::Empty);
    }

    let mut tri = Triangle::from_rows(rows, TriangleKind::Incremental)?
        .with_dev_labels(dev_labels)?
        .with_epsilon_shift(opts.epsilon_shift);
    if has_origin_col {
        tri = tri.with_origin_labels(origin_labels)?;
    }
    if opts.strict_runoff {
        tri.check_upper_left()?;
    }
    if opts.require_positive {
        tri.check_positive()?;
    }
    Ok(tri)
}

/// Writes a triangle in the delimited format read by [`parse_triangle`].
pub fn format_triangle(t: &Triangle, delimiter: char) -> String {
    let mut out = String::from("origin");
    for l in &t.dev_labels {
        out.push(delimiter);
        out.push_str(l);
    }
    out.push('\n');
    for i in 0..t.n_origin {
        out.push_str(&t.origin_labels[i].to_string());
        for j in 0..t.n_dev {
            out.push(delimiter);
            if let Some(x) = t.value(i, j) {
                out.push_str(&format!("{x}"));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TriangleJson {
    kind: TriangleKind,
    origin_labels: Vec<i64>,
    dev_labels: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observed: Option<Vec<Vec<bool>>>,
    #[serde(default)]
    epsilon_shift: f64,
}

impl TryFrom<TriangleJson> for Triangle {
    type Error = TriangleError;

    fn try_from(j: TriangleJson) -> Result<Self> {
        let grid = Grid::from_rows(&j.values)?;
        let observed = match j.observed {
            Some(mask) => {
                if mask.len() != grid.n_rows || mask.iter().any(|r| r.len() != grid.n_cols) {
                    return Err(TriangleError::Json("mask shape differs from values".into()));
                }
                mask.into_iter().flatten().collect()
            }
            None => grid.values.iter().map(Option::is_some).collect(),
        };
        Triangle::from_parts(grid, observed, j.kind)?
            .with_origin_labels(j.origin_labels)?
            .with_dev_labels(j.dev_labels)
            .map(|t| t.with_epsilon_shift(j.epsilon_shift))
    }
}

impl From<Triangle> for TriangleJson {
    fn from(t: Triangle) -> Self {
        let filled = t
            .values
            .iter()
            .zip(&t.observed)
            .any(|(v, &o)| v.is_some() && !o);
        TriangleJson {
            kind: t.kind,
            values: t.grid().rows(),
            observed: filled.then(|| {
                t.observed
                    .chunks(t.n_dev)
                    .map(<[bool]>::to_vec)
                    .collect()
            }),
            origin_labels: t.origin_labels,
            dev_labels: t.dev_labels,
            epsilon_shift: t.epsilon_shift,
        }
    }
}
