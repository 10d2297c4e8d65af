//! Least squares on explicit dummy-variable designs for triangle-shaped data.

use nalgebra::{DMatrix, DVector};

/// Which effects enter the design besides the intercept.
#[derive(Debug, Clone, Copy)]
pub struct TwoWay {
    pub rows: bool,
    pub cols: bool,
}

pub struct LsFit {
    pub coef: DVector<f64>,
    /// Fitted value for every cell of the grid.
    pub fitted: Vec<Vec<f64>>,
    pub rss: f64,
    pub n: usize,
    pub p: usize,
    /// `log det(X'X)`.
    pub logdet_xtx: f64,
}

impl LsFit {
    /// Log-likelihood with the coefficients integrated out under a flat
    /// prior, without the `2 pi` factors of the integrated dimensions.
    pub fn restricted_loglik(&self, sigma2: f64) -> f64 {
        let df = (self.n - self.p) as f64;
        -0.5 * (df * (2.0 * std::f64::consts::PI * sigma2).ln() + self.logdet_xtx + self.rss / sigma2)
    }

    /// Maximizer of [`Self::restricted_loglik`].
    pub fn restricted_sigma2(&self) -> f64 {
        self.rss / (self.n - self.p) as f64
    }
}

/// Intercept, row `i >= 1` and column `j >= 1` dummies for one cell.
fn design_row(i: usize, j: usize, n_rows: usize, n_cols: usize, spec: TwoWay) -> Vec<f64> {
    let mut x = vec![1.0];
    if spec.rows {
        x.extend((1..n_rows).map(|r| if r == i { 1.0 } else { 0.0 }));
    }
    if spec.cols {
        x.extend((1..n_cols).map(|c| if c == j { 1.0 } else { 0.0 }));
    }
    x
}

/// Ordinary least squares of the observed cells of `grid` on the two-way design.
pub fn two_way(grid: &[Vec<Option<f64>>], spec: TwoWay) -> LsFit {
    let (n_rows, n_cols) = (grid.len(), grid[0].len());
    let cells: Vec<(usize, usize, f64)> = grid
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().filter_map(move |(j, v)| v.map(|y| (i, j, y))))
        .collect();
    let p = design_row(0, 0, n_rows, n_cols, spec).len();
    let x = DMatrix::from_fn(cells.len(), p, |r, c| {
        let (i, j, _) = cells[r];
        design_row(i, j, n_rows, n_cols, spec)[c]
    });
    let y = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.2));
    let xtx = x.transpose() * &x;
    let chol = xtx.clone().cholesky().expect("design has full column rank");
    let coef = chol.solve(&(x.transpose() * &y));
    let resid = &y - &x * &coef;
    let fitted = (0..n_rows)
        .map(|i| {
            (0..n_cols)
                .map(|j| {
                    let xr = design_row(i, j, n_rows, n_cols, spec);
                    xr.iter().zip(coef.iter()).map(|(a, b)| a * b).sum()
                })
                .collect()
        })
        .collect();
    LsFit {
        logdet_xtx: 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        rss: resid.norm_squared(),
        n: cells.len(),
        p,
        coef,
        fitted,
    }
}
