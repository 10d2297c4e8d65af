//! Volume-weighted Chain-Ladder reserve and the Mack standard error of the
//! total reserve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triangle::{cumulate, Grid, Triangle, TriangleError, TriangleKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClError {
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error("need at least {need} origin rows, got {got}")]
    TooFewOrigins { need: usize, got: usize },
    #[error("no row observes both lag {lag} and lag {}", lag + 1)]
    NoPairs { lag: usize },
    #[error("cumulative claims at lag {lag} sum to zero")]
    ZeroColumnSum { lag: usize },
    #[error("too few rows to estimate the variance at lag {lag}")]
    InsufficientRows { lag: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MackEstimate {
    /// `sigma_j^2` for each development step `j -> j+1`.
    pub sigma2: Vec<f64>,
    pub process_variance: f64,
    pub estimation_variance: f64,
    pub mse: f64,
    pub std_error: f64,
    /// Standard error of each origin's reserve.
    pub origin_std_error: Vec<f64>,
}

/// The Chain-Ladder summary fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClSummary {
    #[serde(rename = "CL Reserve")]
    pub reserve: f64,
    #[serde(rename = "CL StdError")]
    pub std_error: f64,
    #[serde(rename = "Reserve+SE")]
    pub reserve_plus_se: f64,
    #[serde(rename = "Reserve+2SE")]
    pub reserve_plus_2se: f64,
    #[serde(rename = "CV")]
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLadderResult {
    /// `f_j` for each development step `j -> j+1`.
    pub factors: Vec<f64>,
    /// Cumulative triangle with the unobserved cells projected; the mask is
    /// the input's.
    pub completed: Triangle,
    pub origin_reserves: Vec<f64>,
    pub total_reserve: f64,
    /// Absent for triangles with fewer than three origins.
    pub mack: Option<MackEstimate>,
}

impl ChainLadderResult {
    pub fn summary(&self) -> Option<ClSummary> {
        let se = self.mack.as_ref()?.std_error;
        let r = self.total_reserve;
        Some(ClSummary {
            reserve: r,
            std_error: se,
            reserve_plus_se: r + se,
            reserve_plus_2se: r + 2.0 * se,
            cv: se / r,
        })
    }
}

/// Observed cumulative rows and each row's last observed lag.
fn observed_cumulative(t: &Triangle) -> Result<(Grid, Vec<usize>), ClError> {
    let obs = t.observed_only();
    let cum = match obs.kind() {
        TriangleKind::Incremental => cumulate(&obs)?,
        TriangleKind::Cumulative => obs,
    };
    let grid = cum.grid();
    let mut last = Vec::with_capacity(grid.n_rows);
    for i in 0..grid.n_rows {
        let prefix = (0..grid.n_cols).take_while(|&j| grid.get(i, j).is_some()).count();
        if prefix == 0 {
            return Err(TriangleError::MissingValue(crate::triangle::Cell::new(i, 0)).into());
        }
        last.push(prefix - 1);
    }
    Ok((grid, last))
}

struct Factors {
    f: Vec<f64>,
    /// `S_j`: sum of `C_ij` over the rows used for `f_j`.
    s: Vec<f64>,
}

fn factors(c: &Grid, last: &[usize]) -> Result<Factors, ClError> {
    let m = c.n_cols;
    let mut f = Vec::with_capacity(m.saturating_sub(1));
    let mut s = Vec::with_capacity(m.saturating_sub(1));
    for j in 0..m.saturating_sub(1) {
        let rows: Vec<usize> = (0..c.n_rows).filter(|&i| last[i] > j).collect();
        if rows.is_empty() {
            return Err(ClError::NoPairs { lag: j });
        }
        let den: f64 = rows.iter().map(|&i| c.get(i, j).unwrap()).sum();
        if den == 0.0 {
            return Err(ClError::ZeroColumnSum { lag: j });
        }
        let num: f64 = rows.iter().map(|&i| c.get(i, j + 1).unwrap()).sum();
        f.push(num / den);
        s.push(den);
    }
    Ok(Factors { f, s })
}

/// Projects each row with the factors; `ult[i] = C_i,m-1`.
fn project(c: &Grid, last: &[usize], f: &[f64]) -> Grid {
    let mut out = c.clone();
    for (i, &l) in last.iter().enumerate() {
        for j in l + 1..c.n_cols {
            let prev = out.get(i, j - 1).unwrap();
            out.set(i, j, Some(prev * f[j - 1]));
        }
    }
    out
}

/// Chain-Ladder factors, completed triangle and reserves; includes the Mack
/// standard error when there are at least three origins.
pub fn cl_fit(t: &Triangle) -> Result<ChainLadderResult, ClError> {
    if t.n_origin() < 2 {
        return Err(ClError::TooFewOrigins {
            need: 2,
            got: t.n_origin(),
        });
    }
    let (c, last) = observed_cumulative(t)?;
    let fac = factors(&c, &last)?;
    let full = project(&c, &last, &fac.f);
    let m = c.n_cols;
    let origin_reserves: Vec<f64> = (0..c.n_rows)
        .map(|i| full.get(i, m - 1).unwrap() - c.get(i, last[i]).unwrap())
        .collect();
    let completed = Triangle::from_parts(full.clone(), t.observed_mask().to_vec(), TriangleKind::Cumulative)?
        .with_origin_labels(t.origin_labels().to_vec())?
        .with_dev_labels(t.dev_labels().to_vec())?;
    let mack = if t.n_origin() >= 3 {
        Some(mack_from_parts(&c, &last, &fac, &full)?)
    } else {
        None
    };
    Ok(ChainLadderResult {
        total_reserve: origin_reserves.iter().sum(),
        factors: fac.f,
        completed,
        origin_reserves,
        mack,
    })
}

/// Mack standard error of the total Chain-Ladder reserve.
pub fn mack_se(t: &Triangle) -> Result<MackEstimate, ClError> {
    if t.n_origin() < 3 {
        return Err(ClError::TooFewOrigins {
            need: 3,
            got: t.n_origin(),
        });
    }
    let (c, last) = observed_cumulative(t)?;
    let fac = factors(&c, &last)?;
    let full = project(&c, &last, &fac.f);
    mack_from_parts(&c, &last, &fac, &full)
}

/// `sigma_j^2` from the weighted squared residuals of the individual
/// development factors. A final step with a single pair is extrapolated by
/// `min(s_{j-1}^4 / s_{j-2}^2, s_{j-2}^2, s_{j-1}^2)`.
fn sigma2(c: &Grid, last: &[usize], f: &[f64]) -> Result<Vec<f64>, ClError> {
    let steps = f.len();
    let mut out: Vec<Option<f64>> = Vec::with_capacity(steps);
    for (j, &fj) in f.iter().enumerate() {
        let rows: Vec<usize> = (0..c.n_rows).filter(|&i| last[i] > j).collect();
        if rows.len() < 2 {
            out.push(None);
            continue;
        }
        let ss: f64 = rows
            .iter()
            .map(|&i| {
                let (a, b) = (c.get(i, j).unwrap(), c.get(i, j + 1).unwrap());
                a * (b / a - fj).powi(2)
            })
            .sum();
        out.push(Some(ss / (rows.len() - 1) as f64));
    }
    let mut res = Vec::with_capacity(steps);
    for j in 0..steps {
        let v = match out[j] {
            Some(v) => v,
            None if j + 1 == steps && j >= 1 => {
                let prev = res[j - 1];
                if j >= 2 {
                    let prev2: f64 = res[j - 2];
                    let ratio = if prev2 > 0.0 { prev * prev / prev2 } else { 0.0 };
                    ratio.min(prev2).min(prev)
                } else {
                    prev
                }
            }
            None => return Err(ClError::InsufficientRows { lag: j }),
        };
        res.push(v);
    }
    Ok(res)
}

fn mack_from_parts(c: &Grid, last: &[usize], fac: &Factors, full: &Grid) -> Result<MackEstimate, ClError> {
    let sig = sigma2(c, last, &fac.f)?;
    let m = c.n_cols;
    let ult: Vec<f64> = (0..c.n_rows).map(|i| full.get(i, m - 1).unwrap()).collect();
    // estimation-error weight of each step
    let w: Vec<f64> = (0..fac.f.len())
        .map(|k| sig[k] / (fac.f[k] * fac.f[k]) / fac.s[k])
        .collect();

    let mut process = 0.0;
    let mut estimation = 0.0;
    let mut origin_std_error = Vec::with_capacity(c.n_rows);
    for i in 0..c.n_rows {
        let future = last[i]..m - 1;
        let p: f64 = future
            .clone()
            .map(|k| sig[k] / (fac.f[k] * fac.f[k]) / full.get(i, k).unwrap())
            .sum();
        let e: f64 = future.clone().map(|k| w[k]).sum();
        let (pi, ei) = (ult[i] * ult[i] * p, ult[i] * ult[i] * e);
        origin_std_error.push((pi + ei).sqrt());
        process += pi;
        estimation += ei;
        // covariance with every younger origin through the shared steps
        for j in i + 1..c.n_rows {
            let shared: f64 = (last[i].max(last[j])..m - 1).map(|k| w[k]).sum();
            estimation += 2.0 * ult[i] * ult[j] * shared;
        }
    }
    let mse = process + estimation;
    Ok(MackEstimate {
        sigma2: sig,
        process_variance: process,
        estimation_variance: estimation,
        mse,
        std_error: mse.sqrt(),
        origin_std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cum(rows: &[&[f64]], m: usize) -> Triangle {
        let rows = rows
            .iter()
            .map(|r| (0..m).map(|j| r.get(j).copied()).collect())
            .collect();
        Triangle::from_rows(rows, TriangleKind::Cumulative).unwrap()
    }

    #[test]
    fn three_by_three_example() {
        let t = cum(&[&[100.0, 150.0, 175.0], &[110.0, 165.0], &[120.0]], 3);
        let r = cl_fit(&t).unwrap();
        assert!((r.factors[0] - 1.5).abs() < 1e-12);
        assert!((r.factors[1] - 175.0 / 150.0).abs() < 1e-12);
        let c = &r.completed;
        assert!((c.value(2, 1).unwrap() - 180.0).abs() < 1e-9);
        assert!((c.value(2, 2).unwrap() - 210.0).abs() < 1e-9);
        assert!((r.total_reserve - 117.5).abs() < 1e-9);
        assert!(!c.is_observed(2, 2));
    }

    #[test]
    fn incremental_input_is_cumulated() {
        let t = Triangle::from_rows(
            vec![
                vec![Some(100.0), Some(50.0), Some(25.0)],
                vec![Some(110.0), Some(55.0), None],
                vec![Some(120.0), None, None],
            ],
            TriangleKind::Incremental,
        )
        .unwrap();
        assert!((cl_fit(&t).unwrap().total_reserve - 117.5).abs() < 1e-9);
    }

    fn multiplicative(n: usize) -> Triangle {
        let f = [1.8, 1.3, 1.1, 1.05, 1.02, 1.01];
        let rows = (0..n)
            .map(|i| {
                let mut c = 1000.0 + 100.0 * i as f64;
                (0..n)
                    .map(|j| {
                        if j > 0 {
                            c *= f[j - 1];
                        }
                        (i + j < n).then_some(c)
                    })
                    .collect()
            })
            .collect();
        Triangle::from_rows(rows, TriangleKind::Cumulative).unwrap()
    }

    #[test]
    fn multiplicative_triangle_is_exact() {
        let t = multiplicative(5);
        let r = cl_fit(&t).unwrap();
        let f = [1.8, 1.3, 1.1, 1.05];
        for (a, b) in r.factors.iter().zip(f) {
            assert!((a - b).abs() < 1e-12);
        }
        let truth: f64 = (1..5)
            .map(|i| {
                let c0 = 1000.0 + 100.0 * i as f64;
                let ult = c0 * f.iter().product::<f64>();
                let known = c0 * f[..4 - i].iter().product::<f64>();
                ult - known
            })
            .sum();
        assert!((r.total_reserve - truth).abs() < 1e-8 * truth);
        let mack = r.mack.unwrap();
        assert!(mack.sigma2.iter().all(|&s| s.abs() < 1e-20));
        assert!(mack.std_error < 1e-6);
    }

    #[test]
    fn last_variance_is_extrapolated() {
        let t = cum(
            &[
                &[100.0, 160.0, 180.0, 185.0],
                &[110.0, 160.0, 185.0],
                &[90.0, 150.0],
                &[120.0],
            ],
            4,
        );
        let m = mack_se(&t).unwrap();
        let s = &m.sigma2;
        let want = (s[1] * s[1] / s[0]).min(s[0]).min(s[1]);
        assert_eq!(s[2], want);
        assert!((m.mse - m.process_variance - m.estimation_variance).abs() < 1e-9 * m.mse);
    }

    #[test]
    fn summary_fields_are_consistent() {
        let t = cum(
            &[
                &[100.0, 160.0, 180.0, 185.0],
                &[110.0, 160.0, 185.0],
                &[90.0, 150.0],
                &[120.0],
            ],
            4,
        );
        let r = cl_fit(&t).unwrap();
        let s = r.summary().unwrap();
        assert_eq!(s.reserve, r.origin_reserves.iter().sum::<f64>());
        assert_eq!(s.reserve_plus_se, s.reserve + s.std_error);
        assert_eq!(s.reserve_plus_2se, s.reserve + 2.0 * s.std_error);
        assert_eq!(s.cv, s.std_error / s.reserve);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"Reserve+2SE\""));
    }

    #[test]
    fn errors() {
        let one = cum(&[&[1.0, 2.0]], 2);
        assert!(matches!(cl_fit(&one), Err(ClError::TooFewOrigins { .. })));
        let two = cum(&[&[1.0, 2.0], &[1.0]], 2);
        assert!(cl_fit(&two).unwrap().mack.is_none());
        assert!(matches!(mack_se(&two), Err(ClError::TooFewOrigins { .. })));
        let zero = cum(&[&[0.0, 2.0], &[0.0], &[1.0]], 2);
        assert!(matches!(cl_fit(&zero), Err(ClError::ZeroColumnSum { lag: 0 })));
        let nopair = Triangle::from_rows(
            vec![vec![Some(1.0), None], vec![Some(2.0), None], vec![Some(1.0), None]],
            TriangleKind::Cumulative,
        )
        .unwrap();
        assert!(matches!(cl_fit(&nopair), Err(ClError::NoPairs { lag: 0 })));
    }

    fn arb_triangle() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (3usize..8).prop_flat_map(|n| (Just(n), prop::collection::vec(1.0f64..1000.0, n * n)))
    }

    fn build(n: usize, x: &[f64]) -> Triangle {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| (i + j < n).then(|| x[i * n + j])).collect())
            .collect();
        Triangle::from_rows(rows, TriangleKind::Incremental).unwrap()
    }

    proptest! {
        #[test]
        fn scale_equivariance((n, x) in arb_triangle(), c in 0.01f64..100.0) {
            let a = cl_fit(&build(n, &x)).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let b = cl_fit(&build(n, &scaled)).unwrap();
            for (p, q) in a.factors.iter().zip(&b.factors) {
                prop_assert!((p - q).abs() <= 1e-12 * p.abs());
            }
            prop_assert!((b.total_reserve - c * a.total_reserve).abs() <= 1e-9 * b.total_reserve.abs());
            let (ma, mb) = (a.mack.clone().unwrap(), b.mack.clone().unwrap());
            prop_assert!((mb.std_error - c * ma.std_error).abs() <= 1e-9 * mb.std_error.max(1e-12));
            let (sa, sb) = (a.summary().unwrap(), b.summary().unwrap());
            prop_assert!((sa.cv - sb.cv).abs() <= 1e-9 * sa.cv.abs());
        }

        #[test]
        fn row_permutation_keeps_factors((n, x) in arb_triangle()) {
            let t = build(n, &x);
            let rows = t.grid().rows();
            // swap the first two rows along with their masks
            let mut swapped = rows.clone();
            swapped.swap(0, 1);
            let p = Triangle::from_rows(swapped, TriangleKind::Incremental).unwrap();
            let (a, b) = (cl_fit(&t).unwrap(), cl_fit(&p).unwrap());
            for (u, v) in a.factors.iter().zip(&b.factors) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs());
            }
        }

        #[test]
        fn refit_of_completed_triangle_is_idempotent((n, x) in arb_triangle()) {
            let a = cl_fit(&build(n, &x)).unwrap();
            let full = Triangle::from_rows(a.completed.grid().rows(), TriangleKind::Cumulative).unwrap();
            let b = cl_fit(&full).unwrap();
            for (u, v) in a.factors.iter().zip(&b.factors) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs());
            }
            prop_assert_eq!(b.total_reserve, 0.0);
        }
    }
}
