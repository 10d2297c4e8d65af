use ssmreserve::kalman;
use ssmreserve::models::{build_bsm, build_verrall};
use ssmreserve::triangle::{transform, ResponseKind};
use ssmreserve_oracles::gls::{two_way, TwoWay};
use ssmreserve_oracles::suites::fixture_5x5;

fn predicted_grid(model: &ssmreserve::models::BuiltModel, natural: &[f64]) -> (f64, Vec<Vec<f64>>) {
    let spec = model.map.materialize_natural(natural).unwrap();
    let sm = kalman::smooth(&spec, &model.observations()).unwrap();
    let mut grid = vec![vec![f64::NAN; model.series.n_cols]; model.series.n_rows];
    for (step, preds) in model.series.steps.iter().zip(&sm.predictions) {
        for (c, p) in step.cells.iter().zip(preds) {
            grid[c.row][c.lag] = p.mean;
        }
    }
    (sm.loglik(), grid)
}

#[test]
fn bsm_without_evolution_is_intercept_plus_lag_dummies() {
    for v in 0..3 {
        let t = fixture_5x5(v);
        let resp = transform(&t, ResponseKind::LogIncremental).unwrap().grid;
        let ls = two_way(&resp.rows(), TwoWay { rows: false, cols: true });
        let s2 = ls.restricted_sigma2();
        let bsm = build_bsm(&t).unwrap();
        let (ll, pred) = predicted_grid(&bsm, &[s2, 0.0, 0.0]);
        // same column space in another basis: the diffuse log-determinant
        // shifts by a constant that does not depend on the variance
        let offset = ll - ls.restricted_loglik(s2);
        for scale in [0.3, 2.0, 10.0] {
            let (ll2, _) = predicted_grid(&bsm, &[s2 * scale, 0.0, 0.0]);
            let offset2 = ll2 - ls.restricted_loglik(s2 * scale);
            assert!((offset - offset2).abs() < 1e-8, "{offset} vs {offset2}");
        }
        for (a, b) in pred.iter().flatten().zip(ls.fitted.iter().flatten()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn verrall_without_evolution_predicts_every_cell_like_least_squares() {
    let t = fixture_5x5(7);
    let resp = transform(&t, ResponseKind::LogIncremental).unwrap().grid;
    let ls = two_way(&resp.rows(), TwoWay { rows: true, cols: true });
    let (_, pred) = predicted_grid(&build_verrall(&t).unwrap(), &[0.3, 0.0, 0.0]);
    // least squares fitted values do not depend on the noise variance
    for (a, b) in pred.iter().flatten().zip(ls.fitted.iter().flatten()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}
