use super::*;
use crate::patterns::detect_patterns;
use crate::testutil::{fixture, FOUR_GROUPS};

fn four_group(n: usize, seed: u64) -> crate::testutil::Fixture {
    let mut beta = vec![0.0; 9];
    beta[0] = 1.0;
    beta[3] = 1.0;
    beta[6] = 1.0;
    fixture(&FOUR_GROUPS, &[n, n, n, n], [3, 3, 3], &beta, 0.5, 1.0, seed)
}

#[test]
fn three_views_for_group_missing_s3() {
    let fx = four_group(30, 1);
    let idx = detect_patterns(&fx.data).unwrap();
    let set = impute(&fx.data, &idx, &ImputationOptions::default()).unwrap();
    assert_eq!(set.views[1].len(), 3);
    let donors: Vec<usize> = set.views[1].iter().map(|v| v.donor).collect();
    assert_eq!(donors, vec![0, 2, 3]);
    // Complete group: a single pass-through view.
    assert_eq!(set.views[0].len(), 1);
    assert_eq!(set.views[0][0].values, fx.data.values().select_rows(&idx.groups[0].members));
}

#[test]
fn observed_cells_pass_through_and_views_are_filled() {
    let fx = four_group(25, 2);
    let idx = detect_patterns(&fx.data).unwrap();
    let set = impute(&fx.data, &idx, &ImputationOptions::default()).unwrap();
    for group_views in &set.views {
        for view in group_views {
            for (a, &i) in view.rows.iter().enumerate() {
                for j in 0..fx.data.n_cols() {
                    let v = view.values[(a, j)];
                    assert!(v.is_finite());
                    if fx.data.is_observed(i, j) {
                        assert_eq!(v.to_bits(), fx.data.value(i, j).to_bits());
                    }
                }
            }
        }
    }
}

#[test]
fn pooling_superset_of_complete_rows() {
    let fx = four_group(20, 3);
    let idx = detect_patterns(&fx.data).unwrap();
    let opts = ImputationOptions::default();
    let complete_rows = &idx.groups[0].members;
    // Group 1 (missing S3) with donor 2 (missing S2): pools groups 0 and 2.
    let m = fit_conditional(&fx.data, &idx, 1, 2, 6, &opts).unwrap();
    assert!(complete_rows.iter().all(|i| m.pooled_rows.contains(i)));
    assert_eq!(m.pooled_rows.len(), 40);
    // Every pooled row observes target and predictors.
    for &i in &m.pooled_rows {
        assert!(fx.data.is_observed(i, 6));
        assert!(m.predictors.iter().all(|&c| fx.data.is_observed(i, c)));
    }
    assert!(!m.regularized);
}

#[test]
fn unregularized_residuals_orthogonal_to_predictors() {
    let fx = four_group(40, 4);
    let idx = detect_patterns(&fx.data).unwrap();
    let m = fit_conditional(&fx.data, &idx, 1, 0, 7, &ImputationOptions::default()).unwrap();
    assert!(!m.regularized);
    let mut inner = vec![0.0; m.predictors.len()];
    let mut scale: f64 = 0.0;
    for &i in &m.pooled_rows {
        let x: Vec<f64> = m.predictors.iter().map(|&c| fx.data.value(i, c)).collect();
        let r = fx.data.value(i, 7) - m.predict(&x);
        for (s, v) in inner.iter_mut().zip(&x) {
            *s += r * v;
            scale = scale.max((r * v).abs());
        }
    }
    for s in inner {
        assert!(s.abs() <= 1e-8 * scale.max(1.0), "inner product {s}");
    }
}

#[test]
fn exact_linear_relation_recovered() {
    let fx = four_group(30, 5);
    // Make column 6 = 2 * column 0 wherever both are observed.
    let mut values = fx.data.values().clone();
    for i in 0..values.nrows() {
        if fx.data.is_observed(i, 6) && fx.data.is_observed(i, 0) {
            values[(i, 6)] = 2.0 * values[(i, 0)];
        }
    }
    let data = DataSet::new(
        values,
        fx.data.mask().clone(),
        fx.data.response().clone(),
        fx.data.source_spans().to_vec(),
    )
    .unwrap();
    let idx = detect_patterns(&data).unwrap();
    // Group 1 donor 2: predictors are S1 = {0,1,2}.
    let m = fit_conditional(&data, &idx, 1, 2, 6, &ImputationOptions::default()).unwrap();
    assert_eq!(m.predictors, vec![0, 1, 2]);
    assert!((m.coef[0] - 2.0).abs() < 1e-8);
    assert!(m.coef[1].abs() < 1e-8 && m.coef[2].abs() < 1e-8);
    assert!(m.intercept.abs() < 1e-8);
}

#[test]
fn constant_target_gives_intercept_only() {
    let fx = four_group(10, 6);
    let mut values = fx.data.values().clone();
    for i in 0..values.nrows() {
        if fx.data.is_observed(i, 8) {
            values[(i, 8)] = 3.5;
        }
    }
    let data = fx.data.with_mask(fx.data.mask().clone()).unwrap();
    let data = DataSet::new(values, data.mask().clone(), data.response().clone(), data.source_spans().to_vec()).unwrap();
    let idx = detect_patterns(&data).unwrap();
    let m = fit_conditional(&data, &idx, 1, 0, 8, &ImputationOptions::default()).unwrap();
    assert!(m.is_intercept_only());
    assert_eq!(m.intercept, 3.5);
}

#[test]
fn small_pool_takes_l1_route() {
    // Complete group of 4 rows; group 1's donor-0 model has 6 predictors.
    let fx = fixture(
        &FOUR_GROUPS,
        &[4, 30, 30, 30],
        [3, 3, 3],
        &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        0.5,
        1.0,
        7,
    );
    let idx = detect_patterns(&fx.data).unwrap();
    let m = fit_conditional(&fx.data, &idx, 1, 0, 6, &ImputationOptions::default()).unwrap();
    assert_eq!(m.pooled_rows.len(), 4);
    assert!(m.regularized);
}

#[test]
fn binary_target_imputes_probability() {
    let fx = four_group(40, 8);
    // Sign-transform source 3 so its columns are binary.
    let mut values = fx.data.values().clone();
    for i in 0..values.nrows() {
        for j in 6..9 {
            if fx.data.is_observed(i, j) {
                values[(i, j)] = values[(i, j)].signum();
            }
        }
    }
    let data = DataSet::new(values, fx.data.mask().clone(), fx.data.response().clone(), fx.data.source_spans().to_vec()).unwrap();
    assert!(is_binary_column(&data, 6));
    let idx = detect_patterns(&data).unwrap();
    let set = impute(&data, &idx, &ImputationOptions::default()).unwrap();
    let view = &set.views[1][0];
    for a in 0..view.rows.len() {
        let v = view.values[(a, 6)];
        assert!(v > -1.0 && v < 1.0, "expected value in (-1, 1), got {v}");
    }
    let m = set.models.iter().find(|m| m.target == 6).unwrap();
    assert!(matches!(m.family, ModelFamily::BinomialLogit { low, high } if low == -1.0 && high == 1.0));
}

#[test]
fn single_donor_view_matches_complete_case_imputation() {
    // Two groups: complete and missing S3. The only donor is the complete
    // group, so the view is the classical single imputation.
    let sigs = [[true, true, true], [true, true, false]];
    let fx = fixture(&sigs, &[40, 40], [2, 2, 2], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 0.4, 1.0, 9);
    let idx = detect_patterns(&fx.data).unwrap();
    let set = impute(&fx.data, &idx, &ImputationOptions::default()).unwrap();
    assert_eq!(set.views[1].len(), 1);
    let complete = &idx.groups[0].members;
    let m = fit_model_on_rows(&fx.data, 4, &[0, 1, 2, 3], complete.clone(), &ImputationOptions::default()).unwrap();
    for (a, &i) in idx.groups[1].members.iter().enumerate() {
        let x: Vec<f64> = (0..4).map(|c| fx.data.value(i, c)).collect();
        assert_eq!(set.views[1][0].values[(a, 4)], m.predict(&x));
    }
}

#[test]
fn deterministic_given_seed() {
    let fx = fixture(
        &FOUR_GROUPS,
        &[4, 30, 30, 30],
        [3, 3, 3],
        &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        0.5,
        1.0,
        10,
    );
    let idx = detect_patterns(&fx.data).unwrap();
    let a = impute(&fx.data, &idx, &ImputationOptions::with_seed(3)).unwrap();
    let b = impute(&fx.data, &idx, &ImputationOptions::with_seed(3)).unwrap();
    assert_eq!(a.models, b.models);
}
