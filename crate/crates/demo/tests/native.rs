use stmle_demo::{bound_table, estimate_once, score_curve};

#[test]
fn score_curve_tracks_the_true_score() {
    let c = score_curve("heavy_t3", 4000, 3).unwrap();
    assert_eq!(c.grid.len(), 161);
    assert_eq!(c.kernel_score.len(), c.grid.len());
    assert!((c.i1_true - 2.0).abs() < 1e-9);
    // bulk agreement on [-1, 1]
    let mae: f64 = c
        .grid
        .iter()
        .zip(c.kernel_score.iter().zip(&c.true_score))
        .filter(|(u, _)| u.abs() <= 1.0)
        .map(|(_, (k, t))| (k - t).abs())
        .sum::<f64>()
        / 41.0;
    assert!(mae < 0.3, "{mae}");
    assert!(score_curve("cauchy", 100, 1).is_err());
}

#[test]
fn estimate_once_returns_three_intervals() {
    let e = estimate_once("skew_mixture", "balanced", 400, 3, 9).unwrap();
    assert_eq!(e.intervals.len(), 3);
    for iv in &e.intervals {
        assert!(iv.lo < iv.estimate && iv.estimate < iv.hi, "{iv:?}");
    }
    let json = serde_json::to_string(&e).unwrap();
    assert!(json.contains("\"truth\":0.75"));
    assert!(estimate_once("gaussian", "sideways", 400, 3, 9).is_err());
}

#[test]
fn bounds_favour_the_structured_model() {
    let rows = bound_table(50_000, 4).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r.structured_bound <= r.nonparametric_variance * 1.02, "{r:?}");
    }
    let skew = rows.iter().find(|r| r.regime == "skew_mixture").unwrap();
    assert!(skew.width_structured_n500 < 0.9 * skew.width_nonparametric_n500);
}
