use std::path::Path;

use unbiased_iv::normal::{mills_ratio, std_normal_cdf, std_normal_pdf};

struct Row {
    x: f64,
    cdf: f64,
    pdf: f64,
    mills: f64,
}

fn oracle() -> Vec<Row> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/normal_oracle.csv");
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let num = |s: &str| if s == "inf" { f64::INFINITY } else { s.parse::<f64>().unwrap() };
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            Row { x: num(&r[0]), cdf: num(&r[1]), pdf: num(&r[2]), mills: num(&r[3]) }
        })
        .collect()
}

/// Relative error, allowing one unit in the last place below the normal range.
fn close(got: f64, want: f64, rel: f64) -> bool {
    if want.is_infinite() {
        return got == want;
    }
    let tiny = f64::from_bits(1);
    if want.abs() < f64::MIN_POSITIVE {
        return (got - want).abs() <= tiny || ((got - want) / want).abs() <= rel;
    }
    ((got - want) / want).abs() <= rel
}

#[test]
fn cdf_and_pdf_match_high_precision_oracle() {
    for r in oracle() {
        let c = std_normal_cdf(r.x).unwrap();
        let p = std_normal_pdf(r.x).unwrap();
        assert!(close(c, r.cdf, 1e-14), "cdf x={} got {c:e} want {:e}", r.x, r.cdf);
        assert!(close(p, r.pdf, 1e-14), "pdf x={} got {p:e} want {:e}", r.x, r.pdf);
    }
}

#[test]
fn mills_ratio_matches_oracle_and_is_positive() {
    let rows = oracle();
    assert_eq!(rows.len(), 10_000);
    for r in &rows {
        let m = mills_ratio(r.x).unwrap();
        assert!(m > 0.0);
        assert!(close(m, r.mills, 1e-12), "x={} got {m:e} want {:e}", r.x, r.mills);
    }
}

#[test]
fn mills_ratio_strictly_decreasing_where_representable() {
    let rows = oracle();
    let vals: Vec<f64> = rows.iter().map(|r| mills_ratio(r.x).unwrap()).collect();
    for (w, r) in vals.windows(2).zip(rows.windows(2)) {
        if w[0].is_finite() {
            assert!(w[0] > w[1], "not decreasing between {} and {}", r[0].x, r[1].x);
        }
    }
}

#[test]
fn mills_ratio_bracket_for_positive_arguments() {
    let m = mills_ratio(30.0).unwrap();
    assert!(m > 1.0 / (30.0 + 1.0 / 30.0) && m < 1.0 / 30.0);
    let mut x = 1e-3;
    while x < 1e6 {
        let m = mills_ratio(x).unwrap();
        let (lo, hi) = (x / (x * x + 1.0), 1.0 / x);
        // The lower gap is about 2/x⁴ relative, below f64 resolution past x ≈ 1e4.
        if x <= 1e3 {
            assert!(lo < m && m < hi, "x={x}");
        } else {
            assert!(lo * (1.0 - 4.0 * f64::EPSILON) <= m && m < hi, "x={x}");
        }
        x *= 1.01;
    }
}
