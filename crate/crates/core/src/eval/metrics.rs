use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;

pub const HISTOGRAM_BINS: usize = 50;

pub fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn euclid_error(y: [f64; 2], y_hat: [f64; 2]) -> f64 {
    euclid(y, y_hat)
}

pub fn errors(truth: &[[f64; 2]], pred: &[[f64; 2]]) -> Result<Vec<f64>> {
    if truth.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} true positions but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    Ok(truth.iter().zip(pred).map(|(a, b)| euclid(*a, *b)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges from 0 to the largest error.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// population variance
    pub variance: f64,
    pub histogram: Histogram,
}

pub fn summarize(errors: &[f64]) -> Result<ErrorReport> {
    if errors.is_empty() {
        return Err(Error::Report("no errors to summarize".into()));
    }
    if let Some(e) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::Report(format!("invalid error value {e}")));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let variance = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    let max = sorted[k - 1];
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| max * i as f64 / HISTOGRAM_BINS as f64)
        .collect();
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &e in errors {
        let bin = if max > 0.0 {
            ((e / max * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(ErrorReport {
        errors: errors.to_vec(),
        mean,
        median,
        variance,
        histogram: Histogram { edges, counts },
    })
}

/// Per-frame errors as `frame,t,d_eucl` rows.
pub fn write_errors_csv(path: &Path, times: &[f64], errors: &[f64]) -> Result<()> {
    if times.len() != errors.len() {
        return Err(Error::Alignment(format!("{} times for {} errors", times.len(), errors.len())));
    }
    let mut out = String::from("frame,t,d_eucl\n");
    for (i, (t, e)) in times.iter().zip(errors).enumerate() {
        let _ = writeln!(out, "{i},{t},{e}");
    }
    write_atomic(path, |w| w.write_all(out.as_bytes()))
}

pub fn read_errors_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut times = Vec::new();
    let mut errs = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        };
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 columns, got {}", cols.len()),
            });
        }
        times.push(parse(cols[1])?);
        errs.push(parse(cols[2])?);
    }
    Ok((times, errs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_eq!(euclid_error([0.0, 0.0], [3.0, 4.0]), 5.0);
        assert_eq!(euclid_error([1.5, -2.0], [1.5, -2.0]), 0.0);
    }

    #[test]
    fn summary_examples() {
        let r = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.mean, r.median), (2.0, 2.0));
        assert!((r.variance - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.histogram.counts.iter().sum::<usize>(), 3);
        assert_eq!(r.histogram.edges.len(), HISTOGRAM_BINS + 1);
        assert_eq!(*r.histogram.edges.last().unwrap(), 3.0);
        let one = summarize(&[0.7]).unwrap();
        assert_eq!(one.variance, 0.0);
        assert_eq!(summarize(&[1.0, 4.0]).unwrap().median, 2.5);
        assert!(matches!(summarize(&[]), Err(Error::Report(_))));
        assert_eq!(summarize(&[0.0, 0.0]).unwrap().histogram.counts[0], 2);
    }

    #[test]
    fn errors_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let t = [0.1, 0.35, 1.0 / 3.0];
        let e = [0.25, 1e-9, 2.0f64.sqrt()];
        write_errors_csv(&p, &t, &e).unwrap();
        let (t2, e2) = read_errors_csv(&p).unwrap();
        assert_eq!((t2.as_slice(), e2.as_slice()), (&t[..], &e[..]));
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(a in proptest::array::uniform2(-100.0f64..100.0), b in proptest::array::uniform2(-100.0f64..100.0)) {
            prop_assert_eq!(euclid(a, b), euclid(b, a));
        }

        #[test]
        fn histogram_counts_everything(v in proptest::collection::vec(0.0f64..50.0, 1..200)) {
            let r = summarize(&v).unwrap();
            prop_assert_eq!(r.histogram.counts.iter().sum::<usize>(), v.len());
            prop_assert!(r.median >= 0.0 && r.mean <= *r.histogram.edges.last().unwrap() + 1e-12);
        }
    }
}
