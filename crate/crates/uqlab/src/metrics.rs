//! Scoring: R², RMSE, %RMSE, per-point uncertainty correlations and
//! histogram summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(pred: &[f64], reference: &[f64], min: usize) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "pred has {} entries, reference has {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::Parameter(format!("need at least {min} entries, got {}", pred.len())));
    }
    Ok(())
}

/// Coefficient of determination `1 - SSres / SStot`, with `SStot` about
/// the reference mean.
pub fn r_squared(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(pred, reference, 2)?;
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean) * (r - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("reference is constant".into()));
    }
    let ss_res: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root mean square error.
pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(pred, reference, 1)?;
    let mse: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// RMSE as a percentage of the mean reference value.
pub fn pct_rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(pred, reference, 1)?;
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    if mean == 0.0 {
        return Err(Error::UndefinedMetric("reference mean is zero".into()));
    }
    Ok(100.0 * rmse(pred, reference)? / mean)
}

/// Pearson correlation; `None` when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Empirical quantile by linear interpolation of the sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let t = pos - lo as f64;
        sorted[lo] * (1.0 - t) + sorted[hi] * t
    }
}

/// Per-point correlation between predicted and reference uncertainty
/// across noise levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrReport {
    /// One Pearson coefficient per usable test point.
    pub coefficients: Vec<f64>,
    /// Points skipped because one of their vectors was constant.
    pub skipped: usize,
    /// 10th percentile of the coefficients.
    pub p10: f64,
}

/// For each point (row) correlate its predicted sigma across noise
/// levels (columns) with the reference sigma across the same levels.
pub fn uncertainty_correlation(
    pred: &[Vec<f64>],
    reference: &[Vec<f64>],
) -> Result<CorrReport> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "pred has {} points, reference has {}",
            pred.len(),
            reference.len()
        )));
    }
    let mut coefficients = Vec::with_capacity(pred.len());
    let mut skipped = 0;
    for (p, r) in pred.iter().zip(reference) {
        if p.len() != r.len() || p.len() < 2 {
            return Err(Error::Parameter(
                "each point needs the same >= 2 noise levels in both tables".into(),
            ));
        }
        match pearson(p, r) {
            Some(c) => coefficients.push(c),
            None => skipped += 1,
        }
    }
    if coefficients.is_empty() {
        return Err(Error::UndefinedMetric("all points were constant".into()));
    }
    let mut sorted = coefficients.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let p10 = quantile(&sorted, 0.10);
    Ok(CorrReport { coefficients, skipped, p10 })
}

/// Scores for one predicted quantity against its reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub r2: f64,
    pub rmse: f64,
    pub pct_rmse: f64,
    /// `(quantile, value)` pairs of the per-point correlation
    /// coefficients; empty when only a single noise level was scored.
    pub corr_quantiles: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn from_slices(pred: &[f64], reference: &[f64]) -> Result<EvalReport> {
        Ok(EvalReport {
            r2: r_squared(pred, reference)?,
            rmse: rmse(pred, reference)?,
            pct_rmse: pct_rmse(pred, reference)?,
            corr_quantiles: Vec::new(),
        })
    }

    pub fn with_correlations(mut self, corr: &CorrReport) -> EvalReport {
        let mut sorted = corr.coefficients.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        self.corr_quantiles = [0.10, 0.25, 0.50, 0.75, 0.90]
            .iter()
            .map(|&q| (q, quantile(&sorted, q)))
            .collect();
        self
    }
}

/// One histogram bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped to
/// the edge bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<HistBin>> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::Parameter("histogram needs bins >= 1 and hi > lo".into()));
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / w) as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin {
            left: lo + i as f64 * w,
            right: lo + (i + 1) as f64 * w,
            count,
        })
        .collect())
}

/// Write histogram rows as `bin_left,bin_right,count`.
pub fn write_histogram_csv<W: std::io::Write>(bins: &[HistBin], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["bin_left", "bin_right", "count"])?;
    for b in bins {
        wtr.write_record([b.left.to_string(), b.right.to_string(), b.count.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn r2_exact_fit_is_one() {
        let r = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn r2_mean_predictor_is_zero() {
        let r = [1.0, 2.0, 3.0];
        let p = [2.0, 2.0, 2.0];
        assert_relative_eq!(r_squared(&p, &r).unwrap(), 0.0);
    }

    #[test]
    fn r2_can_be_strongly_negative() {
        let r = [1.0, 2.0, 3.0];
        let p = [30.0, 2.0, -26.0];
        assert!(r_squared(&p, &r).unwrap() < -100.0);
    }

    #[test]
    fn r2_rejects_constant_reference() {
        assert!(r_squared(&[1.0, 2.0], &[5.0, 5.0]).is_err());
    }

    #[test]
    fn pct_rmse_exact_fit_is_zero() {
        let r = [1.0, 2.0, 3.0];
        assert_eq!(pct_rmse(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn pct_rmse_constant_offset() {
        let r = [1.0, 2.0, 3.0];
        let p = [1.5, 2.5, 3.5];
        // 100 * c / mean(ref) with c = 0.5, mean = 2
        assert_relative_eq!(pct_rmse(&p, &r).unwrap(), 25.0);
    }

    #[test]
    fn pct_rmse_doubled_reference() {
        let r = [1.0, 2.0, 3.0];
        let p = [2.0, 4.0, 6.0];
        let rms = ((1.0f64 + 4.0 + 9.0) / 3.0).sqrt();
        assert_relative_eq!(pct_rmse(&p, &r).unwrap(), 100.0 * rms / 2.0);
    }

    #[test]
    fn pct_rmse_rejects_zero_mean() {
        assert!(pct_rmse(&[1.0, 2.0], &[-1.0, 1.0]).is_err());
    }

    #[test]
    fn correlation_proportional_and_flipped() {
        let reference = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]];
        let prop: Vec<Vec<f64>> =
            reference.iter().map(|r| r.iter().map(|x| 3.0 * x).collect()).collect();
        let rep = uncertainty_correlation(&prop, &reference).unwrap();
        for c in &rep.coefficients {
            assert_relative_eq!(*c, 1.0, epsilon = 1e-12);
        }
        let flipped: Vec<Vec<f64>> =
            reference.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
        let rep = uncertainty_correlation(&flipped, &reference).unwrap();
        for c in &rep.coefficients {
            assert_relative_eq!(*c, -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn correlation_skips_constant_points() {
        let reference = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let pred = vec![vec![5.0, 5.0, 5.0], vec![1.0, 2.0, 3.0]];
        let rep = uncertainty_correlation(&pred, &reference).unwrap();
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.coefficients.len(), 1);
    }

    #[test]
    fn corr_quantiles_are_monotone() {
        let reference: Vec<Vec<f64>> = (0..50).map(|_| vec![1.0, 2.0, 3.0]).collect();
        let pred: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let tilt = (i as f64 - 25.0) / 10.0;
                vec![1.0, 2.0 + tilt, 3.0]
            })
            .collect();
        let corr = uncertainty_correlation(&pred, &reference).unwrap();
        let rep = EvalReport::from_slices(&[1.0, 2.0], &[1.0, 2.5])
            .unwrap()
            .with_correlations(&corr);
        for w in rep.corr_quantiles.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn histogram_counts_and_edges() {
        let bins = histogram(&[0.05, 0.15, 0.95, 1.5], 10, 0.0, 1.0).unwrap();
        assert_eq!(bins.len(), 10);
        assert_eq!(bins[0].count, 1);
        assert_eq!(bins[1].count, 1);
        assert_eq!(bins[9].count, 2); // 0.95 plus the clamped 1.5
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    proptest! {
        #[test]
        fn rmse_is_symmetric(
            a in proptest::collection::vec(-100.0f64..100.0, 2..20),
            shift in -10.0f64..10.0,
        ) {
            let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let ab = rmse(&a, &b).unwrap();
            let ba = rmse(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn r2_invariant_under_common_affine_map(
            v in proptest::collection::vec(-50.0f64..50.0, 3..20),
            scale in 0.1f64..10.0,
            shift in -100.0f64..100.0,
        ) {
            let reference: Vec<f64> = v.iter().map(|x| x * 2.0 + 1.0).collect();
            prop_assume!(reference.iter().any(|r| (r - reference[0]).abs() > 1e-9));
            let pred: Vec<f64> = v.iter().map(|x| x * 2.5).collect();
            let r1 = r_squared(&pred, &reference).unwrap();
            let p2: Vec<f64> = pred.iter().map(|x| x * scale + shift).collect();
            let q2: Vec<f64> = reference.iter().map(|x| x * scale + shift).collect();
            let r2v = r_squared(&p2, &q2).unwrap();
            prop_assert!((r1 - r2v).abs() < 1e-6, "{r1} vs {r2v}");
        }

        #[test]
        fn pct_rmse_invariant_under_common_positive_scale(
            v in proptest::collection::vec(1.0f64..50.0, 3..20),
            scale in 0.1f64..10.0,
        ) {
            let pred: Vec<f64> = v.iter().map(|x| x * 1.3).collect();
            let r1 = pct_rmse(&pred, &v).unwrap();
            let p2: Vec<f64> = pred.iter().map(|x| x * scale).collect();
            let q2: Vec<f64> = v.iter().map(|x| x * scale).collect();
            let r2v = pct_rmse(&p2, &q2).unwrap();
            prop_assert!((r1 - r2v).abs() < 1e-9);
        }
    }
}
