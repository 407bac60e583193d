use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with `|actual|` below this are left out of MAPE.
pub const MAPE_ZERO_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mape_pct: f64,
    pub n: usize,
    pub mape_excluded: usize,
}

/// R², MAE, RMSE and MAPE (percent) of `predicted` against `actual`, both
/// in original units.
pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricsReport> {
    let n = actual.len();
    if predicted.len() != n {
        return Err(Error::dim("compute_metrics", &[n], &[predicted.len()]));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "metrics need at least 2 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = actual.iter().sum::<f64>() / nf;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "R² is undefined for constant actuals".into(),
        ));
    }
    let mut ss_res = 0.0;
    let mut abs_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut excluded = 0;
    for (&y, &p) in actual.iter().zip(predicted) {
        let e = y - p;
        ss_res += e * e;
        abs_sum += e.abs();
        if y.abs() < MAPE_ZERO_THRESHOLD {
            excluded += 1;
        } else {
            pct_sum += (e / y).abs();
        }
    }
    if excluded == n {
        return Err(Error::UndefinedMetric(
            "every actual is zero, MAPE is undefined".into(),
        ));
    }
    Ok(MetricsReport {
        r2: 1.0 - ss_res / ss_tot,
        mae: abs_sum / nf,
        rmse: (ss_res / nf).sqrt(),
        mape_pct: 100.0 * pct_sum / (n - excluded) as f64,
        n,
        mape_excluded: excluded,
    })
}
