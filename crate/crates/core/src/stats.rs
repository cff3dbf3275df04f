//! Series diagnostics.

use alloc::vec::Vec;

use crate::panel::DataError;

/// Sample autocorrelation for lags `0..=max_lag`, each lag-k cross sum
/// averaged over its own `n - k` terms:
/// `r_k = [sum_t c_t c_{t+k} / (n - k)] / [sum_t c_t^2 / n]` with `c = x - mean`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>, DataError> {
    if max_lag < 1 || series.len() <= max_lag {
        return Err(DataError::InvalidParameter("autocorrelation needs len > max_lag >= 1"));
    }
    let n = series.len() as f64;
    let m = series.iter().sum::<f64>() / n;
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    let denom: f64 = centered.iter().map(|c| c * c).sum();
    if denom == 0.0 || !denom.is_finite() {
        return Err(DataError::ConstantSeries);
    }
    Ok((0..=max_lag)
        .map(|k| {
            if k == 0 {
                return 1.0;
            }
            let cross: f64 = centered.iter().zip(&centered[k..]).map(|(a, b)| a * b).sum();
            (cross / (n - k as f64)) / (denom / n)
        })
        .collect())
}
