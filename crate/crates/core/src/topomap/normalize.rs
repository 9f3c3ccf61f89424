use serde::{Deserialize, Serialize};

use super::TopomapError;
use crate::spectral::BandFeatures;

/// Per-band affine map `(log(1+p) − lo) / (hi − lo)`, fit on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub percentiles: [f64; 2],
    pub fit_split: String,
    pub fit_count: usize,
}

/// Percentile with linear interpolation between closest ranks
/// (rank `q/100·(n−1)` into the sorted data). `sorted` must be ascending.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let rank = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fits the per-band range on `log(1+power)` over every (trial, electrode)
/// pair of the training features.
pub fn fit_normalizer(
    train: &[BandFeatures],
    percentiles: [f64; 2],
    fit_split: &str,
) -> Result<Normalizer, TopomapError> {
    if train.is_empty() {
        return Err(TopomapError::EmptyTrainingSet);
    }
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for band in 0..3 {
        let mut vals: Vec<f64> = train.iter().flat_map(|f| f.band(band)).map(|p| p.ln_1p()).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(TopomapError::DegenerateRange(band));
        }
        vals.sort_by(f64::total_cmp);
        lo[band] = percentile(&vals, percentiles[0]);
        hi[band] = percentile(&vals, percentiles[1]);
        if !(hi[band] > lo[band]) {
            return Err(TopomapError::DegenerateRange(band));
        }
    }
    Ok(Normalizer { lo, hi, percentiles, fit_split: fit_split.to_string(), fit_count: train.len() })
}

impl Normalizer {
    /// Unclipped normalized value.
    pub fn scale(&self, band: usize, power: f64) -> f64 {
        (power.max(0.0).ln_1p() - self.lo[band]) / (self.hi[band] - self.lo[band])
    }

    pub fn apply(&self, band: usize, power: f64) -> f64 {
        self.scale(band, power).clamp(0.0, 1.0)
    }
}
