//! Per-channel spectra and θ/α/β band powers.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{Alcoholism, Trial, CHANNELS, SAMPLES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("non-finite input sample at index {0}")]
    NonFiniteInput(usize),
    #[error("expected {expected} samples, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid band set: {0}")]
    InvalidBands(String),
    #[error("trial stimulus is unresolved")]
    UnresolvedStimulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandSpec {
    pub fn new(name: &str, lo_hz: f64, hi_hz: f64) -> Self {
        Self { name: name.to_string(), lo_hz, hi_hz }
    }

    /// Integer bins `k` with `lo ≤ k·Δf < hi`.
    pub fn bins(&self, n: usize, sample_rate: f64) -> std::ops::Range<usize> {
        let df = sample_rate / n as f64;
        let nyq = n / 2;
        let lo = ((self.lo_hz / df).ceil().max(0.0) as usize).min(nyq + 1);
        let hi = ((self.hi_hz / df).ceil().max(0.0) as usize).min(nyq + 1);
        lo..hi.max(lo)
    }
}

/// The three bands, in image-channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet(pub [BandSpec; 3]);

impl Default for BandSet {
    fn default() -> Self {
        Self([BandSpec::new("theta", 4.0, 8.0), BandSpec::new("alpha", 8.0, 13.0), BandSpec::new("beta", 13.0, 30.0)])
    }
}

impl BandSet {
    pub fn validate(&self) -> Result<(), SpectralError> {
        for b in &self.0 {
            if !(b.lo_hz.is_finite() && b.hi_hz.is_finite() && b.lo_hz >= 0.0 && b.lo_hz < b.hi_hz) {
                return Err(SpectralError::InvalidBands(format!("{} [{}, {})", b.name, b.lo_hz, b.hi_hz)));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let (a, b) = (&self.0[i], &self.0[j]);
                if a.lo_hz < b.hi_hz && b.lo_hz < a.hi_hz {
                    return Err(SpectralError::InvalidBands(format!("{} overlaps {}", a.name, b.name)));
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> [&str; 3] {
        [&self.0[0].name, &self.0[1].name, &self.0[2].name]
    }
}

/// Non-redundant half of the DFT `X[k] = Σ x[n]·e^{-2πikn/N}`, bins `0..=N/2`.
pub fn dft_spectrum(x: &[f64]) -> Result<Vec<Complex64>, SpectralError> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(SpectralError::NonFiniteInput(i));
    }
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if n > 0 {
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    }
    buf.truncate(n / 2 + 1);
    Ok(buf)
}

/// One-sided weight of bin `k` for an `n`-point real signal.
fn one_sided_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        1.0
    } else {
        2.0
    }
}

/// Band power from a one-sided spectrum of an `n`-point signal:
/// `Σ_{k∈band} w_k·|X_k|² / n²` with `w_k = 2` for bins that have a mirrored
/// negative-frequency partner. A unit-amplitude sinusoid has power ½.
pub fn band_power(spectrum: &[Complex64], n: usize, sample_rate: f64, band: &BandSpec) -> f64 {
    let scale = 1.0 / (n as f64 * n as f64);
    band.bins(n, sample_rate)
        .filter(|&k| k < spectrum.len())
        .map(|k| one_sided_weight(k, n) * spectrum[k].norm_sqr())
        .sum::<f64>()
        * scale
}

/// Total one-sided power, on the same scale as [`band_power`].
pub fn total_power(spectrum: &[Complex64], n: usize) -> f64 {
    let scale = 1.0 / (n as f64 * n as f64);
    spectrum.iter().enumerate().map(|(k, c)| one_sided_weight(k, n) * c.norm_sqr()).sum::<f64>() * scale
}

/// 64×3 band-power matrix with the trial's labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFeatures {
    pub trial_id: String,
    pub subject_id: String,
    pub alcoholism: Alcoholism,
    pub stimulus: usize,
    /// Row-major `CHANNELS × 3`.
    pub powers: Vec<f64>,
}

impl BandFeatures {
    pub fn get(&self, electrode: usize, band: usize) -> f64 {
        self.powers[electrode * 3 + band]
    }

    pub fn band(&self, band: usize) -> Vec<f64> {
        self.powers.iter().skip(band).step_by(3).copied().collect()
    }

    pub fn num_electrodes(&self) -> usize {
        self.powers.len() / 3
    }
}

/// Band powers for every channel of a trial, using the trial's own sample
/// rate and the configured bands.
pub fn trial_band_features(trial: &Trial, trial_id: &str, bands: &BandSet) -> Result<BandFeatures, SpectralError> {
    if trial.samples.len() != CHANNELS * SAMPLES {
        return Err(SpectralError::Length { expected: CHANNELS * SAMPLES, got: trial.samples.len() });
    }
    let stimulus = trial.stimulus.ok_or(SpectralError::UnresolvedStimulus)?;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(SAMPLES);
    let mut powers = Vec::with_capacity(CHANNELS * 3);
    let mut buf = vec![Complex64::new(0.0, 0.0); SAMPLES];
    for c in 0..CHANNELS {
        let ch = trial.channel(c);
        if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFiniteInput(c * SAMPLES + i));
        }
        for (b, &v) in buf.iter_mut().zip(ch) {
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for band in &bands.0 {
            powers.push(band_power(&buf[..SAMPLES / 2 + 1], SAMPLES, trial.sample_rate(), band));
        }
    }
    Ok(BandFeatures {
        trial_id: trial_id.to_string(),
        subject_id: trial.subject_id.clone(),
        alcoholism: trial.alcoholism,
        stimulus,
        powers,
    })
}

/// CSV dump of one trial's features: `electrode,theta,alpha,beta`.
pub fn features_csv(f: &BandFeatures, names: &[&str], bands: &BandSet) -> String {
    let [a, b, c] = bands.names();
    let mut out = format!("electrode,{a},{b},{c}\n");
    for (e, name) in names.iter().enumerate().take(f.num_electrodes()) {
        out.push_str(&format!("{name},{},{},{}\n", f.get(e, 0), f.get(e, 1), f.get(e, 2)));
    }
    out
}
