//! Electrode projection, grid interpolation and RGB image assembly.

use std::path::PathBuf;

mod electrodes;
mod image;
mod interp;
mod normalize;

pub use electrodes::{project_azimuthal, Electrode, ElectrodeTable};
pub use image::{EegImage, Provenance, IMAGE_CHANNELS};
pub use interp::{interpolate_grid, Grid, InterpolationPlan, SiteTriangulation, Stencil};
pub use normalize::{fit_normalizer, percentile, Normalizer};

use crate::spectral::BandFeatures;

#[derive(Debug, thiserror::Error)]
pub enum TopomapError {
    #[error("not a unit vector: {0:?}")]
    NonUnitVector([f64; 3]),
    #[error("electrode table: {0}")]
    ElectrodeTable(String),
    #[error("degenerate sites: {0}")]
    DegenerateSites(String),
    #[error("normalizer needs a non-empty training set")]
    EmptyTrainingSet,
    #[error("band {0} has a degenerate percentile range")]
    DegenerateRange(usize),
    #[error("features have {got} electrodes, the layout has {expected}")]
    ElectrodeCount { expected: usize, got: usize },
    #[error("image format: {0}")]
    Format(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

/// Fixed site layout plus interpolation plan; shared read-only across
/// trials.
#[derive(Debug, Clone)]
pub struct ImageAssembler {
    plan: InterpolationPlan,
}

impl ImageAssembler {
    pub fn new(table: &ElectrodeTable, height: usize, width: usize) -> Result<Self, TopomapError> {
        Ok(Self { plan: InterpolationPlan::fitted(&table.projected(), height, width)? })
    }

    pub fn plan(&self) -> &InterpolationPlan {
        &self.plan
    }

    pub fn height(&self) -> usize {
        self.plan.grid().height
    }

    pub fn width(&self) -> usize {
        self.plan.grid().width
    }

    /// Normalized, clipped per-electrode values of one band.
    pub fn site_values(&self, features: &BandFeatures, norm: &Normalizer, band: usize) -> Vec<f64> {
        features.band(band).into_iter().map(|p| norm.apply(band, p)).collect()
    }

    /// log(1+p) → normalizer → clip → interpolate, per band; θ/α/β become
    /// R/G/B.
    pub fn assemble(
        &self,
        features: &BandFeatures,
        norm: &Normalizer,
        provenance: Provenance,
    ) -> Result<EegImage, TopomapError> {
        if features.num_electrodes() != self.plan.num_sites() {
            return Err(TopomapError::ElectrodeCount { expected: self.plan.num_sites(), got: features.num_electrodes() });
        }
        let mut pixels = Vec::with_capacity(IMAGE_CHANNELS * self.height() * self.width());
        for band in 0..IMAGE_CHANNELS {
            let grid = self.plan.apply(&self.site_values(features, norm, band));
            pixels.extend(grid.into_iter().map(|v| v.clamp(0.0, 1.0) as f32));
        }
        Ok(EegImage {
            height: self.height(),
            width: self.width(),
            pixels,
            subject_id: features.subject_id.clone(),
            alcoholism: features.alcoholism,
            stimulus: features.stimulus,
            provenance,
        })
    }
}

/// One-shot convenience over [`ImageAssembler`].
pub fn assemble_image(
    features: &BandFeatures,
    table: &ElectrodeTable,
    norm: &Normalizer,
    height: usize,
    width: usize,
) -> Result<EegImage, TopomapError> {
    ImageAssembler::new(table, height, width)?.assemble(features, norm, Provenance::Real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Alcoholism, Trial, CHANNELS, SAMPLES};
    use crate::spectral::{trial_band_features, BandSet};

    fn norm() -> Normalizer {
        Normalizer { lo: [0.5, 0.5, 0.5], hi: [3.0, 3.0, 3.0], percentiles: [1.0, 99.0], fit_split: "train".into(), fit_count: 1 }
    }

    fn zero_features() -> BandFeatures {
        BandFeatures {
            trial_id: "t".into(),
            subject_id: "co2a0000001".into(),
            alcoholism: Alcoholism::Alcoholic,
            stimulus: 3,
            powers: vec![0.0; CHANNELS * 3],
        }
    }

    #[test]
    fn zero_trial_gives_clipped_constant_image() {
        let t = ElectrodeTable::standard();
        let n = Normalizer { lo: [-1.0, 0.5, -3.0], hi: [1.0, 1.5, 1.0], ..norm() };
        let img = assemble_image(&zero_features(), &t, &n, 32, 32).unwrap();
        assert_eq!((img.height, img.width, img.pixels.len()), (32, 32, 3 * 32 * 32));
        assert!(img.channel(0).iter().all(|&p| (p - 0.5).abs() < 1e-7));
        assert!(img.channel(1).iter().all(|&p| p == 0.0));
        assert!(img.channel(2).iter().all(|&p| (p - 0.75).abs() < 1e-7));
        assert_eq!(img.stimulus, 3);
        assert_eq!(img.provenance, Provenance::Real);
    }

    #[test]
    fn alpha_only_trial_varies_green_only() {
        let table = ElectrodeTable::standard();
        let mut trial = Trial {
            subject_id: "co2c0000001".into(),
            alcoholism: Alcoholism::Control,
            condition: "S1 obj".into(),
            stimulus: Some(0),
            trial_index: 0,
            samples: vec![0.0; CHANNELS * SAMPLES],
        };
        for c in 0..CHANNELS {
            let amp = 1.0 + c as f64 * 0.5;
            for n in 0..SAMPLES {
                trial.samples[c * SAMPLES + n] = amp * (2.0 * std::f64::consts::PI * 10.0 * n as f64 / 256.0).cos();
            }
        }
        let f = trial_band_features(&trial, "t", &BandSet::default()).unwrap();
        let n = Normalizer { lo: [0.0; 3], hi: [7.0; 3], ..norm() };
        let img = assemble_image(&f, &table, &n, 32, 32).unwrap();
        let spread = |c: usize| {
            let ch = img.channel(c);
            ch.iter().cloned().fold(f32::MIN, f32::max) - ch.iter().cloned().fold(f32::MAX, f32::min)
        };
        assert!(spread(1) > 0.1);
        assert!(spread(0) < 1e-6 && spread(2) < 1e-6);
    }

    #[test]
    fn normalize_then_interpolate_commutes_for_unclipped_values() {
        let table = ElectrodeTable::standard();
        let asm = ImageAssembler::new(&table, 16, 16).unwrap();
        let mut f = zero_features();
        for (i, p) in f.powers.iter_mut().enumerate() {
            *p = 2.0 + (i % 7) as f64;
        }
        let n = Normalizer { lo: [0.0; 3], hi: [4.0; 3], ..norm() };
        let img = asm.assemble(&f, &n, Provenance::Real).unwrap();
        let logs: Vec<f64> = f.band(1).iter().map(|p| p.ln_1p()).collect();
        let grid = asm.plan().apply(&logs);
        for (a, b) in img.channel(1).iter().zip(grid) {
            assert!((*a as f64 - b / 4.0).abs() < 1e-6);
        }
    }
}
