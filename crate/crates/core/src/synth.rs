//! Synthetic trial corpus in the corpus file convention, for tests and CI.
//!
//! Each trial is a sum of one sinusoid per (electrode, band) at an integer
//! frequency inside the band, so its band powers are known exactly. Log
//! band power is
//! `base(electrode, band) + alcoholism effect + stimulus effect
//!  + subject watermark + trial noise`,
//! where the watermark is a fixed per-subject N(0, σ²) offset for every
//! electrode and band; it plays the part of identity.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{serialize_trial, Alcoholism, Trial, CHANNELS, SAMPLES, SAMPLE_RATE};
use crate::topomap::ElectrodeTable;

/// Condition strings of the corpus, already in vocabulary order.
pub const CONDITIONS: [&str; 5] = ["S1 obj", "S2 match", "S2 match err", "S2 nomatch", "S2 nomatch err"];

/// Integer frequencies used per band (θ, α, β), Hz.
const BAND_FREQS: [(u32, u32); 3] = [(4, 7), (8, 12), (13, 29)];

/// Frontal θ shift per stimulus class.
const STIMULUS_THETA: [f64; 5] = [0.0, 0.45, -0.45, 0.9, -0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Subjects; the first half (rounded up) are alcoholic.
    pub subjects: usize,
    pub trials_per_condition: usize,
    pub seed: u64,
    /// σ of the per-subject watermark, log-power units.
    pub identity_scale: f64,
    /// Multiplier on the alcoholism effect (β +0.6 centrally, α −0.4
    /// posteriorly at scale 1).
    pub alcoholism_scale: f64,
    pub stimulus_scale: f64,
    /// σ of the per-trial, per-electrode noise, log-power units.
    pub trial_noise: f64,
    pub gzip: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 10,
            trials_per_condition: 4,
            seed: 7,
            identity_scale: 0.25,
            alcoholism_scale: 1.5,
            stimulus_scale: 1.0,
            trial_noise: 0.15,
            gzip: true,
        }
    }
}

pub fn synthetic_subject_id(index: usize, alcoholism: Alcoholism) -> String {
    let c = if alcoholism == Alcoholism::Alcoholic { 'a' } else { 'c' };
    format!("co2{c}{:07}", 364 + index)
}

fn subject_alcoholism(cfg: &SynthConfig, index: usize) -> Alcoholism {
    if index < cfg.subjects.div_ceil(2) {
        Alcoholism::Alcoholic
    } else {
        Alcoholism::Control
    }
}

/// Noise-free log band power of every (electrode, band), row-major.
pub fn mean_log_power(table: &ElectrodeTable, alcoholism: Alcoholism, stimulus: usize, cfg: &SynthConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(CHANNELS * 3);
    for e in table.electrodes().iter().take(CHANNELS) {
        let [_, y, z] = e.position;
        let (frontal, posterior, central) = (y.max(0.0), (-y).max(0.0), z.max(0.0));
        let mut l = [2.0 + 0.3 * frontal, 2.2 + 0.8 * posterior, 1.4 + 0.2 * central];
        if alcoholism == Alcoholism::Alcoholic {
            l[2] += 0.6 * cfg.alcoholism_scale * central;
            l[1] -= 0.4 * cfg.alcoholism_scale * posterior;
        }
        l[0] += STIMULUS_THETA[stimulus] * cfg.stimulus_scale * frontal;
        out.extend_from_slice(&l);
    }
    out
}

fn watermark(cfg: &SynthConfig, subject: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(subject as u64);
    let n = Normal::new(0.0, cfg.identity_scale.max(0.0)).expect("finite sigma");
    (0..CHANNELS * 3).map(|_| n.sample(&mut rng)).collect()
}

/// Samples with the given band powers, rounded to 3 decimals as in the
/// corpus files.
fn render(log_power: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut samples = vec![0.0; CHANNELS * SAMPLES];
    for c in 0..CHANNELS {
        let ch = &mut samples[c * SAMPLES..(c + 1) * SAMPLES];
        for (b, &(lo, hi)) in BAND_FREQS.iter().enumerate() {
            // A unit-amplitude sinusoid on an exact bin has band power ½.
            let amp = (2.0 * log_power[c * 3 + b].exp()).sqrt();
            let f = rng.random_range(lo..=hi) as f64;
            let phase = rng.random_range(0.0..2.0 * PI);
            for (k, v) in ch.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * f * k as f64 / SAMPLE_RATE + phase).cos();
            }
        }
        for v in ch.iter_mut() {
            *v = (*v * 1000.0).round() / 1000.0;
        }
    }
    samples
}

/// Every trial of one subject, in (condition, repetition) order.
pub fn subject_trials(table: &ElectrodeTable, cfg: &SynthConfig, subject: usize) -> Vec<Trial> {
    let alcoholism = subject_alcoholism(cfg, subject);
    let id = synthetic_subject_id(subject, alcoholism);
    let mark = watermark(cfg, subject);
    let noise = Normal::new(0.0, cfg.trial_noise.max(0.0)).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_7A1A);
    rng.set_stream(subject as u64);
    let mut out = Vec::new();
    for (stimulus, cond) in CONDITIONS.iter().enumerate() {
        let mean = mean_log_power(table, alcoholism, stimulus, cfg);
        for _ in 0..cfg.trials_per_condition {
            let lp: Vec<f64> = mean.iter().zip(&mark).map(|(m, w)| m + w + noise.sample(&mut rng)).collect();
            out.push(Trial {
                subject_id: id.clone(),
                alcoholism,
                condition: cond.to_string(),
                stimulus: Some(stimulus),
                trial_index: out.len() as u32,
                samples: render(&lp, &mut rng),
            });
        }
    }
    out
}

/// Writes `<subject>/<subject>.rd.<nnn>[.gz]` files under `dir` and returns
/// their paths in sorted order.
pub fn write_synthetic_corpus(dir: &Path, cfg: &SynthConfig, table: &ElectrodeTable) -> std::io::Result<Vec<PathBuf>> {
    let per_subject: Vec<std::io::Result<Vec<PathBuf>>> = (0..cfg.subjects)
        .into_par_iter()
        .map(|s| {
            let trials = subject_trials(table, cfg, s);
            let sub_dir = dir.join(&trials[0].subject_id);
            fs::create_dir_all(&sub_dir)?;
            let mut paths = Vec::new();
            for t in &trials {
                let text = serialize_trial(t, table);
                let name = format!("{}.rd.{:03}", t.subject_id, t.trial_index);
                let path = if cfg.gzip {
                    let p = sub_dir.join(format!("{name}.gz"));
                    // Fixed header fields keep the archive bytes reproducible.
                    let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
                    enc.write_all(text.as_bytes())?;
                    fs::write(&p, enc.finish()?)?;
                    p
                } else {
                    let p = sub_dir.join(name);
                    fs::write(&p, text)?;
                    p
                };
                paths.push(path);
            }
            Ok(paths)
        })
        .collect();
    let mut all = Vec::new();
    for p in per_subject {
        all.extend(p?);
    }
    all.sort();
    Ok(all)
}
