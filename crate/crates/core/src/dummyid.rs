//! Dummy identities: grand averages of band-power features over subsets of
//! subjects sharing an (alcoholism, stimulus) group.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Alcoholism, STIMULUS_CLASSES};
use crate::spectral::BandFeatures;
use crate::topomap::{EegImage, ImageAssembler, Normalizer, Provenance, TopomapError};

pub const NUM_GROUPS: usize = 2 * STIMULUS_CLASSES;

#[derive(Debug, thiserror::Error)]
pub enum DummyError {
    #[error("group {group} has {have} subjects, need {k}")]
    InsufficientSubjects { group: usize, have: usize, k: usize },
    #[error("k must be at least 2 and m at least 1 (k={k}, m={m})")]
    InvalidParams { k: usize, m: usize },
    #[error("stimulus {0} out of range")]
    StimulusOutOfRange(usize),
    #[error(transparent)]
    Topomap(#[from] TopomapError),
}

pub fn group_key(alcoholism: Alcoholism, stimulus: usize) -> usize {
    alcoholism.index() * STIMULUS_CLASSES + stimulus
}

pub fn group_labels(group: usize) -> (Alcoholism, usize) {
    (Alcoholism::from_index(group / STIMULUS_CLASSES).expect("group < 10"), group % STIMULUS_CLASSES)
}

pub fn dummy_subject_id(group: usize, seed: u64, n: usize) -> String {
    format!("dummy:g{group}:{seed}:{n}")
}

/// Parses `dummy:g<id>:<seed>:<n>`.
pub fn parse_dummy_subject_id(id: &str) -> Option<(usize, u64, usize)> {
    let mut it = id.strip_prefix("dummy:g")?.split(':');
    let g = it.next()?.parse().ok()?;
    let s = it.next()?.parse().ok()?;
    let n = it.next()?.parse().ok()?;
    it.next().is_none().then_some((g, s, n))
}

/// Running mean `m ← m + (x − m)/i`; a run of identical inputs returns that
/// input exactly.
fn mean_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut mean: Vec<f64> = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        if i == 0 {
            mean = row.to_vec();
            continue;
        }
        let d = (i + 1) as f64;
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += (x - *m) / d;
        }
    }
    mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummyExemplar {
    pub group: usize,
    pub index: usize,
    /// Contributing subjects, sorted.
    pub subjects: Vec<String>,
    pub features: BandFeatures,
}

#[derive(Debug, Clone)]
pub struct DummySet {
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub exemplars: Vec<DummyExemplar>,
    pub images: Vec<EegImage>,
}

/// Per-subject mean feature matrix of every subject in one group.
pub fn subject_means(train: &[BandFeatures], group: usize) -> BTreeMap<String, Vec<f64>> {
    let mut by_subject: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for f in train.iter().filter(|f| group_key(f.alcoholism, f.stimulus) == group) {
        by_subject.entry(&f.subject_id).or_default().push(&f.powers);
    }
    by_subject.into_iter().map(|(s, rows)| (s.to_string(), mean_rows(rows))).collect()
}

/// `m` exemplars for each of the 10 groups. Each one averages the
/// per-subject means of `k` distinct subjects drawn with a generator seeded
/// from `seed` and the group id. Pass training-split features only.
pub fn dummy_features(train: &[BandFeatures], k: usize, m: usize, seed: u64) -> Result<Vec<DummyExemplar>, DummyError> {
    if k < 2 || m == 0 {
        return Err(DummyError::InvalidParams { k, m });
    }
    if let Some(f) = train.iter().find(|f| f.stimulus >= STIMULUS_CLASSES) {
        return Err(DummyError::StimulusOutOfRange(f.stimulus));
    }
    let per_group: Vec<Result<Vec<DummyExemplar>, DummyError>> = (0..NUM_GROUPS)
        .into_par_iter()
        .map(|group| {
            let means = subject_means(train, group);
            if means.len() < k {
                return Err(DummyError::InsufficientSubjects { group, have: means.len(), k });
            }
            let (alcoholism, stimulus) = group_labels(group);
            let ids: Vec<&String> = means.keys().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(group as u64);
            (0..m)
                .map(|n| {
                    let mut pick = ids.clone();
                    pick.shuffle(&mut rng);
                    pick.truncate(k);
                    pick.sort();
                    let powers = mean_rows(pick.iter().map(|s| means[*s].as_slice()));
                    Ok(DummyExemplar {
                        group,
                        index: n,
                        subjects: pick.into_iter().cloned().collect(),
                        features: BandFeatures {
                            trial_id: dummy_subject_id(group, seed, n),
                            subject_id: dummy_subject_id(group, seed, n),
                            alcoholism,
                            stimulus,
                            powers,
                        },
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(NUM_GROUPS * m);
    for g in per_group {
        out.extend(g?);
    }
    Ok(out)
}

/// Dummy exemplars plus their images under the already-fit normalizer.
pub fn make_dummy_set(
    train: &[BandFeatures],
    k: usize,
    m: usize,
    seed: u64,
    assembler: &ImageAssembler,
    norm: &Normalizer,
) -> Result<DummySet, DummyError> {
    let exemplars = dummy_features(train, k, m, seed)?;
    let images = exemplars
        .par_iter()
        .map(|e| assembler.assemble(&e.features, norm, Provenance::Dummy))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DummySet { k, m, seed, exemplars, images })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feat(subject: &str, alc: Alcoholism, stim: usize, powers: Vec<f64>) -> BandFeatures {
        BandFeatures { trial_id: String::new(), subject_id: subject.into(), alcoholism: alc, stimulus: stim, powers }
    }

    #[test]
    fn group_key_is_a_bijection() {
        assert_eq!(group_key(Alcoholism::Control, 0), 0);
        assert_eq!(group_key(Alcoholism::Alcoholic, 4), 9);
        let mut seen = [false; 10];
        for a in [Alcoholism::Control, Alcoholism::Alcoholic] {
            for s in 0..5 {
                let g = group_key(a, s);
                assert!(!seen[g]);
                seen[g] = true;
                assert_eq!(group_labels(g), (a, s));
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn subject_id_tag_round_trips() {
        assert_eq!(parse_dummy_subject_id(&dummy_subject_id(7, 42, 3)), Some((7, 42, 3)));
        assert_eq!(parse_dummy_subject_id("co2a0000364"), None);
    }

    /// Subjects in every group: `n` subjects, each with `trials` trials.
    fn corpus(n: usize, trials: usize, f: impl Fn(usize, usize, usize) -> Vec<f64>) -> Vec<BandFeatures> {
        let mut out = Vec::new();
        for g in 0..NUM_GROUPS {
            let (a, s) = group_labels(g);
            for subj in 0..n {
                let id = format!("co2{}{subj:07}", if a == Alcoholism::Alcoholic { 'a' } else { 'c' });
                for t in 0..trials {
                    out.push(feat(&id, a, s, f(g, subj, t)));
                }
            }
        }
        out
    }

    #[test]
    fn identical_subjects_give_identical_exemplars() {
        let fixed: Vec<f64> = (0..192).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect();
        let train = corpus(4, 3, |_, _, _| fixed.clone());
        for e in dummy_features(&train, 3, 2, 5).unwrap() {
            assert_eq!(e.features.powers, fixed);
        }
    }

    #[test]
    fn two_subjects_average_elementwise() {
        let f1: Vec<f64> = (0..192).map(|i| i as f64).collect();
        let f2: Vec<f64> = (0..192).map(|i| 3.0 * i as f64 + 2.0).collect();
        let train = corpus(2, 1, |_, s, _| if s == 0 { f1.clone() } else { f2.clone() });
        let ex = dummy_features(&train, 2, 1, 0).unwrap();
        assert_eq!(ex.len(), 10);
        for e in ex {
            for i in 0..192 {
                assert_eq!(e.features.powers[i], (f1[i] + f2[i]) / 2.0);
            }
        }
    }

    #[test]
    fn coverage_labels_and_insufficient_subjects() {
        let train = corpus(3, 2, |g, s, t| vec![(g * 100 + s * 10 + t) as f64; 192]);
        let ex = dummy_features(&train, 3, 4, 11).unwrap();
        assert_eq!(ex.len(), 40);
        for e in &ex {
            let (a, s) = group_labels(e.group);
            assert_eq!((e.features.alcoholism, e.features.stimulus), (a, s));
            assert_eq!(e.subjects.len(), 3);
            assert_eq!(parse_dummy_subject_id(&e.features.subject_id), Some((e.group, 11, e.index)));
        }
        assert!(matches!(
            dummy_features(&train, 4, 1, 0),
            Err(DummyError::InsufficientSubjects { have: 3, k: 4, .. })
        ));
        assert!(matches!(dummy_features(&train, 1, 1, 0), Err(DummyError::InvalidParams { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn convex_and_linear(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::RngExt;
            let base: Vec<Vec<f64>> = (0..NUM_GROUPS * 5 * 3).map(|_| (0..192).map(|_| rng.random_range(0.0..50.0)).collect()).collect();
            let train = corpus(5, 3, |g, s, t| base[(g * 5 + s) * 3 + t].clone());
            let ex = dummy_features(&train, 3, 3, seed).unwrap();
            for e in &ex {
                let means = subject_means(&train, e.group);
                for i in 0..192 {
                    let vals: Vec<f64> = e.subjects.iter().map(|s| means[s][i]).collect();
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let v = e.features.powers[i];
                    prop_assert!(v >= lo - 1e-12 * hi && v <= hi * (1.0 + 1e-12));
                }
            }
            let scaled: Vec<BandFeatures> = train.iter().map(|f| BandFeatures { powers: f.powers.iter().map(|p| p * scale).collect(), ..f.clone() }).collect();
            let ex2 = dummy_features(&scaled, 3, 3, seed).unwrap();
            for (a, b) in ex.iter().zip(&ex2) {
                prop_assert_eq!(&a.subjects, &b.subjects);
                for (x, y) in a.features.powers.iter().zip(&b.features.powers) {
                    prop_assert!((x * scale - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }
}
