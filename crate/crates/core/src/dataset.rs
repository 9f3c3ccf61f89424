//! Corpus ingest: trial parsing, manifest assembly and within-subject
//! train/test/validation splits.
//!
//! Trial files follow the UCI alcoholism EEG convention: `#` header lines
//! carry the subject file id (`co2a0000364.rd`) and the condition
//! (`S1 obj , trial 0`); data lines are `trial sensor sample value`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::topomap::ElectrodeTable;

pub const CHANNELS: usize = 64;
pub const SAMPLES: usize = 256;
pub const SAMPLE_RATE: f64 = 256.0;
pub const STIMULUS_CLASSES: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("malformed trial: {0}")]
    MalformedTrial(String),
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
    #[error("trial has no condition header")]
    MissingConditionHeader,
    #[error("no parseable trial files under {0}")]
    EmptyCorpus(PathBuf),
    #[error("expected 5 distinct stimulus conditions, found {0}: {1:?}")]
    VocabSizeMismatch(usize, Vec<String>),
    #[error("subject {0} has fewer than 3 trials")]
    TooFewTrials(String),
    #[error("invalid split ratios {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("condition {0:?} is not in the stimulus vocabulary")]
    UnknownCondition(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alcoholism {
    Control = 0,
    Alcoholic = 1,
}

impl Alcoholism {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::Control),
            1 => Some(Self::Alcoholic),
            _ => None,
        }
    }

    /// Class character of a corpus subject id: `co2a…` is alcoholic,
    /// `co2c…` is a control.
    pub fn from_subject_id(id: &str) -> Option<Self> {
        match id.as_bytes().get(3) {
            Some(b'a') => Some(Self::Alcoholic),
            Some(b'c') => Some(Self::Control),
            _ => None,
        }
    }

    pub fn class_names() -> Vec<String> {
        vec!["control".into(), "alcoholic".into()]
    }
}

/// One 64-channel × 256-sample recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject_id: String,
    pub alcoholism: Alcoholism,
    /// Condition string exactly as recorded.
    pub condition: String,
    /// Class index once resolved against a manifest vocabulary.
    pub stimulus: Option<usize>,
    pub trial_index: u32,
    /// Row-major `CHANNELS × SAMPLES`, rows in electrode-table order, µV.
    pub samples: Vec<f64>,
}

impl Trial {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c * SAMPLES..(c + 1) * SAMPLES]
    }

    pub fn sample_rate(&self) -> f64 {
        SAMPLE_RATE
    }
}

fn parse_condition(header: &str) -> Option<(String, u32)> {
    let (cond, rest) = header.rsplit_once(',')?;
    let rest = rest.trim();
    let num = rest.strip_prefix("trial")?.trim();
    Some((cond.trim().to_string(), num.parse().ok()?))
}

/// Parses one trial file's text.
pub fn parse_trial(raw: &str, table: &ElectrodeTable) -> Result<Trial, DatasetError> {
    if table.len() != CHANNELS {
        return Err(DatasetError::MalformedTrial(format!("electrode table has {} entries", table.len())));
    }
    let mut subject: Option<String> = None;
    let mut condition: Option<(String, u32)> = None;
    let mut samples = vec![f64::NAN; CHANNELS * SAMPLES];
    let mut seen = vec![false; CHANNELS * SAMPLES];
    let mut count = 0usize;

    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let header = header.trim();
            if subject.is_none() {
                if let Some(tok) = header.split_whitespace().next() {
                    if let Some(pos) = tok.find(".rd") {
                        subject = Some(tok[..pos].to_string());
                        continue;
                    }
                }
            }
            if condition.is_none() && header.contains(", trial") || header.contains(",trial") {
                condition = Some(
                    parse_condition(header)
                        .ok_or_else(|| DatasetError::MalformedTrial(format!("bad condition header {header:?}")))?,
                );
            }
            continue;
        }
        let bad = || DatasetError::MalformedTrial(format!("line {}: {line:?}", lineno + 1));
        let mut it = line.split_whitespace();
        let (Some(_trial), Some(sensor), Some(idx), Some(value), None) =
            (it.next(), it.next(), it.next(), it.next(), it.next())
        else {
            return Err(bad());
        };
        let ch = table.index_of(sensor).ok_or_else(|| DatasetError::UnknownSensor(sensor.to_string()))?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        let value: f64 = value.parse().map_err(|_| bad())?;
        if idx >= SAMPLES || !value.is_finite() {
            return Err(bad());
        }
        let slot = ch * SAMPLES + idx;
        if seen[slot] {
            return Err(DatasetError::MalformedTrial(format!("duplicate sample {sensor}[{idx}]")));
        }
        seen[slot] = true;
        samples[slot] = value;
        count += 1;
    }

    let (condition, trial_index) = condition.ok_or(DatasetError::MissingConditionHeader)?;
    let subject_id = subject.ok_or_else(|| DatasetError::MalformedTrial("no subject id header".into()))?;
    let alcoholism = Alcoholism::from_subject_id(&subject_id)
        .ok_or_else(|| DatasetError::MalformedTrial(format!("no class character in subject id {subject_id:?}")))?;
    if count != CHANNELS * SAMPLES {
        let channels = (0..CHANNELS).filter(|c| seen[c * SAMPLES..(c + 1) * SAMPLES].iter().any(|&s| s)).count();
        return Err(DatasetError::MalformedTrial(format!(
            "expected {CHANNELS} channels × {SAMPLES} samples, got {count} values over {channels} channels"
        )));
    }
    Ok(Trial { subject_id, alcoholism, condition, stimulus: None, trial_index, samples })
}

/// Writes a trial in the corpus convention; [`parse_trial`] reads it back
/// to an equal trial (stimulus resolution aside).
pub fn serialize_trial(trial: &Trial, table: &ElectrodeTable) -> String {
    let mut out = String::with_capacity(CHANNELS * SAMPLES * 24);
    let _ = writeln!(out, "# {}.rd", trial.subject_id);
    let _ = writeln!(out, "# 1 trials, {CHANNELS} chans, {SAMPLES} samples {SAMPLES} post_stim samples");
    let _ = writeln!(out, "# {:.6} msecs uV", 1000.0 / SAMPLE_RATE);
    let _ = writeln!(out, "# {} , trial {}", trial.condition, trial.trial_index);
    for c in 0..CHANNELS {
        let name = table.name(c);
        let _ = writeln!(out, "# {name} chan {c}");
        for (k, v) in trial.channel(c).iter().enumerate() {
            let _ = writeln!(out, "{} {name} {k} {v}", trial.trial_index);
        }
    }
    out
}

/// Reads a trial file, transparently decompressing `.gz`.
pub fn read_trial_text(path: &Path) -> Result<String, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut text = String::new();
        flate2::read::GzDecoder::new(&bytes[..]).read_to_string(&mut text).map_err(io_err(path))?;
        Ok(text)
    } else {
        String::from_utf8(bytes).map_err(|_| DatasetError::MalformedTrial(format!("{} is not UTF-8", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub id: String,
    /// Relative to the manifest root, `/`-separated.
    pub path: String,
    pub subject_id: String,
    pub alcoholism: Alcoholism,
    pub condition: String,
    pub stimulus: usize,
    pub trial_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub alcoholism: Alcoholism,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub root: PathBuf,
    pub stimulus_vocab: Vec<String>,
    pub subjects: Vec<SubjectEntry>,
    pub trials: Vec<TrialEntry>,
    #[serde(default)]
    pub skipped: Vec<SkippedFile>,
}

fn collect_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    let walker = walkdir::WalkDir::new(dir).sort_by_file_name().into_iter().filter_entry(|e| {
        e.depth() == 0 || !e.file_name().to_str().is_some_and(|n| n.starts_with('.'))
    });
    for entry in walker {
        let entry = entry.map_err(|e| DatasetError::Io {
            path: e.path().unwrap_or(dir).to_path_buf(),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("directory walk failed")),
        })?;
        if entry.file_type().is_file() {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let s: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    s.join("/")
}

/// Scans `root` recursively and assembles a manifest. Files that fail to
/// parse are listed in `skipped`.
pub fn build_manifest(root: &Path, table: &ElectrodeTable) -> Result<Manifest, DatasetError> {
    let files = collect_files(root)?;

    let parsed: Vec<(String, Result<Trial, DatasetError>)> = files
        .par_iter()
        .map(|p| (relative_id(root, p), read_trial_text(p).and_then(|t| parse_trial(&t, table))))
        .collect();

    let mut skipped = Vec::new();
    let mut trials = Vec::new();
    for (rel, res) in parsed {
        match res {
            Ok(t) => trials.push((rel, t)),
            Err(e) => skipped.push(SkippedFile { path: rel, reason: e.to_string() }),
        }
    }
    if trials.is_empty() {
        return Err(DatasetError::EmptyCorpus(root.to_path_buf()));
    }

    let vocab: Vec<String> =
        trials.iter().map(|(_, t)| t.condition.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if vocab.len() != STIMULUS_CLASSES {
        return Err(DatasetError::VocabSizeMismatch(vocab.len(), vocab));
    }

    let mut subjects: BTreeMap<String, Alcoholism> = BTreeMap::new();
    let mut entries = Vec::with_capacity(trials.len());
    for (rel, t) in trials {
        subjects.insert(t.subject_id.clone(), t.alcoholism);
        let id = rel.strip_suffix(".gz").unwrap_or(&rel).to_string();
        let stimulus = vocab.iter().position(|v| *v == t.condition).expect("vocab built from these trials");
        entries.push(TrialEntry {
            id,
            path: rel,
            subject_id: t.subject_id,
            alcoholism: t.alcoholism,
            condition: t.condition,
            stimulus,
            trial_index: t.trial_index,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(Manifest {
        root: root.to_path_buf(),
        stimulus_vocab: vocab,
        subjects: subjects.into_iter().map(|(id, alcoholism)| SubjectEntry { id, alcoholism }).collect(),
        trials: entries,
        skipped,
    })
}

impl Manifest {
    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn stimulus_index(&self, condition: &str) -> Option<usize> {
        self.stimulus_vocab.iter().position(|v| v == condition)
    }

    /// Re-reads a listed trial and resolves its stimulus class.
    pub fn load_trial(&self, entry: &TrialEntry, table: &ElectrodeTable) -> Result<Trial, DatasetError> {
        let path = self.root.join(&entry.path);
        let mut trial = parse_trial(&read_trial_text(&path)?, table)?;
        trial.stimulus =
            Some(self.stimulus_index(&trial.condition).ok_or_else(|| DatasetError::UnknownCondition(trial.condition.clone()))?);
        Ok(trial)
    }

    /// Keeps only the listed subjects.
    pub fn restrict_subjects(&self, keep: &[String]) -> Manifest {
        let keep: BTreeSet<&String> = keep.iter().collect();
        Manifest {
            root: self.root.clone(),
            stimulus_vocab: self.stimulus_vocab.clone(),
            subjects: self.subjects.iter().filter(|s| keep.contains(&s.id)).cloned().collect(),
            trials: self.trials.iter().filter(|t| keep.contains(&t.subject_id)).cloned().collect(),
            skipped: self.skipped.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" | "val" => Ok(Split::Validation),
            other => Err(format!("unknown split {other:?} (train|test|validation)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, trial_id: &str) -> Option<Split> {
        self.assignment.get(trial_id).copied()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignment.iter().filter(|(_, s)| **s == split).map(|(k, _)| k.as_str()).collect()
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`; ties on the
/// remainder go to the earlier split (train, then test, then validation).
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    const SCALE: f64 = 1e6;
    let weights: Vec<u128> = ratios.iter().map(|r| (r * SCALE).round() as u128).collect();
    let total: u128 = weights.iter().sum();
    let mut counts = [0usize; 3];
    let mut rems = [(0u128, 0usize); 3];
    for i in 0..3 {
        let q = weights[i] * n as u128;
        counts[i] = (q / total) as usize;
        rems[i] = (q % total, i);
    }
    let mut left = n - counts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Seeded within-subject split. Each subject's trials are shuffled within
/// each stimulus class and dealt round-robin over the classes (class order
/// reshuffled every round); the dealt sequence is cut per
/// [`split_counts`]. Every split then sees the stimulus classes as evenly
/// as the subject's trial counts allow.
pub fn split_within_subject(manifest: &Manifest, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, DatasetError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios));
    }
    let mut by_subject: BTreeMap<&str, BTreeMap<usize, Vec<&str>>> = BTreeMap::new();
    for t in &manifest.trials {
        by_subject.entry(&t.subject_id).or_default().entry(t.stimulus).or_default().push(&t.id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for (subject, classes) in by_subject {
        let total: usize = classes.values().map(Vec::len).sum();
        if total < 3 {
            return Err(DatasetError::TooFewTrials(subject.to_string()));
        }
        let mut queues: Vec<Vec<&str>> = classes
            .into_values()
            .map(|mut ids| {
                ids.sort_unstable();
                ids.shuffle(&mut rng);
                ids.reverse();
                ids
            })
            .collect();
        let mut dealt = Vec::with_capacity(total);
        while dealt.len() < total {
            let mut order: Vec<usize> = (0..queues.len()).filter(|&q| !queues[q].is_empty()).collect();
            order.shuffle(&mut rng);
            for q in order {
                dealt.extend(queues[q].pop());
            }
        }
        let [n_train, n_test, _] = split_counts(total, ratios);
        for (i, id) in dealt.into_iter().enumerate() {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_test {
                Split::Test
            } else {
                Split::Validation
            };
            assignment.insert(id.to_string(), s);
        }
    }
    Ok(SplitAssignment { seed, ratios, assignment })
}

/// Per-subject count of trials in each split.
pub fn split_summary(manifest: &Manifest, split: &SplitAssignment) -> HashMap<String, [usize; 3]> {
    let mut out: HashMap<String, [usize; 3]> = HashMap::new();
    for t in &manifest.trials {
        if let Some(s) = split.get(&t.id) {
            out.entry(t.subject_id.clone()).or_default()[s as usize] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> ElectrodeTable {
        ElectrodeTable::standard()
    }

    fn sample_trial(subject: &str, cond: &str, idx: u32) -> Trial {
        let samples = (0..CHANNELS * SAMPLES).map(|i| ((i * 31 + idx as usize) % 200) as f64 / 8.0 - 12.125).collect();
        Trial {
            subject_id: subject.into(),
            alcoholism: Alcoholism::from_subject_id(subject).unwrap(),
            condition: cond.into(),
            stimulus: None,
            trial_index: idx,
            samples,
        }
    }

    #[test]
    fn parses_corpus_style_control_file() {
        let t = sample_trial("co2c0000337", "S1 obj", 0);
        let text = serialize_trial(&t, &table());
        let back = parse_trial(&text, &table()).unwrap();
        assert_eq!(back.alcoholism, Alcoholism::Control);
        assert_eq!(back.condition, "S1 obj");
        assert_eq!(back.samples.len(), 64 * 256);
        assert_eq!(back, t);
    }

    #[test]
    fn round_trip_preserves_arbitrary_floats() {
        let mut t = sample_trial("co2a0000364", "S2 nomatch err", 17);
        t.samples[5] = -0.1 + 1e-13;
        t.samples[900] = 12345.678_901_234;
        let back = parse_trial(&serialize_trial(&t, &table()), &table()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn sixty_three_channels_is_malformed() {
        let t = sample_trial("co2a0000364", "S1 obj", 0);
        let text = serialize_trial(&t, &table());
        let kept: String = text.lines().filter(|l| !l.contains(" Y ")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_trial(&kept, &table()), Err(DatasetError::MalformedTrial(_))));
    }

    #[test]
    fn unknown_sensor_and_missing_header() {
        let t = sample_trial("co2a0000364", "S1 obj", 0);
        let text = serialize_trial(&t, &table());
        let renamed = text.replacen("0 FP1 0 ", "0 QQ9 0 ", 1);
        assert!(matches!(parse_trial(&renamed, &table()), Err(DatasetError::UnknownSensor(s)) if s == "QQ9"));
        let headerless: String =
            text.lines().filter(|l| !l.contains(", trial")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_trial(&headerless, &table()), Err(DatasetError::MissingConditionHeader)));
    }

    #[test]
    fn condition_header_variants() {
        assert_eq!(parse_condition("S1 obj , trial 0"), Some(("S1 obj".into(), 0)));
        assert_eq!(parse_condition("S2 nomatch, trial 12"), Some(("S2 nomatch".into(), 12)));
        assert_eq!(parse_condition("S2 match err , trial 7"), Some(("S2 match err".into(), 7)));
    }

    fn write_corpus(dir: &Path, conditions: &[&str], subjects: &[&str], per: u32) {
        let tb = table();
        for s in subjects {
            let sd = dir.join(s);
            fs::create_dir_all(&sd).unwrap();
            for i in 0..per {
                let cond = conditions[i as usize % conditions.len()];
                let t = sample_trial(s, cond, i);
                let text = serialize_trial(&t, &tb);
                if i % 2 == 0 {
                    let f = fs::File::create(sd.join(format!("{s}.rd.{i:03}.gz"))).unwrap();
                    let mut gz = flate2::write::GzEncoder::new(f, flate2::Compression::fast());
                    std::io::Write::write_all(&mut gz, text.as_bytes()).unwrap();
                    gz.finish().unwrap();
                } else {
                    fs::write(sd.join(format!("{s}.rd.{i:03}")), text).unwrap();
                }
            }
        }
    }

    const FIVE: [&str; 5] = ["S2 nomatch", "S1 obj", "S2 match", "S2 match err", "S2 nomatch err"];

    #[test]
    fn manifest_vocab_sorted_and_subjects_unique() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &FIVE, &["co2a0000001", "co2c0000002"], 5);
        fs::write(dir.path().join("README"), "not a trial").unwrap();
        let m = build_manifest(dir.path(), &table()).unwrap();
        assert_eq!(m.stimulus_vocab, vec!["S1 obj", "S2 match", "S2 match err", "S2 nomatch", "S2 nomatch err"]);
        assert_eq!(m.subjects.len(), 2);
        assert_eq!(m.trials.len(), 10);
        assert_eq!(m.skipped.len(), 1);
        let e = &m.trials[0];
        let t = m.load_trial(e, &table()).unwrap();
        assert_eq!(t.stimulus, Some(e.stimulus));
        assert_eq!(m.stimulus_vocab[e.stimulus], t.condition);
    }

    #[test]
    fn six_conditions_is_vocab_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let six = ["a", "b", "c", "d", "e", "f"];
        write_corpus(dir.path(), &six, &["co2a0000001"], 6);
        assert!(matches!(build_manifest(dir.path(), &table()), Err(DatasetError::VocabSizeMismatch(6, _))));
    }

    #[test]
    fn one_subject_two_trials() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &FIVE, &["co2a0000001"], 5);
        let m = build_manifest(dir.path(), &table()).unwrap();
        assert_eq!(m.subjects.len(), 1);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(build_manifest(empty.path(), &table()), Err(DatasetError::EmptyCorpus(_))));
    }

    fn toy_manifest(counts: &[(&str, usize)]) -> Manifest {
        let mut trials = Vec::new();
        for (s, n) in counts {
            for i in 0..*n {
                trials.push(TrialEntry {
                    id: format!("{s}.rd.{i:03}"),
                    path: String::new(),
                    subject_id: s.to_string(),
                    alcoholism: Alcoholism::from_subject_id(s).unwrap(),
                    condition: FIVE[i % 5].into(),
                    stimulus: i % 5,
                    trial_index: i as u32,
                });
            }
        }
        Manifest {
            root: PathBuf::new(),
            stimulus_vocab: FIVE.iter().map(|s| s.to_string()).collect(),
            subjects: counts
                .iter()
                .map(|(s, _)| SubjectEntry { id: s.to_string(), alcoholism: Alcoholism::from_subject_id(s).unwrap() })
                .collect(),
            trials,
            skipped: vec![],
        }
    }

    #[test]
    fn split_count_examples() {
        let r = [0.7, 0.2, 0.1];
        assert_eq!(split_counts(10, r), [7, 2, 1]);
        // 3 trials: quotas 2.1/0.6/0.3, the single leftover goes to test.
        assert_eq!(split_counts(3, r), [2, 1, 0]);
        assert_eq!(split_counts(120, r), [84, 24, 12]);
    }

    #[test]
    fn split_is_deterministic_and_rejects_tiny_subjects() {
        let m = toy_manifest(&[("co2a0000001", 10), ("co2c0000002", 13)]);
        let a = split_within_subject(&m, [0.7, 0.2, 0.1], 42).unwrap();
        let b = split_within_subject(&m, [0.7, 0.2, 0.1], 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = split_within_subject(&m, [0.7, 0.2, 0.1], 43).unwrap();
        assert_ne!(a.assignment, c.assignment);
        let sum = split_summary(&m, &a);
        assert_eq!(sum["co2a0000001"], [7, 2, 1]);
        let tiny = toy_manifest(&[("co2a0000001", 2)]);
        assert!(matches!(split_within_subject(&tiny, [0.7, 0.2, 0.1], 1), Err(DatasetError::TooFewTrials(_))));
    }

    #[test]
    fn split_spreads_stimuli_over_splits() {
        let m = toy_manifest(&[("co2a0000001", 15), ("co2c0000002", 30)]);
        for seed in 0..50 {
            let sa = split_within_subject(&m, [0.7, 0.2, 0.1], seed).unwrap();
            for subject in ["co2a0000001", "co2c0000002"] {
                let per_class = m.trials.iter().filter(|t| t.subject_id == subject).count() / 5;
                for stim in 0..5 {
                    let train = m
                        .trials
                        .iter()
                        .filter(|t| t.subject_id == subject && t.stimulus == stim && sa.get(&t.id) == Some(Split::Train))
                        .count();
                    // 15 trials: 10 or 11 train, dealt two full rounds first.
                    assert!(train >= (per_class * 2) / 3, "seed {seed} {subject} stim {stim}: {train}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn split_partition_and_ratio_bounds(counts in proptest::collection::vec(3usize..60, 1..6), seed in any::<u64>()) {
            let named: Vec<(String, usize)> = counts.iter().enumerate().map(|(i, &n)| (format!("co2a{i:07}"), n)).collect();
            let refs: Vec<(&str, usize)> = named.iter().map(|(s, n)| (s.as_str(), *n)).collect();
            let m = toy_manifest(&refs);
            let ratios = [0.7, 0.2, 0.1];
            let sa = split_within_subject(&m, ratios, seed).unwrap();
            prop_assert_eq!(sa.assignment.len(), m.trials.len());
            for t in &m.trials {
                prop_assert!(sa.get(&t.id).is_some());
            }
            for (_, c) in split_summary(&m, &sa) {
                let total: usize = c.iter().sum();
                for i in 0..3 {
                    let frac = c[i] as f64 / total as f64;
                    prop_assert!((frac - ratios[i]).abs() <= 1.0 / total as f64 + 1e-12);
                }
            }
        }
    }
}
