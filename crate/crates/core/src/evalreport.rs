//! Confusion-matrix metrics, original-vs-disguised comparisons and the
//! constraint-regime ablation table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classifier::{head_labels, Classifier, ClassifierError, Task, TrainedModel};
use crate::disguiser::{ConstraintSet, DisguiseError, DisguiserModel};
use crate::topomap::{EegImage, Provenance};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions for {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("binary metrics need a 2×2 matrix, got {0}×{0}")]
    NotBinary(usize),
    #[error("missing constraint regime {0}")]
    MissingRegime(&'static str),
    #[error("no evaluation classifier has a {0:?} head")]
    MissingEvaluator(Task),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Disguise(#[from] DisguiseError),
}

/// `counts[truth][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self { k, counts: vec![vec![0; k]; k] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| self.trace() as f64 / t as f64)
    }

    /// `(TP, FP, TN, FN)` with class 1 (alcoholic) as the positive class.
    pub fn binary_counts(&self) -> Option<(u64, u64, u64, u64)> {
        (self.k == 2).then(|| (self.counts[1][1], self.counts[0][1], self.counts[0][0], self.counts[1][0]))
    }
}

pub fn confusion(preds: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truth.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), truth: truth.len() });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(truth) {
        if let Some(&label) = [p, t].iter().find(|&&l| l >= k) {
            return Err(EvalError::LabelOutOfRange { label, k });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    /// Absent when TP + FN = 0.
    pub sensitivity: Option<f64>,
    /// Absent when TN + FP = 0.
    pub specificity: Option<f64>,
}

pub fn binary_metrics(cm: &ConfusionMatrix) -> Result<BinaryMetrics, EvalError> {
    let (tp, fp, tn, fn_) = cm.binary_counts().ok_or(EvalError::NotBinary(cm.k))?;
    let total = tp + fp + tn + fn_;
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    Ok(BinaryMetrics {
        accuracy: (tp + tn) as f64 / total as f64,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    })
}

/// Metrics of one head on one image set, with the predictions they were
/// computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub classes: Vec<String>,
    pub predictions: Vec<usize>,
    pub truth: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl TaskMetrics {
    pub fn from_predictions(
        task: Task,
        classes: Vec<String>,
        predictions: Vec<usize>,
        truth: Vec<usize>,
    ) -> Result<Self, EvalError> {
        let cm = confusion(&predictions, &truth, classes.len())?;
        let accuracy = cm.accuracy().ok_or(EvalError::EmptyMatrix)?;
        let (sensitivity, specificity) = if task == Task::Alcoholism {
            let b = binary_metrics(&cm)?;
            (b.sensitivity, b.specificity)
        } else {
            (None, None)
        };
        Ok(Self { task, classes, predictions, truth, confusion: cm, accuracy, sensitivity, specificity })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub provenance: Provenance,
    pub num_images: usize,
    pub model_checksum: String,
    pub tasks: Vec<TaskMetrics>,
    pub config: Value,
}

/// Hex SHA-256 of a model's serialized checkpoint.
pub fn model_checksum(model: &TrainedModel) -> String {
    hex::encode(Sha256::digest(model.to_checkpoint().to_bytes()))
}

/// Per-head predictions of `classifier`, one `TaskMetrics` per head.
pub fn evaluate_classifier(classifier: &Classifier, images: &[&EegImage]) -> Result<Vec<TaskMetrics>, EvalError> {
    if images.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let truth = head_labels(&classifier.config, images)?;
    let preds = classifier.predict_batch(images)?;
    preds
        .into_iter()
        .zip(truth)
        .zip(&classifier.config.heads)
        .map(|((p, t), h)| TaskMetrics::from_predictions(p.task, h.classes.clone(), p.labels, t))
        .collect()
}

/// Evaluates every head of `model`. All images must share one provenance.
pub fn evaluate_model(
    model: &TrainedModel,
    images: &[&EegImage],
    split: &str,
    config: Value,
) -> Result<MetricsReport, EvalError> {
    let tasks = evaluate_classifier(&model.classifier, images)?;
    Ok(MetricsReport {
        split: split.to_string(),
        provenance: images[0].provenance,
        num_images: images.len(),
        model_checksum: model_checksum(model),
        tasks,
        config,
    })
}

impl MetricsReport {
    /// Recomputes all metrics from the stored predictions.
    pub fn recompute(&self) -> Result<Self, EvalError> {
        let tasks = self
            .tasks
            .iter()
            .map(|t| TaskMetrics::from_predictions(t.task, t.classes.clone(), t.predictions.clone(), t.truth.clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self { tasks, ..self.clone() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "split {} ({:?}, {} images), model {}\n",
            self.split,
            self.provenance,
            self.num_images,
            &self.model_checksum[..12.min(self.model_checksum.len())]
        );
        let _ = writeln!(s, "{:<12} {:>9} {:>11} {:>11}", "task", "accuracy", "sensitivity", "specificity");
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "{:<12} {:>9} {:>11} {:>11}",
                t.task.as_str(),
                pct(Some(t.accuracy)),
                pct(t.sensitivity),
                pct(t.specificity)
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,provenance,task,n,accuracy,sensitivity,specificity\n");
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "{},{:?},{},{},{},{},{}",
                self.split,
                self.provenance,
                t.task.as_str(),
                t.truth.len(),
                t.accuracy,
                opt(t.sensitivity),
                opt(t.specificity)
            );
        }
        s
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

// ----------------------------------------------------------------- ablation

/// Published reference grid in percent: ID acc, alcoholism sensitivity,
/// alcoholism specificity, stimulus acc. Annotations only.
pub const PAPER_REFERENCE: [(&str, [f64; 4]); 5] = [
    ("Original", [97.46, 91.29, 95.44, 61.66]),
    ("Baseline", [0.48, 65.17, 35.41, 37.79]),
    ("+Alc.", [9.19, 72.79, 91.56, 43.35]),
    ("+Sti.", [21.19, 78.91, 62.38, 52.61]),
    ("+Alc.&Sti.", [48.97, 93.47, 64.59, 50.41]),
];

pub const METRIC_COLUMNS: [&str; 4] = ["ID Acc.", "Alcoholism Sens.", "Alcoholism Spec.", "Stimulus Acc."];

pub fn regime_label(c: ConstraintSet) -> &'static str {
    match c.as_str() {
        "none" => "Baseline",
        "alc" => "+Alc.",
        "sti" => "+Sti.",
        _ => "+Alc.&Sti.",
    }
}

fn paper_row(label: &str) -> [f64; 4] {
    PAPER_REFERENCE.iter().find(|(l, _)| *l == label).map(|(_, v)| *v).expect("known row label")
}

/// Evaluation classifiers held fixed across regimes; each task is served by
/// the first classifier with a head for it.
pub struct Evaluators<'a> {
    pub classifiers: Vec<&'a Classifier>,
}

impl Evaluators<'_> {
    fn metrics(&self, task: Task, images: &[&EegImage]) -> Result<TaskMetrics, EvalError> {
        let c = self
            .classifiers
            .iter()
            .find(|c| c.config.head_index(task).is_some())
            .ok_or(EvalError::MissingEvaluator(task))?;
        let hi = c.config.head_index(task).expect("checked");
        Ok(evaluate_classifier(c, images)?.swap_remove(hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub id_acc: f64,
    pub alc_acc: f64,
    pub alc_sens: Option<f64>,
    pub alc_spec: Option<f64>,
    pub stim_acc: f64,
    /// Disguised alcoholism accuracy over original; 1 for the reference row.
    pub alc_retention: f64,
    /// Published values for this row, percent.
    pub paper: [f64; 4],
}

impl AblationRow {
    pub fn grid(&self) -> [Option<f64>; 4] {
        [Some(self.id_acc), self.alc_sens, self.alc_spec, Some(self.stim_acc)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: String,
    pub num_images: usize,
    pub reference: AblationRow,
    pub regimes: Vec<AblationRow>,
    pub config: Value,
}

fn row(label: &str, ev: &Evaluators, images: &[&EegImage], original_alc: Option<f64>) -> Result<AblationRow, EvalError> {
    let id = ev.metrics(Task::Identity, images)?;
    let alc = ev.metrics(Task::Alcoholism, images)?;
    let stim = ev.metrics(Task::Stimulus, images)?;
    let alc_retention = match original_alc {
        Some(o) if o > 0.0 => alc.accuracy / o,
        Some(_) => 0.0,
        None => 1.0,
    };
    Ok(AblationRow {
        label: label.into(),
        id_acc: id.accuracy,
        alc_acc: alc.accuracy,
        alc_sens: alc.sensitivity,
        alc_spec: alc.specificity,
        stim_acc: stim.accuracy,
        alc_retention,
        paper: paper_row(label),
    })
}

/// Reference row on the originals and one row per regime on the same
/// images passed through that regime's disguiser.
pub fn ablation_report(
    evaluators: &Evaluators,
    originals: &[&EegImage],
    disguisers: &BTreeMap<&'static str, &DisguiserModel>,
    split: &str,
    config: Value,
) -> Result<AblationReport, EvalError> {
    let reference = row("Original", evaluators, originals, None)?;
    let mut regimes = Vec::new();
    for c in ConstraintSet::ALL {
        let model = disguisers.get(c.as_str()).ok_or(EvalError::MissingRegime(c.as_str()))?;
        let disguised = model.disguise_batch(originals)?;
        let refs: Vec<&EegImage> = disguised.iter().collect();
        regimes.push(row(regime_label(c), evaluators, &refs, Some(reference.alc_acc))?);
    }
    Ok(AblationReport { split: split.into(), num_images: originals.len(), reference, regimes, config })
}

/// Original vs disguised rows for a single disguiser.
pub fn comparison_report(
    evaluators: &Evaluators,
    originals: &[&EegImage],
    disguised: &[&EegImage],
) -> Result<[AblationRow; 2], EvalError> {
    let reference = row("Original", evaluators, originals, None)?;
    let mut d = row("+Alc.", evaluators, disguised, Some(reference.alc_acc))?;
    d.label = "Disguised".into();
    d.paper = paper_row("+Alc.");
    Ok([reference, d])
}

impl AblationReport {
    pub fn rows(&self) -> impl Iterator<Item = &AblationRow> {
        std::iter::once(&self.reference).chain(&self.regimes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned table, percent, with the published value beside each cell.
    pub fn to_text(&self) -> String {
        let mut s = format!("Disguised EEG with different semantic constraints ({} {} images)\n", self.num_images, self.split);
        let _ = write!(s, "{:<12}", "");
        for c in METRIC_COLUMNS {
            let _ = write!(s, " {c:>24}");
        }
        s.push('\n');
        for r in self.rows() {
            let _ = write!(s, "{:<12}", r.label);
            for (v, p) in r.grid().iter().zip(r.paper) {
                let _ = write!(s, " {:>24}", format!("{} (paper {p:.2})", pct(*v)));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "alcoholism accuracy retention:");
        for r in &self.regimes {
            let _ = writeln!(s, "  {:<12} {:.4}", r.label, r.alc_retention);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "row,id_acc,alc_sens,alc_spec,stim_acc,alc_acc,alc_retention,paper_id_acc,paper_alc_sens,paper_alc_spec,paper_stim_acc\n",
        );
        for r in self.rows() {
            let g = r.grid();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.label,
                opt(g[0]),
                opt(g[1]),
                opt(g[2]),
                opt(g[3]),
                r.alc_acc,
                r.alc_retention,
                r.paper[0],
                r.paper[1],
                r.paper[2],
                r.paper[3]
            );
        }
        s
    }

    /// Grouped bar chart: one group per metric, one bar per row; published
    /// values drawn as tick marks.
    pub fn to_svg(&self) -> String {
        const COLORS: [&str; 5] = ["#444444", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
        let (bar, gap, group_gap, plot_h, left, top) = (18.0, 2.0, 30.0, 240.0, 50.0, 20.0);
        let rows: Vec<&AblationRow> = self.rows().collect();
        let group_w = rows.len() as f64 * (bar + gap);
        let width = left + METRIC_COLUMNS.len() as f64 * (group_w + group_gap) + 20.0;
        let height = top + plot_h + 80.0;
        let y = |v: f64| top + plot_h * (1.0 - v / 100.0);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        for t in [0.0, 25.0, 50.0, 75.0, 100.0] {
            let _ = writeln!(
                s,
                "<line x1=\"{left}\" x2=\"{}\" y1=\"{yy}\" y2=\"{yy}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{t}</text>",
                width - 20.0,
                left - 4.0,
                y(t) + 4.0,
                yy = y(t)
            );
        }
        for (ci, name) in METRIC_COLUMNS.iter().enumerate() {
            let gx = left + ci as f64 * (group_w + group_gap) + group_gap / 2.0;
            for (ri, r) in rows.iter().enumerate() {
                let x = gx + ri as f64 * (bar + gap);
                let v = 100.0 * r.grid()[ci].unwrap_or(0.0);
                let _ = writeln!(
                    s,
                    "<rect x=\"{x}\" y=\"{}\" width=\"{bar}\" height=\"{}\" fill=\"{}\"><title>{} {name}: {v:.2}</title></rect>",
                    y(v),
                    plot_h * v / 100.0,
                    COLORS[ri % COLORS.len()],
                    r.label
                );
                let _ = writeln!(
                    s,
                    "<line x1=\"{x}\" x2=\"{}\" y1=\"{py}\" y2=\"{py}\" stroke=\"black\" stroke-dasharray=\"2,1\"/>",
                    x + bar,
                    py = y(r.paper[ci])
                );
            }
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{name}</text>",
                gx + group_w / 2.0,
                top + plot_h + 16.0
            );
        }
        for (ri, r) in rows.iter().enumerate() {
            let lx = left + ri as f64 * 110.0;
            let ly = top + plot_h + 40.0;
            let _ = writeln!(
                s,
                "<rect x=\"{lx}\" y=\"{ly}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
                COLORS[ri % COLORS.len()],
                lx + 14.0,
                ly + 9.0,
                xml_escape(&r.label)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{left}\" y=\"{}\">dashed ticks: published values</text>",
            top + plot_h + 70.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
