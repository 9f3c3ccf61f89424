//! Residual classifiers over EEG images: identity, alcoholism and stimulus
//! heads on a ResNet-18/34/50 trunk.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{Alcoholism, STIMULUS_CLASSES};
use crate::nn::{
    softmax_rows, Adam, Checkpoint, CheckpointError, Conv2d, Graph, Init, Linear, NetworkRecord, Norm, NormKind,
    ParamId, ParamStore, Real, Tensor, Var,
};
use crate::topomap::{EegImage, IMAGE_CHANNELS};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("joint training with dummy images is not defined for the identity task")]
    JointIdentityUnsupported,
    #[error("joint training requested without dummy images")]
    MissingDummySet,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("image shape {got:?} does not match the network input {expected:?}")]
    ShapeMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("image {index} has no label for task {task:?}")]
    MissingLabel { index: usize, task: Task },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Identity,
    Alcoholism,
    Stimulus,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Identity => "identity",
            Task::Alcoholism => "alcoholism",
            Task::Stimulus => "stimulus",
        }
    }

    /// Class label of `img` under this task; identity looks the subject up
    /// in `classes`.
    pub fn label(self, img: &EegImage, classes: &[String]) -> Option<usize> {
        match self {
            Task::Identity => classes.iter().position(|c| *c == img.subject_id),
            Task::Alcoholism => Some(img.alcoholism.index()),
            Task::Stimulus => (img.stimulus < STIMULUS_CLASSES).then_some(img.stimulus),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" | "id" => Ok(Task::Identity),
            "alcoholism" | "alc" => Ok(Task::Alcoholism),
            "stimulus" | "sti" => Ok(Task::Stimulus),
            other => Err(format!("unknown task {other:?} (identity|alcoholism|stimulus)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub task: Task,
    pub classes: Vec<String>,
}

impl Head {
    pub fn alcoholism() -> Self {
        Self { task: Task::Alcoholism, classes: Alcoholism::class_names() }
    }

    pub fn stimulus(vocab: &[String]) -> Self {
        Self { task: Task::Stimulus, classes: vocab.to_vec() }
    }

    pub fn identity(subjects: &[String]) -> Self {
        Self { task: Task::Identity, classes: subjects.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stem {
    /// 3×3 stride-1 convolution, no pooling.
    Small,
    /// 7×7 stride-2 convolution followed by 3×3 stride-2 max pooling.
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub depth: usize,
    pub heads: Vec<Head>,
    /// Channels of the first stage; later stages double it.
    pub width: usize,
    pub stem: Stem,
    pub image_size: [usize; 2],
}

impl NetConfig {
    pub fn new(depth: usize, heads: Vec<Head>, width: usize, image_size: usize) -> Self {
        Self { depth, heads, width, stem: Stem::Small, image_size: [image_size, image_size] }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |s: String| Err(ClassifierError::InvalidConfig(s));
        if ![18, 34, 50].contains(&self.depth) {
            return bad(format!("depth {} not in {{18, 34, 50}}", self.depth));
        }
        if self.heads.is_empty() {
            return bad("no classification head".into());
        }
        for h in &self.heads {
            let ok = match h.task {
                Task::Alcoholism => h.classes.len() == 2,
                Task::Stimulus => h.classes.len() == STIMULUS_CLASSES,
                Task::Identity => h.classes.len() >= 2,
            };
            if !ok {
                return bad(format!("{} head with {} classes", h.task.as_str(), h.classes.len()));
            }
        }
        if self.width == 0 || self.image_size.iter().any(|&s| s < 4) {
            return bad(format!("width {} / image size {:?}", self.width, self.image_size));
        }
        Ok(())
    }

    fn bottleneck(&self) -> bool {
        self.depth == 50
    }

    fn blocks(&self) -> [usize; 4] {
        match self.depth {
            18 => [2, 2, 2, 2],
            _ => [3, 4, 6, 3],
        }
    }

    pub fn head_index(&self, task: Task) -> Option<usize> {
        self.heads.iter().position(|h| h.task == task)
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: Norm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let init = Init::KaimingOut { fan_out: cout * k * k };
        let conv = Conv2d::new(store, &format!("{name}.conv"), cin, cout, k, stride, k / 2, false, init, rng);
        let bn = Norm::new(store, &format!("{name}.bn"), cout, NormKind::Batch, rng);
        Self { conv, bn }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, train: bool) -> Var {
        let y = self.conv.forward(g, s, x);
        self.bn.forward(g, s, y, train)
    }
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
}

impl Block {
    fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, train: bool) -> Var {
        let mut y = x;
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            y = c.forward(g, s, y, train);
            if i != last {
                y = g.relu(y);
            }
        }
        let skip = match &self.shortcut {
            Some(sc) => sc.forward(g, s, x, train),
            None => x,
        };
        let y = g.add(y, skip);
        g.relu(y)
    }
}

/// A ResNet trunk with one linear head per task.
#[derive(Debug, Clone)]
pub struct ResNet {
    stem: ConvBn,
    pool: bool,
    blocks: Vec<Block>,
    heads: Vec<Linear>,
}

impl ResNet {
    fn build(config: &NetConfig, store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) -> Self {
        let w = config.width;
        let (stem, pool) = match config.stem {
            Stem::Small => (ConvBn::new(store, "stem", IMAGE_CHANNELS, w, 3, 1, rng), false),
            Stem::Wide => (ConvBn::new(store, "stem", IMAGE_CHANNELS, w, 7, 2, rng), true),
        };
        let expansion = if config.bottleneck() { 4 } else { 1 };
        let mut blocks = Vec::new();
        let mut cin = w;
        for (stage, &n) in config.blocks().iter().enumerate() {
            let planes = w << stage;
            for b in 0..n {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                let name = format!("layer{}.{b}", stage + 1);
                let cout = planes * expansion;
                let convs = if config.bottleneck() {
                    vec![
                        ConvBn::new(store, &format!("{name}.c1"), cin, planes, 1, 1, rng),
                        ConvBn::new(store, &format!("{name}.c2"), planes, planes, 3, stride, rng),
                        ConvBn::new(store, &format!("{name}.c3"), planes, cout, 1, 1, rng),
                    ]
                } else {
                    vec![
                        ConvBn::new(store, &format!("{name}.c1"), cin, planes, 3, stride, rng),
                        ConvBn::new(store, &format!("{name}.c2"), planes, planes, 3, 1, rng),
                    ]
                };
                let shortcut = (stride != 1 || cin != cout)
                    .then(|| ConvBn::new(store, &format!("{name}.down"), cin, cout, 1, stride, rng));
                blocks.push(Block { convs, shortcut });
                cin = cout;
            }
        }
        let heads = config
            .heads
            .iter()
            .map(|h| Linear::new(store, &format!("fc.{}", h.task.as_str()), cin, h.classes.len(), rng))
            .collect();
        Self { stem, pool, blocks, heads }
    }

    /// Logits per head for inputs in `[0, 1]` (mapped to `[-1, 1]` first).
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, train: bool) -> Vec<Var> {
        let x = g.affine(x, 2.0, -1.0);
        let mut y = self.stem.forward(g, s, x, train);
        y = g.relu(y);
        if self.pool {
            y = g.max_pool2d(y, 3, 2, 1);
        }
        for b in &self.blocks {
            y = b.forward(g, s, y, train);
        }
        let feat = g.global_avg_pool(y);
        self.heads.iter().map(|h| h.forward(g, s, feat)).collect()
    }

    /// Stem conv, batch norm (training statistics), ReLU and the first
    /// block's first conv, with no input mapping. For gradient checks.
    pub fn stem_truncation<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let y = self.stem.forward(g, s, x, true);
        let y = g.relu(y);
        self.blocks[0].convs[0].conv.forward(g, s, y)
    }

    pub fn stem_weight(&self) -> ParamId {
        self.stem.conv.weight
    }
}

/// A network plus its parameters.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub config: NetConfig,
    pub net: ResNet,
    pub store: ParamStore<f32>,
}

impl Classifier {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = ResNet::build(&config, &mut store, &mut rng);
        Ok(Self { config, net, store })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [IMAGE_CHANNELS, self.config.image_size[0], self.config.image_size[1]]
    }

    pub fn check_images(&self, images: &[&EegImage]) -> Result<(), ClassifierError> {
        let expected = self.input_shape();
        for img in images {
            let got = [IMAGE_CHANNELS, img.height, img.width];
            if got != expected {
                return Err(ClassifierError::ShapeMismatch { expected, got });
            }
        }
        Ok(())
    }

    /// Per-head logits in inference mode.
    pub fn logits(&self, images: &[&EegImage]) -> Result<Vec<Vec<f32>>, ClassifierError> {
        self.check_images(images)?;
        let mut out = vec![Vec::new(); self.config.heads.len()];
        for chunk in images.chunks(EVAL_BATCH) {
            let mut g = Graph::new();
            let x = g.input(batch_tensor(chunk));
            let heads = self.net.forward(&mut g, &self.store, x, false);
            for (o, h) in out.iter_mut().zip(heads) {
                o.extend_from_slice(g.value(h).data());
            }
        }
        Ok(out)
    }

    /// Class distributions and argmax labels for every head.
    pub fn predict_batch(&self, images: &[&EegImage]) -> Result<Vec<HeadPredictions>, ClassifierError> {
        let logits = self.logits(images)?;
        Ok(self
            .config
            .heads
            .iter()
            .zip(logits)
            .map(|(h, l)| {
                let k = h.classes.len();
                let probs = softmax_rows(&l, k);
                let labels = probs.chunks(k).map(argmax).collect();
                HeadPredictions { task: h.task, probs, labels, classes: k }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadPredictions {
    pub task: Task,
    pub classes: usize,
    /// Row-major `N × classes`.
    pub probs: Vec<f32>,
    pub labels: Vec<usize>,
}

impl HeadPredictions {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 128;

/// Stacks images into an `[N, 3, H, W]` tensor.
pub fn batch_tensor<T: Real>(images: &[&EegImage]) -> Tensor<T> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut data = Vec::with_capacity(images.len() * IMAGE_CHANNELS * h * w);
    for img in images {
        data.extend(img.pixels.iter().map(|&p| T::lit(p as f64)));
    }
    Tensor::from_vec(&[images.len(), IMAGE_CHANNELS, h, w], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 50, batch: 64, lr: 1e-3, seed: 0, patience: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub classifier: Classifier,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub seed: u64,
    pub joint: bool,
    /// Free-form provenance (run configuration, split, dataset sizes).
    pub meta: Value,
}

impl TrainedModel {
    pub fn best_val_acc(&self) -> f64 {
        self.history.iter().find(|r| r.epoch == self.best_epoch).map_or(0.0, |r| r.val_acc)
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc));
        }
        s
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "classifier",
            "history": self.history,
            "best_epoch": self.best_epoch,
            "seed": self.seed,
            "joint": self.joint,
            "meta": self.meta,
        }));
        let cfg = serde_json::to_value(&self.classifier.config).expect("config serializes");
        ck.push(NetworkRecord::from_store("classifier", cfg, &self.classifier.store));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ClassifierError> {
        let bad = |s: &str| ClassifierError::InvalidConfig(format!("checkpoint: {s}"));
        let classifier = load_classifier(ck, "classifier")?;
        let m = &ck.meta;
        Ok(Self {
            classifier,
            history: serde_json::from_value(m["history"].clone()).map_err(|_| bad("history"))?,
            best_epoch: m["best_epoch"].as_u64().ok_or_else(|| bad("best_epoch"))? as usize,
            seed: m["seed"].as_u64().ok_or_else(|| bad("seed"))?,
            joint: m["joint"].as_bool().unwrap_or(false),
            meta: m["meta"].clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Rebuilds a classifier from a named network of a checkpoint.
pub fn load_classifier(ck: &Checkpoint, name: &str) -> Result<Classifier, ClassifierError> {
    let rec = ck.network(name)?;
    let config: NetConfig = serde_json::from_value(rec.config.clone())
        .map_err(|e| ClassifierError::InvalidConfig(format!("checkpoint config: {e}")))?;
    let mut c = Classifier::new(config, 0)?;
    rec.load_into(&mut c.store)?;
    Ok(c)
}

/// Labels of every image for every head.
pub fn head_labels(config: &NetConfig, images: &[&EegImage]) -> Result<Vec<Vec<usize>>, ClassifierError> {
    config
        .heads
        .iter()
        .map(|h| {
            images
                .iter()
                .enumerate()
                .map(|(i, img)| h.task.label(img, &h.classes).ok_or(ClassifierError::MissingLabel { index: i, task: h.task }))
                .collect()
        })
        .collect()
}

/// Mean cross-entropy summed over heads, and mean per-head accuracy.
fn evaluate(c: &Classifier, images: &[&EegImage], labels: &[Vec<usize>]) -> Result<(f64, f64), ClassifierError> {
    let logits = c.logits(images)?;
    let mut loss = 0.0;
    let mut acc = 0.0;
    for ((h, l), y) in c.config.heads.iter().zip(&logits).zip(labels) {
        let k = h.classes.len();
        let probs = softmax_rows(l, k);
        let mut correct = 0usize;
        for (i, row) in probs.chunks(k).enumerate() {
            loss -= (row[y[i]].max(f32::MIN_POSITIVE) as f64).ln() / images.len() as f64;
            correct += usize::from(argmax(row) == y[i]);
        }
        acc += correct as f64 / images.len() as f64;
    }
    Ok((loss, acc / c.config.heads.len() as f64))
}

/// Adam on the summed head cross-entropies; the returned model carries the
/// parameters of the epoch with the best validation accuracy (earliest on
/// ties). With `dummies`, dummy images join the training set as-is.
pub fn train_classifier(
    mut model: Classifier,
    train: &[&EegImage],
    val: &[&EegImage],
    dummies: Option<&[&EegImage]>,
    opts: &TrainOptions,
) -> Result<TrainedModel, ClassifierError> {
    let joint = dummies.is_some();
    if joint && model.config.heads.iter().any(|h| h.task == Task::Identity) {
        return Err(ClassifierError::JointIdentityUnsupported);
    }
    let mut all: Vec<&EegImage> = train.to_vec();
    if let Some(d) = dummies {
        if d.is_empty() {
            return Err(ClassifierError::MissingDummySet);
        }
        all.extend_from_slice(d);
    }
    if all.is_empty() {
        return Err(ClassifierError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(ClassifierError::EmptySet("validation"));
    }
    model.check_images(&all)?;
    model.check_images(val)?;
    let labels = head_labels(&model.config, &all)?;
    let val_labels = head_labels(&model.config, val)?;

    let mut adam = Adam::new(opts.lr, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let batch = opts.batch.max(2);

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for idx in order.chunks(batch) {
            // Batch statistics need more than one sample.
            if idx.len() < 2 {
                continue;
            }
            let imgs: Vec<&EegImage> = idx.iter().map(|&i| all[i]).collect();
            let mut g = Graph::new();
            let x = g.input(batch_tensor(&imgs));
            let heads = model.net.forward(&mut g, &model.store, x, true);
            let mut terms = Vec::with_capacity(heads.len());
            for (hi, &h) in heads.iter().enumerate() {
                let y: Vec<usize> = idx.iter().map(|&i| labels[hi][i]).collect();
                let k = model.config.heads[hi].classes.len();
                for (r, row) in g.value(h).data().chunks(k).enumerate() {
                    correct += usize::from(argmax(row) == y[r]);
                }
                terms.push((g.cross_entropy(h, &y), 1.0));
            }
            let loss = g.weighted_sum(&terms);
            let lv = g.scalar(loss);
            if !lv.is_finite() {
                return Err(ClassifierError::Diverged { epoch });
            }
            loss_sum += lv * idx.len() as f64;
            seen += idx.len();
            let grads = g.backward(loss);
            model.store.apply_updates(&g.take_updates());
            adam.step(&mut model.store, &grads);
        }
        let (val_loss, val_acc) = evaluate(&model, val, &val_labels)?;
        if !val_loss.is_finite() {
            return Err(ClassifierError::Diverged { epoch });
        }
        let heads = model.config.heads.len();
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: correct as f64 / (seen.max(1) * heads) as f64,
            val_loss,
            val_acc,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            best = Some((val_acc, epoch, model.store.clone()));
        }
        if let (Some(p), Some((_, be, _))) = (opts.patience, &best) {
            if epoch - be >= p {
                break;
            }
        }
    }
    let (_, best_epoch, store) = best.ok_or(ClassifierError::EmptySet("epoch"))?;
    model.store.copy_values_from(&store);
    Ok(TrainedModel { classifier: model, history, best_epoch, seed: opts.seed, joint, meta: Value::Null })
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::RngExt;

    fn wide(depth: usize) -> NetConfig {
        let head = Head { task: Task::Identity, classes: (0..1000).map(|i| i.to_string()).collect() };
        NetConfig { depth, heads: vec![head], width: 64, stem: Stem::Wide, image_size: [224, 224] }
    }

    #[test]
    fn parameter_counts_match_reference_block_arithmetic() {
        // Reference torchvision counts at width 64, 1000 classes.
        let r18 = Classifier::new(wide(18), 0).unwrap().num_params();
        assert_eq!(r18, 11_689_512);
        let r50 = Classifier::new(wide(50), 0).unwrap().num_params();
        assert_eq!(r50, 25_557_032);
        // The small stem swaps a 7×7 kernel for a 3×3 one: 3·64·(49−9) fewer.
        let mut small = wide(18);
        small.stem = Stem::Small;
        assert_eq!(Classifier::new(small, 0).unwrap().num_params(), 11_689_512 - 3 * 64 * 40);
        assert!(r50 > r18);
    }

    #[test]
    fn softmax_heads_and_determinism() {
        let cfg = NetConfig::new(18, vec![Head::alcoholism()], 4, 16);
        let a = Classifier::new(cfg.clone(), 7).unwrap();
        let b = Classifier::new(cfg, 7).unwrap();
        for (x, y) in a.store.entries().iter().zip(b.store.entries()) {
            assert_eq!(x.value, y.value);
        }
        let imgs = brightest_channel_set(4, 16, 1);
        let refs: Vec<&EegImage> = imgs.iter().collect();
        let p = a.predict_batch(&refs).unwrap();
        assert_eq!(p[0].labels.len(), 4);
        for i in 0..4 {
            let s: f32 = p[0].row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6 && p[0].row(i).iter().all(|&v| v >= 0.0));
        }
        assert_eq!(a.predict_batch(&refs).unwrap(), p);
        let rev: Vec<&EegImage> = refs.iter().rev().copied().collect();
        let q = a.predict_batch(&rev).unwrap();
        for i in 0..4 {
            for (x, y) in p[0].row(i).iter().zip(q[0].row(3 - i)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        let wrong = brightest_channel_set(1, 8, 1);
        assert!(matches!(a.predict_batch(&[&wrong[0]]), Err(ClassifierError::ShapeMismatch { .. })));
    }

    #[test]
    fn invalid_configs() {
        assert!(Classifier::new(NetConfig::new(20, vec![Head::alcoholism()], 4, 16), 0).is_err());
        let bad = Head { task: Task::Stimulus, classes: vec!["a".into()] };
        assert!(Classifier::new(NetConfig::new(18, vec![bad], 4, 16), 0).is_err());
    }

    #[test]
    fn stem_truncation_gradient_check() {
        // Stem conv + batch norm + ReLU + first 3×3 conv, in f64.
        let cfg = NetConfig::new(18, vec![Head::alcoholism()], 4, 8);
        let c = Classifier::new(cfg, 3).unwrap();
        let store: ParamStore<f64> = c.store.cast();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0: Vec<f64> = (0..2 * 3 * 8 * 8).map(|_| rng.random_range(0.0..1.0)).collect();
        let loss_of = |s: &ParamStore<f64>| {
            let mut g = Graph::new();
            let x = g.input(Tensor::from_vec(&[2, 3, 8, 8], x0.clone()));
            let y = c.net.stem_truncation(&mut g, s, x);
            let l = g.mse_const(y, 0.1);
            (g, l)
        };
        let (mut g, l) = loss_of(&store);
        let grads = g.backward(l);
        let weight = c.net.stem_weight();
        let analytic = grads.get(&store, weight).unwrap().clone();
        let h = 1e-5;
        for _ in 0..10 {
            let i = rng.random_range(0..analytic.len());
            let eval = |d: f64| {
                let mut s = store.clone();
                s.get_mut(weight).data_mut()[i] += d;
                let (g, l) = loss_of(&s);
                g.scalar(l)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((a - numeric).abs() <= 1e-4 * numeric.abs().max(1e-3), "{a} vs {numeric}");
        }
    }

    #[test]
    fn learns_separable_set_and_checkpoint_round_trips() {
        let train = brightest_channel_set(60, 8, 10);
        let val = brightest_channel_set(30, 8, 11);
        let tr: Vec<&EegImage> = train.iter().collect();
        let va: Vec<&EegImage> = val.iter().collect();
        let cfg = NetConfig::new(18, vec![three_class_head()], 4, 8);
        let opts = TrainOptions { epochs: 6, batch: 16, lr: 3e-3, seed: 1, patience: None };
        let m = train_classifier(Classifier::new(cfg, 1).unwrap(), &tr, &va, None, &opts).unwrap();
        let max = m.history.iter().map(|r| r.val_acc).fold(0.0, f64::max);
        assert_eq!(m.best_val_acc(), max);
        assert!(m.history.iter().all(|r| r.train_loss.is_finite()));
        assert!(max >= 0.9, "{:?}", m.history);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p).unwrap();
        let back = TrainedModel::load(&p).unwrap();
        assert_eq!(back.history, m.history);
        assert_eq!(back.classifier.predict_batch(&va).unwrap(), m.classifier.predict_batch(&va).unwrap());
    }

    #[test]
    fn joint_identity_is_rejected() {
        let imgs = brightest_channel_set(6, 8, 0);
        let r: Vec<&EegImage> = imgs.iter().collect();
        let cfg = NetConfig::new(18, vec![three_class_head()], 4, 8);
        let res = train_classifier(Classifier::new(cfg, 0).unwrap(), &r, &r, Some(&r), &TrainOptions::default());
        assert!(matches!(res, Err(ClassifierError::JointIdentityUnsupported)));
    }
}
