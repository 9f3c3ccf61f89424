//! Cycle-consistent translation of real EEG images (domain X) to dummy
//! identities (domain Y), with optional task/semantic constraints from a
//! jointly trained classifier C.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{batch_tensor, head_labels, load_classifier, Classifier, ClassifierError, Head, NetConfig, Task};
use crate::nn::{Adam, Checkpoint, CheckpointError, Conv2d, Graph, Init, NetworkRecord, Norm, NormKind, ParamStore, Real, Tensor, Var};
use crate::topomap::{EegImage, Provenance, IMAGE_CHANNELS};

#[derive(Debug, thiserror::Error)]
pub enum DisguiseError {
    #[error("{0} domain is empty")]
    EmptyDomain(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite {term}")]
    Diverged { epoch: usize, batch: usize, term: &'static str },
    #[error("disguise expects a real image, got {0:?}")]
    WrongProvenance(Provenance),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {index} lacks a {task:?} label")]
    MissingLabel { index: usize, task: Task },
    #[error("invalid GAN config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Tasks whose labels C must preserve. Serialized as `none|alc|sti|both`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConstraintSet {
    pub alcoholism: bool,
    pub stimulus: bool,
}

impl ConstraintSet {
    pub const NONE: Self = Self { alcoholism: false, stimulus: false };
    pub const ALC: Self = Self { alcoholism: true, stimulus: false };
    pub const STI: Self = Self { alcoholism: false, stimulus: true };
    pub const BOTH: Self = Self { alcoholism: true, stimulus: true };
    pub const ALL: [Self; 4] = [Self::NONE, Self::ALC, Self::STI, Self::BOTH];

    pub fn is_empty(self) -> bool {
        !self.alcoholism && !self.stimulus
    }

    pub fn tasks(self) -> Vec<Task> {
        let mut t = Vec::new();
        if self.alcoholism {
            t.push(Task::Alcoholism);
        }
        if self.stimulus {
            t.push(Task::Stimulus);
        }
        t
    }

    pub fn as_str(self) -> &'static str {
        match (self.alcoholism, self.stimulus) {
            (false, false) => "none",
            (true, false) => "alc",
            (false, true) => "sti",
            (true, true) => "both",
        }
    }
}

impl From<ConstraintSet> for String {
    fn from(c: ConstraintSet) -> String {
        c.as_str().to_string()
    }
}

impl TryFrom<String> for ConstraintSet {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl std::str::FromStr for ConstraintSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::NONE),
            "alc" | "alcoholism" => Ok(Self::ALC),
            "sti" | "stimulus" => Ok(Self::STI),
            "both" => Ok(Self::BOTH),
            other => Err(format!("unknown constraint set {other:?} (none|alc|sti|both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub lambda_cycle: f64,
    pub lambda_task: f64,
    pub lambda_sem: f64,
    pub gate_threshold: f64,
    pub gate_decay: f64,
    pub lr: f64,
    pub beta1: f64,
    pub epochs: usize,
    pub batch: usize,
    pub gen_width: usize,
    pub gen_res_blocks: usize,
    pub disc_width: usize,
    pub c_depth: usize,
    pub c_width: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            lambda_cycle: 10.0,
            lambda_task: 1.0,
            lambda_sem: 1.0,
            gate_threshold: 1.0,
            gate_decay: 0.9,
            lr: 2e-4,
            beta1: 0.5,
            epochs: 100,
            batch: 16,
            gen_width: 16,
            gen_res_blocks: 4,
            disc_width: 16,
            c_depth: 18,
            c_width: 8,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), DisguiseError> {
        let bad = |s: &str| Err(DisguiseError::InvalidConfig(s.to_string()));
        let finite_nonneg = [self.lambda_cycle, self.lambda_task, self.lambda_sem, self.gate_threshold];
        if finite_nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("loss weights and gate threshold must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.gate_decay) {
            return bad("gate_decay must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.beta1) {
            return bad("lr must be positive and beta1 in [0, 1)");
        }
        if self.batch == 0 || self.gen_width == 0 || self.disc_width == 0 || self.c_width == 0 {
            return bad("batch and widths must be positive");
        }
        if ![18, 34, 50].contains(&self.c_depth) {
            return bad("c_depth must be 18, 34 or 50");
        }
        Ok(())
    }
}

fn gan_init() -> Init {
    Init::Normal(0.02)
}

#[derive(Debug, Clone)]
struct ConvIn {
    conv: Conv2d,
    norm: Norm,
}

impl ConvIn {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        s: &mut ParamStore<f32>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(s, &format!("{name}.conv"), cin, cout, k, stride, k / 2, false, gan_init(), rng);
        let norm = Norm::new(s, &format!("{name}.in"), cout, NormKind::Instance, rng);
        Self { conv, norm }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let y = self.conv.forward(g, s, x);
        self.norm.forward(g, s, y, true)
    }
}

/// Encoder (two stride-2 convolutions), residual blocks, decoder (two
/// nearest-neighbour upsampling stages) and a tanh output. Maps `[0, 1]`
/// images to `[0, 1]` images of the same size; sides must be multiples of 4.
#[derive(Debug, Clone)]
pub struct Generator {
    input: ConvIn,
    down: [ConvIn; 2],
    res: Vec<[ConvIn; 2]>,
    up: [ConvIn; 2],
    output: Conv2d,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(s: &mut ParamStore<f32>, width: usize, res_blocks: usize, rng: &mut R) -> Self {
        let w = width;
        let input = ConvIn::new(s, "in", IMAGE_CHANNELS, w, 7, 1, rng);
        let down = [ConvIn::new(s, "down1", w, 2 * w, 3, 2, rng), ConvIn::new(s, "down2", 2 * w, 4 * w, 3, 2, rng)];
        let res = (0..res_blocks)
            .map(|i| {
                [
                    ConvIn::new(s, &format!("res{i}.a"), 4 * w, 4 * w, 3, 1, rng),
                    ConvIn::new(s, &format!("res{i}.b"), 4 * w, 4 * w, 3, 1, rng),
                ]
            })
            .collect();
        let up = [ConvIn::new(s, "up1", 4 * w, 2 * w, 3, 1, rng), ConvIn::new(s, "up2", 2 * w, w, 3, 1, rng)];
        let output = Conv2d::new(s, "out", w, IMAGE_CHANNELS, 7, 1, 3, true, gan_init(), rng);
        Self { input, down, res, up, output }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let mut y = g.affine(x, 2.0, -1.0);
        y = self.input.forward(g, s, y);
        y = g.relu(y);
        for d in &self.down {
            y = d.forward(g, s, y);
            y = g.relu(y);
        }
        for [a, b] in &self.res {
            let mut r = a.forward(g, s, y);
            r = g.relu(r);
            r = b.forward(g, s, r);
            y = g.add(y, r);
        }
        for u in &self.up {
            y = g.upsample2x(y);
            y = u.forward(g, s, y);
            y = g.relu(y);
        }
        y = self.output.forward(g, s, y);
        y = g.tanh(y);
        g.affine(y, 0.5, 0.5)
    }
}

/// Three-layer patch discriminator emitting a `H/4 × W/4` score map.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    c1: Conv2d,
    c2: ConvIn,
    c3: Conv2d,
}

impl PatchDiscriminator {
    pub fn new<R: Rng + ?Sized>(s: &mut ParamStore<f32>, width: usize, rng: &mut R) -> Self {
        let w = width;
        let c1 = Conv2d::new(s, "c1", IMAGE_CHANNELS, w, 4, 2, 1, true, gan_init(), rng);
        let c2 = ConvIn {
            conv: Conv2d::new(s, "c2.conv", w, 2 * w, 4, 2, 1, false, gan_init(), rng),
            norm: Norm::new(s, "c2.in", 2 * w, NormKind::Instance, rng),
        };
        let c3 = Conv2d::new(s, "c3", 2 * w, 1, 3, 1, 1, true, gan_init(), rng);
        Self { c1, c2, c3 }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let x = g.affine(x, 2.0, -1.0);
        let mut y = self.c1.forward(g, s, x);
        y = g.leaky_relu(y, 0.2);
        y = self.c2.forward(g, s, y);
        y = g.leaky_relu(y, 0.2);
        self.c3.forward(g, s, y)
    }
}

// ------------------------------------------------------------------ losses

fn mean_sq(values: &[f64], target: f64) -> f64 {
    values.iter().map(|v| (v - target) * (v - target)).sum::<f64>() / values.len().max(1) as f64
}

/// Least-squares adversarial terms `(generator, discriminator)`:
/// `mean((d_fake−1)²)` and `½·mean((d_real−1)²) + ½·mean(d_fake²)`.
pub fn lsgan_losses(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64), DisguiseError> {
    if d_real.len() != d_fake.len() || d_real.is_empty() {
        return Err(DisguiseError::ShapeMismatch(format!("{} real vs {} fake scores", d_real.len(), d_fake.len())));
    }
    Ok((mean_sq(d_fake, 1.0), 0.5 * mean_sq(d_real, 1.0) + 0.5 * mean_sq(d_fake, 0.0)))
}

/// `mean|x − rec_x| + mean|y − rec_y|`.
pub fn cycle_loss(x: &[f64], rec_x: &[f64], y: &[f64], rec_y: &[f64]) -> Result<f64, DisguiseError> {
    if x.len() != rec_x.len() || y.len() != rec_y.len() {
        return Err(DisguiseError::ShapeMismatch("reconstruction size differs from input".into()));
    }
    let mae = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len().max(1) as f64;
    Ok(mae(x, rec_x) + mae(y, rec_y))
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|v| v - lse).collect()
}

/// Per-head C outputs for one batch: logits on `x` and on `G_X(x)`.
#[derive(Debug, Clone)]
pub struct HeadLogits {
    pub task: Task,
    pub classes: usize,
    pub on_x: Vec<f64>,
    pub on_fake: Vec<f64>,
}

/// `(task, semantic)` summed over constrained heads: cross-entropy of C(x)
/// against the true labels, and of C(G_X(x)) against argmax C(x). Both are 0
/// for an empty constraint set. Covers one translation direction; training
/// adds the same term for `y` and `G_Y(y)`.
pub fn constraint_losses(
    heads: &[HeadLogits],
    labels: &[(Task, Vec<Option<usize>>)],
    constraints: ConstraintSet,
) -> Result<(f64, f64), DisguiseError> {
    let (mut task, mut sem) = (0.0, 0.0);
    for t in constraints.tasks() {
        let h = heads.iter().find(|h| h.task == t).ok_or(DisguiseError::MissingLabel { index: 0, task: t })?;
        let y = &labels.iter().find(|(lt, _)| *lt == t).ok_or(DisguiseError::MissingLabel { index: 0, task: t })?.1;
        let n = y.len();
        if h.on_x.len() != n * h.classes || h.on_fake.len() != n * h.classes {
            return Err(DisguiseError::ShapeMismatch(format!("{t:?} logits")));
        }
        for i in 0..n {
            let yi = y[i].ok_or(DisguiseError::MissingLabel { index: i, task: t })?;
            let lx = log_softmax(&h.on_x[i * h.classes..(i + 1) * h.classes]);
            let lf = log_softmax(&h.on_fake[i * h.classes..(i + 1) * h.classes]);
            let pseudo = crate::classifier::argmax(&lx);
            task -= lx[yi] / n as f64;
            sem -= lf[pseudo] / n as f64;
        }
    }
    Ok((task, sem))
}

// ----------------------------------------------------------------- training

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GanBatchLosses {
    pub adv_g: f64,
    pub adv_d: f64,
    pub cycle: f64,
    pub task: f64,
    pub semantic: f64,
    pub total_g: f64,
    pub total_d: f64,
    pub gate: bool,
}

impl GanBatchLosses {
    fn finite_check(&self) -> Option<&'static str> {
        let terms = [
            (self.adv_g, "adv_G"),
            (self.adv_d, "adv_D"),
            (self.cycle, "cycle"),
            (self.task, "task"),
            (self.semantic, "semantic"),
            (self.total_g, "total_G"),
            (self.total_d, "total_D"),
        ];
        terms.iter().find(|(v, _)| !v.is_finite()).map(|(_, n)| *n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanEpochLog {
    pub epoch: usize,
    pub adv_g: f64,
    pub adv_d: f64,
    pub cycle: f64,
    pub task: f64,
    pub semantic: f64,
    pub total_g: f64,
    pub total_d: f64,
    pub task_ema: Option<f64>,
    pub gate: bool,
}

/// Exponential running mean of C's task loss; opens once the mean drops
/// below the threshold and never closes again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticGate {
    pub threshold: f64,
    pub decay: f64,
    pub ema: Option<f64>,
    pub open: bool,
    pub opened_at_step: Option<u64>,
    steps: u64,
}

impl SemanticGate {
    pub fn new(threshold: f64, decay: f64) -> Self {
        Self { threshold, decay, ema: None, open: false, opened_at_step: None, steps: 0 }
    }

    pub fn observe(&mut self, task_loss: f64) -> bool {
        self.steps += 1;
        let ema = match self.ema {
            None => task_loss,
            Some(m) => self.decay * m + (1.0 - self.decay) * task_loss,
        };
        self.ema = Some(ema);
        if !self.open && ema < self.threshold {
            self.open = true;
            self.opened_at_step = Some(self.steps);
        }
        self.open
    }

    pub fn factor(&self) -> f64 {
        if self.open {
            1.0
        } else {
            0.0
        }
    }
}

/// Generator pair, discriminator pair and the optional constraint
/// classifier, each with its own parameter store.
#[derive(Debug, Clone)]
pub struct DisguiserModel {
    pub config: GanConfig,
    pub constraints: ConstraintSet,
    pub image_size: [usize; 2],
    pub g_x: Generator,
    pub g_y: Generator,
    pub d_x: PatchDiscriminator,
    pub d_y: PatchDiscriminator,
    pub s_gx: ParamStore<f32>,
    pub s_gy: ParamStore<f32>,
    pub s_dx: ParamStore<f32>,
    pub s_dy: ParamStore<f32>,
    pub c: Option<Classifier>,
    pub history: Vec<GanEpochLog>,
    pub gate: SemanticGate,
    pub seed: u64,
    pub meta: Value,
}

/// Constraint-classifier heads for a constraint set.
pub fn constraint_heads(constraints: ConstraintSet, stimulus_vocab: &[String]) -> Vec<Head> {
    constraints
        .tasks()
        .into_iter()
        .map(|t| match t {
            Task::Alcoholism => Head::alcoholism(),
            _ => Head::stimulus(stimulus_vocab),
        })
        .collect()
}

impl DisguiserModel {
    pub fn new(
        config: GanConfig,
        constraints: ConstraintSet,
        image_size: [usize; 2],
        stimulus_vocab: &[String],
        seed: u64,
    ) -> Result<Self, DisguiseError> {
        config.validate()?;
        if image_size.iter().any(|&s| s == 0 || s % 4 != 0) {
            return Err(DisguiseError::InvalidConfig(format!("image size {image_size:?} must be a positive multiple of 4")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s_gx, mut s_gy, mut s_dx, mut s_dy) =
            (ParamStore::new(), ParamStore::new(), ParamStore::new(), ParamStore::new());
        let g_x = Generator::new(&mut s_gx, config.gen_width, config.gen_res_blocks, &mut rng);
        let g_y = Generator::new(&mut s_gy, config.gen_width, config.gen_res_blocks, &mut rng);
        let d_x = PatchDiscriminator::new(&mut s_dx, config.disc_width, &mut rng);
        let d_y = PatchDiscriminator::new(&mut s_dy, config.disc_width, &mut rng);
        let c = if constraints.is_empty() {
            None
        } else {
            let mut nc = NetConfig::new(config.c_depth, constraint_heads(constraints, stimulus_vocab), config.c_width, image_size[0]);
            nc.image_size = image_size;
            Some(Classifier::new(nc, seed ^ 0xC1A5_51F1)?)
        };
        let gate = SemanticGate::new(config.gate_threshold, config.gate_decay);
        Ok(Self {
            config,
            constraints,
            image_size,
            g_x,
            g_y,
            d_x,
            d_y,
            s_gx,
            s_gy,
            s_dx,
            s_dy,
            c,
            history: Vec::new(),
            gate,
            seed,
            meta: Value::Null,
        })
    }

    fn check(&self, imgs: &[&EegImage]) -> Result<(), DisguiseError> {
        for img in imgs {
            if [img.height, img.width] != self.image_size {
                return Err(DisguiseError::ShapeMismatch(format!(
                    "image {}×{} vs model {:?}",
                    img.height, img.width, self.image_size
                )));
            }
        }
        Ok(())
    }

    /// `G_X` applied to real images; labels and subject carried through.
    pub fn disguise_batch(&self, images: &[&EegImage]) -> Result<Vec<EegImage>, DisguiseError> {
        if let Some(img) = images.iter().find(|i| i.provenance != Provenance::Real) {
            return Err(DisguiseError::WrongProvenance(img.provenance));
        }
        self.check(images)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut g = Graph::new();
            let x = g.input(batch_tensor::<f32>(chunk));
            let y = self.g_x.forward(&mut g, &self.s_gx, x);
            let n = self.image_size[0] * self.image_size[1] * IMAGE_CHANNELS;
            for (img, px) in chunk.iter().zip(g.value(y).data().chunks(n)) {
                out.push(EegImage {
                    pixels: px.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                    provenance: Provenance::Disguised,
                    ..(*img).clone()
                });
            }
        }
        Ok(out)
    }

    pub fn disguise(&self, image: &EegImage) -> Result<EegImage, DisguiseError> {
        Ok(self.disguise_batch(&[image])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "disguiser",
            "config": self.config,
            "constraints": self.constraints.as_str(),
            "image_size": self.image_size,
            "history": self.history,
            "gate": self.gate,
            "seed": self.seed,
            "meta": self.meta,
        }));
        let gcfg = serde_json::json!({"width": self.config.gen_width, "res_blocks": self.config.gen_res_blocks});
        let dcfg = serde_json::json!({"width": self.config.disc_width});
        ck.push(NetworkRecord::from_store("G_X", gcfg.clone(), &self.s_gx));
        ck.push(NetworkRecord::from_store("G_Y", gcfg, &self.s_gy));
        ck.push(NetworkRecord::from_store("D_X", dcfg.clone(), &self.s_dx));
        ck.push(NetworkRecord::from_store("D_Y", dcfg, &self.s_dy));
        if let Some(c) = &self.c {
            ck.push(NetworkRecord::from_store("C", serde_json::to_value(&c.config).expect("serializes"), &c.store));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DisguiseError> {
        let bad = |s: &str| DisguiseError::InvalidConfig(format!("checkpoint: {s}"));
        let m = &ck.meta;
        let config: GanConfig = serde_json::from_value(m["config"].clone()).map_err(|_| bad("config"))?;
        let constraints: ConstraintSet =
            m["constraints"].as_str().ok_or_else(|| bad("constraints"))?.parse().map_err(|_| bad("constraints"))?;
        let image_size: [usize; 2] = serde_json::from_value(m["image_size"].clone()).map_err(|_| bad("image_size"))?;
        let seed = m["seed"].as_u64().ok_or_else(|| bad("seed"))?;
        let c = if ck.has_network("C") { Some(load_classifier(ck, "C")?) } else { None };
        let vocab: Vec<String> = c
            .as_ref()
            .and_then(|c| c.config.head_index(Task::Stimulus).map(|i| c.config.heads[i].classes.clone()))
            .unwrap_or_else(|| (0..5).map(|i| i.to_string()).collect());
        let mut model = Self::new(config, constraints, image_size, &vocab, seed)?;
        ck.network("G_X")?.load_into(&mut model.s_gx)?;
        ck.network("G_Y")?.load_into(&mut model.s_gy)?;
        ck.network("D_X")?.load_into(&mut model.s_dx)?;
        ck.network("D_Y")?.load_into(&mut model.s_dy)?;
        model.c = c;
        model.history = serde_json::from_value(m["history"].clone()).map_err(|_| bad("history"))?;
        model.gate = serde_json::from_value(m["gate"].clone()).map_err(|_| bad("gate"))?;
        model.meta = m["meta"].clone();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), DisguiseError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, DisguiseError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,adv_G,adv_D,cycle,task,semantic,total_G,total_D,task_ema,gate\n");
        for r in &self.history {
            let ema = r.task_ema.map_or(String::new(), |v| v.to_string());
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.adv_g,
                r.adv_d,
                r.cycle,
                r.task,
                r.semantic,
                r.total_g,
                r.total_d,
                ema,
                u8::from(r.gate)
            ));
        }
        s
    }
}

/// Optimizer state for one training run.
struct Optimizers {
    gx: Adam<f32>,
    gy: Adam<f32>,
    dx: Adam<f32>,
    dy: Adam<f32>,
    c: Adam<f32>,
}

/// Labels of the constrained tasks for a batch of images.
fn constraint_labels(model: &DisguiserModel, imgs: &[&EegImage]) -> Result<Vec<Vec<usize>>, DisguiseError> {
    match &model.c {
        Some(c) => Ok(head_labels(&c.config, imgs)?),
        None => Ok(Vec::new()),
    }
}

/// Scalar nodes of the generator objective for one batch.
pub struct GeneratorGraph {
    pub graph: Graph<f32>,
    pub total: Var,
    pub fake_y: Tensor<f32>,
    pub fake_x: Tensor<f32>,
    pub losses: GanBatchLosses,
}

/// Builds the generator objective with D_X, D_Y and C frozen. C is run in
/// inference mode and only when the constraint set is non-empty.
pub fn generator_objective(
    model: &DisguiserModel,
    x: &[&EegImage],
    y: &[&EegImage],
    x_labels: &[Vec<usize>],
    c_override: Option<&Classifier>,
) -> GeneratorGraph {
    let cfg = &model.config;
    let mut g = Graph::new();
    g.freeze(&model.s_dx);
    g.freeze(&model.s_dy);
    let c = c_override.or(model.c.as_ref());
    if let Some(c) = c {
        g.freeze(&c.store);
    }
    let xv = g.input(batch_tensor(x));
    let yv = g.input(batch_tensor(y));
    let fake_y = model.g_x.forward(&mut g, &model.s_gx, xv);
    let rec_x = model.g_y.forward(&mut g, &model.s_gy, fake_y);
    let fake_x = model.g_y.forward(&mut g, &model.s_gy, yv);
    let rec_y = model.g_x.forward(&mut g, &model.s_gx, fake_x);

    let dy_fake = model.d_y.forward(&mut g, &model.s_dy, fake_y);
    let dx_fake = model.d_x.forward(&mut g, &model.s_dx, fake_x);
    let adv_y = g.mse_const(dy_fake, 1.0);
    let adv_x = g.mse_const(dx_fake, 1.0);
    let cyc_x = g.l1(rec_x, xv);
    let cyc_y = g.l1(rec_y, yv);
    let adv = g.weighted_sum(&[(adv_y, 1.0), (adv_x, 1.0)]);
    let cycle = g.weighted_sum(&[(cyc_x, 1.0), (cyc_y, 1.0)]);

    let mut terms = vec![(adv, 1.0), (cycle, cfg.lambda_cycle)];
    let (mut task_v, mut sem_v) = (0.0, 0.0);
    if let (Some(c), false) = (c, model.constraints.is_empty()) {
        let gate = model.gate.factor();
        // Without the gate the semantic terms only need their values.
        let (fy_in, fx_in) = if gate > 0.0 { (fake_y, fake_x) } else { (g.detach(fake_y), g.detach(fake_x)) };
        let on_x = c.net.forward(&mut g, &c.store, xv, false);
        let on_fy = c.net.forward(&mut g, &c.store, fy_in, false);
        let on_y = c.net.forward(&mut g, &c.store, yv, false);
        let on_fx = c.net.forward(&mut g, &c.store, fx_in, false);
        let mut task_terms = Vec::new();
        let mut sem_terms = Vec::new();
        for (hi, head) in c.config.heads.iter().enumerate() {
            if !model.constraints.tasks().contains(&head.task) {
                continue;
            }
            let k = head.classes.len();
            let pseudo = |g: &Graph<f32>, v: Var| -> Vec<usize> {
                g.value(v).data().chunks(k).map(crate::classifier::argmax).collect()
            };
            let (px, py) = (pseudo(&g, on_x[hi]), pseudo(&g, on_y[hi]));
            task_terms.push((g.cross_entropy(on_x[hi], &x_labels[hi]), 1.0));
            // Both translation directions keep C's label of their source.
            sem_terms.push((g.cross_entropy(on_fy[hi], &px), 1.0));
            sem_terms.push((g.cross_entropy(on_fx[hi], &py), 1.0));
        }
        let task = g.weighted_sum(&task_terms);
        let sem = g.weighted_sum(&sem_terms);
        task_v = g.scalar(task);
        sem_v = g.scalar(sem);
        terms.push((task, cfg.lambda_task));
        terms.push((sem, cfg.lambda_sem * gate));
    }
    let total = g.weighted_sum(&terms);
    let losses = GanBatchLosses {
        adv_g: g.scalar(adv),
        cycle: g.scalar(cycle),
        task: task_v,
        semantic: sem_v,
        total_g: g.scalar(total),
        gate: model.gate.open,
        ..Default::default()
    };
    let fake_y_t = g.value(fake_y).clone();
    let fake_x_t = g.value(fake_x).clone();
    GeneratorGraph { graph: g, total, fake_y: fake_y_t, fake_x: fake_x_t, losses }
}

/// One C step, one generator step and one discriminator step.
fn train_step(
    model: &mut DisguiserModel,
    opt: &mut Optimizers,
    x: &[&EegImage],
    y: &[&EegImage],
) -> Result<GanBatchLosses, &'static str> {
    let x_labels = constraint_labels(model, x).map_err(|_| "labels")?;

    // C learns the constrained tasks on real and dummy images together.
    if let (Some(c), false) = (model.c.as_mut(), model.constraints.is_empty()) {
        let both: Vec<&EegImage> = x.iter().chain(y).copied().collect();
        let labels = head_labels(&c.config, &both).map_err(|_| "labels")?;
        let mut g = Graph::new();
        let v = g.input(batch_tensor(&both));
        let heads = c.net.forward(&mut g, &c.store, v, true);
        let terms: Vec<(Var, f64)> = heads.iter().zip(&labels).map(|(&h, l)| (g.cross_entropy(h, l), 1.0)).collect();
        let loss = g.weighted_sum(&terms);
        let lv = g.scalar(loss);
        if !lv.is_finite() {
            return Err("task");
        }
        let grads = g.backward(loss);
        c.store.apply_updates(&g.take_updates());
        opt.c.step(&mut c.store, &grads);
        model.gate.observe(lv);
    }

    let GeneratorGraph { mut graph, total, fake_y, fake_x, mut losses } = generator_objective(model, x, y, &x_labels, None);
    if losses.total_g.is_nan() || losses.total_g.is_infinite() {
        return Err("total_G");
    }
    let grads = graph.backward(total);
    opt.gx.step(&mut model.s_gx, &grads);
    opt.gy.step(&mut model.s_gy, &grads);

    // Discriminators on the fakes of this step, detached.
    let mut g = Graph::new();
    let xv = g.input(batch_tensor(x));
    let yv = g.input(batch_tensor(y));
    let fy = g.input(fake_y);
    let fx = g.input(fake_x);
    let mut d_terms = Vec::new();
    for (d, s, real, fake) in [(&model.d_y, &model.s_dy, yv, fy), (&model.d_x, &model.s_dx, xv, fx)] {
        let dr = d.forward(&mut g, s, real);
        let df = d.forward(&mut g, s, fake);
        let lr = g.mse_const(dr, 1.0);
        let lf = g.mse_const(df, 0.0);
        d_terms.push((lr, 0.5));
        d_terms.push((lf, 0.5));
    }
    let total_d = g.weighted_sum(&d_terms);
    losses.adv_d = g.scalar(total_d);
    losses.total_d = losses.adv_d;
    let grads = g.backward(total_d);
    opt.dy.step(&mut model.s_dy, &grads);
    opt.dx.step(&mut model.s_dx, &grads);
    losses.gate = model.gate.open;
    match losses.finite_check() {
        Some(term) => Err(term),
        None => Ok(losses),
    }
}

/// Trains all networks from their seeded initialization. Each epoch walks
/// the real images once in a shuffled order and draws dummy batches from a
/// separately shuffled cycle over the dummy set.
pub fn train_disguiser(
    mut model: DisguiserModel,
    real_x: &[&EegImage],
    dummy_y: &[&EegImage],
    mut on_epoch: impl FnMut(&GanEpochLog),
) -> Result<DisguiserModel, DisguiseError> {
    if real_x.is_empty() {
        return Err(DisguiseError::EmptyDomain("real"));
    }
    if dummy_y.is_empty() {
        return Err(DisguiseError::EmptyDomain("dummy"));
    }
    model.check(real_x)?;
    model.check(dummy_y)?;
    if let Some(c) = &model.c {
        head_labels(&c.config, real_x)?;
        head_labels(&c.config, dummy_y)?;
    }
    let cfg = model.config.clone();
    let adam = || Adam::new(cfg.lr, cfg.beta1, 0.999);
    let mut opt = Optimizers { gx: adam(), gy: adam(), dx: adam(), dy: adam(), c: Adam::new(1e-3, 0.9, 0.999) };
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed.wrapping_add(1));
    let mut xo: Vec<usize> = (0..real_x.len()).collect();
    let mut yo: Vec<usize> = (0..dummy_y.len()).collect();
    yo.shuffle(&mut rng);
    let mut ypos = 0;
    let batch = cfg.batch.max(1);
    let start = model.history.len();
    for epoch in start + 1..=start + cfg.epochs {
        xo.shuffle(&mut rng);
        let mut sums = [0.0f64; 7];
        let mut count = 0usize;
        for (bi, idx) in xo.chunks(batch).enumerate() {
            let xb: Vec<&EegImage> = idx.iter().map(|&i| real_x[i]).collect();
            let mut yb = Vec::with_capacity(idx.len());
            while yb.len() < idx.len() {
                if ypos == yo.len() {
                    yo.shuffle(&mut rng);
                    ypos = 0;
                }
                yb.push(dummy_y[yo[ypos]]);
                ypos += 1;
            }
            let l = train_step(&mut model, &mut opt, &xb, &yb)
                .map_err(|term| DisguiseError::Diverged { epoch, batch: bi, term })?;
            for (s, v) in sums.iter_mut().zip([l.adv_g, l.adv_d, l.cycle, l.task, l.semantic, l.total_g, l.total_d]) {
                *s += v * idx.len() as f64;
            }
            count += idx.len();
        }
        let m = |i: usize| sums[i] / count as f64;
        let log = GanEpochLog {
            epoch,
            adv_g: m(0),
            adv_d: m(1),
            cycle: m(2),
            task: m(3),
            semantic: m(4),
            total_g: m(5),
            total_d: m(6),
            task_ema: model.gate.ema,
            gate: model.gate.open,
        };
        on_epoch(&log);
        model.history.push(log);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Alcoholism;
    use rand::RngExt;

    #[test]
    fn lsgan_fixed_points() {
        let (g, d) = lsgan_losses(&[1.0; 8], &[0.0; 8]).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(g, 1.0);
        let (g, _) = lsgan_losses(&[0.3; 4], &[1.0; 4]).unwrap();
        assert_eq!(g, 0.0);
        let (g, d) = lsgan_losses(&[0.5; 4], &[0.5; 4]).unwrap();
        assert!((g - 0.25).abs() < 1e-12 && (d - 0.25).abs() < 1e-12);
        assert!(lsgan_losses(&[1.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn cycle_loss_cases() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let y: Vec<f64> = (0..12).map(|i| 1.0 - i as f64 / 24.0).collect();
        assert_eq!(cycle_loss(&x, &x, &y, &y).unwrap(), 0.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!((cycle_loss(&x, &shifted, &y, &y).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(cycle_loss(&x, &shifted, &y, &y).unwrap(), cycle_loss(&y, &y, &x, &shifted).unwrap());
    }

    #[test]
    fn constraint_loss_cases() {
        let heads = vec![HeadLogits {
            task: Task::Alcoholism,
            classes: 2,
            on_x: vec![2.0, -1.0, -3.0, 0.5],
            on_fake: vec![0.0, 0.0, 0.0, 0.0],
        }];
        let labels = vec![(Task::Alcoholism, vec![Some(0), Some(1)])];
        assert_eq!(constraint_losses(&heads, &labels, ConstraintSet::NONE).unwrap(), (0.0, 0.0));
        let (_, sem) = constraint_losses(&heads, &labels, ConstraintSet::ALC).unwrap();
        assert!((sem - std::f64::consts::LN_2).abs() < 1e-12);
        let delta = vec![HeadLogits { on_fake: vec![800.0, -800.0, -800.0, 800.0], ..heads[0].clone() }];
        assert_eq!(constraint_losses(&delta, &labels, ConstraintSet::ALC).unwrap().1, 0.0);
        let missing = vec![(Task::Alcoholism, vec![Some(0), None])];
        assert!(matches!(constraint_losses(&heads, &missing, ConstraintSet::ALC), Err(DisguiseError::MissingLabel { .. })));
    }

    #[test]
    fn gate_opens_once_below_threshold_and_stays_open() {
        let mut g = SemanticGate::new(1.0, 0.9);
        assert!(!g.observe(1.5));
        for v in [1.4, 1.3, 1.2] {
            assert!(!g.observe(v));
        }
        let mut opened = false;
        for _ in 0..100 {
            opened |= g.observe(0.2);
        }
        assert!(opened);
        for _ in 0..50 {
            assert!(g.observe(5.0));
        }
    }

    fn toy_image(size: usize, offset: f32, rng: &mut ChaCha8Rng, prov: Provenance, alc: Alcoholism) -> EegImage {
        EegImage {
            height: size,
            width: size,
            pixels: (0..3 * size * size).map(|_| (offset + rng.random_range(-0.15f32..0.15)).clamp(0.0, 1.0)).collect(),
            subject_id: if prov == Provenance::Dummy { "dummy:g0:0:0".into() } else { "co2a0000001".into() },
            alcoholism: alc,
            stimulus: 0,
            provenance: prov,
        }
    }

    fn toy_domains(n: usize, size: usize) -> (Vec<EegImage>, Vec<EegImage>) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let alc = |i: usize| if i % 2 == 0 { Alcoholism::Alcoholic } else { Alcoholism::Control };
        let x = (0..n).map(|i| toy_image(size, 0.3, &mut rng, Provenance::Real, alc(i))).collect();
        let y = (0..n).map(|i| toy_image(size, 0.7, &mut rng, Provenance::Dummy, alc(i))).collect();
        (x, y)
    }

    fn tiny() -> GanConfig {
        GanConfig { gen_width: 4, gen_res_blocks: 1, disc_width: 4, c_width: 2, batch: 4, ..GanConfig::default() }
    }

    #[test]
    fn empty_constraints_leave_classifier_inert() {
        let (x, y) = toy_domains(4, 8);
        let xr: Vec<&EegImage> = x.iter().collect();
        let yr: Vec<&EegImage> = y.iter().collect();
        let vocab: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let mut model = DisguiserModel::new(tiny(), ConstraintSet::NONE, [8, 8], &vocab, 1).unwrap();
        assert!(model.c.is_none());
        // Even a classifier that is present and trainable gets no gradient.
        let c = Classifier::new(NetConfig::new(18, vec![Head::alcoholism()], 2, 8), 0).unwrap();
        model.gate.open = true;
        let mut gg = generator_objective(&model, &xr, &yr, &[], Some(&c));
        assert_eq!((gg.losses.task, gg.losses.semantic), (0.0, 0.0));
        let grads = gg.graph.backward(gg.total);
        assert!(grads.is_empty_for(&c.store));
        assert!(!grads.is_empty_for(&model.s_gx));
        assert!(grads.is_empty_for(&model.s_dx) && grads.is_empty_for(&model.s_dy));
    }

    #[test]
    fn disguise_contract_and_checkpoint_round_trip() {
        let (x, y) = toy_domains(4, 8);
        let xr: Vec<&EegImage> = x.iter().collect();
        let yr: Vec<&EegImage> = y.iter().collect();
        let vocab: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let cfg = GanConfig { epochs: 1, ..tiny() };
        let model = DisguiserModel::new(cfg, ConstraintSet::ALC, [8, 8], &vocab, 2).unwrap();
        let model = train_disguiser(model, &xr, &yr, |_| {}).unwrap();
        let one = model.disguise(&x[0]).unwrap();
        assert_eq!((one.height, one.width, one.provenance), (8, 8, Provenance::Disguised));
        assert!(one.in_unit_range());
        assert_eq!(one.subject_id, x[0].subject_id);
        assert_eq!(model.disguise(&x[0]).unwrap(), one);
        let batch = model.disguise_batch(&xr).unwrap();
        for (b, img) in batch.iter().zip(&x) {
            let single = model.disguise(img).unwrap();
            for (p, q) in b.pixels.iter().zip(&single.pixels) {
                assert!((p - q).abs() < 1e-6);
            }
        }
        assert!(matches!(model.disguise(&y[0]), Err(DisguiseError::WrongProvenance(Provenance::Dummy))));

        let back = DisguiserModel::from_checkpoint(&Checkpoint::from_bytes(&model.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.disguise(&x[1]).unwrap(), model.disguise(&x[1]).unwrap());
        assert_eq!(back.history, model.history);
        assert_eq!(back.constraints, ConstraintSet::ALC);
    }

    #[test]
    fn toy_domains_adversarial_and_cycle_terms_decrease() {
        let (x, y) = toy_domains(16, 16);
        let xr: Vec<&EegImage> = x.iter().collect();
        let yr: Vec<&EegImage> = y.iter().collect();
        let vocab: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let cfg = GanConfig { epochs: 30, batch: 8, gen_width: 4, gen_res_blocks: 2, disc_width: 8, ..tiny() };
        let model = DisguiserModel::new(cfg, ConstraintSet::NONE, [16, 16], &vocab, 3).unwrap();
        let model = train_disguiser(model, &xr, &yr, |_| {}).unwrap();
        let (first, last) = (&model.history[0], &model.history[29]);
        assert!(last.adv_g < first.adv_g, "adv_G {} -> {}", first.adv_g, last.adv_g);
        assert!(last.cycle < first.cycle, "cycle {} -> {}", first.cycle, last.cycle);
        assert!(model.history.iter().all(|h| h.task == 0.0 && h.semantic == 0.0));
    }
}
