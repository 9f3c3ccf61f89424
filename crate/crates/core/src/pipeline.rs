//! Pipeline stages over a work directory. Every stage reads the artifacts
//! of earlier stages from disk, so each can be re-run on its own.
//!
//! ```text
//! <workdir>/manifest.json          split.json
//!           features.json          normalizer.json
//!           images/index.json      images/<split>/<trial>.eimg
//!           dummies/dummies.json   dummies/images/g<g>_n<n>.eimg
//!           models/cls_<task>.ckpt models/gan_<constraints>.ckpt (+ CSV logs)
//!           reports/...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{train_classifier, Classifier, Head, NetConfig, Task, TrainOptions, TrainedModel};
use crate::config::RunConfig;
use crate::dataset::{build_manifest, split_within_subject, Manifest, Split, SplitAssignment};
use crate::disguiser::{train_disguiser, ConstraintSet, DisguiserModel};
use crate::dummyid::{make_dummy_set, DummyExemplar};
use crate::error::{Error, Result};
use crate::evalreport::{ablation_report, evaluate_model, AblationReport, Evaluators, MetricsReport};
use crate::spectral::{features_csv, trial_band_features, BandFeatures};
use crate::synth::write_synthetic_corpus;
use crate::topomap::{fit_normalizer, EegImage, ElectrodeTable, ImageAssembler, Normalizer, Provenance};

/// JSON artifact: payload plus the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config: Value,
    pub seed: u64,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub split: Split,
    pub file: String,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features.json")
    }

    pub fn normalizer(&self) -> PathBuf {
        self.root.join("normalizer.json")
    }

    pub fn image_index(&self) -> PathBuf {
        self.root.join("images/index.json")
    }

    pub fn images(&self, split: Split) -> PathBuf {
        self.root.join("images").join(split.as_str())
    }

    pub fn dummies(&self) -> PathBuf {
        self.root.join("dummies/dummies.json")
    }

    pub fn dummy_images(&self) -> PathBuf {
        self.root.join("dummies/images")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn classifier(&self, task: Task, joint: bool) -> PathBuf {
        let suffix = if joint { "_joint" } else { "" };
        self.models().join(format!("cls_{}{suffix}.ckpt", task.as_str()))
    }

    pub fn disguiser(&self, constraints: ConstraintSet) -> PathBuf {
        self.models().join(format!("gan_{}.ckpt", constraints.as_str()))
    }

    pub fn disguised(&self, constraints: ConstraintSet, split: Split) -> PathBuf {
        self.root.join("disguised").join(constraints.as_str()).join(split.as_str())
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// Trial id to a flat file stem.
pub fn file_stem(id: &str) -> String {
    id.replace(['/', '\\'], "__")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, text).map_err(Error::io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

/// `*.eimg` files of a directory in name order.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(String, EegImage)>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".eimg"))
        .collect();
    names.sort();
    names
        .into_par_iter()
        .map(|n| Ok((n.clone(), EegImage::load(&dir.join(&n))?)))
        .collect()
}

fn save_images<'a>(dir: &Path, items: impl IntoParallelIterator<Item = (String, &'a EegImage)>) -> Result<()> {
    create_dir(dir)?;
    items.into_par_iter().try_for_each(|(name, img)| img.save(&dir.join(name)).map_err(Error::from))
}

/// Stage runner bound to one configuration and work directory.
pub struct Pipeline {
    pub config: RunConfig,
    pub ws: Workspace,
    pub table: ElectrodeTable,
    /// Print per-epoch progress to stderr.
    pub verbose: bool,
}

impl Pipeline {
    pub fn new(config: RunConfig, workdir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, ws: Workspace::new(workdir), table: ElectrodeTable::standard(), verbose: false })
    }

    fn artifact<T: Serialize>(&self, data: T) -> String {
        let a = Artifact { config: self.config.echo(), seed: self.config.seed, data };
        serde_json::to_string_pretty(&a).expect("artifact serializes") + "\n"
    }

    fn write_artifact<T: Serialize>(&self, path: &Path, data: T) -> Result<()> {
        write_text(path, &self.artifact(data))
    }

    pub fn corpus_root(&self) -> PathBuf {
        self.config.corpus_root.clone().unwrap_or_else(|| self.ws.root.join("corpus"))
    }

    // ------------------------------------------------------------ stages

    /// Scans the corpus (generating the synthetic one first when asked) and
    /// writes the manifest.
    pub fn ingest(&self, synthetic: bool) -> Result<Manifest> {
        let root = self.corpus_root();
        if synthetic {
            create_dir(&root)?;
            write_synthetic_corpus(&root, &self.config.synthetic, &self.table).map_err(Error::io(&root))?;
        }
        let manifest = build_manifest(&root, &self.table)?;
        self.write_artifact(&self.ws.manifest(), &manifest)?;
        Ok(manifest)
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        Ok(read_json::<Artifact<Manifest>>(&self.ws.manifest())?.data)
    }

    pub fn split(&self) -> Result<SplitAssignment> {
        let manifest = self.load_manifest()?;
        let split = split_within_subject(&manifest, self.config.split_ratios, self.config.seed)?;
        self.write_artifact(&self.ws.split(), &split)?;
        Ok(split)
    }

    pub fn load_split(&self) -> Result<SplitAssignment> {
        Ok(read_json::<Artifact<SplitAssignment>>(&self.ws.split())?.data)
    }

    /// Band features for every trial, normalizer fit on the training split,
    /// and one image per trial.
    pub fn preprocess(&self, dump_features: bool) -> Result<Vec<ImageEntry>> {
        let manifest = self.load_manifest()?;
        let split = self.load_split()?;
        let bands = &self.config.bands;
        let features: Vec<BandFeatures> = manifest
            .trials
            .par_iter()
            .map(|t| {
                let trial = manifest.load_trial(t, &self.table)?;
                Ok(trial_band_features(&trial, &t.id, bands)?)
            })
            .collect::<Result<_>>()?;
        let split_of = |id: &str| split.get(id).ok_or_else(|| Error::Stage(format!("trial {id} has no split")));
        let mut train = Vec::new();
        for f in &features {
            if split_of(&f.trial_id)? == Split::Train {
                train.push(f.clone());
            }
        }
        let norm = fit_normalizer(&train, self.config.percentiles, Split::Train.as_str())?;
        let size = self.config.image_size;
        let asm = ImageAssembler::new(&self.table, size, size)?;
        let images: Vec<EegImage> =
            features.par_iter().map(|f| asm.assemble(f, &norm, Provenance::Real)).collect::<Result<_, _>>()?;

        let mut index = Vec::with_capacity(features.len());
        for f in &features {
            index.push(ImageEntry { id: f.trial_id.clone(), split: split_of(&f.trial_id)?, file: format!("{}.eimg", file_stem(&f.trial_id)) });
        }
        for s in Split::ALL {
            create_dir(&self.ws.images(s))?;
        }
        index
            .par_iter()
            .zip(&images)
            .try_for_each(|(e, img)| img.save(&self.ws.images(e.split).join(&e.file)).map_err(Error::from))?;
        if dump_features {
            let dir = self.ws.root.join("features");
            create_dir(&dir)?;
            let names: Vec<&str> = (0..self.table.len()).map(|i| self.table.name(i)).collect();
            features.par_iter().try_for_each(|f| {
                let p = dir.join(format!("{}.csv", file_stem(&f.trial_id)));
                fs::write(&p, features_csv(f, &names, bands)).map_err(Error::io(&p))
            })?;
        }
        self.write_artifact(&self.ws.features(), &features)?;
        self.write_artifact(&self.ws.normalizer(), &norm)?;
        self.write_artifact(&self.ws.image_index(), &index)?;
        Ok(index)
    }

    pub fn load_index(&self) -> Result<Vec<ImageEntry>> {
        Ok(read_json::<Artifact<Vec<ImageEntry>>>(&self.ws.image_index())?.data)
    }

    /// Real images of one split in trial-id order.
    pub fn load_images(&self, split: Split) -> Result<Vec<EegImage>> {
        let dir = self.ws.images(split);
        self.load_index()?
            .into_par_iter()
            .filter(|e| e.split == split)
            .map(|e| Ok(EegImage::load(&dir.join(&e.file))?))
            .collect()
    }

    pub fn dummies(&self) -> Result<Vec<DummyExemplar>> {
        let split = self.load_split()?;
        let features: Vec<BandFeatures> = read_json::<Artifact<Vec<BandFeatures>>>(&self.ws.features())?.data;
        let norm: Normalizer = read_json::<Artifact<Normalizer>>(&self.ws.normalizer())?.data;
        let train: Vec<BandFeatures> =
            features.into_iter().filter(|f| split.get(&f.trial_id) == Some(Split::Train)).collect();
        let size = self.config.image_size;
        let asm = ImageAssembler::new(&self.table, size, size)?;
        let d = &self.config.dummy;
        let set = make_dummy_set(&train, d.k, d.m, self.config.seed, &asm, &norm)?;
        let dir = self.ws.dummy_images();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(Error::io(&dir))?;
        }
        save_images(
            &dir,
            set.exemplars.par_iter().zip(&set.images).map(|(e, img)| (format!("g{}_n{:03}.eimg", e.group, e.index), img)),
        )?;
        self.write_artifact(&self.ws.dummies(), &set.exemplars)?;
        Ok(set.exemplars)
    }

    pub fn load_dummy_images(&self) -> Result<Vec<EegImage>> {
        Ok(load_image_dir(&self.ws.dummy_images())?.into_iter().map(|(_, i)| i).collect())
    }

    fn head(&self, task: Task, manifest: &Manifest) -> Head {
        match task {
            Task::Identity => Head::identity(&manifest.subject_ids()),
            Task::Alcoholism => Head::alcoholism(),
            Task::Stimulus => Head::stimulus(&manifest.stimulus_vocab),
        }
    }

    /// Trains a single-task classifier on the training split, selecting on
    /// validation; `joint` adds the dummy images to the training set.
    pub fn train_cls(&self, task: Task, joint: bool) -> Result<TrainedModel> {
        let manifest = self.load_manifest()?;
        let train = self.load_images(Split::Train)?;
        let val = self.load_images(Split::Validation)?;
        let dummies = if joint { Some(self.load_dummy_images()?) } else { None };
        let c = &self.config.classifier;
        let net = NetConfig::new(c.depth, vec![self.head(task, &manifest)], c.width, self.config.image_size);
        let model = Classifier::new(net, self.config.seed)?;
        let opts =
            TrainOptions { epochs: c.epochs, batch: c.batch, lr: c.lr, seed: self.config.seed, patience: c.patience };
        let tr: Vec<&EegImage> = train.iter().collect();
        let va: Vec<&EegImage> = val.iter().collect();
        let du: Option<Vec<&EegImage>> = dummies.as_ref().map(|d| d.iter().collect());
        let mut trained = train_classifier(model, &tr, &va, du.as_deref(), &opts)?;
        trained.meta = serde_json::json!({
            "config": self.config.echo(),
            "task": task.as_str(),
            "train_images": tr.len(),
            "validation_images": va.len(),
            "dummy_images": du.as_ref().map_or(0, |d| d.len()),
        });
        if self.verbose {
            for r in &trained.history {
                eprintln!(
                    "[train-cls {}] epoch {} loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
                    task.as_str(),
                    r.epoch,
                    r.train_loss,
                    r.train_acc,
                    r.val_loss,
                    r.val_acc
                );
            }
        }
        let path = self.ws.classifier(task, joint);
        create_dir(&self.ws.models())?;
        trained.save(&path)?;
        write_text(&path.with_extension("history.csv"), &trained.history_csv())?;
        Ok(trained)
    }

    /// Trains the disguiser for one constraint regime on the training split
    /// (real) against the dummy images.
    pub fn train_gan(&self, constraints: ConstraintSet) -> Result<DisguiserModel> {
        let manifest = self.load_manifest()?;
        let real = self.load_images(Split::Train)?;
        let dummies = self.load_dummy_images()?;
        let size = self.config.image_size;
        let mut model =
            DisguiserModel::new(self.config.gan.clone(), constraints, [size, size], &manifest.stimulus_vocab, self.config.seed)?;
        model.meta = serde_json::json!({ "config": self.config.echo() });
        let x: Vec<&EegImage> = real.iter().collect();
        let y: Vec<&EegImage> = dummies.iter().collect();
        let verbose = self.verbose;
        let tag = constraints.as_str();
        let model = train_disguiser(model, &x, &y, |l| {
            if verbose {
                eprintln!(
                    "[train-gan {tag}] epoch {} adv_G {:.4} adv_D {:.4} cycle {:.4} task {:.4} semantic {:.4} gate {}",
                    l.epoch, l.adv_g, l.adv_d, l.cycle, l.task, l.semantic, l.gate
                );
            }
        })?;
        let path = self.ws.disguiser(constraints);
        create_dir(&self.ws.models())?;
        model.save(&path)?;
        write_text(&path.with_extension("losses.csv"), &model.history_csv())?;
        Ok(model)
    }

    // --------------------------------------------------------- utilities

    /// Disguises every real image in `input` into `output`, keeping names.
    pub fn disguise_dir(&self, model: &Path, input: &Path, output: &Path) -> Result<usize> {
        let model = DisguiserModel::load(model)?;
        let items = load_image_dir(input)?;
        let imgs: Vec<&EegImage> = items.iter().map(|(_, i)| i).collect();
        let out = model.disguise_batch(&imgs)?;
        save_images(output, items.par_iter().zip(&out).map(|((n, _), img)| (n.clone(), img)))?;
        Ok(out.len())
    }

    /// Evaluates a classifier checkpoint on a directory of images (default:
    /// the configured evaluation split) and writes the report as
    /// `reports/<name>.{json,txt,csv}`.
    pub fn evaluate(&self, model: &Path, images: Option<&Path>, name: &str) -> Result<MetricsReport> {
        let model = TrainedModel::load(model)?;
        let (label, imgs) = match images {
            Some(dir) => (dir.display().to_string(), load_image_dir(dir)?.into_iter().map(|(_, i)| i).collect()),
            None => (self.config.eval_split.as_str().to_string(), self.load_images(self.config.eval_split)?),
        };
        if imgs.is_empty() {
            return Err(Error::Stage(format!("no images to evaluate in {label}")));
        }
        let refs: Vec<&EegImage> = imgs.iter().collect();
        let report = evaluate_model(&model, &refs, &label, self.config.echo())?;
        let dir = self.ws.reports();
        write_text(&dir.join(format!("{name}.json")), &(report.to_json() + "\n"))?;
        write_text(&dir.join(format!("{name}.txt")), &report.to_text())?;
        write_text(&dir.join(format!("{name}.csv")), &report.to_csv())?;
        Ok(report)
    }

    /// Per-image predictions as CSV: file, task, label, class probabilities.
    pub fn predict(&self, model: &Path, images: &Path) -> Result<String> {
        let model = TrainedModel::load(model)?;
        let items = load_image_dir(images)?;
        let imgs: Vec<&EegImage> = items.iter().map(|(_, i)| i).collect();
        let preds = model.classifier.predict_batch(&imgs)?;
        let mut s = String::from("file,task,label,probabilities\n");
        for (i, (name, _)) in items.iter().enumerate() {
            for (p, h) in preds.iter().zip(&model.classifier.config.heads) {
                let probs: Vec<String> = p.row(i).iter().map(|v| v.to_string()).collect();
                s.push_str(&format!("{name},{},{},{}\n", p.task.as_str(), h.classes[p.labels[i]], probs.join(" ")));
            }
        }
        Ok(s)
    }

    /// Reference row and all four constraint regimes on the evaluation
    /// split, using the single-task identity, alcoholism and stimulus
    /// classifiers. Writes `reports/ablation.{json,txt,csv,svg}`.
    pub fn ablate(&self) -> Result<AblationReport> {
        let evaluators: Vec<TrainedModel> = [Task::Identity, Task::Alcoholism, Task::Stimulus]
            .iter()
            .map(|&t| TrainedModel::load(&self.ws.classifier(t, false)).map_err(Error::from))
            .collect::<Result<_>>()?;
        let models: Vec<(ConstraintSet, DisguiserModel)> = ConstraintSet::ALL
            .iter()
            .map(|&c| {
                let p = self.ws.disguiser(c);
                if !p.exists() {
                    return Err(Error::Eval(crate::evalreport::EvalError::MissingRegime(c.as_str())));
                }
                Ok((c, DisguiserModel::load(&p)?))
            })
            .collect::<Result<_>>()?;
        let split = self.config.eval_split;
        let originals = self.load_images(split)?;
        let refs: Vec<&EegImage> = originals.iter().collect();
        let ev = Evaluators { classifiers: evaluators.iter().map(|m| &m.classifier).collect() };
        let map: BTreeMap<&'static str, &DisguiserModel> = models.iter().map(|(c, m)| (c.as_str(), m)).collect();
        let report = ablation_report(&ev, &refs, &map, split.as_str(), self.config.echo())?;
        let dir = self.ws.reports();
        write_text(&dir.join("ablation.json"), &(report.to_json() + "\n"))?;
        write_text(&dir.join("ablation.txt"), &report.to_text())?;
        write_text(&dir.join("ablation.csv"), &report.to_csv())?;
        write_text(&dir.join("ablation.svg"), &report.to_svg())?;
        Ok(report)
    }

    /// PNG copies of every image in `input`.
    pub fn export_png(&self, input: &Path, output: &Path, scale: usize) -> Result<usize> {
        let items = load_image_dir(input)?;
        create_dir(output)?;
        items.par_iter().try_for_each(|(n, img)| {
            let stem = n.strip_suffix(".eimg").unwrap_or(n);
            img.write_png(&output.join(format!("{stem}.png")), scale).map_err(Error::from)
        })?;
        Ok(items.len())
    }

    /// Every stage in order: ingest, split, preprocess, dummies, the three
    /// evaluation classifiers, the four disguisers, ablation.
    pub fn run_all(&self, synthetic: bool) -> Result<AblationReport> {
        self.ingest(synthetic)?;
        self.split()?;
        self.preprocess(false)?;
        self.dummies()?;
        for t in [Task::Identity, Task::Alcoholism, Task::Stimulus] {
            self.train_cls(t, false)?;
        }
        for c in ConstraintSet::ALL {
            self.train_gan(c)?;
        }
        self.ablate()
    }
}
